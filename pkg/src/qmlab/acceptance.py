"""The eleven end-to-end acceptance checks, shared by the CLI and the test suite."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .conditions import (
    ModelFlags,
    all_reports,
    deterministic_strategy_max_chsh,
    implication_audit,
    parameter_independence,
)
from .eprb import (
    OUTCOMES,
    PAIRS,
    Z,
    Scenario,
    chsh,
    conditional,
    direction,
    joint_distribution,
    joint_resolution,
    marginals,
    product_state,
    scenario_distributions,
    side_projector,
    singlet_state,
)
from .errors import QMLabError
from .expansion import (
    adapted_counts,
    MicrostateClass,
    counting_distribution,
    expand_adapted,
    expand_generic,
    imprecise_probability,
    microstate_classes,
    tensor_expansion,
)
from .hilbert import Projector, Resolution, StateVector, born, random_state
from .invariance import equal_norm_symmetry_witness
from .lambda_one import build_ensembles, run_experiment

TSIRELSON = 2 * math.sqrt(2)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d}. {self.title}: {self.detail} ({self.seconds:.1f} s)"

    def to_json(self) -> dict:
        return {"criterion": self.number, "title": self.title, "pass": self.passed, "detail": self.detail,
                "seconds": self.seconds, "metrics": self.metrics}


def _random_resolution(dim: int, k: int, rng: np.random.Generator) -> Resolution:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, _ = np.linalg.qr(g)
    cuts = np.linspace(0, dim, k + 1).astype(int)
    return Resolution(tuple(Projector.from_basis((dim,), q[:, a:b].T) for a, b in zip(cuts[:-1], cuts[1:])))


def criterion_1(instances: int = 100, dim: int = 64, sizes=(10, 100, 1000), seed: int = 1) -> CriterionResult:
    """Adapted counting within 3/n of Born, by explicit construction."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = {n: 0.0 for n in sizes}
    failures = {n: 0 for n in sizes}
    infeasible = {n: 0 for n in sizes}
    # floor allocation alone, without building the microstates
    allocation = {n: 0.0 for n in sizes}
    for _ in range(instances):
        psi = random_state((dim,), rng)
        res = _random_resolution(dim, 4, rng)
        born_p = [born(psi, p) for p in res]
        for n in sizes:
            plan = adapted_counts(psi, res, n)
            allocation[n] = max(allocation[n], max(abs(m / n - b) for m, b in zip(plan.m, born_p)))
            try:
                dist = counting_distribution(expand_adapted(psi, res, n), res)
            except QMLabError:
                infeasible[n] += 1
                failures[n] += 1
                continue
            err = max(abs(m / n - b) for m, b in zip(dist.counts, born_p))
            worst[n] = max(worst[n], err)
            if err > 3 / n:
                failures[n] += 1
    secs = time.perf_counter() - t0
    ok = all(v == 0 for v in failures.values()) and secs < 30

    def worst_text(n):
        return "n/a" if infeasible[n] == instances else f"{worst[n]:.3g}"

    detail = "; ".join(
        f"n={n}: {failures[n]} fail ({infeasible[n]} infeasible), worst {worst_text(n)} vs {3 / n:.3g}, "
        f"allocation-only worst {allocation[n]:.3g}"
        for n in sizes
    )
    return CriterionResult(1, "adapted counting vs Born", ok, detail, secs,
                           {"failures": failures, "infeasible": infeasible, "worst": worst,
                            "allocation_worst": allocation})


def criterion_2(triples: int = 1000, dim: int = 16, seed: int = 2) -> CriterionResult:
    """Imprecise interval of a generic expansion contains the Born value."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    misses, widest = 0, 0.0
    for i in range(triples):
        psi = random_state((dim,), rng)
        rank = int(rng.integers(1, dim))
        g = rng.standard_normal((rank, dim)) + 1j * rng.standard_normal((rank, dim))
        p = Projector.onto((dim,), g)
        n = int(rng.integers(2, dim + 1))
        e = expand_generic(psi, n, seed=int(rng.integers(2**63)))
        iv = imprecise_probability(e, p)
        widest = max(widest, iv.width)
        if not iv.contains(born(psi, p), slack=1e-9):
            misses += 1
    secs = time.perf_counter() - t0
    return CriterionResult(2, "imprecise containment", misses == 0,
                           f"{misses} misses in {triples} triples", secs, {"misses": misses})


def criterion_3(n: int = 1000) -> CriterionResult:
    t0 = time.perf_counter()
    sc = Scenario.tsirelson(n=n)
    psi = sc.psi()
    s_born = chsh(psi, sc, "born")
    s_count = chsh(psi, sc, "counting")
    err_b, err_c = abs(abs(s_born) - TSIRELSON), abs(abs(s_count) - TSIRELSON)
    ok = err_b <= 1e-9 and err_c <= 0.05
    return CriterionResult(3, "Tsirelson reproduction", ok,
                           f"born S={s_born:.10f} (err {err_b:.2g}), counting S={s_count:.6f} (err {err_c:.3g})",
                           time.perf_counter() - t0, {"born": s_born, "counting": s_count})


def _random_spinor(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    return v / np.linalg.norm(v)


def criterion_4(states: int = 10_000, seed: int = 4) -> CriterionResult:
    """Local strategies top out at 2; product states never exceed it."""
    t0 = time.perf_counter()
    best = deterministic_strategy_max_chsh()
    rng = np.random.default_rng(seed)
    sc = Scenario.tsirelson(d_a=1, d_b=1)
    worst = 0.0
    for _ in range(states):
        psi = product_state(_random_spinor(rng), _random_spinor(rng), 1, 1)
        worst = max(worst, abs(chsh(psi, sc, "born")))
    ok = best == 2 and isinstance(best, int) and worst <= 2 + 1e-9
    return CriterionResult(4, "classical bound", ok, f"strategy max |S| = {best}, product-state max |S| = {worst:.9f}",
                           time.perf_counter() - t0, {"strategy_max": best, "product_max": worst})


def _side_expansion(chi: np.ndarray, direction_, d: int, n: int):
    amps = np.zeros((2, d), complex)
    amps[:, 0] = chi
    psi = StateVector((2, d), amps.ravel())
    res = Resolution(tuple(side_projector(direction_, s, d) for s in (1, -1)))
    e = expand_adapted(psi, res, n)
    counts = [int(np.sum(microstate_classes(e, p) == MicrostateClass.EIG1)) for p in res]
    return e, counts


def criterion_5(states: int = 50, d: int = 16, n_a: int = 10, n_b: int = 12, seed: int = 5) -> CriterionResult:
    """Completeness for product states: exact integer counts and Born factorization."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    count_fail, born_worst = 0, 0.0
    for _ in range(states):
        chi_a, chi_b = _random_spinor(rng), _random_spinor(rng)
        x = rng.standard_normal(3)
        y = rng.standard_normal(3)
        x /= np.linalg.norm(x)
        y /= np.linalg.norm(y)
        ea, ma = _side_expansion(chi_a, x, d, n_a)
        eb, mb = _side_expansion(chi_b, y, d, n_b)
        joint = tensor_expansion(ea, eb)
        res = joint_resolution(x, y, d, d)
        counts = counting_distribution(joint, res).counts
        expected = tuple(ma[(1 - s) // 2] * mb[(1 - t) // 2] for s, t in OUTCOMES)
        if counts != expected:
            count_fail += 1
        dist = joint_distribution(product_state(chi_a, chi_b, 2, 2), x, y, "born")
        pa, pb = marginals(dist)
        born_worst = max(born_worst, *(abs(dist.p(s, t) - pa[s] * pb[t]) for s, t in OUTCOMES))
    ok = count_fail == 0 and born_worst <= 1e-12
    return CriterionResult(5, "completeness for product states", ok,
                           f"{count_fail} count mismatches, born max |p(s,t)-p(s)p(t)| = {born_worst:.2g}",
                           time.perf_counter() - t0, {"count_failures": count_fail, "born_worst": born_worst})


def criterion_6() -> CriterionResult:
    t0 = time.perf_counter()
    dist = joint_distribution(singlet_state(4, 4), Z, Z, "born")
    pa, _ = marginals(dist)
    gap = abs(pa[1] - conditional(dist, "A", 1)[1])
    ok = abs(gap - 0.5) <= 1e-9
    return CriterionResult(6, "outcome independence violated at a = b", ok,
                           f"|p(+1) - p(+1|t=+1)| = {gap:.12f}", time.perf_counter() - t0, {"gap": gap})


def _random_scenario(rng: np.random.Generator, d: int, n: int) -> Scenario:
    dirs = [v / np.linalg.norm(v) for v in rng.standard_normal((4, 3))]
    if rng.random() < 0.5:
        return Scenario(*dirs, d_a=d, d_b=d, n=n)
    return Scenario(*dirs, d_a=d, d_b=d, n=n, state="product", chi_a=_random_spinor(rng), chi_b=_random_spinor(rng))


def criterion_7(scenarios: int = 100, counting_scenarios: int = 5, n: int = 200, seed: int = 7) -> CriterionResult:
    """No marginal shift under remote setting changes."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    born_worst = 0.0
    for _ in range(scenarios):
        sc = _random_scenario(rng, 2, n)
        born_worst = max(born_worst, parameter_independence(scenario_distributions(sc.psi(), sc, "born"), 1.0).max_violation)
    count_worst = 0.0
    count_ok = True
    for i in range(counting_scenarios):
        sc = Scenario.tsirelson(n=1000) if i == 0 else _random_scenario(rng, 16, n)
        v = parameter_independence(scenario_distributions(sc.psi(), sc, "counting"), 6 / sc.n)
        count_worst = max(count_worst, v.max_violation * sc.n)
        count_ok &= v.passed
    ok = born_worst <= 1e-12 and count_ok
    return CriterionResult(7, "parameter independence", ok,
                           f"born max shift {born_worst:.2g}; counting max shift {count_worst:.3g}/n (limit 6/n)",
                           time.perf_counter() - t0, {"born": born_worst, "counting_times_n": count_worst})


def criterion_8(trials: int = 100_000, n: int = 1000, seed: int = 8) -> CriterionResult:
    """Monte Carlo frequencies track the counting values."""
    t0 = time.perf_counter()
    sc = Scenario.tsirelson(n=n)
    psi = sc.psi()
    ens = build_ensembles(psi, sc, n)
    result = run_experiment(psi, sc, n, trials, seed, "each", ensembles=ens)
    freq = result.frequencies()
    worst = -math.inf
    for p, pair in enumerate(PAIRS):
        target = np.array(result.counting[pair])
        sigma = np.sqrt(target * (1 - target) / result.trials[p])
        excess = np.abs(freq[p] - target) - (4 * sigma + 3 / n)
        worst = max(worst, float(np.max(excess)))
    s_hat, s_err = result.chsh()
    cat_frac = float(np.max(result.cat_fraction()))
    secs = time.perf_counter() - t0
    ok = worst <= 0 and abs(s_hat) > 2.5 and cat_frac <= 3 / n and secs < 60
    return CriterionResult(8, "one-world Monte Carlo", ok,
                           f"S_hat={s_hat:.4f}+-{s_err:.4f}, cat fraction {cat_frac:.4g} (limit {3 / n:.3g}), "
                           f"worst cell margin {worst:.3g}", secs,
                           {"chsh": s_hat, "chsh_stderr": s_err, "cat_fraction": cat_frac, "margin": worst})


def criterion_9(pairs: int = 100, dim: int = 64, seed: int = 9) -> CriterionResult:
    """Swapping equal-norm microstates fixes the state and the expansion."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_unitary, worst_state, bad = 0.0, 0.0, 0
    for k in range(pairs):
        psi = random_state((dim,), rng)
        if k % 2:
            res = _random_resolution(dim, 4, rng)
            e = expand_adapted(psi, res, 10)
        else:
            e = expand_generic(psi, int(rng.integers(2, 17)), seed=int(rng.integers(2**63)))
        i, j = rng.choice(e.n, size=2, replace=False)
        report = equal_norm_symmetry_witness(psi, e, int(i), int(j))
        by_name = {c.check: c for c in report.checks}
        worst_unitary = max(worst_unitary, by_name["swap unitary residual"].max_residual)
        worst_state = max(worst_state, by_name["swap fixes psi"].max_residual)
        bad += not report.passed
    ok = bad == 0 and worst_unitary <= 1e-12 and worst_state <= 1e-10
    return CriterionResult(9, "swap witnesses", ok,
                           f"{bad} failing pairs, max unitarity residual {worst_unitary:.2g}, "
                           f"max |U psi - psi|/|psi| {worst_state:.2g}", time.perf_counter() - t0,
                           {"failures": bad, "unitary": worst_unitary, "state": worst_state})


def quadratic_ratio(theta: float, d: int = 1) -> tuple[float, float]:
    """(E(theta), (1 + E(theta)) / theta^2) from the singlet born backend."""
    dist = joint_distribution(singlet_state(d, d), Z, direction(theta), "born")
    e = sum(s * t * dist.p(s, t) for s, t in OUTCOMES)
    return e, (1 + e) / theta**2


def criterion_10(thetas=(0.1, 0.05, 0.025)) -> CriterionResult:
    t0 = time.perf_counter()
    ratios = {th: quadratic_ratio(th)[1] for th in thetas}
    ok = all(0.4995 <= r <= 0.5 for r in ratios.values())
    return CriterionResult(10, "quadratic small-angle behavior", ok,
                           ", ".join(f"theta={th}: {r:.9f}" for th, r in ratios.items()),
                           time.perf_counter() - t0, {"ratios": {str(k): v for k, v in ratios.items()}})


EXPECTED_PATTERN = {
    "born-qm": {"PI": True, "OI": False, "Completeness": False, "BELL": False},
    "lambda-many-counting": {"PI": True, "OI": False, "Completeness": False, "BELL": False, "UNIQUE": False},
    "lambda-one": {"Factorizability": True, "IND": False, "BELL": False},
    "deterministic-local": {"PI": True, "OI": True, "Completeness": True, "Factorizability": True, "BELL": True},
}

AUDIT_EXAMPLES = (
    (ModelFlags(LOC=True, IND=True, UNIQUE=False, BELL=False), True),
    (ModelFlags(LOC=True, IND=False, UNIQUE=True, BELL=False), True),
    (ModelFlags(LOC=True, IND=True, UNIQUE=True, BELL=False), False),
)


def criterion_11(n: int = 1000) -> CriterionResult:
    """Built-in model rows show the expected flags, and the audit finds no contradiction."""
    t0 = time.perf_counter()
    reports = all_reports(Scenario.tsirelson(n=n))
    mismatches = []
    for r in reports:
        observed = {k: v.passed for k, v in r.checks.items()}
        observed.update(IND=r.flags.IND, UNIQUE=r.flags.UNIQUE, BELL=r.flags.BELL)
        for key, want in EXPECTED_PATTERN[r.model].items():
            if observed.get(key) != want:
                mismatches.append(f"{r.model}.{key}={observed.get(key)}")
    inconsistent = [r.model for r in reports if not r.consistent]
    audit_ok = all(all(implication_audit(f).values()) == want for f, want in AUDIT_EXAMPLES)
    ok = not mismatches and not inconsistent and audit_ok
    detail = (f"flag mismatches: {mismatches or 'none'}; inconsistent models: {inconsistent or 'none'}; "
              f"audit examples {'ok' if audit_ok else 'wrong'}")
    return CriterionResult(11, "condition report flags", ok, detail, time.perf_counter() - t0,
                           {"reports": [r.to_json() for r in reports]})


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11)


def run_all(only: tuple[int, ...] | None = None) -> list[CriterionResult]:
    return [c() for i, c in enumerate(CRITERIA, 1) if only is None or i in only]
