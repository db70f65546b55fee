"""Locality conditions, deterministic models, and the propositional audit.

Observable-level checks (parameter independence, outcome independence,
completeness) act on the four joint distributions of a scenario.
Deterministic hidden-variable models are checked per hidden state, since
that is where factorizability and its relatives are stated.

Outcome arrays use index 0 for outcome +1 and index 1 for outcome -1.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import NotDeterministicError, QMLabError
from .eprb import (
    EPS_COND,
    OUTCOMES,
    PAIRS,
    JointDistribution,
    Scenario,
    chsh_from_distributions,
    joint_distribution,
    marginals,
    scenario_distributions,
)
from .hilbert import StateVector

BORN_TOL = 1e-10
BELL_SLACK = 1e-9
MODELS = ("born-qm", "lambda-many-counting", "lambda-one", "deterministic-local")

Distributions = Mapping[tuple[str, str], JointDistribution]


@dataclass(frozen=True)
class ConditionVerdict:
    name: str
    passed: bool
    max_violation: float
    tolerance: float
    skipped: tuple[str, ...] = ()

    def __post_init__(self):
        if self.passed != (self.max_violation <= self.tolerance):
            raise QMLabError("verdict must pass exactly when max_violation <= tolerance")

    @classmethod
    def of(cls, name: str, violation: float, tolerance: float, skipped=()) -> "ConditionVerdict":
        violation = float(violation)
        return cls(name, violation <= tolerance, violation, float(tolerance), tuple(skipped))

    def to_json(self) -> dict:
        return {
            "condition": self.name, "pass": self.passed, "max_violation": self.max_violation,
            "tolerance": self.tolerance, "skipped": list(self.skipped),
        }


@dataclass(frozen=True)
class NotApplicable:
    name: str
    reason: str
    witness: dict = field(default_factory=dict)

    passed = None

    def to_json(self) -> dict:
        return {"condition": self.name, "pass": None, "reason": self.reason, "witness": self.witness}


def default_tolerance(check: str, backend: str, n: int | None) -> float:
    """Born: 1e-10. Counting: 6/n, doubled for outcome independence (ratio of two cells)."""
    if backend == "born":
        return BORN_TOL
    if n is None:
        raise QMLabError("counting tolerances need n")
    return (12.0 if check == "outcome-independence" else 6.0) / n


# -- observable level --------------------------------------------------------

def parameter_independence(dists: Distributions, tol: float) -> ConditionVerdict:
    worst = 0.0
    for x in ("a", "a'"):
        pa1, _ = marginals(dists[(x, "b")])
        pa2, _ = marginals(dists[(x, "b'")])
        worst = max(worst, *(abs(pa1[s] - pa2[s]) for s in (1, -1)))
    for y in ("b", "b'"):
        _, pb1 = marginals(dists[("a", y)])
        _, pb2 = marginals(dists[("a'", y)])
        worst = max(worst, *(abs(pb1[t] - pb2[t]) for t in (1, -1)))
    return ConditionVerdict.of("parameter-independence", worst, tol)


def outcome_independence(dists: Distributions, tol: float, eps: float = EPS_COND) -> ConditionVerdict:
    """Both wings: |p(s) - p(s | remote t)| over settings and outcomes."""
    worst, skipped = 0.0, []
    for (x, y), d in dists.items():
        pa, pb = marginals(d)
        for side, own, other in (("A", pa, pb), ("B", pb, pa)):
            for given in (1, -1):
                if other[given] <= eps:
                    skipped.append(f"{x}{y}:{side}|{given:+d}")
                    continue
                for o in (1, -1):
                    joint = d.p(o, given) if side == "A" else d.p(given, o)
                    worst = max(worst, abs(own[o] - joint / other[given]))
    return ConditionVerdict.of("outcome-independence", worst, tol, skipped)


def completeness(dists: Distributions | JointDistribution, tol: float) -> ConditionVerdict:
    if isinstance(dists, JointDistribution):
        dists = {dists.setting: dists}
    worst = 0.0
    for d in dists.values():
        pa, pb = marginals(d)
        worst = max(worst, *(abs(d.p(s, t) - pa[s] * pb[t]) for s, t in OUTCOMES))
    return ConditionVerdict.of("completeness", worst, tol)


def check_parameter_independence(psi: StateVector, scenario: Scenario, backend: str | None = None,
                                 tol: float | None = None) -> ConditionVerdict:
    backend = backend or scenario.backend
    tol = default_tolerance("parameter-independence", backend, scenario.n) if tol is None else tol
    return parameter_independence(scenario_distributions(psi, scenario, backend), tol)


def check_outcome_independence(psi: StateVector, scenario: Scenario, backend: str | None = None,
                               tol: float | None = None) -> ConditionVerdict:
    backend = backend or scenario.backend
    tol = default_tolerance("outcome-independence", backend, scenario.n) if tol is None else tol
    return outcome_independence(scenario_distributions(psi, scenario, backend), tol)


def check_completeness(psi: StateVector, x, y, backend: str = "born", tol: float | None = None,
                       n: int | None = None) -> ConditionVerdict:
    tol = default_tolerance("completeness", backend, n) if tol is None else tol
    return completeness(joint_distribution(psi, x, y, backend, n), tol)


# -- deterministic strategies ------------------------------------------------

def chsh_of_strategy(sa: int, sa_prime: int, tb: int, tb_prime: int) -> int:
    return sa * tb - sa * tb_prime + sa_prime * tb + sa_prime * tb_prime


def deterministic_strategy_max_chsh() -> int:
    """Largest |S| over the 16 local outcome assignments, in integer arithmetic."""
    return max(abs(chsh_of_strategy(*s)) for s in itertools.product((1, -1), repeat=4))


def _point_mass(s: int, t: int) -> np.ndarray:
    out = np.zeros((2, 2))
    out[(1 - s) // 2, (1 - t) // 2] = 1.0
    return out


@dataclass(frozen=True, eq=False)
class DeterministicModel:
    """Hidden states with per-pair outcome tables and per-pair weights.

    ``tables[l, p]`` is the 2x2 joint table of hidden state l at setting pair
    ``PAIRS[p]`` (NaN where l does not occur at that pair). ``weights[l, p]``
    is the probability of l at pair p; each column sums to one.
    """

    name: str
    tables: np.ndarray
    weights: np.ndarray
    witness: dict = field(default_factory=dict)

    def __post_init__(self):
        L = self.tables.shape[0]
        if self.tables.shape != (L, 4, 2, 2) or self.weights.shape != (L, 4):
            raise QMLabError("tables must be (L, 4, 2, 2) and weights (L, 4)")
        defined = ~np.isnan(self.tables[:, :, 0, 0])
        if np.any((self.weights > 0) & ~defined):
            raise QMLabError("positive weight on an undefined table")
        if not np.allclose(self.weights.sum(axis=0), 1.0, atol=1e-12):
            raise QMLabError("weights must sum to one per setting pair")

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.tables[:, :, 0, 0])

    @property
    def size(self) -> int:
        return self.tables.shape[0]

    def distributions(self) -> dict[tuple[str, str], JointDistribution]:
        out = {}
        for p, pair in enumerate(PAIRS):
            w = self.weights[:, p]
            mask = w > 0
            joint = np.einsum("l,lij->ij", w[mask], self.tables[mask, p])
            out[pair] = JointDistribution(pair, tuple(float(joint[(1 - s) // 2, (1 - t) // 2]) for s, t in OUTCOMES),
                                          "model")
        return out


def strategy_model() -> DeterministicModel:
    """All 16 local strategies, uniformly weighted."""
    strategies = list(itertools.product((1, -1), repeat=4))
    tables = np.empty((16, 4, 2, 2))
    for l, (sa, sap, tb, tbp) in enumerate(strategies):
        s_of = {"a": sa, "a'": sap}
        t_of = {"b": tb, "b'": tbp}
        for p, (x, y) in enumerate(PAIRS):
            tables[l, p] = _point_mass(s_of[x], t_of[y])
    return DeterministicModel("strategies", tables, np.full((16, 4), 1 / 16))


def local_sphere_model(scenario: Scenario, samples: int = 20000, seed: int = 0) -> DeterministicModel:
    """Hidden unit vector lam: s = sign(x . lam), t = -sign(y . lam)."""
    rng = np.random.default_rng(seed)
    lam = rng.standard_normal((samples, 3))
    lam /= np.linalg.norm(lam, axis=1, keepdims=True)
    dirs = scenario.directions()

    def sgn(v):
        return np.where(v >= 0, 1, -1)

    tables = np.zeros((samples, 4, 2, 2))
    rows = np.arange(samples)
    for p, (x, y) in enumerate(PAIRS):
        s = sgn(lam @ dirs[x])
        t = -sgn(lam @ dirs[y])
        tables[rows, p, (1 - s) // 2, (1 - t) // 2] = 1.0
    return DeterministicModel("deterministic-local", tables, np.full((samples, 4), 1 / samples))


def _require_deterministic(model: DeterministicModel) -> None:
    vals = model.tables[model.defined]
    if not np.all((vals == 0) | (vals == 1)) or not np.allclose(vals.sum(axis=(1, 2)), 1):
        raise NotDeterministicError(f"not deterministic: model {model.name!r} has non-0/1 outcome tables")


def _side_marginals(model: DeterministicModel) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Per hidden state, each wing's outcome marginal averaged over the remote settings it occurs with."""
    defined = model.defined
    alice, bob = {}, {}
    for side, names, axis, out in (("A", ("a", "a'"), 2, alice), ("B", ("b", "b'"), 1, bob)):
        for name in names:
            cols = [p for p, pair in enumerate(PAIRS) if pair[0 if side == "A" else 1] == name]
            marg = np.nansum(np.stack([model.tables[:, p].sum(axis=axis) for p in cols]), axis=0)
            count = defined[:, cols].sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                out[name] = marg / count[:, None]
    return alice, bob


def check_factorizability(model: DeterministicModel, sample: np.ndarray | None = None,
                          tol: float = 1e-12) -> ConditionVerdict:
    """p(s,t|lam) = p_x(s|lam) p_y(t|lam), wing marginals averaged over remote settings."""
    _require_deterministic(model)
    alice, bob = _side_marginals(model)
    rows = np.arange(model.size) if sample is None else np.asarray(sample)
    worst = 0.0
    for p, (x, y) in enumerate(PAIRS):
        r = rows[model.defined[rows, p]]
        if r.size == 0:
            continue
        prod = alice[x][r, :, None] * bob[y][r, None, :]
        worst = max(worst, float(np.max(np.abs(model.tables[r, p] - prod))))
    return ConditionVerdict.of("factorizability", worst, tol)


def check_lambda_parameter_independence(model: DeterministicModel, sides: tuple[str, ...] = ("A", "B"),
                                        tol: float = 1e-12) -> ConditionVerdict | NotApplicable:
    """Each wing's per-state marginal must not depend on the remote setting.

    Only meaningful when the same hidden states occur under both remote
    settings; otherwise NotApplicable with the model's witness.
    """
    defined = model.defined
    comparisons = []
    if "A" in sides:
        comparisons += [((x, "b"), (x, "b'"), 2) for x in ("a", "a'")]
    if "B" in sides:
        comparisons += [(("a", y), ("a'", y), 1) for y in ("b", "b'")]
    worst = 0.0
    for p1, p2, axis in comparisons:
        i, j = PAIRS.index(p1), PAIRS.index(p2)
        if not np.array_equal(defined[:, i], defined[:, j]):
            return NotApplicable(
                "lambda-parameter-independence",
                f"hidden states at {''.join(p1)} and {''.join(p2)} differ; the identity has no common argument",
                dict(model.witness),
            )
        r = defined[:, i]
        if r.any():
            diff = model.tables[r, i].sum(axis=axis) - model.tables[r, j].sum(axis=axis)
            worst = max(worst, float(np.max(np.abs(diff))))
    return ConditionVerdict.of("lambda-parameter-independence", worst, tol)


def check_lambda_outcome_independence(model: DeterministicModel, tol: float = 1e-12) -> ConditionVerdict:
    worst, skipped = 0.0, []
    for p, pair in enumerate(PAIRS):
        t = model.tables[model.defined[:, p], p]
        pa, pb = t.sum(axis=2), t.sum(axis=1)
        for side, own, other in (("A", pa, pb), ("B", pb, pa)):
            for g in range(2):
                ok = other[:, g] > EPS_COND
                if not ok.all():
                    skipped.append(f"{''.join(pair)}:{side}|{1 - 2 * g:+d} ({int((~ok).sum())} states)")
                joint = t[ok, :, g] if side == "A" else t[ok, g, :]
                if joint.size:
                    worst = max(worst, float(np.max(np.abs(own[ok] - joint / other[ok, g][:, None]))))
    return ConditionVerdict.of("outcome-independence", worst, tol, skipped)


def check_lambda_completeness(model: DeterministicModel, tol: float = 1e-12) -> ConditionVerdict:
    worst = 0.0
    for p in range(4):
        t = model.tables[model.defined[:, p], p]
        if t.size:
            prod = t.sum(axis=2)[:, :, None] * t.sum(axis=1)[:, None, :]
            worst = max(worst, float(np.max(np.abs(t - prod))))
    return ConditionVerdict.of("completeness", worst, tol)


def measurement_independence(model: DeterministicModel, tol: float = 1e-12) -> bool:
    """The hidden-state distribution is the same at every setting pair."""
    w = model.weights
    return bool(np.max(np.abs(w - w[:, :1])) <= tol)


def model_chsh(model: DeterministicModel) -> float:
    return chsh_from_distributions(model.distributions())


# -- propositional audit -----------------------------------------------------

@dataclass(frozen=True)
class ModelFlags:
    LOC: bool
    IND: bool
    UNIQUE: bool
    BELL: bool


IMPLICATIONS = (
    ("(LOC & IND & UNIQUE) -> BELL", lambda f: not (f.LOC and f.IND and f.UNIQUE) or f.BELL),
    ("(LOC & IND & !BELL) -> !UNIQUE", lambda f: not (f.LOC and f.IND and not f.BELL) or not f.UNIQUE),
    ("(LOC & UNIQUE & !BELL) -> !IND", lambda f: not (f.LOC and f.UNIQUE and not f.BELL) or not f.IND),
)


def implication_audit(flags: ModelFlags) -> dict[str, bool]:
    """Truth value of each implication; a False entry is an inconsistency."""
    return {name: rule(flags) for name, rule in IMPLICATIONS}


# -- report ------------------------------------------------------------------

DECLARED = {
    # model: (LOC, UNIQUE)
    "born-qm": (False, True),
    "lambda-many-counting": (True, False),
    "lambda-one": (True, True),
    "deterministic-local": (True, True),
}


@dataclass(frozen=True, eq=False)
class ConditionReport:
    model: str
    checks: dict
    flags: ModelFlags
    chsh: float
    audit: dict[str, bool]

    @property
    def consistent(self) -> bool:
        return all(self.audit.values())

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "checks": {k: v.to_json() for k, v in self.checks.items()},
            "flags": {"LOC": self.flags.LOC, "IND": self.flags.IND, "UNIQUE": self.flags.UNIQUE,
                      "BELL": self.flags.BELL},
            "S": self.chsh,
            "abs_S": abs(self.chsh),
            "audit": self.audit,
            "consistent": self.consistent,
        }


def condition_report(model: str, scenario: Scenario, n: int | None = None, samples: int = 20000,
                     seed: int = 0) -> ConditionReport:
    """Run every applicable check for one of the built-in models."""
    if model not in MODELS:
        raise QMLabError(f"unknown model {model!r}; expected one of {MODELS}")
    n = scenario.n if n is None else n
    psi = scenario.psi()
    checks: dict = {}
    if model in ("born-qm", "lambda-many-counting"):
        backend = "born" if model == "born-qm" else "counting"
        dists = scenario_distributions(psi, scenario, backend, n)
        checks["PI"] = parameter_independence(dists, default_tolerance("parameter-independence", backend, n))
        checks["OI"] = outcome_independence(dists, default_tolerance("outcome-independence", backend, n))
        checks["Completeness"] = completeness(dists, default_tolerance("completeness", backend, n))
        # the state itself is the only ontic input and is shared by every setting pair
        ind = True
        s_value = chsh_from_distributions(dists)
    else:
        if model == "lambda-one":
            from .lambda_one import build_ensembles, lambda_one_model

            dm = lambda_one_model(build_ensembles(psi, scenario, n, keep_expansions=True))
            pi_tol = default_tolerance("parameter-independence", "counting", n)
        else:
            dm = local_sphere_model(scenario, samples, seed)
            pi_tol = BORN_TOL
        checks["PI"] = parameter_independence(dm.distributions(), pi_tol)
        checks["OI"] = check_lambda_outcome_independence(dm)
        checks["Completeness"] = check_lambda_completeness(dm)
        checks["Factorizability"] = check_factorizability(dm)
        checks["lambda-PI"] = check_lambda_parameter_independence(dm)
        ind = measurement_independence(dm)
        s_value = model_chsh(dm)
    loc, unique = DECLARED[model]
    flags = ModelFlags(LOC=loc, IND=ind, UNIQUE=unique, BELL=abs(s_value) <= 2 + BELL_SLACK)
    return ConditionReport(model, checks, flags, float(s_value), implication_audit(flags))


def _cell(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, NotApplicable):
        return "n/a"
    return "pass" if v.passed else "FAIL"


def _flag(b: bool) -> str:
    return "T" if b else "F"


COLUMNS = ("PI", "OI", "Completeness", "Factorizability", "IND", "UNIQUE", "LOC", "|S|", "BELL", "audit")


def report_table(reports: list[ConditionReport]) -> str:
    """Markdown table, one row per model."""
    lines = ["| model | " + " | ".join(COLUMNS) + " |", "|" + "---|" * (len(COLUMNS) + 1)]
    for r in reports:
        cells = [
            _cell(r.checks.get("PI")), _cell(r.checks.get("OI")), _cell(r.checks.get("Completeness")),
            _cell(r.checks.get("Factorizability")), _flag(r.flags.IND), _flag(r.flags.UNIQUE),
            _flag(r.flags.LOC), f"{abs(r.chsh):.9g}", _flag(r.flags.BELL),
            "consistent" if r.consistent else "INCONSISTENT",
        ]
        lines.append(f"| {r.model} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def report_json(reports: list[ConditionReport]) -> str:
    return json.dumps([r.to_json() for r in reports], indent=2)


def all_reports(scenario: Scenario, n: int | None = None, seed: int = 0) -> list[ConditionReport]:
    return [condition_report(m, scenario, n, seed=seed) for m in MODELS]

