"""One-world deterministic model: a single microstate drawn per trial.

Each setting pair has its own adapted expansion of the state. A trial
draws one microstate uniformly and reads the outcome pair off the joint
cell that microstate lies in. Cat microstates lie in no cell; drawing one
is recorded as a skip.

Randomness comes from numpy's Philox counter-based generator. Trials are
grouped in fixed-size chunks and chunk c uses counter block c, so any
partition of chunks across workers yields the same draws.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conditions import DeterministicModel
from .eprb import OUTCOMES, PAIRS, Scenario, alice_projector, joint_resolution
from .errors import QMLabError
from .expansion import EquiampExpansion, MicrostateClass, expand_adapted, microstate_classes
from .hilbert import StateVector

CHUNK = 1 << 16
EPS_RAY = 1e-6
SCHEDULES = ("each", "round-robin") + tuple("".join(p) for p in PAIRS)
CAT = -1


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Cell label per microstate (index into OUTCOMES, or -1 for a cat)."""

    setting: tuple[str, str]
    labels: np.ndarray
    expansion: EquiampExpansion | None = None
    key: tuple = ()

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def cats(self) -> int:
        return int(np.sum(self.labels == CAT))

    def counts(self) -> tuple[int, ...]:
        return tuple(int(np.sum(self.labels == c)) for c in range(len(OUTCOMES)))


def cell_labels(e: EquiampExpansion, projectors) -> np.ndarray:
    labels = np.full(e.n, CAT, dtype=np.int64)
    for c, p in enumerate(projectors):
        labels[microstate_classes(e, p) == MicrostateClass.EIG1] = c
    return labels


def build_ensemble(psi: StateVector, x, y, n: int, setting=("x", "y"),
                   keep_expansion: bool = False) -> Ensemble:
    d_a, d_b = psi.dims[1], psi.dims[3]
    res = joint_resolution(x, y, d_a, d_b)
    e = expand_adapted(psi, res, n)
    key = (np.asarray(x, float).tobytes(), np.asarray(y, float).tobytes())
    return Ensemble(tuple(setting), cell_labels(e, res), e if keep_expansion else None, key)


def build_ensembles(psi: StateVector, scenario: Scenario, n: int | None = None,
                    keep_expansions: bool = False) -> dict[tuple[str, str], Ensemble]:
    """One adapted ensemble per setting pair, built one after another."""
    n = scenario.n if n is None else n
    dirs = scenario.directions()
    return {(x, y): build_ensemble(psi, dirs[x], dirs[y], n, (x, y), keep_expansions) for x, y in PAIRS}


@dataclass(frozen=True)
class TrialRecord:
    index: int
    setting: tuple[str, str]
    microstate: int
    outcome: tuple[int, int] | None  # None: the drawn microstate was a cat

    @property
    def skipped(self) -> bool:
        return self.outcome is None


def sample_trial(ensemble: Ensemble, rng: np.random.Generator, index: int = 0) -> TrialRecord:
    j = int(rng.integers(ensemble.n))
    label = int(ensemble.labels[j])
    return TrialRecord(index, ensemble.setting, j, None if label == CAT else OUTCOMES[label])


def _generator(seed: int, chunk: int) -> np.random.Generator:
    key = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, chunk]))


def _schedule_pairs(schedule: str, start: int, stop: int, trials: int) -> np.ndarray:
    """Setting-pair index for global trials start..stop-1."""
    idx = np.arange(start, stop)
    if schedule == "each":
        return idx // trials
    if schedule == "round-robin":
        return idx % len(PAIRS)
    return np.full(stop - start, SCHEDULES.index(schedule) - 2)


def total_trials(schedule: str, trials: int) -> int:
    return trials * len(PAIRS) if schedule == "each" else trials


def _run_chunk(chunk: int, seed: int, schedule: str, trials: int, total: int,
               labels: list[np.ndarray]) -> np.ndarray:
    """Counts[pair, cell] with cell 4 for cat skips."""
    start, stop = chunk * CHUNK, min((chunk + 1) * CHUNK, total)
    rng = _generator(seed, chunk)
    u = rng.random(stop - start)
    pairs = _schedule_pairs(schedule, start, stop, trials)
    out = np.zeros((len(PAIRS), len(OUTCOMES) + 1), dtype=np.int64)
    for p in np.unique(pairs):
        sel = pairs == p
        lab = labels[p]
        draws = np.minimum((u[sel] * len(lab)).astype(np.int64), len(lab) - 1)
        cells = lab[draws]
        cells = np.where(cells == CAT, len(OUTCOMES), cells)
        out[p] += np.bincount(cells, minlength=len(OUTCOMES) + 1)
    return out


def trial_records(ensembles, seed: int, trials: int, schedule: str = "each", limit: int | None = None):
    """Per-trial records, reproducing the draws of ``run_experiment``."""
    labels = [ensembles[p].labels for p in PAIRS]
    total = total_trials(schedule, trials)
    stop = total if limit is None else min(total, limit)
    for chunk in range(math.ceil(stop / CHUNK)):
        start = chunk * CHUNK
        u = _generator(seed, chunk).random(min(CHUNK, total - start))
        pairs = _schedule_pairs(schedule, start, start + len(u), trials)
        for i in range(min(len(u), stop - start)):
            lab = labels[pairs[i]]
            j = min(int(u[i] * len(lab)), len(lab) - 1)
            c = int(lab[j])
            yield TrialRecord(start + i, PAIRS[pairs[i]], j, None if c == CAT else OUTCOMES[c])


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    n: int
    seed: int
    schedule: str
    counts: np.ndarray  # (4 pairs, 4 cells) integer counts
    cats: np.ndarray  # (4 pairs,)
    counting: dict = field(default_factory=dict)  # pair -> m/n per cell

    @property
    def trials(self) -> np.ndarray:
        return self.counts.sum(axis=1) + self.cats

    def frequencies(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.counts / self.trials[:, None]

    def stderr(self) -> np.ndarray:
        f = self.frequencies()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(f * (1 - f) / self.trials[:, None])

    def correlations(self) -> np.ndarray:
        """Per pair, mean of s*t over non-cat draws, with its standard error."""
        st = np.array([s * t for s, t in OUTCOMES])
        kept = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            e = self.counts @ st / kept
        return e

    def chsh(self) -> tuple[float, float]:
        signs = np.array([1, -1, 1, 1])
        e = self.correlations()
        kept = self.counts.sum(axis=1)
        var = (1 - e**2) / kept
        return float(signs @ e), float(math.sqrt(np.sum(var)))

    def cat_fraction(self) -> np.ndarray:
        return self.cats / self.trials

    def to_json(self) -> dict:
        freq, err = self.frequencies(), self.stderr()
        s, sigma = self.chsh()
        pairs = []
        for p, pair in enumerate(PAIRS):
            if self.trials[p] == 0:
                continue
            pairs.append({
                "setting_pair": "".join(pair),
                "trials": int(self.trials[p]),
                "cats": int(self.cats[p]),
                "cells": [
                    {"s": s_, "t": t_, "count": int(self.counts[p, c]), "frequency": float(freq[p, c]),
                     "stderr": float(err[p, c]),
                     "counting": self.counting.get(pair, [None] * 4)[c]}
                    for c, (s_, t_) in enumerate(OUTCOMES)
                ],
            })
        return {
            "n": self.n, "seed": self.seed, "schedule": self.schedule, "pairs": pairs,
            "chsh": None if math.isnan(s) else s, "chsh_stderr": None if math.isnan(sigma) else sigma,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["setting_pair", "s", "t", "count", "trials", "frequency", "stderr", "counting", "cats"])
        freq, err = self.frequencies(), self.stderr()
        for p, pair in enumerate(PAIRS):
            if self.trials[p] == 0:
                continue
            for c, (s, t) in enumerate(OUTCOMES):
                counting = self.counting.get(pair, [float("nan")] * 4)[c]
                w.writerow(["".join(pair), s, t, int(self.counts[p, c]), int(self.trials[p]),
                            f"{freq[p, c]:.9g}", f"{err[p, c]:.9g}", f"{counting:.9g}", int(self.cats[p])])
        return buf.getvalue()


def run_experiment(psi: StateVector, scenario: Scenario, n: int | None = None, trials: int = 100_000,
                   seed: int = 0, schedule: str = "each", workers: int = 1,
                   ensembles: dict | None = None) -> ExperimentResult:
    """Draw ``trials`` microstates (per pair for schedule "each") and tally outcomes."""
    if trials < 1:
        raise QMLabError("trials must be at least 1")
    if schedule not in SCHEDULES:
        raise QMLabError(f"schedule must be one of {SCHEDULES}, got {schedule!r}")
    n = scenario.n if n is None else n
    if ensembles is None:
        ensembles = build_ensembles(psi, scenario, n)
    labels = [ensembles[p].labels for p in PAIRS]
    total = total_trials(schedule, trials)
    chunks = range(math.ceil(total / CHUNK))

    def job(c):
        return _run_chunk(c, seed, schedule, trials, total, labels)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    tally = np.sum(parts, axis=0)
    counting = {pair: [m / ensembles[pair].n for m in ensembles[pair].counts()] for pair in PAIRS}
    return ExperimentResult(n, seed, schedule, tally[:, :4], tally[:, 4], counting)


def run_config(config: dict) -> tuple[ExperimentResult, Scenario]:
    """Run from a mapping {scenario, n, trials, seed, schedule}."""
    known = {"scenario", "n", "trials", "seed", "schedule", "workers"}
    unknown = set(config) - known
    if unknown:
        raise QMLabError(f"unknown run field(s): {sorted(unknown)}")
    if "scenario" not in config:
        raise QMLabError("missing run field 'scenario'")
    scenario = Scenario.from_dict(config["scenario"])
    for key in ("n", "trials", "seed", "workers"):
        if key in config and (not isinstance(config[key], int) or isinstance(config[key], bool)):
            raise QMLabError(f"field {key!r}: expected an integer")
    result = run_experiment(
        scenario.psi(), scenario, config.get("n", scenario.n), config.get("trials", 100_000),
        config.get("seed", 0), config.get("schedule", "each"), config.get("workers", 1),
    )
    return result, scenario


# -- contextuality -----------------------------------------------------------

def max_overlap(e1: EquiampExpansion, e2: EquiampExpansion) -> float:
    """Largest |<u, v>| / (|u| |v|) over microstates u of e1 and v of e2."""
    g = e1.matrix.conj() @ e2.matrix.T
    return float(np.max(np.abs(g)) / (e1.common_norm * e2.common_norm))


@dataclass(frozen=True)
class ContextualityReport:
    max_overlap: float
    disjoint: bool
    alice_counts: tuple[tuple[int, int], tuple[int, int]]  # per ensemble: (#s=+1, #s=-1)
    max_count_shift: int
    allowance: int
    marginal_preserved: bool
    setting_dependent: bool

    @property
    def ind(self) -> bool:
        return not self.setting_dependent

    def to_json(self) -> dict:
        return {
            "max_overlap": self.max_overlap, "disjoint": self.disjoint,
            "alice_counts": [list(c) for c in self.alice_counts],
            "max_count_shift": self.max_count_shift, "allowance": self.allowance,
            "marginal_preserved": self.marginal_preserved, "setting_dependent": self.setting_dependent,
            "IND": self.ind,
        }


def contextuality_audit(psi: StateVector, x, y, y_prime, n: int) -> ContextualityReport:
    """Compare the ensembles adapted to (x, y) and (x, y')."""
    d_a, d_b = psi.dims[1], psi.dims[3]
    e1 = build_ensemble(psi, x, y, n, ("x", "y"), keep_expansion=True).expansion
    e2 = build_ensemble(psi, x, y_prime, n, ("x", "y'"), keep_expansion=True).expansion
    overlap = max_overlap(e1, e2)
    counts = []
    for e in (e1, e2):
        counts.append(tuple(
            int(np.sum(microstate_classes(e, alice_projector(x, s, d_a, d_b)) == MicrostateClass.EIG1))
            for s in (1, -1)
        ))
    shift = max(abs(counts[0][i] - counts[1][i]) for i in range(2))
    allowance = len(OUTCOMES) - 1
    same = e1.matrix.shape == e2.matrix.shape and np.allclose(e1.matrix, e2.matrix, atol=1e-12)
    return ContextualityReport(
        overlap, overlap < 1 - EPS_RAY, (counts[0], counts[1]), shift, allowance, shift <= allowance, not same,
    )


def lambda_one_model(ensembles: dict[tuple[str, str], Ensemble]) -> DeterministicModel:
    """Hidden state = microstate; each pair draws uniformly from its own non-cat microstates.

    Pairs with identical measurement directions share their hidden states.
    """
    groups: dict[tuple, list[int]] = {}
    for p, pair in enumerate(PAIRS):
        groups.setdefault(ensembles[pair].key or pair, []).append(p)
    blocks_t, blocks_w = [], []
    for cols in groups.values():
        ens = ensembles[PAIRS[cols[0]]]
        lab = ens.labels[ens.labels != CAT]
        t = np.full((len(lab), 4, 2, 2), np.nan)
        w = np.zeros((len(lab), 4))
        cell = np.zeros((len(lab), 2, 2))
        cell.reshape(len(lab), 4)[np.arange(len(lab)), lab] = 1.0
        for p in cols:
            t[:, p] = cell
            w[:, p] = 1.0 / len(lab)
        blocks_t.append(t)
        blocks_w.append(w)

    witness = {}
    with_exp = {pair: e.expansion for pair, e in ensembles.items() if e.expansion is not None}
    overlaps = []
    for x in ("a", "a'"):
        e1, e2 = with_exp.get((x, "b")), with_exp.get((x, "b'"))
        if e1 is not None and e2 is not None and ensembles[(x, "b")].key != ensembles[(x, "b'")].key:
            overlaps.append(max_overlap(e1, e2))
    if overlaps:
        witness["max_cross_ensemble_overlap"] = max(overlaps)
    witness["distinct_ensembles"] = len(groups)
    return DeterministicModel("lambda-one", np.concatenate(blocks_t), np.concatenate(blocks_w), witness)


def results_json(result: ExperimentResult) -> str:
    return json.dumps(result.to_json(), indent=2)
