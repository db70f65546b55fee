"""Equiamplitude expansions of a state into orthogonal equal-norm microstates.

Two constructions are provided. ``expand_generic`` splits a state along a
seeded random orthonormal frame; ``expand_adapted`` splits it so that every
microstate but at most k-1 lies inside one cell of a k-cell resolution.
Both use a single reflection on the coefficient space to turn a target
coefficient vector (r, ..., r, delta) into a unit vector, which keeps the
construction O(n * dim) and deterministic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import DegenerateStateError, DimensionError, InsufficientDimensionError, QMLabError, RankError
from .hilbert import Projector, Resolution, StateVector, row_norms, tensor

TAU_EXP = 1e-9
TAU_CLS = 1e-8

# counts within this of the next integer are rounded up (guards floor against rounding noise)
_FLOOR_SLACK = 1e-9
# a cell remainder with delta^2 below this many r^2 is folded into the cell's eigen microstates
_ABSORB = 1e-10
# a cell with no eigen microstates and amplitude below this fraction of ||psi|| is dropped
_NEGLIGIBLE = 1e-13
# relative norm below which a Gram-Schmidt column counts as dependent
_COLLAPSE = 1e-8
# spawn key separating expansion streams from other uses of the same seed
_STREAM = 0x45E


class MicrostateClass(enum.IntEnum):
    EIG0 = 0
    EIG1 = 1
    CAT = 2


class ClassCounts(NamedTuple):
    eig1: int
    eig0: int
    cat: int


@dataclass(frozen=True)
class ImpreciseProbability:
    lower: float
    upper: float

    def __post_init__(self):
        if not 0.0 <= self.lower <= self.upper <= 1.0:
            raise QMLabError(f"invalid probability interval [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, p: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= p <= self.upper + slack


@dataclass(frozen=True, eq=False)
class EquiampExpansion:
    """Microstates stored as the rows of ``matrix`` (shape n x dim)."""

    parent: StateVector
    matrix: np.ndarray
    tolerance: float = TAU_EXP

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[1] != self.parent.dim or m.shape[0] < 1:
            raise DimensionError(f"microstate matrix of shape {m.shape} for a state of dimension {self.parent.dim}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def common_norm(self) -> float:
        return self.parent.norm() / math.sqrt(self.n)

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, j: int) -> StateVector:
        return StateVector(self.parent.dims, self.matrix[j], self.parent.roles)

    @cached_property
    def microstates(self) -> tuple[StateVector, ...]:
        return tuple(self[j] for j in range(self.n))

    def residuals(self) -> dict[str, float]:
        """Relative defects of the three expansion invariants.

        orthogonality is the largest normalized overlap between distinct
        microstates; norm and sum are measured in units of ||psi||.
        """
        psi_norm = self.parent.norm()
        r = self.common_norm
        norms = np.linalg.norm(self.matrix, axis=1)
        gram = self.matrix.conj() @ self.matrix.T
        np.fill_diagonal(gram, 0.0)
        return {
            "orthogonality": float(np.max(np.abs(gram)) / r**2) if self.n > 1 else 0.0,
            "norm": float(np.max(np.abs(norms - r)) / psi_norm),
            "sum": float(np.linalg.norm(self.matrix.sum(axis=0) - self.parent.amplitudes) / psi_norm),
        }

    def is_valid(self, tol: float | None = None) -> bool:
        tol = self.tolerance if tol is None else tol
        return all(v <= tol for v in self.residuals().values())

    def to_json(self, classes: dict[str, list[int]] | None = None) -> dict:
        out = {
            "parent": self.parent.to_json(),
            "n": self.n,
            "microstates": [{"re": row.real.tolist(), "im": row.imag.tolist()} for row in self.matrix],
        }
        if classes:
            out["classes"] = classes
        return out

    @classmethod
    def from_json(cls, data: dict) -> "EquiampExpansion":
        parent = StateVector.from_json(data["parent"])
        rows = np.array([np.asarray(m["re"]) + 1j * np.asarray(m["im"]) for m in data["microstates"]])
        if rows.shape[0] != data.get("n", rows.shape[0]):
            raise DimensionError("microstate count does not match n")
        return cls(parent, rows)


def _check_parent(psi: StateVector) -> float:
    nrm = psi.norm()
    if nrm == 0.0:
        raise DegenerateStateError()
    return nrm


def _mgs(a: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Modified Gram-Schmidt on the columns of ``a`` (first column kept in direction).

    A column that collapses onto the span of its predecessors is replaced by
    a fresh draw from ``rng``, orthogonalized against the finished columns.
    """
    q = np.array(a, dtype=complex)
    scale = np.linalg.norm(q, axis=0)
    for j in range(q.shape[1]):
        nrm = np.linalg.norm(q[:, j])
        attempts = 0
        while nrm <= _COLLAPSE * scale[j]:
            if rng is None or j == 0 or attempts == 8:
                raise QMLabError("Gram-Schmidt frame is rank deficient")
            fresh = rng.normal(size=q.shape[0]) + 1j * rng.normal(size=q.shape[0])
            scale[j] = np.linalg.norm(fresh)
            for i in range(j):
                fresh -= q[:, i] * np.vdot(q[:, i], fresh)
            q[:, j], nrm, attempts = fresh, np.linalg.norm(fresh), attempts + 1
        q[:, j] /= nrm
        if j + 1 < q.shape[1]:
            q[:, j + 1:] -= np.outer(q[:, j], q[:, j].conj() @ q[:, j + 1:])
    return q


def _unit_to_e1(chat: np.ndarray) -> tuple[np.ndarray, float]:
    # orthogonal W = -(I - 2 w w^T / ww) with W chat = e1; chat has a non-negative first entry
    w = np.array(chat, dtype=float)
    w[0] += 1.0
    return w, float(w @ w)


def expand_generic(psi: StateVector, n: int, seed: int) -> EquiampExpansion:
    """Split ``psi`` into n microstates along a seeded random frame."""
    nrm = _check_parent(psi)
    if n < 1:
        raise QMLabError("n must be at least 1")
    if n > psi.dim:
        raise InsufficientDimensionError(f"insufficient dimension: n={n} exceeds dim={psi.dim}")
    if n == 1:
        return EquiampExpansion(psi, psi.amplitudes[None, :])
    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(_STREAM,)))
    cols = np.empty((psi.dim, n), dtype=complex)
    cols[:, 0] = psi.amplitudes
    cols[:, 1:] = rng.normal(size=(psi.dim, n - 1)) + 1j * rng.normal(size=(psi.dim, n - 1))
    frame = _mgs(cols, rng)
    r = nrm / math.sqrt(n)
    w, ww = _unit_to_e1(np.full(n, 1.0 / math.sqrt(n)))
    # rows xi_j = r * (F W)[:, j]; W is symmetric
    fw = -(frame - (2.0 / ww) * np.outer(frame @ w, w))
    return EquiampExpansion(psi, r * fw.T)


class AdaptedPlan(NamedTuple):
    """Microstate budget of an adapted expansion: m[i] eigen microstates per cell and c cats."""

    n: int
    m: tuple[int, ...]
    cats: int
    amplitudes: tuple[float, ...]


def adapted_counts(psi: StateVector, resolution: Resolution, n: int) -> AdaptedPlan:
    """Floor allocation m_i = floor(n ||P_i psi||^2 / ||psi||^2) and the resulting cat count."""
    nrm = _check_parent(psi)
    k = len(resolution)
    if n < k:
        raise QMLabError(f"n={n} is smaller than the number of cells k={k}")
    alphas = tuple(float(np.linalg.norm(p.coords(psi.amplitudes))) for p in resolution)
    m = tuple(int(math.floor(n * (a / nrm) ** 2 + _FLOOR_SLACK)) for a in alphas)
    return AdaptedPlan(n, m, n - sum(m), alphas)


def _cell_block(yhat: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Rows (in range coordinates) of orthogonal vectors with norms ``coeffs`` summing to ||coeffs|| * yhat.

    Uses U = -omega (I - 2 v v^H / vv) with U e1 = yhat for the frame and a
    real reflection W with W (coeffs/||coeffs||) = e1 on the coefficients.
    """
    big, k = yhat.size, coeffs.size
    omega = yhat[0] / abs(yhat[0]) if abs(yhat[0]) > 0 else 1.0
    v = yhat.astype(complex)
    v[0] += omega
    vv = float(np.vdot(v, v).real)
    a = (-2.0 / vv) * np.outer(v, v[:k].conj())
    a[np.arange(k), np.arange(k)] += 1.0
    w, ww = _unit_to_e1(coeffs / np.linalg.norm(coeffs))
    uw = omega * (a - (2.0 / ww) * np.outer(a @ w, w))
    return (uw * coeffs[None, :]).T


def expand_adapted(psi: StateVector, resolution: Resolution, n: int) -> EquiampExpansion:
    """Expansion of ``psi`` into n microstates, all but at most k-1 inside a single cell.

    Rows are ordered cell by cell (m_0 eigenstates of cell 0, then cell 1, ...)
    followed by the cat microstates.
    """
    nrm = _check_parent(psi)
    if psi.dims != resolution.space_dims:
        raise DimensionError(f"resolution on {resolution.space_dims} applied to state on {psi.dims}")
    plan = adapted_counts(psi, resolution, n)
    for p, m in zip(resolution, plan.m):
        if p.rank < m + 1:
            raise RankError(f"projector rank too small for requested n: rank {p.rank} < m+1 = {m + 1}")
    r = nrm / math.sqrt(n)

    blocks, remainders, deltas = [], [], []
    for p, m, alpha in zip(resolution, plan.m, plan.amplitudes):
        y = p.coords(psi.amplitudes)
        if m == 0:
            if alpha > _NEGLIGIBLE * nrm:
                remainders.append(p.embed(y))
                deltas.append(alpha)
            continue
        delta2 = alpha**2 - m * r**2
        if delta2 <= _ABSORB * r**2:
            coeffs = np.full(m, alpha / math.sqrt(m))
        else:
            coeffs = np.append(np.full(m, r), math.sqrt(delta2))
        rows = p.embed(_cell_block(y / alpha, coeffs))
        blocks.append(rows[:m])
        if coeffs.size > m:
            remainders.append(rows[m])
            deltas.append(coeffs[m])

    c = plan.cats
    if c > 0:
        if len(deltas) < c:
            raise QMLabError(f"cannot split {len(deltas)} remainders into {c} cat microstates")
        d = np.asarray(deltas)
        units = np.asarray(remainders) / d[:, None]
        t = d / np.linalg.norm(d)
        u = np.zeros(d.size)
        u[:c] = 1.0 / math.sqrt(c)
        z = u + t
        w2 = -(np.eye(d.size) - (2.0 / (z @ z)) * np.outer(z, z))
        blocks.append(r * (w2[:, :c].T @ units))
    return EquiampExpansion(psi, np.vstack(blocks))


def tensor_expansion(ea: EquiampExpansion, eb: EquiampExpansion) -> EquiampExpansion:
    """Pairwise tensor products xi_j (x) chi_k, j major."""
    rows = np.einsum("ja,kb->jkab", ea.matrix, eb.matrix).reshape(ea.n * eb.n, -1)
    return EquiampExpansion(tensor(ea.parent, eb.parent), rows)


def microstate_classes(e: EquiampExpansion, p: Projector, tol: float = TAU_CLS) -> np.ndarray:
    """Per-microstate MicrostateClass codes relative to ``p``."""
    if p.space_dims != e.parent.dims:
        raise DimensionError(f"projector on {p.space_dims} applied to expansion on {e.parent.dims}")
    norms = row_norms(e.matrix)
    y = p.coords(e.matrix)
    pnorms = row_norms(y)
    out = np.full(e.n, MicrostateClass.CAT, dtype=np.int8)
    out[pnorms <= tol * norms] = MicrostateClass.EIG0
    # only rows carrying most of their weight in range(P) can be eigenvalue-1 states
    cand = np.flatnonzero(pnorms > 0.5 * norms)
    if cand.size:
        defect = row_norms(p.embed(y[cand]) - e.matrix[cand])
        out[cand[defect <= tol * norms[cand]]] = MicrostateClass.EIG1
    return out


def classify(e: EquiampExpansion, p: Projector) -> ClassCounts:
    codes = microstate_classes(e, p)
    return ClassCounts(
        int(np.sum(codes == MicrostateClass.EIG1)),
        int(np.sum(codes == MicrostateClass.EIG0)),
        int(np.sum(codes == MicrostateClass.CAT)),
    )


def imprecise_probability(e: EquiampExpansion, p: Projector) -> ImpreciseProbability:
    n1, _, nc = classify(e, p)
    return ImpreciseProbability(n1 / e.n, (n1 + nc) / e.n)


@dataclass(frozen=True)
class CountingDistribution:
    """Microstate counts of an expansion against every cell of a resolution."""

    n: int
    counts: tuple[int, ...]
    cats: int
    intervals: tuple[ImpreciseProbability, ...]

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def adapted(self) -> bool:
        return self.cats <= self.k - 1

    @property
    def probabilities(self) -> tuple[float, ...]:
        return tuple(m / self.n for m in self.counts)

    @property
    def cat_mass(self) -> float:
        return self.cats / self.n


def counting_distribution(e: EquiampExpansion, resolution: Resolution) -> CountingDistribution:
    codes = [microstate_classes(e, p) for p in resolution]
    counts = tuple(int(np.sum(c == MicrostateClass.EIG1)) for c in codes)
    in_some_cell = np.any([c == MicrostateClass.EIG1 for c in codes], axis=0)
    intervals = tuple(
        ImpreciseProbability(m / e.n, (m + int(np.sum(c == MicrostateClass.CAT))) / e.n)
        for m, c in zip(counts, codes)
    )
    return CountingDistribution(e.n, counts, int(e.n - np.sum(in_some_cell)), intervals)
