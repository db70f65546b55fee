"""Independent reference computations, written without the package's projector machinery."""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def dense_spin_projector(direction, s: int) -> np.ndarray:
    d = np.asarray(direction, float)
    return 0.5 * (np.eye(2) + s * (d[0] * SX + d[1] * SY + d[2] * SZ))


def singlet_spin_vector() -> np.ndarray:
    v = np.zeros(4, complex)
    v[1], v[2] = 1 / math.sqrt(2), -1 / math.sqrt(2)
    return v


def singlet_joint_dense(x, y, s: int, t: int) -> float:
    """<singlet| P_s^x (x) P_t^y |singlet> on the bare 4-dim spin space."""
    v = singlet_spin_vector()
    op = np.kron(dense_spin_projector(x, s), dense_spin_projector(y, t))
    return float(np.vdot(v, op @ v).real)


def singlet_joint_closed_form(theta: float, s: int, t: int) -> float:
    return 0.25 * (1 - s * t * math.cos(theta))


def reduced_born_bruteforce(psi: np.ndarray, dims, slot: int, p: np.ndarray) -> float:
    """Born probability of P on one factor by explicit index loops over the other factors."""
    dims = tuple(dims)
    t = psi.reshape(dims)
    total = 0.0
    others = [range(d) for i, d in enumerate(dims) if i != slot]
    for rest in itertools.product(*others):
        idx = list(rest)
        fiber = np.array([t[tuple(idx[:slot] + [k] + idx[slot:])] for k in range(dims[slot])])
        total += float(np.vdot(fiber, p @ fiber).real)
    return total / float(np.vdot(psi, psi).real)


def floor_allocation(probs: list[Fraction], n: int) -> tuple[list[int], int]:
    m = [math.floor(p * n) for p in probs]
    return m, n - sum(m)


def chsh_strategy_max() -> int:
    best = 0
    for sa, sap, tb, tbp in itertools.product((1, -1), repeat=4):
        best = max(best, abs(sa * tb - sa * tbp + sap * tb + sap * tbp))
    return best


def quadratic_ratio_series(theta: float, terms: int = 8) -> float:
    """(1 - cos theta)/theta^2 = sum_k (-1)^k theta^(2k) / (2k+2)!"""
    return sum((-1) ** k * theta ** (2 * k) / math.factorial(2 * k + 2) for k in range(terms))
