"""Swap unitaries and numerical witnesses of probability invariance.

The measure of a microstate is its counting weight 1/n. The checks here
confirm the two concrete consequences that can be asserted numerically:
a unitary fixing a microstate leaves its weight and class alone, and
swapping two equal-norm microstates fixes the total state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStateError, InvarianceError, QMLabError
from .expansion import TAU_EXP, EquiampExpansion, MicrostateClass, microstate_classes
from .hilbert import TAU_ORTH, Projector, StateVector, Unitary, apply_unitary, row_norms


@dataclass(frozen=True)
class Check:
    check: str
    passed: bool
    max_residual: float

    def to_json(self) -> dict:
        return {"check": self.check, "pass": self.passed, "max_residual": self.max_residual}


@dataclass(frozen=True)
class InvarianceReport:
    checks: tuple[Check, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> list[dict]:
        return [c.to_json() for c in self.checks]


def swap_unitary(phi: StateVector, eta: StateVector, tol: float = TAU_ORTH) -> Unitary:
    """Exchange the rays of two orthogonal vectors, identity on their complement.

    phi maps to eta * ||phi|| / ||eta|| and vice versa.
    """
    nphi, neta = phi.norm(), eta.norm()
    if nphi == 0.0 or neta == 0.0:
        raise DegenerateStateError()
    if abs(phi.inner(eta)) > tol * nphi * neta:
        raise QMLabError("swap needs orthogonal vectors")
    p = phi.amplitudes / nphi
    e = eta.amplitudes / neta
    e = e - p * np.vdot(p, e)
    e /= np.linalg.norm(e)
    left = np.stack([e - p, p - e], axis=1)
    right = np.stack([p, e], axis=1)
    return Unitary.identity_plus(left, right)


def transform_expansion(u: Unitary, e: EquiampExpansion) -> EquiampExpansion:
    return EquiampExpansion(apply_unitary(u, e.parent), u.apply_rows(e.matrix), e.tolerance)


def invariance_check(psi: StateVector, e: EquiampExpansion, u: Unitary, fixed: int,
                     projectors: tuple[Projector, ...] = ()) -> InvarianceReport:
    """Check what a unitary fixing microstate ``fixed`` must leave unchanged."""
    if e.parent is not psi and np.linalg.norm(e.parent.amplitudes - psi.amplitudes) > TAU_EXP * psi.norm():
        raise QMLabError("expansion is not an expansion of psi")
    r = e.common_norm
    xi = e.matrix[fixed]
    uxi = u.apply_rows(xi[None, :])[0]
    drift = float(np.linalg.norm(uxi - xi))
    if drift > TAU_ORTH * r:
        raise InvarianceError(f"unitary does not fix target (moved by {drift:.3g})")

    ue = transform_expansion(u, e)
    res = ue.residuals()
    checks = [Check("transformed expansion valid", max(res.values()) <= e.tolerance, max(res.values()))]

    ray = Projector.from_basis(psi.dims, [xi / np.linalg.norm(xi)])
    before = microstate_classes(e, ray)
    after = microstate_classes(ue, ray)
    weight_before = np.sum(before == MicrostateClass.EIG1) / e.n
    weight_after = np.sum(after == MicrostateClass.EIG1) / ue.n
    checks.append(Check(
        "fixed microstate weight 1/n",
        weight_before == weight_after == 1 / e.n,
        abs(weight_before - weight_after),
    ))

    for i, p in enumerate(projectors):
        py = p.apply(uxi)
        if np.linalg.norm(py - uxi) > TAU_ORTH * r:
            continue
        cb = microstate_classes(e, p)[fixed]
        ca = microstate_classes(ue, p)[fixed]
        checks.append(Check(f"class of fixed microstate under projector {i}", cb == ca, float(cb != ca)))
    return InvarianceReport(tuple(checks))


def equal_norm_symmetry_witness(psi: StateVector, e: EquiampExpansion, i: int, j: int) -> InvarianceReport:
    """Swap microstates i and j and confirm the state and the expansion survive."""
    nrm = psi.norm()
    if i == j:
        u = Unitary.identity(psi.dim)
    else:
        u = swap_unitary(e[i], e[j])
    upsi = apply_unitary(u, psi)
    ue = transform_expansion(u, e)
    state_drift = float(np.linalg.norm(upsi.amplitudes - psi.amplitudes) / nrm)

    norms_before = np.sort(row_norms(e.matrix))
    norms_after = np.sort(row_norms(ue.matrix))
    norm_drift = float(np.max(np.abs(norms_before - norms_after)) / nrm)

    perm = np.arange(e.n)
    perm[[i, j]] = perm[[j, i]]
    perm_drift = float(np.max(row_norms(ue.matrix - e.matrix[perm])) / nrm)
    revalidated = EquiampExpansion(psi, ue.matrix, e.tolerance).residuals()

    return InvarianceReport((
        Check("swap unitary residual", u.residual() <= 1e-12, u.residual()),
        Check("swap fixes psi", state_drift <= 1e-10, state_drift),
        Check("microstate norm multiset unchanged", norm_drift <= e.tolerance, norm_drift),
        Check("swap permutes the expansion", perm_drift <= e.tolerance, perm_drift),
        Check("permuted expansion of psi valid", max(revalidated.values()) <= e.tolerance, max(revalidated.values())),
    ))
