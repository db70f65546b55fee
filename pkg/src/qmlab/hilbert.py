"""Finite-dimensional Hilbert-space primitives.

States are stored as flat complex amplitude arrays over a tensor product of
factors; the first factor is the most significant index (Kronecker order).
Projectors are stored by orthonormal range bases, one basis per contiguous
group of factors, so ``P (x) I`` never materializes the identity part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateStateError, DimensionError, QMLabError

TAU_ORTH = 1e-10
TAU_GEO = 1e-12

ROLES = ("spin-A", "space-A", "spin-B", "space-B", "generic")

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class StateVector:
    """A (not necessarily normalized) vector on a tensor-product space."""

    dims: tuple[int, ...]
    amplitudes: np.ndarray
    roles: tuple[str, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise DimensionError(f"factor dimensions must be positive, got {self.dims}")
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != math.prod(dims):
            raise DimensionError(
                f"{amps.size} amplitudes for dims {dims} (expected {math.prod(dims)})"
            )
        roles = ("generic",) * len(dims) if self.roles is None else tuple(self.roles)
        if len(roles) != len(dims) or any(r not in ROLES for r in roles):
            raise DimensionError(f"bad role labels {roles}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "amplitudes", _frozen(amps))
        object.__setattr__(self, "roles", roles)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        nrm = self.norm()
        if nrm == 0.0:
            raise DegenerateStateError()
        return self._like(self.amplitudes / nrm)

    def inner(self, other: "StateVector") -> complex:
        """<self|other>, antilinear in ``self``."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def _like(self, amps) -> "StateVector":
        return StateVector(self.dims, amps, self.roles)

    def __add__(self, other: "StateVector") -> "StateVector":
        if self.dims != other.dims:
            raise DimensionError(f"cannot add states on {self.dims} and {other.dims}")
        return self._like(self.amplitudes + other.amplitudes)

    def __sub__(self, other: "StateVector") -> "StateVector":
        if self.dims != other.dims:
            raise DimensionError(f"cannot subtract states on {self.dims} and {other.dims}")
        return self._like(self.amplitudes - other.amplitudes)

    def __mul__(self, c: complex) -> "StateVector":
        return self._like(self.amplitudes * c)

    __rmul__ = __mul__

    def to_json(self) -> dict:
        return {
            "dims": list(self.dims),
            "re": self.amplitudes.real.tolist(),
            "im": self.amplitudes.imag.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "StateVector":
        re = np.asarray(data["re"], dtype=float)
        im = np.asarray(data.get("im", np.zeros_like(re)), dtype=float)
        if re.shape != im.shape:
            raise DimensionError("re/im arrays differ in length")
        return cls(tuple(data["dims"]), re + 1j * im, data.get("roles"))


def basis_state(dims: int | Sequence[int], index: int, roles=None) -> StateVector:
    dims = (dims,) if isinstance(dims, int) else tuple(dims)
    amps = np.zeros(math.prod(dims), dtype=complex)
    amps[index] = 1.0
    return StateVector(dims, amps, roles)


def random_state(dims: int | Sequence[int], rng: np.random.Generator, roles=None) -> StateVector:
    """Complex Gaussian vector (not normalized)."""
    dims = (dims,) if isinstance(dims, int) else tuple(dims)
    size = math.prod(dims)
    return StateVector(dims, rng.normal(size=size) + 1j * rng.normal(size=size), roles)


def tensor(u: StateVector, v: StateVector) -> StateVector:
    return StateVector(u.dims + v.dims, np.kron(u.amplitudes, v.amplitudes), u.roles + v.roles)


def _contract(arr: np.ndarray, in_dims: Sequence[int], mats: Sequence[np.ndarray | None]) -> np.ndarray:
    # arr: (batch, prod(in_dims)); mats[g] acts on group axis g as out x in
    batch = arr.shape[0]
    dims = list(in_dims)
    t = arr
    for g, m in enumerate(mats):
        if m is None:
            continue
        t = np.matmul(m, t.reshape(batch * math.prod(dims[:g]), dims[g], math.prod(dims[g + 1:])))
        dims[g] = m.shape[0]
    return t.reshape(batch, -1)


def row_norms(a: np.ndarray) -> np.ndarray:
    """Euclidean norms of the rows of a complex (batch, dim) array."""
    a = np.ascontiguousarray(a, dtype=complex)
    f = a.view(np.float64)
    return np.sqrt(np.einsum("ij,ij->i", f, f))


def _as_rows(x) -> tuple[np.ndarray, bool]:
    if isinstance(x, StateVector):
        return x.amplitudes[None, :], True
    a = np.asarray(x, dtype=complex)
    if a.ndim == 1:
        return a[None, :], True
    return a, False


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projector stored as per-group orthonormal range bases.

    ``group_sizes`` splits ``space_dims`` into contiguous groups of factors;
    ``bases[g]`` is a (group_dim, rank_g) matrix with orthonormal columns, or
    None for the identity on that group. The projector is the tensor product
    of the group projectors.
    """

    space_dims: tuple[int, ...]
    group_sizes: tuple[int, ...]
    bases: tuple[np.ndarray | None, ...]

    def __post_init__(self):
        space_dims = tuple(int(d) for d in self.space_dims)
        sizes = tuple(int(s) for s in self.group_sizes)
        if sum(sizes) != len(space_dims) or len(sizes) != len(self.bases):
            raise DimensionError("group layout does not match the factor dimensions")
        bases = []
        for gdim, q in zip(self._gdims(space_dims, sizes), self.bases):
            if q is None:
                bases.append(None)
                continue
            q = np.array(q, dtype=complex)
            if q.ndim != 2 or q.shape[0] != gdim:
                raise DimensionError(f"basis of shape {q.shape} on a group of dimension {gdim}")
            gram = q.conj().T @ q
            if q.shape[1] and np.max(np.abs(gram - np.eye(q.shape[1]))) > TAU_ORTH:
                raise QMLabError("range basis is not orthonormal")
            bases.append(_frozen(q))
        object.__setattr__(self, "space_dims", space_dims)
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "bases", tuple(bases))

    @staticmethod
    def _gdims(space_dims, sizes) -> tuple[int, ...]:
        out, i = [], 0
        for s in sizes:
            out.append(math.prod(space_dims[i:i + s]))
            i += s
        return tuple(out)

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_basis(cls, space_dims: int | Sequence[int], vectors) -> "Projector":
        """Projector onto the span of already-orthonormal ``vectors``."""
        space_dims = (space_dims,) if isinstance(space_dims, int) else tuple(space_dims)
        rows = np.array(
            [v.amplitudes if isinstance(v, StateVector) else np.asarray(v, dtype=complex) for v in vectors],
            dtype=complex,
        ).reshape(-1, math.prod(space_dims))
        return cls(space_dims, (len(space_dims),), (rows.T,))

    @classmethod
    def onto(cls, space_dims: int | Sequence[int], vectors, tol: float = 1e-12) -> "Projector":
        """Projector onto the span of arbitrary ``vectors`` (orthonormalized here)."""
        space_dims = (space_dims,) if isinstance(space_dims, int) else tuple(space_dims)
        rows = np.array(
            [v.amplitudes if isinstance(v, StateVector) else np.asarray(v, dtype=complex) for v in vectors],
            dtype=complex,
        ).reshape(-1, math.prod(space_dims))
        if rows.shape[0] == 0:
            return cls(space_dims, (len(space_dims),), (np.zeros((math.prod(space_dims), 0)),))
        u, s, _ = np.linalg.svd(rows.T, full_matrices=False)
        keep = s > tol * max(s[0], 1.0)
        return cls(space_dims, (len(space_dims),), (u[:, keep],))

    @classmethod
    def identity(cls, space_dims: int | Sequence[int]) -> "Projector":
        space_dims = (space_dims,) if isinstance(space_dims, int) else tuple(space_dims)
        return cls(space_dims, (1,) * len(space_dims), (None,) * len(space_dims))

    # -- structure --------------------------------------------------------
    @property
    def dim(self) -> int:
        return math.prod(self.space_dims)

    @property
    def group_dims(self) -> tuple[int, ...]:
        return self._gdims(self.space_dims, self.group_sizes)

    @property
    def group_ranks(self) -> tuple[int, ...]:
        return tuple(g if q is None else q.shape[1] for g, q in zip(self.group_dims, self.bases))

    @property
    def rank(self) -> int:
        return math.prod(self.group_ranks)

    # -- action -----------------------------------------------------------
    def coords(self, x) -> np.ndarray:
        """Coordinates of the projection of ``x`` in the range basis."""
        rows, single = _as_rows(x)
        out = _contract(rows, self.group_dims, [None if q is None else q.conj().T for q in self.bases])
        return out[0] if single else out

    def embed(self, y) -> np.ndarray:
        """Map range-basis coordinates back into the ambient space."""
        y = np.asarray(y, dtype=complex)
        single = y.ndim == 1
        rows = y[None, :] if single else y
        out = _contract(rows, self.group_ranks, list(self.bases))
        return out[0] if single else out

    def apply(self, x):
        """P x for a StateVector, a flat amplitude array, or a (batch, dim) array."""
        if isinstance(x, StateVector):
            if x.dims != self.space_dims:
                raise DimensionError(f"projector on {self.space_dims} applied to state on {x.dims}")
            return StateVector(x.dims, self.embed(self.coords(x)), x.roles)
        return self.embed(self.coords(x))

    def basis_rows(self, count: int | None = None) -> np.ndarray:
        """First ``count`` range-basis vectors as rows of a (count, dim) array."""
        count = self.rank if count is None else count
        return self.embed(np.eye(self.rank, count, dtype=complex).T)

    @cached_property
    def range_basis(self) -> tuple[StateVector, ...]:
        return tuple(StateVector(self.space_dims, row) for row in self.basis_rows())

    def matrix(self) -> np.ndarray:
        """Dense dim x dim matrix (small spaces only)."""
        q = self.basis_rows().T
        return q @ q.conj().T

    def complement(self) -> "Projector":
        """I - P, as a single dense group."""
        q = self.basis_rows().T
        if q.shape[1] == 0:
            return Projector.identity(self.space_dims)
        u, _, _ = np.linalg.svd(q, full_matrices=True)
        return Projector(self.space_dims, (len(self.space_dims),), (u[:, q.shape[1]:],))

    def idempotence_residual(self, probes: int = 100, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(probes, self.dim)) + 1j * rng.normal(size=(probes, self.dim))
        px = self.apply(x)
        return float(np.max(np.linalg.norm(self.apply(px) - px, axis=1) / np.linalg.norm(x, axis=1)))


def lift(p: Projector, slot: int, dims: Sequence[int]) -> Projector:
    """P acting on factor ``slot`` of ``dims``, identity elsewhere."""
    dims = tuple(int(d) for d in dims)
    if not 0 <= slot < len(dims):
        raise DimensionError(f"slot {slot} out of range for dims {dims}")
    if p.dim != dims[slot]:
        raise DimensionError(f"projector of dimension {p.dim} does not fit factor {slot} of {dims}")
    if p.rank == p.dim:
        q = None
    elif len(p.bases) == 1:
        q = p.bases[0]
    else:
        q = p.basis_rows().T
    bases = [None] * len(dims)
    bases[slot] = q
    return Projector(dims, (1,) * len(dims), tuple(bases))


def tensor_projectors(*ps: Projector) -> Projector:
    """P_1 (x) P_2 (x) ... on the concatenated space."""
    return Projector(
        sum((p.space_dims for p in ps), ()),
        sum((p.group_sizes for p in ps), ()),
        sum((p.bases for p in ps), ()),
    )


def born(psi: StateVector, p: Projector) -> float:
    """Born probability ||P psi||^2 / ||psi||^2."""
    nrm2 = float(np.vdot(psi.amplitudes, psi.amplitudes).real)
    if nrm2 == 0.0:
        raise DegenerateStateError()
    if psi.dims != p.space_dims:
        raise DimensionError(f"projector on {p.space_dims} applied to state on {psi.dims}")
    y = p.coords(psi.amplitudes)
    return min(1.0, float(np.vdot(y, y).real) / nrm2)


def unit_direction(direction, tol: float = TAU_GEO) -> np.ndarray:
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != 3 or not np.all(np.isfinite(d)):
        raise QMLabError(f"direction must be a real 3-vector, got {direction!r}")
    if abs(np.linalg.norm(d) - 1.0) > tol:
        raise QMLabError(f"direction {d.tolist()} is not a unit vector")
    return d


def spin_projector(direction, s: int) -> Projector:
    """Rank-1 projector (I + s a.sigma)/2 on a spin-1/2 factor."""
    d = unit_direction(direction)
    if s not in (1, -1):
        raise QMLabError(f"spin outcome must be +1 or -1, got {s}")
    m = 0.5 * (np.eye(2) + s * sum(c * sig for c, sig in zip(d, PAULI)))
    col = m[:, int(np.argmax(np.linalg.norm(m, axis=0)))]
    return Projector.from_basis((2,), [col / np.linalg.norm(col)])


@dataclass(frozen=True, eq=False)
class Resolution:
    """Pairwise orthogonal projectors summing to the identity."""

    projectors: tuple[Projector, ...]

    def __post_init__(self):
        ps = tuple(self.projectors)
        if not ps:
            raise QMLabError("empty resolution")
        dims = ps[0].space_dims
        if any(p.space_dims != dims for p in ps):
            raise DimensionError("resolution members act on different spaces")
        if sum(p.rank for p in ps) != ps[0].dim:
            raise QMLabError("ranks do not sum to the ambient dimension")
        object.__setattr__(self, "projectors", ps)
        residual = self.residual(probes=4)
        if residual > TAU_ORTH:
            raise QMLabError(f"projectors are not an orthogonal resolution (residual {residual:.3g})")

    def __len__(self) -> int:
        return len(self.projectors)

    def __iter__(self):
        return iter(self.projectors)

    def __getitem__(self, i) -> Projector:
        return self.projectors[i]

    @property
    def space_dims(self) -> tuple[int, ...]:
        return self.projectors[0].space_dims

    @classmethod
    def binary(cls, p: Projector) -> "Resolution":
        return cls((p, p.complement()))

    def residual(self, probes: int = 100, seed: int = 0) -> float:
        """Worst relative orthogonality/completeness defect on random probes."""
        rng = np.random.default_rng(seed)
        dim = self.projectors[0].dim
        x = rng.normal(size=(probes, dim)) + 1j * rng.normal(size=(probes, dim))
        scale = np.linalg.norm(x, axis=1)
        images = [p.apply(x) for p in self.projectors]
        worst = float(np.max(np.linalg.norm(sum(images) - x, axis=1) / scale))
        for i, pi_x in enumerate(images):
            for j, pj in enumerate(self.projectors):
                if i != j:
                    worst = max(worst, float(np.max(np.linalg.norm(pj.apply(pi_x), axis=1) / scale)))
        return worst


@dataclass(frozen=True, eq=False)
class Unitary:
    """Unitary operator, either dense or of the form I + L R^H.

    The low-rank form keeps swap unitaries on large spaces cheap.
    """

    dim: int
    entries: np.ndarray | None = None
    left: np.ndarray | None = None
    right: np.ndarray | None = None

    def __post_init__(self):
        dim = int(self.dim)
        object.__setattr__(self, "dim", dim)
        if self.entries is not None:
            e = np.array(self.entries, dtype=complex)
            if e.shape != (dim, dim):
                raise DimensionError(f"unitary entries of shape {e.shape}, expected {(dim, dim)}")
            object.__setattr__(self, "entries", _frozen(e))
        else:
            left = np.zeros((dim, 0), complex) if self.left is None else np.array(self.left, dtype=complex)
            right = np.zeros((dim, 0), complex) if self.right is None else np.array(self.right, dtype=complex)
            if left.shape != right.shape or left.shape[0] != dim:
                raise DimensionError("low-rank factors do not match the dimension")
            object.__setattr__(self, "left", _frozen(left))
            object.__setattr__(self, "right", _frozen(right))
        res = self.residual()
        if res > TAU_ORTH:
            raise QMLabError(f"operator is not unitary (residual {res:.3g})")

    @classmethod
    def identity(cls, dim: int) -> "Unitary":
        return cls(dim)

    @classmethod
    def identity_plus(cls, left, right) -> "Unitary":
        left = np.asarray(left, dtype=complex)
        return cls(left.shape[0], left=left, right=right)

    @property
    def matrix(self) -> np.ndarray:
        if self.entries is not None:
            return self.entries
        return np.eye(self.dim, dtype=complex) + self.left @ self.right.conj().T

    def apply_rows(self, rows: np.ndarray) -> np.ndarray:
        """Apply U to every row of a (batch, dim) array."""
        rows = np.asarray(rows, dtype=complex)
        if self.entries is not None:
            return rows @ self.entries.T
        return rows + (rows @ self.right.conj()) @ self.left.T

    def residual(self) -> float:
        """Spectral norm of U^H U - I."""
        if self.entries is not None:
            e = self.entries
            return float(np.linalg.norm(e.conj().T @ e - np.eye(self.dim), 2))
        l, r = self.left, self.right
        if l.shape[1] == 0:
            return 0.0
        # U^H U - I = R L^H + L R^H + R (L^H L) R^H lives on span(L, R)
        q, _ = np.linalg.qr(np.hstack([l, r]))
        ql, qr_ = q.conj().T @ l, q.conj().T @ r
        m = qr_ @ ql.conj().T + ql @ qr_.conj().T + qr_ @ (l.conj().T @ l) @ qr_.conj().T
        return float(np.linalg.norm(m, 2))


def apply_unitary(u: Unitary, psi: StateVector) -> StateVector:
    if u.dim != psi.dim:
        raise DimensionError(f"unitary of dimension {u.dim} applied to state of dimension {psi.dim}")
    return StateVector(psi.dims, u.apply_rows(psi.amplitudes[None, :])[0], psi.roles)


def states_from_rows(dims: Sequence[int], rows: Iterable[np.ndarray]) -> list[StateVector]:
    return [StateVector(dims, r) for r in rows]
