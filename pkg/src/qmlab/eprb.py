"""EPRB setup: spin-1/2 pairs with spatial factors, outcome cells, CHSH.

Factor order is fixed as (spin-A, space-A, spin-B, space-B). Joint outcome
cells are listed in ``OUTCOMES`` order: (+,+), (+,-), (-,+), (-,-).
All angles are radians.
"""

from __future__ import annotations

import functools
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DimensionError, QMLabError, UndefinedConditionalError
from .expansion import adapted_counts, counting_distribution, expand_adapted
from .hilbert import (
    Projector,
    Resolution,
    StateVector,
    born,
    spin_projector,
    tensor_projectors,
    unit_direction,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EPS_COND = 1e-12
OUTCOMES = ((1, 1), (1, -1), (-1, 1), (-1, -1))
PAIRS = (("a", "b"), ("a", "b'"), ("a'", "b"), ("a'", "b'"))
CHSH_SIGNS = (1, -1, 1, 1)
EPRB_ROLES = ("spin-A", "space-A", "spin-B", "space-B")
BACKENDS = ("born", "counting")

X = np.array([1.0, 0.0, 0.0])
Y = np.array([0.0, 1.0, 0.0])
Z = np.array([0.0, 0.0, 1.0])


def direction(theta: float, phi: float = 0.0) -> np.ndarray:
    """Unit vector at polar angle theta and azimuth phi (x-z plane for phi = 0)."""
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])


def _spatial_ref(d: int) -> np.ndarray:
    e = np.zeros(d, dtype=complex)
    e[0] = 1.0
    return e


def singlet_state(d_a: int = 32, d_b: int = 32) -> StateVector:
    if d_a < 1 or d_b < 1:
        raise DimensionError("spatial dimensions must be at least 1")
    up, down = np.array([1, 0], complex), np.array([0, 1], complex)
    ea, eb = _spatial_ref(d_a), _spatial_ref(d_b)
    amps = (
        np.kron(np.kron(up, ea), np.kron(down, eb)) - np.kron(np.kron(down, ea), np.kron(up, eb))
    ) / math.sqrt(2)
    return StateVector((2, d_a, 2, d_b), amps, EPRB_ROLES)


def product_state(chi_a, chi_b, d_a: int = 32, d_b: int = 32) -> StateVector:
    chi_a, chi_b = np.asarray(chi_a, complex), np.asarray(chi_b, complex)
    if chi_a.shape != (2,) or chi_b.shape != (2,):
        raise DimensionError("spin states must have two components")
    na, nb = np.linalg.norm(chi_a), np.linalg.norm(chi_b)
    if na == 0 or nb == 0:
        raise QMLabError("spin states must be nonzero")
    amps = np.kron(np.kron(chi_a / na, _spatial_ref(d_a)), np.kron(chi_b / nb, _spatial_ref(d_b)))
    return StateVector((2, d_a, 2, d_b), amps, EPRB_ROLES)


def side_projector(direction_, s: int, d: int) -> Projector:
    """P_s on one wing's (spin, space) pair, identity on space."""
    p = spin_projector(direction_, s)
    return Projector((2, d), (1, 1), (p.bases[0], None))


def alice_projector(x, s: int, d_a: int, d_b: int) -> Projector:
    return tensor_projectors(side_projector(x, s, d_a), Projector.identity((2, d_b)))


def bob_projector(y, t: int, d_a: int, d_b: int) -> Projector:
    return tensor_projectors(Projector.identity((2, d_a)), side_projector(y, t, d_b))


def joint_resolution(x, y, d_a: int, d_b: int) -> Resolution:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return _joint_resolution(x.tobytes(), y.tobytes(), d_a, d_b)


@functools.lru_cache(maxsize=64)
def _joint_resolution(xb: bytes, yb: bytes, d_a: int, d_b: int) -> Resolution:
    # resolutions are immutable, so repeated settings share one instance
    x, y = np.frombuffer(xb), np.frombuffer(yb)
    return Resolution(
        tuple(tensor_projectors(side_projector(x, s, d_a), side_projector(y, t, d_b)) for s, t in OUTCOMES)
    )


@dataclass(frozen=True)
class JointDistribution:
    setting: tuple[str, str]
    probs: tuple[float, float, float, float]
    backend: str = "born"
    cat_mass: float = 0.0

    def __post_init__(self):
        if any(p < 0 for p in self.probs):
            raise QMLabError("negative probability")
        if abs(sum(self.probs) + self.cat_mass - 1.0) > 1e-9:
            raise QMLabError("probabilities and cat mass do not sum to one")

    def p(self, s: int, t: int) -> float:
        return self.probs[OUTCOMES.index((s, t))]

    def to_json(self) -> dict:
        return {
            "setting_pair": "".join(self.setting),
            "backend": self.backend,
            "cat_mass": self.cat_mass,
            "p": {f"{s:+d},{t:+d}": self.p(s, t) for s, t in OUTCOMES},
        }


def _dims(psi: StateVector) -> tuple[int, int]:
    if len(psi.dims) != 4 or psi.dims[0] != 2 or psi.dims[2] != 2:
        raise DimensionError(f"EPRB states live on (2, d_A, 2, d_B), got {psi.dims}")
    return psi.dims[1], psi.dims[3]


def joint_distribution(psi: StateVector, x, y, backend: str = "born", n: int | None = None,
                       setting: tuple[str, str] = ("x", "y")) -> JointDistribution:
    d_a, d_b = _dims(psi)
    res = joint_resolution(x, y, d_a, d_b)
    if backend == "born":
        probs = [born(psi, p) for p in res]
        total = sum(probs)
        return JointDistribution(setting, tuple(p / total for p in probs), "born")
    if backend == "counting":
        if n is None:
            raise QMLabError("the counting backend needs an expansion size n")
        dist = counting_distribution(expand_adapted(psi, res, n), res)
        return JointDistribution(setting, dist.probabilities, "counting", dist.cat_mass)
    raise QMLabError(f"unknown backend {backend!r}")


def marginals(d: JointDistribution) -> tuple[dict[int, float], dict[int, float]]:
    pa = {s: d.p(s, 1) + d.p(s, -1) for s in (1, -1)}
    pb = {t: d.p(1, t) + d.p(-1, t) for t in (1, -1)}
    return pa, pb


def conditional(d: JointDistribution, side: str, given: int, eps: float = EPS_COND) -> dict[int, float]:
    """Distribution of ``side``'s outcome conditional on the other wing's outcome ``given``."""
    pa, pb = marginals(d)
    if side == "A":
        norm = pb[given]
        joint = {s: d.p(s, given) for s in (1, -1)}
    elif side == "B":
        norm = pa[given]
        joint = {t: d.p(given, t) for t in (1, -1)}
    else:
        raise QMLabError(f"side must be 'A' or 'B', got {side!r}")
    if norm <= eps:
        raise UndefinedConditionalError(f"undefined conditional: P({given:+d}) = {norm:.3g}")
    return {k: v / norm for k, v in joint.items()}


def correlation(d: JointDistribution, max_cat_mass: float = 0.01) -> float:
    if d.cat_mass > max_cat_mass:
        raise QMLabError(f"cat mass {d.cat_mass} too large for a correlation estimate")
    return sum(s * t * d.p(s, t) for s, t in OUTCOMES)


def _parse_spinor(v) -> np.ndarray:
    if isinstance(v, Mapping):
        re = np.asarray(v["re"], float)
        return re + 1j * np.asarray(v.get("im", np.zeros_like(re)), float)
    arr = np.asarray(v)
    if arr.shape == (2, 2) and not np.iscomplexobj(arr):
        # [[re, im], [re, im]]
        return arr[:, 0] + 1j * arr[:, 1]
    return arr.astype(complex)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Four measurement directions plus the state and counting-backend settings."""

    a: np.ndarray
    a_prime: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray
    d_a: int = 32
    d_b: int = 32
    state: str = "singlet"
    chi_a: np.ndarray | None = None
    chi_b: np.ndarray | None = None
    n: int = 1000
    backend: str = "born"

    def __post_init__(self):
        for name in ("a", "a_prime", "b", "b_prime"):
            object.__setattr__(self, name, unit_direction(getattr(self, name), tol=1e-12))
        if self.d_a < 1 or self.d_b < 1:
            raise DimensionError("d_a and d_b must be at least 1")
        if self.state not in ("singlet", "product"):
            raise QMLabError(f"state must be 'singlet' or 'product', got {self.state!r}")
        if self.state == "product" and (self.chi_a is None or self.chi_b is None):
            raise QMLabError("product state needs chi_a and chi_b")
        if self.backend not in BACKENDS:
            raise QMLabError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.n < 1:
            raise QMLabError("n must be positive")

    @classmethod
    def tsirelson(cls, **kw) -> "Scenario":
        """Coplanar angles a=0, a'=pi/2, b=pi/4, b'=3pi/4 in the x-z plane."""
        return cls(direction(0.0), direction(math.pi / 2), direction(math.pi / 4), direction(3 * math.pi / 4), **kw)

    def directions(self) -> dict[str, np.ndarray]:
        return {"a": self.a, "a'": self.a_prime, "b": self.b, "b'": self.b_prime}

    def psi(self) -> StateVector:
        if self.state == "singlet":
            return singlet_state(self.d_a, self.d_b)
        return product_state(self.chi_a, self.chi_b, self.d_a, self.d_b)

    def check_counting(self, psi: StateVector | None = None) -> list[str]:
        """Pairs whose adapted expansion would violate the rank precondition."""
        psi = self.psi() if psi is None else psi
        dirs = self.directions()
        bad = []
        for x, y in PAIRS:
            res = joint_resolution(dirs[x], dirs[y], self.d_a, self.d_b)
            plan = adapted_counts(psi, res, self.n)
            if any(p.rank < m + 1 for p, m in zip(res, plan.m)):
                bad.append(x + y)
        return bad

    def to_dict(self) -> dict:
        out = {
            "a": self.a.tolist(), "a_prime": self.a_prime.tolist(),
            "b": self.b.tolist(), "b_prime": self.b_prime.tolist(),
            "d_a": self.d_a, "d_b": self.d_b, "n": self.n, "backend": self.backend,
        }
        if self.state == "singlet":
            out["state"] = "singlet"
        else:
            out["state"] = {"product": {
                "chi_a": {"re": np.real(self.chi_a).tolist(), "im": np.imag(self.chi_a).tolist()},
                "chi_b": {"re": np.real(self.chi_b).tolist(), "im": np.imag(self.chi_b).tolist()},
            }}
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Scenario":
        known = {"a", "a_prime", "b", "b_prime", "d_a", "d_b", "state", "n", "backend"}
        unknown = set(data) - known
        if unknown:
            raise QMLabError(f"unknown scenario field(s): {sorted(unknown)}")
        missing = {"a", "a_prime", "b", "b_prime"} - set(data)
        if missing:
            raise QMLabError(f"missing scenario field(s): {sorted(missing)}")
        state = data.get("state", "singlet")
        kw: dict = {}
        if isinstance(state, Mapping):
            if "product" not in state:
                raise QMLabError("field 'state': expected \"singlet\" or {\"product\": {...}}")
            prod = state["product"]
            kw.update(state="product", chi_a=_parse_spinor(prod["chi_a"]), chi_b=_parse_spinor(prod["chi_b"]))
        elif state == "singlet":
            kw["state"] = "singlet"
        else:
            raise QMLabError(f"field 'state': unsupported value {state!r}")
        for key in ("d_a", "d_b", "n"):
            if key in data:
                if not isinstance(data[key], int) or isinstance(data[key], bool):
                    raise QMLabError(f"field {key!r}: expected an integer")
                kw[key] = data[key]
        if "backend" in data:
            kw["backend"] = data["backend"]
        return cls(*(np.asarray(data[k], float) for k in ("a", "a_prime", "b", "b_prime")), **kw)

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        return cls.from_dict(load_config(path))


def load_config(path: str | Path) -> dict:
    """Read a JSON or TOML mapping, chosen by file extension."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        return tomllib.loads(text)
    if path.suffix == ".json":
        return json.loads(text)
    raise QMLabError(f"unsupported config extension {path.suffix!r} (use .json or .toml)")


def scenario_distributions(psi: StateVector, scenario: Scenario, backend: str | None = None,
                           n: int | None = None) -> dict[tuple[str, str], JointDistribution]:
    backend = scenario.backend if backend is None else backend
    n = scenario.n if n is None else n
    dirs = scenario.directions()
    return {
        (x, y): joint_distribution(psi, dirs[x], dirs[y], backend, n if backend == "counting" else None, (x, y))
        for x, y in PAIRS
    }


def chsh_from_distributions(dists: Mapping[tuple[str, str], JointDistribution]) -> float:
    return sum(sign * correlation(dists[pair]) for sign, pair in zip(CHSH_SIGNS, PAIRS))


def chsh(psi: StateVector, scenario: Scenario, backend: str | None = None) -> float:
    """S = E(a,b) - E(a,b') + E(a',b) + E(a',b')."""
    return chsh_from_distributions(scenario_distributions(psi, scenario, backend))
