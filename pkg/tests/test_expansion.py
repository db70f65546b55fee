import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import floor_allocation
from qmlab.errors import InsufficientDimensionError, QMLabError, RankError
from qmlab.expansion import (
    ClassCounts,
    EquiampExpansion,
    ImpreciseProbability,
    MicrostateClass,
    adapted_counts,
    classify,
    counting_distribution,
    expand_adapted,
    expand_generic,
    imprecise_probability,
    microstate_classes,
    tensor_expansion,
)
from qmlab.hilbert import Projector, Resolution, StateVector, basis_state, born, random_state, spin_projector, tensor


def coordinate_resolution(dim, cuts):
    """Cells spanned by consecutive runs of basis vectors."""
    eye = np.eye(dim)
    edges = [0, *cuts, dim]
    return Resolution(tuple(Projector.from_basis(dim, eye[a:b]) for a, b in zip(edges[:-1], edges[1:])))


def random_resolution(rng, dim, k):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim)))
    edges = np.linspace(0, dim, k + 1).astype(int)
    return Resolution(tuple(Projector.from_basis(dim, q[:, a:b].T) for a, b in zip(edges[:-1], edges[1:])))


def dense_born(psi, p):
    # independent of Projector.coords: dense matrix product
    v = psi.amplitudes
    return float(np.vdot(v, p.matrix() @ v).real / np.vdot(v, v).real)


# -- generic expansions -------------------------------------------------------

def test_generic_n1_is_psi():
    psi = random_state(5, np.random.default_rng(0))
    e = expand_generic(psi, 1, seed=3)
    np.testing.assert_array_equal(e.matrix[0], psi.amplitudes)


def test_generic_two_microstates_of_e0_plus_e1():
    psi = basis_state(2, 0) + basis_state(2, 1)
    for seed in (0, 1, 99):
        e = expand_generic(psi, 2, seed)
        assert e.is_valid()
        np.testing.assert_allclose(np.linalg.norm(e.matrix, axis=1), [1, 1], atol=1e-12)
        assert abs(np.vdot(e.matrix[0], e.matrix[1])) <= 1e-12


def test_generic_full_dimension_equal_squared_norms():
    psi = random_state(8, np.random.default_rng(1))
    e = expand_generic(psi, 8, seed=5)
    np.testing.assert_allclose(np.linalg.norm(e.matrix, axis=1) ** 2, psi.norm() ** 2 / 8, rtol=1e-12)


def test_generic_seed_reproducible_and_distinct():
    psi = random_state(6, np.random.default_rng(2))
    a, b, c = expand_generic(psi, 4, 11), expand_generic(psi, 4, 11), expand_generic(psi, 4, 12)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert np.max(np.abs(a.matrix - c.matrix)) > 1e-3


def test_generic_insufficient_dimension():
    with pytest.raises(InsufficientDimensionError, match="insufficient dimension"):
        expand_generic(random_state(4, np.random.default_rng(0)), 5, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 24), st.data())
def test_generic_expansions_are_valid(dim, data):
    n = data.draw(st.integers(2, dim))
    seed = data.draw(st.integers(0, 2**64 - 1))
    psi = random_state(dim, np.random.default_rng(seed % 2**32))
    e = expand_generic(psi, n, seed)
    assert e.n == n
    assert max(e.residuals().values()) <= 1e-9


# -- adapted expansions: frozen floor-arithmetic cases ------------------------

def test_adapted_exact_quarter():
    # born = 1/4 exactly: 25 eigen, 75 annihilated, no cats
    psi = basis_state(128, 0) + basis_state(128, 40) * math.sqrt(3)
    res = coordinate_resolution(128, [32])
    e = expand_adapted(psi, res, 100)
    assert e.is_valid()
    assert classify(e, res[0]) == ClassCounts(25, 75, 0)
    assert imprecise_probability(e, res[0]) == ImpreciseProbability(0.25, 0.25)


def test_adapted_one_third_floor_oracle():
    # floor(10/3) = 3, floor(20/3) = 6, one cat
    psi = basis_state(20, 0) + basis_state(20, 15) * math.sqrt(2)
    res = coordinate_resolution(20, [10])
    m, c = floor_allocation([Fraction(1, 3), Fraction(2, 3)], 10)
    assert (m, c) == ([3, 6], 1)
    e = expand_adapted(psi, res, 10)
    assert classify(e, res[0]) == ClassCounts(3, 6, 1)
    assert classify(e, res[1]) == ClassCounts(6, 3, 1)
    iv = imprecise_probability(e, res[0])
    assert (iv.lower, iv.upper) == (0.3, 0.4)
    assert iv.contains(1 / 3)
    dist = counting_distribution(e, res)
    assert dist.counts == (3, 6) and dist.cats == 1 and dist.probabilities[0] == 0.3


def test_adapted_row_order_cells_then_cats():
    psi = basis_state(20, 0) + basis_state(20, 15) * math.sqrt(2)
    res = coordinate_resolution(20, [10])
    e = expand_adapted(psi, res, 10)
    codes = microstate_classes(e, res[0])
    assert list(codes) == [MicrostateClass.EIG1] * 3 + [MicrostateClass.EIG0] * 6 + [MicrostateClass.CAT]


def test_adapted_rank_precondition():
    psi = basis_state(4, 0) + basis_state(4, 1)
    res = coordinate_resolution(4, [1])
    with pytest.raises(RankError, match="projector rank too small"):
        expand_adapted(psi, res, 4)


def test_adapted_needs_n_at_least_k():
    psi = random_state(12, np.random.default_rng(0))
    with pytest.raises(QMLabError):
        expand_adapted(psi, coordinate_resolution(12, [4, 8]), 2)


def test_trivial_resolution_counts_everything():
    psi = random_state(6, np.random.default_rng(3))
    res = Resolution((Projector.identity(6),))
    e = expand_adapted(psi, res, 5)
    dist = counting_distribution(e, res)
    assert dist.probabilities == (1.0,) and dist.cats == 0


def test_cell_with_no_weight_is_dropped():
    psi = basis_state(12, 0) + basis_state(12, 5)
    res = coordinate_resolution(12, [4, 8])
    e = expand_adapted(psi, res, 6)
    assert counting_distribution(e, res).counts == (3, 3, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**32 - 1), st.data())
def test_adapted_property_against_floor_oracle(k, seed, data):
    rng = np.random.default_rng(seed)
    n = data.draw(st.integers(k, 12))
    dim = k * 13
    psi = random_state(dim, rng)
    res = random_resolution(rng, dim, k)
    e = expand_adapted(psi, res, n)
    assert max(e.residuals().values()) <= 1e-9
    dist = counting_distribution(e, res)
    expected = [math.floor(n * dense_born(psi, p) + 1e-9) for p in res]
    assert list(dist.counts) == expected
    assert dist.cats == n - sum(expected) <= k - 1
    for m, p, iv in zip(dist.counts, res, dist.intervals):
        assert abs(m / n - dense_born(psi, p)) <= (k - 1) / n
        assert iv.upper - iv.lower <= (k - 1) / n + 1e-15
        assert iv.contains(dense_born(psi, p), slack=1e-9)


def test_convergence_along_decades():
    rng = np.random.default_rng(8)
    dim = 2048
    psi = random_state(dim, rng)
    res = random_resolution(rng, dim, 4)
    probs = [dense_born(psi, p) for p in res]
    errors = []
    for n in (10, 100, 1000):
        dist = counting_distribution(expand_adapted(psi, res, n), res)
        errors.append(max(abs(m / n - p) for m, p in zip(dist.counts, probs)))
        assert errors[-1] <= 3 / n
    # dense storage of 10^4 microstates is out of reach; the allocation plan gives the same counts
    plan = adapted_counts(psi, res, 10_000)
    errors.append(max(abs(m / 10_000 - p) for m, p in zip(plan.m, probs)))
    assert errors[-1] <= 3 / 10_000
    assert all(a >= b for a, b in zip(errors, errors[1:]))


def test_refinement_consistency():
    psi = basis_state(128, 0) + basis_state(128, 40) * math.sqrt(3)
    res = coordinate_resolution(128, [32])
    d4 = counting_distribution(expand_adapted(psi, res, 4), res)
    d100 = counting_distribution(expand_adapted(psi, res, 100), res)
    assert d4.cats == d100.cats == 0
    np.testing.assert_allclose(d4.probabilities, d100.probabilities, atol=1e-12)


# -- classification -----------------------------------------------------------

def test_identity_projector_classifies_all_eig1():
    psi = random_state(7, np.random.default_rng(4))
    e = expand_generic(psi, 5, 1)
    assert classify(e, Projector.identity(7)) == ClassCounts(5, 0, 0)


def test_single_generic_microstate_is_cat():
    psi = basis_state(3, 0) + basis_state(3, 1)
    e = expand_generic(psi, 1, 0)
    p = Projector.from_basis(3, [basis_state(3, 0)])
    assert classify(e, p) == ClassCounts(0, 0, 1)
    assert imprecise_probability(e, p) == ImpreciseProbability(0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.data())
def test_imprecise_interval_contains_born(dim, seed, data):
    rng = np.random.default_rng(seed)
    n = data.draw(st.integers(1, dim))
    rank = data.draw(st.integers(1, dim - 1))
    psi = random_state(dim, rng)
    p = Projector.onto(dim, rng.standard_normal((rank, dim)) + 1j * rng.standard_normal((rank, dim)))
    e = expand_generic(psi, n, seed)
    counts = classify(e, p)
    assert sum(counts) == n
    assert imprecise_probability(e, p).contains(born(psi, p), slack=1e-9)


def test_imprecise_probability_validation():
    with pytest.raises(QMLabError):
        ImpreciseProbability(0.6, 0.4)


# -- tensor expansions --------------------------------------------------------

def test_product_tensor_counting_example():
    # Alice: born 1/4 with n_a = 4 -> m_a = 1; Bob: born 1/2 with n_b = 2 -> m_b = 1; joint 1/8
    z = np.array([0.0, 0.0, 1.0])
    chi_a = StateVector((2,), [0.5, math.sqrt(3) / 2])
    chi_b = StateVector((2,), [1 / math.sqrt(2), 1 / math.sqrt(2)])
    ref = basis_state(4, 0)
    res_a = Resolution.binary(Projector((2, 4), (1, 1), (spin_projector(z, 1).bases[0], None)))
    res_b = res_a
    ea = expand_adapted(tensor(chi_a, ref), res_a, 4)
    eb = expand_adapted(tensor(chi_b, ref), res_b, 2)
    joint = tensor_expansion(ea, eb)
    assert joint.n == 8 and joint.is_valid()
    from qmlab.hilbert import tensor_projectors

    cell = tensor_projectors(res_a[0], res_b[0])
    assert classify(joint, cell).eig1 == 1
    assert classify(joint, cell).eig1 / joint.n == pytest.approx(1 / 8, abs=0)


# -- serialization ------------------------------------------------------------

def test_expansion_json_round_trip():
    psi = random_state((2, 3), np.random.default_rng(5))
    e = expand_generic(psi, 4, 7)
    back = EquiampExpansion.from_json(e.to_json())
    np.testing.assert_array_equal(back.matrix, e.matrix)
    assert back.parent.dims == (2, 3)


def test_dependent_frame_column_is_redrawn():
    from qmlab.expansion import _mgs

    a = np.random.default_rng(1).normal(size=(5, 3)) + 0j
    a[:, 2] = 2 * a[:, 0]
    q = _mgs(a, np.random.default_rng(2))
    np.testing.assert_allclose(q.conj().T @ q, np.eye(3), atol=1e-12)
    with pytest.raises(QMLabError, match="rank deficient"):
        _mgs(a)


def test_generic_seed_shared_with_state_generation():
    # the expansion stream must not replay the stream that produced psi
    psi = random_state(2, np.random.default_rng(0))
    assert expand_generic(psi, 2, 0).is_valid()
