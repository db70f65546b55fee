import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import singlet_joint_closed_form, singlet_joint_dense, singlet_spin_vector
from qmlab.eprb import (
    OUTCOMES,
    PAIRS,
    X,
    Z,
    JointDistribution,
    Scenario,
    alice_projector,
    bob_projector,
    chsh,
    conditional,
    correlation,
    direction,
    joint_distribution,
    joint_resolution,
    load_config,
    marginals,
    product_state,
    scenario_distributions,
    singlet_state,
)
from qmlab.errors import DimensionError, QMLabError, UndefinedConditionalError
from qmlab.hilbert import born

TSIRELSON_S = -2.8284271247461903  # oracle: sum of -cos over the four canonical pairs

E0 = np.array([1, 0], complex)
PLUS = np.array([1, 1], complex) / math.sqrt(2)


def test_singlet_spin_part():
    psi = singlet_state(3, 2)
    assert psi.dims == (2, 3, 2, 2)
    t = psi.amplitudes.reshape(2, 3, 2, 2)
    spin = t[:, 0, :, 0].reshape(4)
    assert abs(np.vdot(singlet_spin_vector(), spin)) ** 2 == pytest.approx(1.0, abs=1e-15)
    assert psi.norm() == pytest.approx(1.0, abs=1e-15)


def test_singlet_same_axis_up_up_is_zero():
    psi = singlet_state(4, 4)
    cell = joint_resolution(Z, Z, 4, 4)[0]
    assert born(psi, cell) == pytest.approx(0.0, abs=1e-15)


def test_singlet_alice_marginal_half():
    assert born(singlet_state(4, 4), alice_projector(Z, 1, 4, 4)) == pytest.approx(0.5, abs=1e-15)


def test_joint_resolution_ranks_and_completeness():
    res = joint_resolution(direction(0.3), direction(1.1, 0.4), 3, 5)
    assert [p.rank for p in res] == [15] * 4
    psi = singlet_state(3, 5)
    assert sum(born(psi, p) for p in res) == pytest.approx(1.0, abs=1e-12)


def test_product_e0_e0_on_z():
    d = joint_distribution(product_state(E0, E0, 2, 2), Z, Z)
    assert d.probs == pytest.approx((1, 0, 0, 0), abs=1e-15)
    pa, _ = marginals(d)
    assert pa[1] == pytest.approx(1.0)
    assert correlation(d) == pytest.approx(1.0)


def test_product_plus_state_marginal():
    pa, _ = marginals(joint_distribution(product_state(PLUS, E0, 1, 1), Z, Z))
    assert pa[1] == pytest.approx(0.5, abs=1e-15)


def test_sixty_degrees_frozen_value():
    d = joint_distribution(singlet_state(2, 2), Z, direction(math.pi / 3))
    assert d.p(1, 1) == pytest.approx(0.125, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, math.pi), st.floats(0, math.pi), st.floats(0, 2 * math.pi))
def test_singlet_joint_matches_oracles(theta_x, theta_y, phi):
    x, y = direction(theta_x, phi), direction(theta_y, phi)
    angle = math.acos(max(-1.0, min(1.0, float(x @ y))))
    d = joint_distribution(singlet_state(2, 3), x, y)
    for s, t in OUTCOMES:
        assert d.p(s, t) == pytest.approx(singlet_joint_dense(x, y, s, t), abs=1e-12)
        assert d.p(s, t) == pytest.approx(singlet_joint_closed_form(angle, s, t), abs=1e-12)
    assert correlation(d) == pytest.approx(-math.cos(angle), abs=1e-9)
    pa, pb = marginals(d)
    assert pa[1] == pytest.approx(0.5, abs=1e-12) and pb[-1] == pytest.approx(0.5, abs=1e-12)


def test_singlet_correlation_law_on_grid():
    psi = singlet_state(1, 1)
    worst = max(abs(correlation(joint_distribution(psi, Z, direction(t))) + math.cos(t))
                for t in np.linspace(0, math.pi, 181))
    assert worst <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_product_state_factorizes(seed):
    rng = np.random.default_rng(seed)
    chi = [rng.standard_normal(2) + 1j * rng.standard_normal(2) for _ in range(2)]
    dirs = [v / np.linalg.norm(v) for v in rng.standard_normal((2, 3))]
    d = joint_distribution(product_state(chi[0], chi[1], 2, 1), *dirs)
    pa, pb = marginals(d)
    for s, t in OUTCOMES:
        assert abs(d.p(s, t) - pa[s] * pb[t]) <= 1e-12
    for t in (1, -1):
        assert conditional(d, "A", t)[1] == pytest.approx(pa[1], abs=1e-12)


def test_conditionals_singlet_same_axis():
    d = joint_distribution(singlet_state(2, 2), Z, Z)
    assert conditional(d, "A", 1)[1] == pytest.approx(0.0, abs=1e-15)
    assert sum(conditional(d, "B", -1).values()) == pytest.approx(1.0)


def test_conditional_uniform_is_half():
    d = JointDistribution(("x", "y"), (0.25, 0.25, 0.25, 0.25))
    assert conditional(d, "A", -1) == {1: 0.5, -1: 0.5}


def test_conditional_on_impossible_outcome():
    d = joint_distribution(product_state(E0, E0, 1, 1), Z, Z)
    with pytest.raises(UndefinedConditionalError, match="undefined conditional"):
        conditional(d, "A", -1)


def test_joint_distribution_validates_total():
    with pytest.raises(QMLabError):
        JointDistribution(("x", "y"), (0.5, 0.5, 0.5, 0.0))


def test_counting_backend_same_axis_exact_halves():
    d = joint_distribution(singlet_state(32, 32), Z, Z, "counting", 1000)
    assert d.probs == (0.0, 0.5, 0.5, 0.0)
    assert d.cat_mass == 0.0


def test_counting_backend_needs_n():
    with pytest.raises(QMLabError):
        joint_distribution(singlet_state(2, 2), Z, Z, "counting")


def test_counting_and_born_agree_within_three_over_n():
    rng = np.random.default_rng(11)
    psi = singlet_state(8, 8)
    for _ in range(10):
        x, y = (v / np.linalg.norm(v) for v in rng.standard_normal((2, 3)))
        n = 50
        c = joint_distribution(psi, x, y, "counting", n)
        b = joint_distribution(psi, x, y, "born")
        assert c.cat_mass <= 3 / n
        assert max(abs(p - q) for p, q in zip(c.probs, b.probs)) <= 3 / n
        ca, cb = marginals(c)
        ba, bb = marginals(b)
        assert max(abs(ca[s] - ba[s]) for s in (1, -1)) <= 6 / n


def test_eprb_dims_required():
    from qmlab.hilbert import random_state

    with pytest.raises(DimensionError):
        joint_distribution(random_state(8, np.random.default_rng(0)), Z, Z)


def test_wing_projectors_match_dense_kron():
    from oracles import dense_spin_projector

    d_a, d_b = 2, 3
    alice = np.kron(np.kron(dense_spin_projector(X, 1), np.eye(d_a)), np.eye(2 * d_b))
    bob = np.kron(np.eye(2 * d_a), np.kron(dense_spin_projector(X, -1), np.eye(d_b)))
    np.testing.assert_allclose(alice_projector(X, 1, d_a, d_b).matrix(), alice, atol=1e-15)
    np.testing.assert_allclose(bob_projector(X, -1, d_a, d_b).matrix(), bob, atol=1e-15)


# -- CHSH ---------------------------------------------------------------------

def test_tsirelson_born():
    sc = Scenario.tsirelson(d_a=2, d_b=2)
    assert chsh(sc.psi(), sc) == pytest.approx(TSIRELSON_S, abs=1e-9)


def test_tsirelson_counting_default_scale():
    sc = Scenario.tsirelson(backend="counting")
    s = chsh(sc.psi(), sc)
    assert abs(abs(s) - 2 * math.sqrt(2)) <= 48 / sc.n


def test_degenerate_settings_double_a_single_correlation():
    a, b = direction(0.2), direction(1.3)
    sc = Scenario(a, a, b, b, d_a=1, d_b=1)
    psi = sc.psi()
    e = correlation(joint_distribution(psi, a, b))
    assert chsh(psi, sc) == pytest.approx(2 * e, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_product_states_respect_classical_bound(seed):
    rng = np.random.default_rng(seed)
    dirs = [v / np.linalg.norm(v) for v in rng.standard_normal((4, 3))]
    chi = [rng.standard_normal(2) + 1j * rng.standard_normal(2) for _ in range(2)]
    sc = Scenario(*dirs, d_a=1, d_b=1, state="product", chi_a=chi[0], chi_b=chi[1])
    assert abs(chsh(sc.psi(), sc)) <= 2 + 1e-9


def test_parameter_independence_born_random_scenarios():
    rng = np.random.default_rng(12)
    for _ in range(20):
        dirs = [v / np.linalg.norm(v) for v in rng.standard_normal((4, 3))]
        sc = Scenario(*dirs, d_a=1, d_b=2)
        dists = scenario_distributions(sc.psi(), sc)
        for x in ("a", "a'"):
            m1, _ = marginals(dists[(x, "b")])
            m2, _ = marginals(dists[(x, "b'")])
            assert abs(m1[1] - m2[1]) <= 1e-12


# -- scenario files -----------------------------------------------------------

def test_scenario_round_trip_and_files(tmp_path):
    sc = Scenario.tsirelson(d_a=3, d_b=4, n=20, state="product", chi_a=PLUS, chi_b=E0)
    data = sc.to_dict()
    back = Scenario.from_dict(data)
    np.testing.assert_allclose(back.b_prime, sc.b_prime)
    assert (back.d_a, back.d_b, back.n, back.state) == (3, 4, 20, "product")
    path = tmp_path / "s.json"
    path.write_text(json.dumps(data))
    assert Scenario.from_file(path).n == 20
    toml = tmp_path / "s.toml"
    toml.write_text('a = [0, 0, 1]\na_prime = [1, 0, 0]\nb = [0, 0, 1]\nb_prime = [1, 0, 0]\nd_a = 2\n')
    assert load_config(toml)["d_a"] == 2
    assert Scenario.from_file(toml).d_a == 2


@pytest.mark.parametrize("bad,match", [
    ({"a": [0, 0, 1]}, "missing"),
    ({"a": [0, 0, 1], "a_prime": [0, 0, 1], "b": [0, 0, 1], "b_prime": [0, 0, 1], "colour": 1}, "unknown"),
    ({"a": [0, 0, 2], "a_prime": [0, 0, 1], "b": [0, 0, 1], "b_prime": [0, 0, 1]}, "unit"),
    ({"a": [0, 0, 1], "a_prime": [0, 0, 1], "b": [0, 0, 1], "b_prime": [0, 0, 1], "n": 1.5}, "integer"),
    ({"a": [0, 0, 1], "a_prime": [0, 0, 1], "b": [0, 0, 1], "b_prime": [0, 0, 1], "state": "bell"}, "state"),
])
def test_scenario_rejects_bad_fields(bad, match):
    with pytest.raises(QMLabError, match=match):
        Scenario.from_dict(bad)


def test_check_counting_flags_rank_violations():
    sc = Scenario.tsirelson(d_a=1, d_b=1, n=10)
    assert set(sc.check_counting()) == {"".join(p) for p in PAIRS}
    assert Scenario.tsirelson(n=1000).check_counting() == []
