from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from madm import duality, process
from madm.process import ChainSpec

RHO_A, RHO_B = Fraction(1), Fraction(3)

# Two-walker absorption oracle at rho_a = 1, rho_b = 3, from an independent
# symbolic solve of the two-walker chain: (N, i, j) -> (q20, q11, q02, E[M_i M_j]).
ORACLE = {
    (2, 1, 2): (Fraction(1, 4), Fraction(1, 2), Fraction(1, 4), Fraction(4)),
    (3, 1, 2): (Fraction(2, 5), Fraction(9, 20), Fraction(3, 20), Fraction(31, 10)),
    (4, 1, 2): (Fraction(1, 2), Fraction(2, 5), Fraction(1, 10), Fraction(13, 5)),
    (4, 1, 3): (Fraction(1, 3), Fraction(8, 15), Fraction(2, 15), Fraction(47, 15)),
    (4, 1, 4): (Fraction(1, 6), Fraction(2, 3), Fraction(1, 6), Fraction(11, 3)),
    (4, 2, 3): (Fraction(4, 15), Fraction(7, 15), Fraction(4, 15), Fraction(61, 15)),
    (4, 2, 4): (Fraction(2, 15), Fraction(8, 15), Fraction(1, 3), Fraction(71, 15)),
    (4, 3, 4): (Fraction(1, 10), Fraction(2, 5), Fraction(1, 2), Fraction(29, 5)),
}


def _start(n, *sites):
    v = [0] * (n + 2)
    for i in sites:
        v[i] += 1
    return tuple(v)


# duality functions ---------------------------------------------------------------


def test_duality_value_basics():
    p = {"rho_a": RHO_A, "rho_b": RHO_B}
    m = (4, 0, 7)
    assert duality.duality_value("discrete", m, (0, 0, 0, 0, 0), p) == 1
    for i in range(3):
        assert duality.duality_value("discrete", m, _start(3, i + 1), p) == m[i]
    assert duality.duality_value("discrete", m, (2, 0, 0, 0, 1), p) == 3
    assert duality.duality_value("discrete", m, (0, 2, 0, 1, 0), p) == 6 * 7


def test_duality_value_other_kinds():
    lv = duality.duality_value("levy", (0.5, 2.0), (1, 1, 2, 0), {"lam_left": 2.0, "lam_right": 3.0})
    assert lv == pytest.approx(0.5 * 2.0**2 / 2 / 2.0)
    half = Fraction(1, 2)
    assert duality.duality_value("spin_s_closed", (3, 1), (2, 0), {"s": half}) == 3
    assert duality.duality_value("spin_s_closed", (3, 1), (0, 2), {"s": half}) == 0
    assert duality.duality_value("spin_s_closed", (2,), (2,), {"s": Fraction(1)}) == Fraction(2, 6)
    with pytest.raises(ValueError):
        duality.duality_value("discrete", (1,), (0, 0), {"rho_a": 1, "rho_b": 1})
    with pytest.raises(ValueError):
        duality.duality_value("nope", (1,), (0, 0, 0))


# dual dynamics -------------------------------------------------------------------


def test_one_walker_dual_is_symmetric_walk():
    g = duality.dual_generator(3, 1, exact=True)
    states = [tuple(int(x) for x in r) for r in g.states]
    h = g.matrix
    for j, st_ in enumerate(states):
        site = st_.index(1)
        out = {states[i]: -h[i, j] for i in range(len(states)) if i != j and h[i, j] != 0}
        if site in (0, 4):
            assert out == {}
        else:
            assert out == {_start(3, site - 1): 1, _start(3, site + 1): 1}


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_two_walker_matches_dual_generator(n):
    states, h = duality.two_walker_generator(n)
    g = duality.dual_generator(n, 2, exact=True)
    assert [tuple(int(x) for x in r) for r in g.states] == states
    assert (np.asarray(g.matrix) == h).all()


def test_dual_column_sums_vanish():
    g = duality.dual_generator(3, 3, exact=True)
    for j in range(g.size):
        assert sum(g.matrix[:, j]) == 0


# identities ----------------------------------------------------------------------


def test_edge_identity_example():
    assert duality.edge_identity_residual(2, 1, 1, 0) == 0


def test_edge_identity_all_small():
    r = range(9)
    assert all(duality.edge_identity_residual(a, b, c, d) == 0 for a in r for b in r for c in r for d in r)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 14), st.integers(0, 14), st.integers(0, 6), st.integers(0, 6))
def test_edge_identity_property(a, b, c, d):
    assert duality.edge_identity_residual(a, b, c, d) == 0


def test_edge_identity_rejects_negative():
    with pytest.raises(ValueError):
        duality.edge_identity_residual(-1, 0, 0, 0)


def test_boundary_identity_examples():
    d, tail = duality.boundary_identity_residual(3, 2, 0.5)
    assert d <= 1e-12 and tail < 1e-13
    d, tail = duality.boundary_identity_residual(0, 1, 0.9)
    assert d <= 1e-10
    with pytest.raises(ValueError):
        duality.boundary_identity_residual(1, 1, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10), st.integers(0, 6), st.floats(0.05, 0.85))
def test_boundary_identity_property(m, l, beta):
    d, _ = duality.boundary_identity_residual(m, l, beta)
    scale = max(1.0, (beta / (1 - beta)) ** l) * 2 ** (m + l)
    assert d <= 1e-12 * scale


@pytest.mark.parametrize("beta", [Fraction(1, 3), Fraction(3, 5)])
def test_boundary_intertwiner_exact(beta):
    assert duality.boundary_intertwiner_residual(beta, 10, exact=True) == 0


def test_matrix_duality():
    spec = ChainSpec(2, 0.5, 0.3, 0.6)
    assert duality.matrix_duality_residual(spec, 12) <= 1e-10
    with pytest.raises(ValueError):
        duality.matrix_duality_residual(ChainSpec(2, 0.5, closed=True), 6)


@pytest.mark.parametrize("n", range(4))
@pytest.mark.parametrize("nd", range(4))
def test_self_duality_spin_one(n, nd):
    assert duality.self_duality_residual(Fraction(1), 3, n, nd) == 0


def test_self_duality_half_integer_spin():
    assert duality.self_duality_residual(Fraction(3, 2), 2, 3, 2) == 0


# absorption ----------------------------------------------------------------------


def test_one_walker_absorption():
    tab = duality.absorption(_start(3, 1))
    assert tab.q == {(1, 0): Fraction(3, 4), (0, 1): Fraction(1, 4)}
    for i in range(1, 4):
        q = duality.absorption(_start(3, i)).q
        assert q[(0, 1)] == Fraction(i, 4)


@pytest.mark.parametrize("key", sorted(ORACLE))
def test_two_walker_oracle(key):
    n, i, j = key
    q20, q11, q02, e2 = ORACLE[key]
    tab = duality.absorption(_start(n, i, j))
    assert tab.q == {(2, 0): q20, (1, 1): q11, (0, 2): q02}
    assert tab.total() == 1
    assert duality.stationary_moment_predict((i, j), n, RHO_A, RHO_B) == e2


def test_linear_mean_from_dual():
    assert duality.stationary_moment_predict((2,), 3, RHO_A, RHO_B) == 2
    for i in range(1, 7):
        want = Fraction(2, 3) + (Fraction(3, 2) - Fraction(2, 3)) * i / 7
        assert duality.stationary_moment_predict((i,), 6, Fraction(2, 3), Fraction(3, 2)) == want


def test_second_moment_diagonal():
    # equilibrium rho_a = rho_b = rho: geometric marginal, E M^2 = rho + 2 rho^2
    rho = Fraction(2, 3)
    assert duality.stationary_moment_predict((2, 2), 3, rho, rho) == rho + 2 * rho**2


def test_absorption_input_checks():
    with pytest.raises(ValueError):
        duality.absorption((0, 1, 1, 1, 0))
    with pytest.raises(ValueError):
        duality.absorption((0, 1, 0), n_sites=2)
    with pytest.raises(ValueError):
        duality.stationary_moment_predict((1, 2, 3), 3, RHO_A, RHO_B)


def test_absorption_monte_carlo_agrees():
    start = _start(4, 2, 3)
    exact = duality.absorption(start).q
    mc = duality.absorption_monte_carlo(start, 200_000, 5)
    for k, (p, se) in mc.items():
        assert abs(p - float(exact[k])) <= 3 * se + 1e-12


def test_truncated_solve_example_n3():
    # E(M_1 M_2) at N=3, rho_a=1, rho_b=3 against the truncated stationary solve
    spec = ChainSpec(3, 0.5, 0.5, 0.75)
    gen = process.build_generator(spec, m_cap=25, clip_policy="clip")
    mu = process.stationary_distribution(gen)
    s = gen.states.astype(float)
    solved = float(mu @ (s[:, 0] * s[:, 1]))
    predicted = float(duality.stationary_moment_predict((1, 2), 3, RHO_A, RHO_B))
    assert predicted == pytest.approx(3.1)
    assert abs(solved - predicted) <= 1e-4


# Levy duality --------------------------------------------------------------------


def test_levy_duality_certify():
    sign, res = duality.levy_duality_certify(4)
    assert sign == -1
    assert res[-1] == 0 and res[1] > 0


def test_levy_duality_certify_rejects_degree():
    with pytest.raises(ValueError):
        duality.levy_duality_certify(0)
