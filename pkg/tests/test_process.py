import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from madm import fock, process
from madm.arith import harmonic, psi_diff
from madm.process import ChainSpec

HALF = Fraction(1, 2)


# rates --------------------------------------------------------------------


def test_jump_rate_examples():
    assert process.jump_rate(HALF, 7, 3) == Fraction(1, 3)
    assert process.jump_rate(Fraction(1), 2, 1) == Fraction(2, 3)
    assert process.jump_rate(Fraction(1), 2, 2) == Fraction(1, 6)
    # a lone particle leaves at rate 1/(2s)
    assert process.jump_rate(HALF, 1, 1) == 1
    for s in (Fraction(1), Fraction(7, 3)):
        assert process.jump_rate(s, 1, 1) == 1 / (2 * s)


@pytest.mark.parametrize("m,k", [(3, 0), (3, 4), (0, 1)])
def test_jump_rate_rejects(m, k):
    with pytest.raises(ValueError):
        process.jump_rate(HALF, m, k)


@pytest.mark.parametrize("s", [HALF, Fraction(1), Fraction(3, 2), Fraction(2)])
def test_jump_rates_sum_to_harmonic(s):
    for m in range(13):
        total = sum((process.jump_rate(s, m, k) for k in range(1, m + 1)), Fraction(0))
        assert total == harmonic(m, s, True)
    assert harmonic(2, Fraction(1), True) == Fraction(5, 6)


def test_rate_table_matches_jump_rate():
    t = process.rate_table(Fraction(3, 2), 8, exact=True)
    for m in range(1, 9):
        for k in range(1, m + 1):
            assert t[m, k] == process.jump_rate(Fraction(3, 2), m, k)


def test_boundary_rates():
    removal, injection = process.boundary_rates(HALF, 0.9, 4, 3)
    assert removal == [1.0, 0.5, pytest.approx(1 / 3), 0.25]
    assert injection[2] == pytest.approx(0.243, abs=1e-15)
    assert process.injection_mass(0.5) == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(ValueError):
        process.boundary_rates(HALF, 1.0, 2, 2)


# densities ----------------------------------------------------------------


def test_density_diagonal_and_spectrum():
    h = process.hamiltonian_density(HALF, 3)
    assert h[3, 3] == harmonic(3, HALF, True) == Fraction(11, 6)
    ev = np.linalg.eigvals(np.array(process.hamiltonian_density(HALF, 1), dtype=float))
    assert sorted(ev.real) == pytest.approx([0.0, 2.0])
    assert process.hamiltonian_density(HALF, 0).shape == (1, 1)
    assert process.hamiltonian_density(HALF, 0)[0, 0] == 0


@pytest.mark.parametrize("s", [HALF, Fraction(1), Fraction(3, 2)])
def test_density_equals_function_of_casimir_exactly(s):
    for n in range(11):
        a = process.hamiltonian_density(s, n, exact=True)
        b = process.density_from_casimir(s, n, exact=True)
        assert all(v == 0 for v in (a - b).ravel()), n


def test_density_equals_function_of_casimir_float():
    for n in range(11):
        a = process.hamiltonian_density(1.5, n, exact=False)
        b = process.density_from_casimir(1.5, n, exact=False)
        assert np.abs(a - b).max() <= 1e-10


def test_density_is_digamma_form_spin_half():
    # eigenvalues 2 (psi(1 + j) - psi(1)) on sector n
    for n in range(1, 6):
        ev = sorted(np.linalg.eigvals(np.array(process.hamiltonian_density(HALF, n), dtype=float)).real)
        assert ev == pytest.approx([2 * float(psi_diff(Fraction(1), j)) for j in range(n + 1)], abs=1e-12)


# generators ---------------------------------------------------------------


def test_closed_two_site_sector():
    g = process.build_generator(ChainSpec(2, HALF, closed=True), sector=1, exact=True)
    h = g.dense()
    assert h.shape == (2, 2)
    assert all(v == 0 for v in g.column_sums())


def test_generator_requires_truncation():
    with pytest.raises(ValueError):
        process.build_generator(ChainSpec(2, HALF, closed=True))
    with pytest.raises(ValueError):
        process.build_generator(ChainSpec(2, 0.5, 0.3, 0.4))


def test_memory_cap():
    with pytest.raises(process.StateSpaceTooLarge):
        process.build_generator(ChainSpec(6, 0.5, 0.4, 0.6), m_cap=20)


def test_chain_spec_validation():
    with pytest.raises(ValueError, match=r"beta out of \(0,1\)"):
        ChainSpec(3, 0.5, 1.2, 0.4)
    with pytest.raises(ValueError):
        ChainSpec(3, 0.5, 0.3, 0.4, closed=True)


def _tail(beta, k_from):
    return sum(beta**k / k for k in range(max(k_from, 1), 4000))


def _outflow(m, m_cap, bl, br):
    # oracle: every move whose target leaves the box, spin 1/2 rates 1/k
    out = _tail(bl, m_cap - m[0] + 1) + _tail(br, m_cap - m[-1] + 1)
    for i in range(len(m) - 1):
        for src, dst in ((i, i + 1), (i + 1, i)):
            out += sum(1 / k for k in range(1, m[src] + 1) if m[dst] + k > m_cap)
    return out


@pytest.mark.parametrize("n_sites,bl,br", [(1, 0.3, 0.6), (2, 0.4, 0.7), (3, 0.2, 0.5)])
def test_open_generator_structure(n_sites, bl, br):
    m_cap = 6
    for policy in ("clip", "restrict"):
        g = process.build_generator(ChainSpec(n_sites, 0.5, bl, br), m_cap=m_cap, clip_policy=policy)
        h = g.dense()
        off = h - np.diag(np.diag(h))
        assert off.max() <= 0
        sums = g.column_sums()
        if policy == "clip":
            assert np.abs(sums).max() <= 1e-13
        else:
            assert np.allclose(sums, g.deficit, atol=1e-13)
        for j, m in enumerate(g.states):
            assert g.deficit[j] == pytest.approx(_outflow(m, m_cap, bl, br), abs=1e-13)


def test_equilibrium_detailed_balance_n2():
    g = process.build_generator(ChainSpec(2, 0.5, 0.3, 0.3), m_cap=15, clip_policy="restrict")
    r = process.detailed_balance_residual(g, lambda m: process.geometric_weight(0.3, m, exact=False))
    assert r <= 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 4), st.integers(0, 8), st.sampled_from([HALF, Fraction(1), Fraction(3, 2)]), st.fractions(Fraction(1, 10), Fraction(9, 10), max_denominator=10))
def test_closed_chain_negative_binomial_balance(n_sites, n, s, beta):
    g = process.build_generator(ChainSpec(n_sites, s, closed=True), sector=n, exact=True)
    r = process.detailed_balance_residual(g, lambda m: process.negative_binomial_weight(s, beta, m, exact=True))
    assert r == 0


# stationary law -------------------------------------------------------------


def test_single_site_stationary_is_geometric():
    beta = 0.35
    g = process.build_generator(ChainSpec(1, 0.5, beta, beta), m_cap=40)
    mu = process.stationary_distribution(g)
    # oracle: one-site balance recursion pi(m+1)/pi(m) = beta, normalised on the box
    pi = beta ** np.arange(41)
    pi /= pi.sum()
    assert np.abs(mu - pi).max() <= 1e-12
    assert mu @ g.states[:, 0] == pytest.approx(beta / (1 - beta), abs=1e-9)


def test_equilibrium_stationary_matches_geometric_product():
    beta = 0.3
    g = process.build_generator(ChainSpec(3, 0.5, beta, beta), m_cap=24)
    mu = process.stationary_distribution(g)
    w = np.array([process.geometric_weight(beta, m, exact=False) for m in g.states])
    w /= w.sum()
    assert np.abs(mu - w).max() <= 1e-10


def test_closed_chain_stationary_negative_binomial():
    s, n = 1.0, 5
    g = process.build_generator(ChainSpec(3, s, closed=True), sector=n)
    mu = process.stationary_distribution(g)
    w = np.array([process.negative_binomial_weight(s, 0.5, m, exact=False) for m in g.states])
    assert np.abs(mu - w / w.sum()).max() <= 1e-12


def test_stationary_iterative_branch_agrees_with_direct():
    g = process.build_generator(ChainSpec(2, 0.5, 0.3, 0.5), m_cap=30)
    direct = process.stationary_distribution(g, direct_limit=10_000)
    iterative = process.stationary_distribution(g, direct_limit=10)
    assert np.abs(direct - iterative).max() <= 1e-11


def test_stationary_leak_guard():
    g = process.build_generator(ChainSpec(1, 0.5, 0.7, 0.7), m_cap=8)
    with pytest.raises(ValueError):
        process.stationary_distribution(g, max_leak=1e-10)


# limits ---------------------------------------------------------------------


def test_madm_diagonal_limit_identity():
    M = 5
    h = process.madm_density(1 + 1e-7, M)
    for i in range(1, M + 2):
        target = sum(1 / abs(i - l) for l in range(1, M + 2) if l != i)
        assert h[i - 1, i - 1] == pytest.approx(target, rel=1e-5)
        assert target == pytest.approx(float(harmonic(M - i + 1, HALF, True) + harmonic(i - 1, HALF, True)))


def test_madm_single_particle():
    q = 1.3
    h = process.madm_density(q, 1)
    # off-diagonal -q q^(j-i) / [1]_q
    assert h[0, 1] == pytest.approx(-q * q)
    assert h[1, 0] == pytest.approx(-1.0)
    assert h[0, 0] == pytest.approx(q / q)


def test_madm_limit_residual_linear_in_eps():
    r1 = process.madm_limit_residual(5, 1e-4)
    r2 = process.madm_limit_residual(5, 5e-5)
    assert process.madm_limit_residual(5, 1e-6) <= 1e-4
    assert r1 / r2 == pytest.approx(2, rel=0.05)


def test_qhahn_examples():
    assert process.qhahn_rate(0.4, 0.4, 0.6, 0, 4) == pytest.approx(1.0)
    for m in range(1, 5):
        assert process.qhahn_rate(0.4, 0.4, 0.6, m, 4) == 0
    assert process.qhahn_limit_residual(0.5, 2, 3) <= 1e-3
    with pytest.raises(ZeroDivisionError):
        process.qhahn_rate(0.3, 1 / 0.5, 0.5, 1, 3)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.1, 0.9), st.integers(0, 10),
)
def test_qhahn_weights_sum_to_one(mu, nu, gamma, n):
    w = math.fsum(process.qhahn_rate(mu, nu, gamma, m, n) for m in range(n + 1))
    assert abs(w - 1) <= 1e-12
