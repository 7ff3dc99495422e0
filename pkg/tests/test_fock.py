from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from madm import fock

HALF = Fraction(1, 2)
spins = st.sampled_from([HALF, Fraction(1), Fraction(3, 2), Fraction(2), Fraction(5, 3)])


def test_generator_entries_spin_half():
    sp, sm, s0 = fock.sl2_generators(HALF, 6)
    assert sp.entries[3, 2] == 3
    assert s0.entries[0, 0] == HALF
    assert all(sm.entries[m, 0] == 0 for m in range(7))
    assert (sp.band, sm.band, s0.band) == ((0, 1), (1, 0), (0, 0))


def test_generator_entries_general_spin():
    sp, sm, s0 = fock.sl2_generators(Fraction(3, 2), 5)
    # S+|m> = (m+2s)|m+1>, S-|m> = m|m-1>, S0|m> = (m+s)|m>
    assert sp.entries[3, 2] == 5
    assert sm.entries[1, 2] == 2
    assert s0.entries[4, 4] == Fraction(11, 2)


@pytest.mark.parametrize("s", [0, -1, Fraction(-1, 2)])
def test_rejects_nonpositive_spin(s):
    with pytest.raises(ValueError):
        fock.sl2_generators(s, 4)


def test_exp_shift_examples():
    assert fock.exp_shift("raise", 1, HALF, 6).entries[4, 2] == 6
    assert fock.exp_shift("raise", 2, Fraction(1), 6).entries[2, 0] == 12
    for direction in ("raise", "lower"):
        e = fock.exp_shift(direction, 0, Fraction(1), 5).entries
        assert (e == np.eye(6, dtype=object)).all()


def _power_series(op, gamma, dim):
    # the generators are nilpotent on the truncated module, so the series is finite
    out = np.eye(dim, dtype=object) * Fraction(1)
    term = out.copy()
    for k in range(1, dim + 1):
        term = term.dot(op) * Fraction(gamma) / k
        out = out + term
    return out


@settings(max_examples=25, deadline=None)
@given(spins, st.fractions(min_value=-3, max_value=3, max_denominator=7), st.integers(1, 7))
def test_exp_shift_equals_power_series(s, gamma, m_cap):
    sp, sm, _ = fock.sl2_generators(s, m_cap, exact=True)
    assert (fock.exp_shift("raise", gamma, s, m_cap, True).entries == _power_series(sp.entries, gamma, m_cap + 1)).all()
    assert (fock.exp_shift("lower", gamma, s, m_cap, True).entries == _power_series(sm.entries, gamma, m_cap + 1)).all()


@settings(max_examples=25, deadline=None)
@given(spins, st.integers(2, 9))
def test_commutation_relations_below_cap(s, m_cap):
    sp, sm, s0 = (g.entries for g in fock.sl2_generators(s, m_cap, exact=True))
    c1 = s0.dot(sp) - sp.dot(s0) - sp
    c2 = s0.dot(sm) - sm.dot(s0) + sm
    c3 = sp.dot(sm) - sm.dot(sp) + 2 * s0
    # truncation only corrupts the last column of products containing S+ S-
    for c in (c1, c2, c3):
        assert all(v == 0 for v in c[:, :m_cap].ravel())


@settings(max_examples=20, deadline=None)
@given(spins, st.integers(2, 6))
def test_band_bookkeeping(s, m_cap):
    sp, sm, s0 = fock.sl2_generators(s, m_cap, exact=True)
    prod = sp @ sm @ sp
    assert prod.band == (1, 2)
    assert prod.band_violation() == 0
    assert (sp + sm).band_violation() == 0


def test_irrep_trivial_sector():
    b = fock.irrep_decompose(Fraction(1), 0)
    assert b.labels == (2,)
    assert b.vectors.shape == (1, 1)


def test_casimir_eigenvalues_spin_half_n2():
    # oracle: eigenvalues of the explicitly built 3x3 Casimir
    c = np.array(fock.pair_casimir(0.5, 2, exact=False), dtype=float)
    assert np.allclose(sorted(np.linalg.eigvals(c).real), [0.0, 2.0, 6.0], atol=1e-12)
    b = fock.irrep_decompose(HALF, 2)
    assert [lam * (lam - 1) for lam in b.labels] == [0, 2, 6]


def test_labels_spin_one():
    assert fock.irrep_decompose(Fraction(1), 1).labels == (2, 3)


@settings(max_examples=20, deadline=None)
@given(spins, st.integers(0, 6))
def test_irrep_basis_diagonalises_casimir_exactly(s, n):
    b = fock.irrep_decompose(s, n, exact=True)
    c = fock.pair_casimir(s, n, exact=True)
    d = b.inverse().dot(c).dot(b.vectors)
    target = np.diag([lam * (lam - 1) for lam in b.labels])
    assert all(v == 0 for v in (d - target).ravel())


@pytest.mark.parametrize("s", [0.5, 1.0, 2.5])
def test_irrep_basis_float_residual(s):
    b = fock.irrep_decompose(s, 6, exact=False)
    c = fock.pair_casimir(s, 6, exact=False)
    d = b.inverse() @ c @ b.vectors
    assert np.abs(d - np.diag(np.diag(d))).max() <= 1e-12


def test_function_of_s_examples():
    b = fock.irrep_decompose(HALF, 1)
    ident = fock.function_of_S(lambda lam: lam, b)
    assert sorted(np.linalg.eigvals(np.array(ident, dtype=float)).real) == pytest.approx([1.0, 2.0])
    one = fock.function_of_S(lambda lam: 1, fock.irrep_decompose(Fraction(1), 4))
    assert (one == np.eye(5, dtype=object)).all()


def test_function_of_s_pole():
    with pytest.raises(ZeroDivisionError):
        fock.function_of_S(lambda lam: 1 / (lam - 1), fock.irrep_decompose(HALF, 1))


def test_safe_indices():
    assert list(fock.safe_indices(6, 2)) == [0, 1, 2, 3]
    assert list(fock.safe_indices(2, 5)) == []
