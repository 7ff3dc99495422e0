import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from madm import kernels, levy
from madm.levy import LevySpec, monomial, poly_eval


def _quad_bulk(f, x, y):
    """Bulk generator on bond (x, y) by adaptive quadrature."""
    base = f(x, y)
    a = integrate.quad(lambda al: (f(x - al, y + al) - base) / al, 0, x, epsabs=1e-13, epsrel=1e-13)[0]
    b = integrate.quad(lambda al: (f(x + al, y - al) - base) / al, 0, y, epsabs=1e-13, epsrel=1e-13)[0]
    return a + b


def _quad_boundary(f, x, lam):
    base = f(x)
    rem = integrate.quad(lambda al: (f(x - al) - base) / al, 0, x, epsabs=1e-13, epsrel=1e-13)[0]
    inj = integrate.quad(lambda al: math.exp(-lam * al) * (f(x + al) - base) / al, 0, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    return rem + inj


# generator on polynomials ---------------------------------------------------------


def test_bulk_on_linear():
    assert levy.levy_apply("bulk", monomial((1, 0))) == {(0, 1): 1, (1, 0): -1}
    assert levy.levy_apply("bulk", monomial((1, 0, 0)), site=1) == {}


def test_boundary_on_linear():
    lam = Fraction(3)
    out = levy.levy_apply("boundary_left", monomial((1, 0)), lam=lam)
    assert out == {(0, 0): Fraction(1, 3), (1, 0): -1}
    out = levy.levy_apply("boundary_right", monomial((0, 1)), lam=lam)
    assert out == {(0, 0): Fraction(1, 3), (0, 1): -1}


def test_constants_are_annihilated():
    one = monomial((0, 0))
    for kind in ("bulk", "derkachov_bulk"):
        assert levy.levy_apply(kind, one) == {}
    assert levy.levy_apply("boundary_left", one, lam=2) == {}


def test_bad_kind_and_lambda():
    with pytest.raises(ValueError):
        levy.levy_apply("sideways", monomial((1, 1)))
    with pytest.raises(ValueError):
        levy.levy_apply("boundary_left", monomial((1, 1)), lam=0)
    with pytest.raises(ValueError):
        monomial((1, -1))


@pytest.mark.parametrize("exps", [(2, 0), (1, 1), (3, 2), (0, 4), (2, 5)])
def test_bulk_matches_quadrature(exps):
    poly = levy.levy_apply("bulk", monomial(exps))
    f = lambda x, y: x ** exps[0] * y ** exps[1]  # noqa: E731
    for x, y in [(0.7, 1.3), (2.0, 0.4), (1.1, 1.1)]:
        want = _quad_bulk(f, x, y)
        assert poly_eval(poly, (x, y)) == pytest.approx(want, abs=1e-8)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_boundary_matches_quadrature(n, lam):
    poly = levy.levy_apply("boundary_left", monomial((n,)), lam=lam)
    for x in (0.3, 1.0, 2.5):
        assert poly_eval(poly, (x,)) == pytest.approx(_quad_boundary(lambda z: z**n, x, lam), abs=1e-8)


def test_derkachov_matches_quadrature():
    exps = (3, 2)
    poly = levy.levy_apply("derkachov_bulk", monomial(exps))
    f = lambda x, y: x ** exps[0] * y ** exps[1]  # noqa: E731
    x, y = 0.8, 1.7
    base = f(x, y)
    g = lambda a: (f((1 - a) * x + a * y, y) - base + f(x, a * x + (1 - a) * y) - base) / a  # noqa: E731
    want = integrate.quad(g, 0, 1, epsabs=1e-13)[0]
    assert poly_eval(poly, (x, y)) == pytest.approx(want, abs=1e-8)


def test_f1_f2_relation_to_degree_8():
    assert levy.f1_f2_relation_residual(3, 2) == 0
    for a in range(9):
        for b in range(9 - a):
            assert levy.f1_f2_relation_residual(a, b) == 0, (a, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.integers(-3, 3))
def test_bulk_preserves_total_mass_moments(a, b, c):
    # the bulk move conserves x1 + x2, so any function of the sum is annihilated
    f = levy.poly_add(*[monomial((k, a + b - k), math.comb(a + b, k)) for k in range(a + b + 1)])
    assert levy.levy_apply("bulk", levy.poly_scale(f, c)) == {}


# scaling limit ---------------------------------------------------------------------


def test_scaling_limit_halves():
    r = [levy.scaling_limit_residual(M) for M in (250, 500, 1000)]
    for a, b in zip(r, r[1:]):
        assert 0.8 <= (a / b) / 2 <= 1.2
    assert r[-1] <= 1e-2


def test_scaling_limit_boundary_converges():
    r = [levy.scaling_limit_residual(M, side="boundary", lam=1.0) for M in (100, 200, 400)]
    assert r[0] > r[1] > r[2]


def test_discrete_apply_rejects_off_lattice():
    with pytest.raises(ValueError):
        levy.discrete_apply(lambda y: y[0], (0.3333,), 10, "boundary")


# simulation ------------------------------------------------------------------------


def test_cutoff_drift_and_intensity():
    for eps in (1e-3, 1e-6):
        assert levy.cutoff_drift(eps) == eps
    # E1(x) ~ -gamma - log x for small x
    assert levy.injection_intensity(1.0, 1e-8) == pytest.approx(-np.euler_gamma - math.log(1e-8), rel=1e-7)


def test_levy_deterministic_and_positive():
    spec = LevySpec(3, 1.0, 2.0)
    a = levy.levy_simulate(spec, [0.5, 0.0, 1.0], 1e-4, 30.0, 12)
    b = levy.levy_simulate(spec, [0.5, 0.0, 1.0], 1e-4, 30.0, 12)
    assert len(a) == len(b) > 0
    np.testing.assert_array_equal(a.t, b.t)
    np.testing.assert_array_equal(a.size, b.size)
    assert a.replay_matches(atol=1e-9)
    assert (a.path() >= -1e-12).all()


def test_small_sites_emit_nothing():
    eps = 1e-3
    tr = levy.levy_simulate(LevySpec(2, 1.0, 1.0), [0.0, 0.0], eps, 50.0, 4)
    path = tr.path()
    # every recorded jump is at least eps and never exceeds the mass it came from
    assert (tr.size >= eps * (1 - 1e-12)).all()
    out = np.isin(tr.kind, [kernels.BULK_LEFT, kernels.BULK_RIGHT, kernels.REMOVE_LEFT, kernels.REMOVE_RIGHT])
    pre = path[:-1][np.arange(len(tr)), tr.site]
    assert (pre[out] >= eps).all()
    assert (tr.size[out] <= pre[out] + 1e-12).all()


def test_levy_spec_validation():
    with pytest.raises(ValueError):
        LevySpec(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        LevySpec(2, 0.0, 1.0)
    with pytest.raises(ValueError):
        levy.levy_simulate(LevySpec(2, 1.0, 1.0), [0.0, -1.0], 1e-3, 1.0, 0)


def test_equilibrium_mean():
    lam, eps = 2.0, 1e-6
    st = levy.run_levy_ensemble(LevySpec(2, lam, lam), [0.0, 0.0], eps, 2000.0, 4, 3, 50.0)
    assert np.all(np.abs(st.mean - 1 / lam) <= 3 * st.se + eps)
