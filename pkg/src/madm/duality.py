"""Duality between the boundary-driven chain and its absorbing dual.

Dual configurations have N+2 slots; slots 0 and N+1 absorb walkers.  The
discrete duality function is

    D(m, l) = rho_a^{l_0} * prod_i C(m_i, l_i) * rho_b^{l_{N+1}}.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import sympy

from . import fock, kernels, levy
from .arith import auto_exact, binom, coerce, harmonic, poch, zeros
from .process import (
    ChainSpec,
    SparseGenerator,
    build_generator,
    jump_rate,
    sector_states,
)

__all__ = [
    "duality_value",
    "dual_transitions",
    "dual_generator",
    "two_walker_generator",
    "edge_identity_residual",
    "boundary_identity_residual",
    "boundary_intertwiner_residual",
    "matrix_duality_residual",
    "self_duality_residual",
    "AbsorptionTable",
    "absorption",
    "absorption_monte_carlo",
    "stationary_moment_predict",
    "levy_duality_residual",
    "levy_duality_certify",
]


# ---------------------------------------------------------------------------
# duality functions
# ---------------------------------------------------------------------------


def duality_value(kind: str, state, dual, params: dict | None = None):
    """Evaluate a duality function.

    kind ``discrete``: params ``rho_a``, ``rho_b``; ``dual`` has N+2 slots.
    kind ``levy``: params ``lam_left``, ``lam_right`` and ``sign`` (exponent of
    the boundary factors, default -1); ``dual`` has N+2 slots.
    kind ``spin_s_closed``: param ``s``; ``dual`` has N slots.
    """
    params = params or {}
    dual = [int(x) for x in dual]
    if any(x < 0 for x in dual) or any(x < 0 for x in state):
        raise ValueError("duality function needs non-negative entries")
    n = len(state)
    if kind == "spin_s_closed":
        if len(dual) != n:
            raise ValueError("dimension mismatch")
        s = params.get("s", Fraction(1, 2))
        exact = auto_exact(s)
        s = coerce(s, exact)
        out = Fraction(1) if exact else 1.0
        for m, l in zip(state, dual):
            m = int(m)
            if l > m:
                return out * 0
            out *= math.perm(m, l) / poch(2 * s, l) if not exact else Fraction(math.perm(m, l)) / poch(2 * s, l)
        return out
    if len(dual) != n + 2:
        raise ValueError("dual configuration needs N+2 slots")
    if kind == "discrete":
        rho_a, rho_b = params["rho_a"], params["rho_b"]
        out = rho_a ** dual[0] * rho_b ** dual[-1]
        for m, l in zip(state, dual[1:-1]):
            out *= binom(int(m), l)
        return out
    if kind == "levy":
        sign = params.get("sign", -1)
        lam_l, lam_r = params["lam_left"], params["lam_right"]
        out = lam_l ** (sign * dual[0]) * lam_r ** (sign * dual[-1])
        for x, l in zip(state, dual[1:-1]):
            out *= x**l / math.factorial(l)
        return out
    raise ValueError(f"unknown duality kind {kind!r}")


# ---------------------------------------------------------------------------
# dual generator
# ---------------------------------------------------------------------------


def dual_transitions(ell, exact: bool = True):
    """Yield ``(target, rate)`` for every move of the dual configuration ``ell`` (N+2 slots)."""
    ell = tuple(int(x) for x in ell)
    last = len(ell) - 1
    half = Fraction(1, 2) if exact else 0.5
    # bonds (0,1) .. (N,N+1); walkers never leave the absorbing slots
    for a in range(last):
        b = a + 1
        if 1 <= a:
            for k in range(1, ell[a] + 1):
                t = list(ell)
                t[a] -= k
                t[b] += k
                yield tuple(t), jump_rate(half, ell[a], k, exact)
        if b <= last - 1:
            for k in range(1, ell[b] + 1):
                t = list(ell)
                t[a] += k
                t[b] -= k
                yield tuple(t), jump_rate(half, ell[b], k, exact)


def dual_generator(n_sites: int, n_walkers: int, exact: bool = True) -> SparseGenerator:
    """Dual ``H~`` on the sector of ``n_walkers`` walkers over N+2 slots (dense in exact mode)."""
    import scipy.sparse as sp

    states = sector_states(n_sites + 2, n_walkers)
    index = {tuple(int(x) for x in row): i for i, row in enumerate(states)}
    size = len(states)
    mat = zeros((size, size), exact)
    for j, row in enumerate(states):
        for target, rate in dual_transitions(row, exact):
            i = index[target]
            mat[i, j] -= rate
            mat[j, j] += rate
    if not exact:
        mat = sp.csc_matrix(mat.astype(float))
    spec = ChainSpec(n_sites + 2, Fraction(1, 2), closed=True)
    deficit = np.zeros(size, dtype=object if exact else float)
    return SparseGenerator(spec, states, mat, deficit, "restrict", None, n_walkers, exact, index)


def two_walker_generator(n_sites: int) -> tuple[list, np.ndarray]:
    """Two labelled symmetric walkers on {0..N+1} absorbed at the ends, lumped to occupation vectors.

    Walkers on distinct sites jump to each neighbour at rate 1; a pair on one
    site sends one walker to a neighbour at rate 1 and both at rate 1/2.
    Returns ``(states, H)`` in the ordering of :func:`dual_generator`.
    """
    states = sector_states(n_sites + 2, 2)
    index = {tuple(int(x) for x in row): i for i, row in enumerate(states)}
    last = n_sites + 1
    h = zeros((len(states), len(states)), True)

    def occ(i, j):
        v = [0] * (last + 1)
        v[i] += 1
        v[j] += 1
        return index[tuple(v)]

    def add(src, dst, rate):
        h[dst, src] -= rate
        h[src, src] += rate

    for i in range(last + 1):
        for j in range(i, last + 1):
            src = occ(i, j)
            absorbed_i = i in (0, last)
            absorbed_j = j in (0, last)
            if i != j:
                for pos, other, frozen in ((i, j, absorbed_i), (j, i, absorbed_j)):
                    if frozen:
                        continue
                    for step in (-1, 1):
                        add(src, occ(pos + step, other), Fraction(1))
            elif not absorbed_i:
                add(src, occ(i - 1, i), Fraction(1))
                add(src, occ(i - 1, i - 1), Fraction(1, 2))
                add(src, occ(i, i + 1), Fraction(1))
                add(src, occ(i + 1, i + 1), Fraction(1, 2))
    return [tuple(int(x) for x in r) for r in states], h


# ---------------------------------------------------------------------------
# single-edge and boundary identities
# ---------------------------------------------------------------------------


def edge_identity_residual(m_i: int, m_j: int, l_i: int, l_j: int) -> Fraction:
    """Exact LHS - RHS of the single-bond duality identity with binomial duality function."""
    if min(m_i, m_j, l_i, l_j) < 0:
        raise ValueError("arguments must be non-negative")
    base = binom(m_i, l_i) * binom(m_j, l_j)
    lhs = sum(Fraction(binom(m_i - k, l_i) * binom(m_j + k, l_j) - base, k) for k in range(1, m_i + 1))
    lhs += sum(Fraction(binom(m_i + k, l_i) * binom(m_j - k, l_j) - base, k) for k in range(1, m_j + 1))
    rhs = sum(Fraction(binom(m_i, l_i - k) * binom(m_j, l_j + k) - base, k) for k in range(1, l_i + 1))
    rhs += sum(Fraction(binom(m_i, l_i + k) * binom(m_j, l_j - k) - base, k) for k in range(1, l_j + 1))
    return lhs - rhs


def _injection_series(m: int, l: int, beta: float, tail_tol: float):
    """``sum_k beta^k/k (C(m+k, l) - C(m, l))`` truncated once the summand bound drops below tol.

    Returns ``(value, tail_bound)``; the bound is the geometric majorant of the
    discarded terms.
    """
    base = binom(m, l)
    total = 0.0
    k = 1
    while True:
        term = beta**k / k * (binom(m + k, l) - base)
        total += term
        # ratio of consecutive summands is beta (1+1/k)^l k/(k+1) -> beta; bound once it is < 1
        ratio = beta * ((m + k + 1) / (m + k + 1 - l) if l <= m + k else 1.0)
        if k > l and ratio < 1:
            nxt = beta ** (k + 1) / (k + 1) * binom(m + k + 1, l)
            bound = nxt / (1 - ratio)
            if bound < tail_tol:
                return total, bound
        k += 1


def boundary_identity_residual(m: int, l: int, beta: float, tail_tol: float = 1e-14) -> tuple[float, float]:
    """Both sides of the right-reservoir duality identity; returns ``(|LHS - RHS|, tail bound)``."""
    if not 0 < beta < 1:
        raise ValueError(f"beta out of (0,1): {beta}")
    rho = beta / (1 - beta)
    base = binom(m, l)
    lhs = math.fsum((binom(m - k, l) - base) / k for k in range(1, m + 1))
    series, bound = _injection_series(m, l, beta, tail_tol)
    lhs += series
    rhs = math.fsum((rho**k * binom(m, l - k) - base) / k for k in range(1, l + 1))
    return abs(lhs - rhs), bound


def boundary_intertwiner_residual(beta, m_cap: int, exact: bool | None = None):
    """Check ``e^{S-} H_N = (H~_N)^t e^{S-}`` on one reservoir site, entries (l, m) <= m_cap.

    ``H~_N = exp(-rho S-) psi(S0 + 1/2) exp(rho S-) - psi(1)``.  The injection
    series in ``e^{S-} H_N`` is summed in closed form, so with rational beta the
    check is exact.
    """
    if exact is None:
        exact = auto_exact(beta)
    beta = coerce(beta, exact)
    rho = beta / (1 - beta)
    half = Fraction(1, 2) if exact else 0.5
    dim = m_cap + 1
    # left: sum_m' C(m', l) H[m', m] with the injection part in closed form
    left = zeros((dim, dim), exact)
    for l in range(dim):
        for m in range(dim):
            v = binom(m, l) * harmonic(m, half, exact)
            v -= sum(coerce(Fraction(binom(m - k, l), k), exact) for k in range(1, m + 1))
            # sum_k beta^k/k [C(m,l) - C(m+k,l)] = -sum_{j>=1} C(m, l-j) rho^j / j
            v -= sum(binom(m, l - j) * rho**j / j for j in range(1, l + 1))
            left[l, m] = v
    e_neg = fock.exp_shift("lower", -rho, half, m_cap, exact).entries
    e_pos = fock.exp_shift("lower", rho, half, m_cap, exact).entries
    psi = zeros((dim, dim), exact)
    for l in range(dim):
        psi[l, l] = harmonic(l, half, exact)
    h_dual = e_neg.dot(psi).dot(e_pos)
    e_minus = fock.exp_shift("lower", 1, half, m_cap, exact).entries
    right = h_dual.T.dot(e_minus)
    diff = left - right
    return max(abs(x) for x in diff.ravel())


# ---------------------------------------------------------------------------
# matrix-level duality
# ---------------------------------------------------------------------------


def _dual_configs(n_sites: int, max_total: int):
    for total in range(max_total + 1):
        for row in sector_states(n_sites + 2, total):
            yield tuple(int(x) for x in row)


def _duality_table(states: np.ndarray, duals: np.ndarray, rho_a: float, rho_b: float) -> np.ndarray:
    """``D(m, l)`` for all rows of ``states`` (N cols) and ``duals`` (N+2 cols), float."""
    from scipy.special import comb

    bulk = comb(states[:, None, :], duals[None, :, 1:-1], exact=False)
    return bulk.prod(axis=2) * (rho_a ** duals[:, 0] * rho_b ** duals[:, -1])[None, :]


def matrix_duality_residual(spec: ChainSpec, m_cap: int, max_dual: int = 6, tail_tol: float = 1e-15) -> float:
    """Max-abs of ``H^t D - D H~`` over configurations with total occupancy <= m_cap.

    ``H`` is assembled on the box with the 'restrict' policy; injection batches
    that leave the box are added back as a series summed to ``tail_tol``.  On
    this block bulk moves never leave the box, so the left side is complete.
    """
    if spec.closed:
        raise ValueError("use self_duality_residual for closed chains")
    n = spec.n_sites
    gen = build_generator(spec, m_cap=m_cap, clip_policy="restrict")
    rho_a, rho_b = (float(r) for r in spec.densities())
    duals = np.array(list(_dual_configs(n, max_dual)), dtype=np.int64)
    dual_index = {tuple(int(x) for x in d): i for i, d in enumerate(duals)}
    states = gen.states
    dmat = _duality_table(states, duals, rho_a, rho_b)
    left = gen.matrix.T @ dmat
    safe = np.nonzero(states.sum(axis=1) <= m_cap)[0]
    sub = states[safe]
    # injection batches that leave the box, summed until negligible
    for site, beta in ((0, float(spec.beta_left)), (n - 1, float(spec.beta_right))):
        k_first = m_cap - sub[:, site] + 1
        for step in itertools.count():
            k = k_first + step
            w = beta**k / k
            shifted = sub.copy()
            shifted[:, site] += k
            contrib = w[:, None] * _duality_table(shifted, duals, rho_a, rho_b)
            left[safe] -= contrib
            if np.abs(contrib).max() < tail_tol and step > max_dual:
                break
    right = np.zeros_like(dmat)
    for total in range(max_dual + 1):
        dg = dual_generator(n, total, exact=False)
        cols = [dual_index[tuple(int(x) for x in r)] for r in dg.states]
        right[:, cols] = dmat[:, cols] @ dg.matrix.toarray()
    return float(np.abs(left[safe] - right[safe]).max())


def self_duality_residual(s, n_sites: int, n: int, n_dual: int):
    """Exact ``max |H_n^t D - D H_{n'}|`` for the closed spin-s chain, sectors n (state) and n' (dual)."""
    spec = ChainSpec(n_sites, s, closed=True)
    exact = auto_exact(s)
    g = build_generator(spec, sector=n, exact=True) if exact else build_generator(spec, sector=n)
    gd = build_generator(spec, sector=n_dual, exact=True) if exact else build_generator(spec, sector=n_dual)
    hm = g.dense()
    hl = gd.dense()
    dmat = zeros((g.size, gd.size), exact)
    for i, m in enumerate(g.states):
        for j, l in enumerate(gd.states):
            dmat[i, j] = duality_value("spin_s_closed", m, l, {"s": s})
    diff = hm.T.dot(dmat) - dmat.dot(hl)
    return max((abs(x) for x in diff.ravel()), default=0)


# ---------------------------------------------------------------------------
# absorption and correlations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AbsorptionTable:
    """``q[(a, b)]``: probability that a walkers end in slot 0 and b in slot N+1."""

    start: tuple
    q: dict

    def total(self):
        return sum(self.q.values())


def absorption(start, n_sites: int | None = None) -> AbsorptionTable:
    """Exact absorption probabilities of the dual walkers started from ``start`` (N+2 slots)."""
    start = tuple(int(x) for x in start)
    if n_sites is None:
        n_sites = len(start) - 2
    if len(start) != n_sites + 2:
        raise ValueError("start needs N+2 slots")
    bulk = sum(start[1:-1])
    total = sum(start)
    if bulk not in (1, 2):
        raise ValueError("absorption solves support one or two bulk walkers")
    gen = dual_generator(n_sites, total, exact=True)
    states = [tuple(int(x) for x in r) for r in gen.states]
    h = gen.matrix
    transient = [i for i, st in enumerate(states) if sum(st[1:-1]) > 0]
    absorbing = [i for i, st in enumerate(states) if sum(st[1:-1]) == 0]
    t_index = {i: r for r, i in enumerate(transient)}
    # for each absorbing target: sum_j rate(i->j) (u_j - u_i) = 0 on transient i
    a = sympy.zeros(len(transient), len(transient))
    b_cols = sympy.zeros(len(transient), len(absorbing))
    for r, i in enumerate(transient):
        a[r, r] = sympy.Rational(h[i, i].numerator, h[i, i].denominator)
        for j in range(len(states)):
            if j == i or h[j, i] == 0:
                continue
            rate = -h[j, i]
            rate = sympy.Rational(rate.numerator, rate.denominator)
            if j in t_index:
                a[r, t_index[j]] -= rate
            else:
                b_cols[r, absorbing.index(j)] += rate
    sol = a.LUsolve(b_cols)
    row = t_index[states.index(start)] if start in states and states.index(start) in t_index else None
    q = {}
    for c, j in enumerate(absorbing):
        st = states[j]
        if row is None:
            val = Fraction(1) if st == start else Fraction(0)
        else:
            v = sol[row, c]
            val = Fraction(int(v.p), int(v.q))
        q[(st[0], st[-1])] = q.get((st[0], st[-1]), Fraction(0)) + val
    return AbsorptionTable(start, q)


def absorption_monte_carlo(start, n_runs: int, seed: int) -> dict:
    """Empirical absorption frequencies and their binomial standard errors."""
    start = np.array(start, dtype=np.int64)
    counts = kernels.dual_absorption_kernel(start, int(n_runs), int(seed) % (2**32))
    total = int(start.sum())
    out = {}
    for a in range(total + 1):
        p = counts[a] / n_runs
        out[(a, total - a)] = (p, math.sqrt(max(p * (1 - p), 0.0) / n_runs))
    return out


def _delta(n_sites: int, *sites) -> tuple:
    v = [0] * (n_sites + 2)
    for i in sites:
        v[i] += 1
    return tuple(v)


def stationary_moment_predict(indices, n_sites: int, rho_a, rho_b):
    """Stationary ``E(M_i)`` or ``E(M_i M_j)`` from absorption probabilities (sites 1..N)."""
    idx = [int(i) for i in indices]
    if not 1 <= len(idx) <= 2:
        raise ValueError("only one- and two-point functions are supported")
    if any(not 1 <= i <= n_sites for i in idx):
        raise ValueError("site indices run from 1 to N")

    def dual_formula(start):
        table = absorption(start, n_sites)
        return sum(rho_a**a * rho_b**b * q for (a, b), q in table.q.items())

    if len(idx) == 1:
        return dual_formula(_delta(n_sites, idx[0]))
    i, j = idx
    if i != j:
        return dual_formula(_delta(n_sites, i, j))
    # M^2 = 2 C(M, 2) + M
    return 2 * dual_formula(_delta(n_sites, i, i)) + dual_formula(_delta(n_sites, i))


# ---------------------------------------------------------------------------
# Levy duality
# ---------------------------------------------------------------------------


def _levy_dual_poly(ell, lam_l, lam_r, sign):
    n = len(ell) - 2
    coeff = Fraction(lam_l) ** (sign * ell[0]) * Fraction(lam_r) ** (sign * ell[-1])
    coeff /= math.prod(math.factorial(x) for x in ell[1:-1])
    return levy.monomial(ell[1:-1], coeff) if n else {}


def levy_duality_residual(sign: int, n_sites: int, max_degree: int, lam_l=Fraction(2), lam_r=Fraction(3)) -> Fraction:
    """Max coefficient of ``L_x D(x, l) - (dual generator in l) D(x, l)`` over |l| <= max_degree."""
    worst = Fraction(0)
    for ell in _dual_configs(n_sites, max_degree):
        f = _levy_dual_poly(ell, lam_l, lam_r, sign)
        parts = [levy.levy_apply("boundary_left", f, lam=lam_l), levy.levy_apply("boundary_right", f, lam=lam_r)]
        parts += [levy.levy_apply("bulk", f, site=i) for i in range(n_sites - 1)]
        lhs = levy.poly_add(*parts)
        rhs_parts = []
        for target, rate in dual_transitions(ell, exact=True):
            rhs_parts.append(levy.poly_scale(_levy_dual_poly(target, lam_l, lam_r, sign), rate))
            rhs_parts.append(levy.poly_scale(f, -rate))
        rhs = levy.poly_add(*rhs_parts)
        diff = levy.poly_add(lhs, levy.poly_scale(rhs, -1))
        worst = max(worst, levy.poly_max_abs(diff))
    return worst


def levy_duality_certify(max_degree: int = 4, n_sites: int = 2, lam_l=Fraction(2), lam_r=Fraction(3)):
    """Decide the exponent sign of the reservoir factors in the Levy duality function.

    Returns ``(sign, {+1: residual, -1: residual})``; raises if not exactly one sign works.
    """
    if max_degree < 1:
        raise ValueError("max_degree must be at least 1")
    res = {sg: levy_duality_residual(sg, n_sites, max_degree, lam_l, lam_r) for sg in (1, -1)}
    ok = [sg for sg, r in res.items() if r == 0]
    if len(ok) != 1:
        raise RuntimeError(f"Levy duality exponent not uniquely determined: residuals {res}")
    return ok[0], res
