"""Integrability witnesses for the open harmonic chain.

The objects here are checked against each other rather than against numbers:
Lax and R matrices through the Yang-Baxter relation, the K-operators through
the reflection (boundary Yang-Baxter) relation, the two-dimensional transfer
matrix through commutativity with itself and with the generator, and the
generator itself is rebuilt from the logarithmic derivative of the fundamental
transfer matrix.

Truncation to ``m <= m_cap`` breaks operator identities near the cutoff.  Every
residual below is therefore restricted to a *safe block*: occupations far
enough from the cutoff that no truncated intermediate state contributes.  For
a product of ``p`` factors that each move an occupation by at most one, rows
and columns ``<= m_cap - p`` are safe.

Auxiliary 2x2 objects act on ``aux (x) quantum`` with the auxiliary index
slowest, i.e. the dense matrix of ``[[A, B], [C, D]]`` is ``np.block``.
"""

from __future__ import annotations

import functools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import special
from sympy import QQ
from sympy.polys.matrices import DomainMatrix

from . import fock, process
from .arith import as_exact, auto_exact, coerce, identity, psi_diff, zeros

__all__ = [
    "GammaPoleError",
    "lax_matrix",
    "ybe_residual",
    "unitarity_residual",
    "r_matrix_sector",
    "fundamental_ybe_residual",
    "k_matrix_2x2",
    "stochastic_k_matrix",
    "k_operator",
    "bybe_residual",
    "inversion_residual",
    "triangular_gauge_residual",
    "transfer_square",
    "commutator_residuals",
    "rational_generator",
    "sample_points",
    "coef1_sum",
    "coef2_sum",
    "coef2_direct",
    "middle_sum_residuals",
    "left_boundary_weights",
    "right_boundary_closed_form",
    "right_boundary_conjugation",
    "right_boundary_from_sums",
    "hamiltonian_from_transfer",
    "hamiltonian_residual",
    "triangularize_checks",
]


class GammaPoleError(ZeroDivisionError):
    """A Gamma-function argument of a K-operator hit a pole."""


def _max_abs(a) -> object:
    if a.size == 0:
        return 0
    if a.dtype == object:
        return max(abs(v) for v in a.ravel())
    return float(np.max(np.abs(a)))


def _half(exact: bool):
    return Fraction(1, 2) if exact else 0.5


def _rational(v) -> Fraction:
    return as_exact(v)


def _to_dm(a: np.ndarray) -> DomainMatrix:
    """Sparse DomainMatrix over QQ from a Fraction array."""
    rows: dict = {}
    for i, j in zip(*np.nonzero(a != 0)):
        v = a[i, j]
        rows.setdefault(int(i), {})[int(j)] = QQ(v.numerator, v.denominator)
    return DomainMatrix(rows, a.shape, QQ)


def _from_dm(m: DomainMatrix) -> np.ndarray:
    out = np.empty(m.shape, dtype=object)
    out.fill(Fraction(0))
    for i, row in m.to_dod().items():
        for j, v in row.items():
            out[i, j] = Fraction(int(v.numerator), int(v.denominator))
    return out


def _prod(*mats):
    """Matrix product; Fraction arrays are multiplied as sparse rationals."""
    if mats[0].dtype != object:
        out = mats[0]
        for m in mats[1:]:
            out = out @ m
        return out
    out = _to_dm(mats[0])
    for m in mats[1:]:
        out = out * _to_dm(m)
    return _from_dm(out)


# ---------------------------------------------------------------------------
# Lax matrix and Yang-Baxter relations
# ---------------------------------------------------------------------------


def lax_matrix(x, s, m_cap: int, exact: bool | None = None) -> np.ndarray:
    """``L(x) = [[x + 1/2 + S0, -S-], [S+, x + 1/2 - S0]]`` as a ``2d x 2d`` matrix."""
    if exact is None:
        exact = auto_exact(x, s)
    x = coerce(x, exact)
    sp, sm, s0 = (op.entries for op in fock.sl2_generators(s, m_cap, exact))
    h = identity(m_cap + 1, exact) * (x + _half(exact))
    return np.block([[h + s0, -sm], [sp, h - s0]])


def _aux_transpose(a: np.ndarray) -> np.ndarray:
    """Transpose the 2x2 auxiliary structure, leaving the quantum blocks alone."""
    d = a.shape[0] // 2
    out = a.copy()
    out[:d, d:], out[d:, :d] = a[d:, :d], a[:d, d:]
    return out


def _safe_rows(n_aux: int, d: int, width: int) -> np.ndarray:
    keep = fock.safe_indices(d, width)
    return np.concatenate([a * d + keep for a in range(n_aux)])


def _restricted(a: np.ndarray, rows: np.ndarray):
    return _max_abs(a[np.ix_(rows, rows)])


def ybe_residual(x, y, s, m_cap: int, exact: bool | None = None):
    """Residual of ``R(x-y) L1(x) L2(y) = L2(y) L1(x) R(x-y)``, ``R(z) = z + P``.

    ``L1``, ``L2`` act on the first and second auxiliary space and a common
    quantum site.  Both sides are products of two band-one operators.
    """
    if m_cap < 3:
        raise ValueError("m_cap must be at least 3")
    if exact is None:
        exact = auto_exact(x, y, s)
    d = m_cap + 1
    lx, ly = lax_matrix(x, s, m_cap, exact), lax_matrix(y, s, m_cap, exact)
    z = coerce(x, exact) - coerce(y, exact)
    eye2 = identity(2, exact)
    perm = zeros((4, 4), exact)
    for a in range(2):
        for b in range(2):
            perm[2 * a + b, 2 * b + a] = coerce(1, exact)
    r = np.kron(identity(4, exact) * z + perm, identity(d, exact))
    l1 = _on_slot(lx, 0, d, eye2)
    l2 = _on_slot(ly, 1, d, eye2)
    res = _prod(r, l1, l2) - _prod(l2, l1, r)
    return _restricted(res, _safe_rows(4, d, 2))


def _on_slot(lax: np.ndarray, slot: int, d: int, eye2: np.ndarray) -> np.ndarray:
    """Embed a 2x2-block operator into ``aux1 (x) aux2 (x) quantum``."""
    exact = lax.dtype == object
    out = zeros((4 * d, 4 * d), exact)
    for a in range(2):
        for b in range(2):
            unit = zeros((2, 2), exact)
            unit[a, b] = coerce(1, exact)
            block = lax[a * d:(a + 1) * d, b * d:(b + 1) * d]
            aux = np.kron(unit, eye2) if slot == 0 else np.kron(eye2, unit)
            out = out + np.kron(aux, block)
    return out


def unitarity_residual(x, s, m_cap: int, exact: bool | None = None):
    """Max residual of both unitarity relations of the Lax matrix.

    ``L(x) L(-x) = (x + s - 1/2)(-x + s - 1/2)`` and, with ``L^t`` transposed
    in the auxiliary space, ``L^t(x) L^t(-x-2) = (x + s + 1/2)(-x + s - 3/2)``.
    """
    if m_cap < 2:
        raise ValueError("m_cap must be at least 2")
    if exact is None:
        exact = auto_exact(x, s)
    x, s_ = coerce(x, exact), coerce(s, exact)
    h = _half(exact)
    d = m_cap + 1
    eye = identity(2 * d, exact)
    plain = lax_matrix(x, s, m_cap, exact) @ lax_matrix(-x, s, m_cap, exact)
    plain = plain - eye * ((x + s_ - h) * (-x + s_ - h))
    lt = _aux_transpose(lax_matrix(x, s, m_cap, exact)) @ _aux_transpose(lax_matrix(-x - 2, s, m_cap, exact))
    lt = lt - eye * ((x + s_ + h) * (-x + s_ - 3 * h))
    rows = _safe_rows(2, d, 1)
    return max(_restricted(plain, rows), _restricted(lt, rows))


# ---------------------------------------------------------------------------
# fundamental R-matrix
# ---------------------------------------------------------------------------


def _r_eigenvalue(x, two_s, j: int):
    # (-1)^j Gamma(2s-x) Gamma(2s+j+x) / (Gamma(2s+x) Gamma(2s+j-x))
    out = 1 if isinstance(x, Fraction) else 1.0
    for i in range(j):
        den = two_s + i - x
        if den == 0:
            raise GammaPoleError(f"R-matrix pole at x={x}, label {two_s + j}")
        out *= (two_s + i + x) / den
    return out * (-1) ** j


def r_matrix_sector(x, s, n: int, exact: bool | None = None) -> np.ndarray:
    """Fundamental R-matrix on the two-site sector of total occupation n.

    Eigenvalue on the irrep of label ``2s + j`` is
    ``(-1)^j Gamma(2s-x) Gamma(2s+j+x) / (Gamma(2s+x) Gamma(2s+j-x))``,
    normalised so that ``R(0)`` is the site permutation.
    """
    if exact is None:
        exact = auto_exact(x, s)
    basis = fock.irrep_decompose(s, n, exact)
    two_s, x = 2 * coerce(s, exact), coerce(x, exact)
    return fock.function_of_S(lambda lam: _r_eigenvalue(x, two_s, int(round(lam - two_s))), basis)


def fundamental_ybe_residual(x, y, s, n_max: int, exact: bool | None = None):
    """Residual of ``R12(x-y) L1(x) L2(y) = L2(y) L1(x) R12(x-y)`` on two sites.

    The quantum space is ``{m1 + m2 <= n_max}``, on which R is exact sector by
    sector; the Lax pair raises the total by at most two, so states with total
    ``<= n_max - 2`` are safe.
    """
    if exact is None:
        exact = auto_exact(x, y, s)
    states = [(p, n - p) for n in range(n_max + 1) for p in range(n + 1)]
    index = {st: i for i, st in enumerate(states)}
    dim = len(states)
    r = zeros((dim, dim), exact)
    for n in range(n_max + 1):
        blk = r_matrix_sector(coerce(x, exact) - coerce(y, exact), s, n, exact)
        ids = [index[(p, n - p)] for p in range(n + 1)]
        r[np.ix_(ids, ids)] = blk
    s_ = coerce(s, exact)

    def site_lax(z, site):
        z = coerce(z, exact)
        blocks = [[zeros((dim, dim), exact) for _ in range(2)] for _ in range(2)]
        for col, st in enumerate(states):
            m = st[site]
            blocks[0][0][col, col] += z + _half(exact) + m + s_
            blocks[1][1][col, col] += z + _half(exact) - m - s_
            up = list(st)
            up[site] += 1
            if tuple(up) in index:
                blocks[1][0][index[tuple(up)], col] += m + 2 * s_
            if m >= 1:
                dn = list(st)
                dn[site] -= 1
                blocks[0][1][index[tuple(dn)], col] -= m
        return np.block(blocks)

    r2 = np.kron(identity(2, exact), r)
    l1, l2 = site_lax(x, 0), site_lax(y, 1)
    res = _prod(r2, l1, l2) - _prod(l2, l1, r2)
    safe = [i for i, st in enumerate(states) if sum(st) <= n_max - 2]
    rows = np.concatenate([np.array(safe), dim + np.array(safe)])
    return _restricted(res, rows)


# ---------------------------------------------------------------------------
# K-matrices and K-operators
# ---------------------------------------------------------------------------


def k_matrix_2x2(side: str, x, params, exact: bool | None = None) -> np.ndarray:
    """Scalar K-matrix of the reflection relation.

    ``side='hat'``:   ``[[q1 + x q2, x q3], [x q4, q1 - x q2]]`` with
    ``q1 = delta, q2 = (1 + 2 alpha beta) gamma / 2, q3 = -(1 + alpha beta) beta gamma, q4 = alpha gamma``.
    ``side='unhat'``: the same with ``x + 1`` in place of x and ``p1 = -delta``.
    """
    alpha, beta, gamma, delta = params
    if exact is None:
        exact = auto_exact(x, *params)
    alpha, beta, gamma, delta, x = (coerce(v, exact) for v in (alpha, beta, gamma, delta, x))
    if side == "hat":
        t, c1 = x, delta
    elif side == "unhat":
        t, c1 = x + 1, -delta
    else:
        raise ValueError(f"side must be 'hat' or 'unhat', got {side!r}")
    c2 = (1 + 2 * alpha * beta) * gamma * _half(exact)
    c3 = -(1 + alpha * beta) * beta * gamma
    c4 = alpha * gamma
    out = zeros((2, 2), exact)
    out[0, 0], out[0, 1] = c1 + t * c2, t * c3
    out[1, 0], out[1, 1] = t * c4, c1 - t * c2
    return out


def stochastic_params(beta, exact: bool | None = None) -> tuple:
    """``(alpha, beta, gamma, delta) = (1/(1-beta), beta, 1, 0)``."""
    if exact is None:
        exact = auto_exact(beta)
    beta = coerce(beta, exact)
    return (1 / (1 - beta), beta, coerce(1, exact), coerce(0, exact))


def stochastic_k_matrix(side: str, x, beta, exact: bool | None = None) -> np.ndarray:
    """``t/(1-beta) [[(1+beta)/2, -beta], [1, -(1+beta)/2]]`` with t = x (hat) or x+1."""
    if exact is None:
        exact = auto_exact(x, beta)
    return k_matrix_2x2(side, x, stochastic_params(beta, exact), exact)


def _k0_diagonal(side: str, x, s, c, m_cap: int, exact: bool) -> list:
    # Gamma ratios as Pochhammer products, normalised to 1 on the vacuum
    h = _half(exact)
    vals = [coerce(1, exact)]
    for j in range(1, m_cap + 1):
        if side == "hat":
            num, den = j + s - h + x + c, j + s - h - x + c
        else:
            num, den = j + s + c - x - 3 * h, j + s + c + x + h
        if den == 0:
            raise GammaPoleError(f"{side} K-operator: Gamma pole at occupation {j} (x={x}, 2delta/gamma={c})")
        vals.append(vals[-1] * num / den)
    return vals


def k_operator(side: str, x, params, s, m_cap: int, exact: bool | None = None, pad: int = 0) -> np.ndarray:
    """Truncated K-operator ``e^{beta S+} e^{-alpha S-} K0(S0; x) e^{alpha S-} e^{-beta S+}``.

    ``K0`` is the printed Gamma ratio in S0 (``hat``) or its inverse partner
    (``unhat``, satisfying ``Kunhat(x) Khat(x+1) = 1`` for equal parameters).
    The inner conjugation is triangular and exact; the outer one is a series
    truncated at ``m_cap + pad`` whose terms decay like ``(alpha beta)^m``.
    The result is cropped to ``m_cap``.
    """
    alpha, beta, gamma, delta = params
    if exact is None:
        exact = auto_exact(x, s, *params)
    alpha, beta, gamma, delta, x = (coerce(v, exact) for v in (alpha, beta, gamma, delta, x))
    s_ = fock.check_spin(s, exact)
    if gamma == 0:
        raise ValueError("gamma must be nonzero")
    cap = m_cap + pad
    diag = _k0_diagonal(side, x, s_, 2 * delta / gamma, cap, exact)
    mid = zeros((cap + 1, cap + 1), exact)
    for i, v in enumerate(diag):
        mid[i, i] = v
    return k_operator_conjugate(mid, alpha, beta, s_, cap)[: m_cap + 1, : m_cap + 1]


def bybe_residual(side: str, x, y, params, s, m_cap: int, window: int = 6, exact: bool | None = None):
    """Residual of the reflection relation for a K-operator, on a fixed window.

    ``hat``:   ``L(x-y) K(x) L(x+y) Khat(y) = Khat(y) L(x+y) K(x) L(x-y)``;
    ``unhat``: ``L(y-x) K(x) L(-x-y-2) K(y) = K(y) L(-x-y-2) K(x) L(y-x)``.
    Occupations ``< window`` are compared in both auxiliary blocks.
    """
    if exact is None:
        exact = auto_exact(x, y, s, *params)
    x, y = coerce(x, exact), coerce(y, exact)
    d = m_cap + 1
    kop = np.kron(identity(2, exact), k_operator(side, x, params, s, m_cap, exact))
    k2 = np.kron(k_matrix_2x2(side, y, params, exact), identity(d, exact))
    if side == "hat":
        la, lb = lax_matrix(x - y, s, m_cap, exact), lax_matrix(x + y, s, m_cap, exact)
    else:
        la, lb = lax_matrix(y - x, s, m_cap, exact), lax_matrix(-x - y - 2, s, m_cap, exact)
    res = _prod(la, kop, lb, k2) - _prod(k2, lb, kop, la)
    rows = np.concatenate([np.arange(window), d + np.arange(window)])
    return _restricted(res, rows)


def inversion_residual(x, params, s, m_cap: int, window: int = 6, pad: int = 30) -> float:
    """``Kunhat(x) Khat(x+1) - I`` on the window; both share ``params``.

    Each factor is evaluated in rational arithmetic with ``pad`` extra levels
    and cropped to ``m_cap``, so the residual measures the truncation of the
    intermediate sum only.  At ``beta = 0`` both factors are triangular and the
    residual vanishes exactly.
    """
    x = _rational(x)
    params = tuple(_rational(v) for v in params)
    a = k_operator("unhat", x, params, _rational(s), m_cap, exact=True, pad=pad)
    b = k_operator("hat", x + 1, params, _rational(s), m_cap, exact=True, pad=pad)
    res = _prod(a, b) - identity(m_cap + 1, True)
    return float(_max_abs(res[:window, :window]))


def triangular_gauge_residual(x, beta, m_cap: int, window: int = 6, pad: int = 30) -> float:
    """Compare ``e^{S-} Khat(x) e^{-S-}`` with the lower-triangular closed form at s = 1/2.

    The closed form is ``e^{b S+} Gamma(1-x)/Gamma(1+x) Gamma(1/2+S0+x)/Gamma(1/2+S0-x) e^{-b S+}``
    with ``b = beta/(1-beta)`` and unit normalisation.  The right side is
    lower triangular and exact; the left side converges as ``m_cap`` grows.
    """
    s, x, beta = Fraction(1, 2), _rational(x), _rational(beta)
    e = fock.exp_shift
    k = k_operator("hat", x, stochastic_params(beta, True), s, m_cap, exact=True, pad=pad)
    lhs = _prod(e("lower", 1, s, m_cap, True).entries, k, e("lower", -1, s, m_cap, True).entries)
    b = beta / (1 - beta)
    mid = zeros((m_cap + 1, m_cap + 1), True)
    for i, v in enumerate(_k0_diagonal("hat", x, s, 0, m_cap, True)):
        mid[i, i] = v
    rhs = _prod(e("raise", b, s, m_cap, True).entries, mid, e("raise", -b, s, m_cap, True).entries)
    return float(_max_abs((lhs - rhs)[:window, :window]))


# ---------------------------------------------------------------------------
# transfer matrix with two-dimensional auxiliary space
# ---------------------------------------------------------------------------


def _site_ops(spec: process.ChainSpec, m_cap: int, exact: bool):
    """Per-site ``(S+, S-, S0)`` on the colexicographic box, sparse."""
    n, d = spec.n_sites, m_cap + 1
    states = process.box_states(n, m_cap)
    dim = len(states)
    s = coerce(spec.s, exact)
    strides = d ** np.arange(n)
    ops = []
    for i in range(n):
        occ = states[:, i]
        up = {u: {} for u in range(dim)}
        dn = {u: {} for u in range(dim)}
        s0 = {u: {} for u in range(dim)}
        for u in range(dim):
            m = int(occ[u])
            s0[u][u] = m + s
            if m < m_cap:
                up[u + int(strides[i])][u] = m + 2 * s
            if m >= 1:
                dn[u - int(strides[i])][u] = coerce(m, exact)
        ops.append(tuple(_sparse(dd, dim, exact) for dd in (up, dn, s0)))
    return ops, dim


def _sparse(dod: dict, dim: int, exact: bool):
    if exact:
        rows = {i: {j: QQ(v.numerator, v.denominator) for j, v in r.items()} for i, r in dod.items() if r}
        return DomainMatrix(rows, (dim, dim), QQ)
    out = np.zeros((dim, dim))
    for i, r in dod.items():
        for j, v in r.items():
            out[i, j] = v
    return out


def _scalar(v, exact: bool):
    return QQ(v.numerator, v.denominator) if exact else float(v)


def _mm(a, b):
    return a * b if isinstance(a, DomainMatrix) else a @ b


def _block_mm(a, b):
    return [[_mm(a[i][0], b[0][j]) + _mm(a[i][1], b[1][j]) for j in range(2)] for i in range(2)]


def _eye(dim: int, exact: bool):
    if exact:
        return DomainMatrix.eye(dim, QQ)
    return np.eye(dim)


def transfer_square(y, spec: process.ChainSpec, m_cap: int, exact: bool | None = None, max_states: int = 20_000, keep_sparse: bool = False):
    """``T(y) = tr K(y) L_1 ... L_N Khat(y) L_N ... L_1`` on the truncated box.

    ``K`` carries ``beta_left`` (site 1) and ``Khat`` carries ``beta_right``
    (site N), both in the stochastic form.  Rational arguments give an exact
    result: a Fraction array, or the underlying sparse DomainMatrix over QQ
    with ``keep_sparse``.
    """
    if spec.closed:
        raise ValueError("transfer_square needs an open chain")
    if exact is None:
        exact = auto_exact(y, spec.beta_left, spec.beta_right, spec.s)
    dim = (m_cap + 1) ** spec.n_sites
    if dim > max_states:
        raise process.StateSpaceTooLarge(f"{dim} states exceed the cap of {max_states}")
    ops, dim = _site_ops(spec, m_cap, exact)
    y = coerce(y, exact)
    h = y + _half(exact)
    eye = _eye(dim, exact)
    laxes = []
    for sp, sm, s0 in ops:
        hid = eye * _scalar(h, exact)
        laxes.append([[hid + s0, sm * _scalar(coerce(-1, exact), exact)], [sp, hid - s0]])
    khat = stochastic_k_matrix("hat", y, spec.beta_right, exact)
    kl = stochastic_k_matrix("unhat", y, spec.beta_left, exact)
    u = [[eye * _scalar(khat[i, j], exact) for j in range(2)] for i in range(2)]
    for lax in reversed(laxes):
        u = _block_mm(_block_mm(lax, u), lax)
    t = None
    for a in range(2):
        for b in range(2):
            term = u[b][a] * _scalar(kl[a, b], exact)
            t = term if t is None else t + term
    return _from_dm(t) if exact and not keep_sparse else t


def sample_points(n: int, seed: int = 0, max_den: int = 7) -> list[tuple[Fraction, Fraction]]:
    """Reproducible rational ``(x, y)`` pairs with small denominators."""
    rng = random.Random(seed)
    pts = []
    while len(pts) < n:
        x = Fraction(rng.randint(-2 * max_den, 2 * max_den), rng.randint(1, max_den))
        y = Fraction(rng.randint(-2 * max_den, 2 * max_den), rng.randint(1, max_den))
        if x != y:
            pts.append((x, y))
    return pts


def _box_safe(spec: process.ChainSpec, m_cap: int, width: int) -> np.ndarray:
    states = process.box_states(spec.n_sites, m_cap)
    return np.nonzero(states.max(axis=1) <= m_cap - width)[0]


@dataclass
class CommutatorReport:
    points: list
    tt: list = field(default_factory=list)
    ht: list = field(default_factory=list)

    @property
    def max_tt(self) -> float:
        return max((float(v) for v in self.tt), default=0.0)

    @property
    def max_ht(self) -> float:
        return max((float(v) for v in self.ht), default=0.0)


def rational_generator(spec: process.ChainSpec, m_cap: int) -> DomainMatrix:
    """Generator minus ``-(log(1-beta_1) + log(1-beta_N))`` times the identity.

    The full injection mass sits on every diagonal entry as the same
    transcendental constant; dropping it leaves a rational matrix that has the
    same commutators.  Built straight from the jump rates.
    """
    states = process.box_states(spec.n_sites, m_cap)
    index = {tuple(int(v) for v in st): u for u, st in enumerate(states)}
    rows: dict = {}
    for u, st in enumerate(states):
        m = tuple(int(v) for v in st)
        diag = Fraction(0)
        for target, rate in process.transitions(spec, m, m_cap, exact=True):
            if sum(target) <= sum(m):
                diag += rate
            v = index.get(target)
            if v is not None:
                rows.setdefault(v, {})
                rows[v][u] = rows[v].get(u, QQ(0)) - QQ(rate.numerator, rate.denominator)
        if diag:
            rows.setdefault(u, {})
            rows[u][u] = rows[u].get(u, QQ(0)) + QQ(diag.numerator, diag.denominator)
    return DomainMatrix(rows, (len(states), len(states)), QQ)


def commutator_residuals(spec: process.ChainSpec, m_cap: int, points: Sequence | None = None, samples: int = 3, seed: int = 0, exact: bool = True) -> CommutatorReport:
    """``[T(x), T(y)]`` and ``[H, T(y)]`` on the safe block for each sampled pair.

    Each T has two band-one factors per site, so a product of two has band 4
    and occupations ``<= m_cap - 4`` are safe.  In exact mode H is the
    rational part of the generator (see :func:`rational_generator`) and both
    residuals are rationals; otherwise H is the float generator.
    """
    if points is None:
        points = sample_points(samples, seed)
    safe = _box_safe(spec, m_cap, 4)
    safe_set = set(int(i) for i in safe)
    if exact:
        spec = process.ChainSpec(spec.n_sites, as_exact(spec.s), as_exact(spec.beta_left), as_exact(spec.beta_right), spec.closed)
        h = rational_generator(spec, m_cap)
    else:
        h = process.build_generator(spec, m_cap=m_cap, clip_policy="restrict", exact=False).dense()
    rep = CommutatorReport(list(points))
    cache: dict = {}

    def tm(z):
        if z not in cache:
            cache[z] = transfer_square(z, spec, m_cap, exact=exact, keep_sparse=True)
        return cache[z]

    def worst(c):
        if exact:
            vals = (abs(v) for i, row in c.to_dod().items() if i in safe_set for j, v in row.items() if j in safe_set)
            w = max(vals, default=QQ(0))
            return Fraction(int(w.numerator), int(w.denominator))
        return _max_abs(c[np.ix_(safe, safe)])

    for x, y in points:
        tx, ty = tm(x), tm(y)
        rep.tt.append(worst(_mm(tx, ty) - _mm(ty, tx)))
        rep.ht.append(worst(_mm(h, ty) - _mm(ty, h)))
    return rep


# ---------------------------------------------------------------------------
# Hamiltonian from the logarithmic derivative
# ---------------------------------------------------------------------------


def coef1_sum(k: int, l: int, beta: float) -> float:
    """``sum_m C(k,m) C(m,l) beta^(k-m) (-beta)^(m-l) psi(m+1)`` (a finite sum)."""
    terms = [math.comb(k, m) * math.comb(m, l) * beta ** (k - m) * (-beta) ** (m - l) * special.digamma(m + 1) for m in range(l, k + 1)]
    return math.fsum(terms)


def coef1_closed(k: int, l: int, beta: float) -> float:
    if k < l:
        return 0.0
    if k == l:
        return float(special.digamma(k + 1))
    return -beta ** (k - l) / (k - l)


def coef2_coefficients(k: int, l: int, order: int) -> list[Fraction]:
    return list(_coef2_cached(k, l, order))


@functools.lru_cache(maxsize=256)
def _coef2_cached(k: int, l: int, order: int) -> tuple:
    """Power-series coefficients in beta of the off-diagonal middle-part sum.

    Substituting ``alpha = 1/(1-beta)`` and collecting powers of beta turns
    ``-sum_{m1 < m2} C(k,m1) C(m2,l) beta^(k-m1) (-beta)^(m2-l) alpha^(m2-m1)/(m2-m1)``
    into ``sum_p c_p beta^p`` with
    ``c_p = -(1/Q) sum_{m1, r} C(k,m1) C(m1+r,l) C(Q,r) (-1)^(m1+r-l)``, Q = p-k+l.
    The rearranged series converges for all ``0 < beta < 1``.
    """
    q_max = order - k + l
    # the m1 sum does not depend on Q
    a = [0] + [sum((-1 if (m1 + r + l) % 2 else 1) * math.comb(k, m1) * math.comb(m1 + r, l) for m1 in range(k + 1)) for r in range(1, max(q_max, 0) + 1)]
    out = []
    row = [1]  # binomial row C(q, .)
    for p in range(order + 1):
        q = p - k + l
        if q < 1:
            out.append(Fraction(0))
            continue
        while len(row) < q + 1:
            row = [1] + [row[i] + row[i + 1] for i in range(len(row) - 1)] + [1]
        acc = sum(row[r] * a[r] for r in range(1, q + 1))
        out.append(Fraction(-acc, q))
    return tuple(out)


def coef2_sum(k: int, l: int, beta: float, order: int | None = None, tol: float = 1e-13) -> float:
    """Numerical value of the rearranged off-diagonal sum at ``beta``."""
    if order is None:
        order = max(k - l, 0) + int(math.ceil(math.log(tol * (1 - beta)) / math.log(beta))) + 1
    coeffs = _coef2_cached(k, l, order)
    return math.fsum(float(c) * beta**p for p, c in enumerate(coeffs))


def coef2_direct(k: int, l: int, beta: float, m_max: int = 400) -> float:
    """The off-diagonal sum as printed, summed directly; converges for ``beta < 1/2``."""
    if not 0 < beta < 0.5:
        raise ValueError("the direct double sum diverges unless 0 < beta < 1/2")
    alpha = 1 / (1 - beta)
    terms = []
    for m1 in range(k + 1):
        for m2 in range(max(m1 + 1, l), m_max + 1):
            r = m2 - m1
            terms.append(math.comb(k, m1) * math.comb(m2, l) * beta ** (k - m1) * (-beta) ** (m2 - l) * alpha**r / r)
    return -math.fsum(terms)


def coef2_closed(k: int, l: int, beta: float) -> float:
    if k < l:
        return -1.0 / (l - k)
    if k == l:
        return -math.log1p(-beta)
    return 0.0


def middle_sum_residuals(betas: Sequence[float] = (0.3, 0.7, 0.9), max_gap: int = 10, base: Sequence[int] = (0, 2)) -> list[dict]:
    """Check both middle-part sums against their closed forms.

    Index pairs are ``(k, l)`` with ``min(k, l)`` in ``base`` and
    ``|k - l| <= max_gap``.
    """
    rows = []
    for beta in betas:
        for b in base:
            for gap in range(-max_gap, max_gap + 1):
                k, l = (b + gap, b) if gap >= 0 else (b, b - gap)
                r1 = abs(coef1_sum(k, l, beta) - coef1_closed(k, l, beta))
                r2 = abs(coef2_sum(k, l, beta) - coef2_closed(k, l, beta))
                rows.append({"beta": beta, "k": k, "l": l, "coef1": r1, "coef2": r2})
    return rows


def left_boundary_weights(beta_p, s=0.5, k_max: int = 40) -> np.ndarray:
    """``<k|Kunhat_a(0)|l> = beta'^k (2s)_k / k! (1 - beta')^(2s)``, independent of l.

    At ``2 delta' = 1/2 - s`` the middle part of ``Kunhat(0)`` projects on the
    vacuum, which leaves negative-binomial weights; their sum is the trace.
    """
    k = np.arange(k_max + 1)
    two_s = 2 * float(s)
    logw = special.gammaln(k + two_s) - special.gammaln(two_s) - special.gammaln(k + 1) + k * math.log(beta_p) + two_s * math.log1p(-beta_p)
    return np.exp(logw)


def _aux_cut(beta_p: float, tol: float) -> int:
    return int(math.ceil(math.log(tol * (1 - beta_p)) / math.log(beta_p))) + 1


def _left_boundary_from_trace(s, beta_p: float, m_cap: int, tol: float) -> np.ndarray:
    """``tr_a Kunhat_a(0) H_{a,1}`` on site 1, with H the bulk density ``2(psi(SS) - psi(2s))``."""
    a_max = _aux_cut(beta_p, tol)
    w = left_boundary_weights(beta_p, s, a_max)
    out = np.zeros((m_cap + 1, m_cap + 1))
    for n in range(a_max + m_cap + 1):
        dens = process.density_from_casimir(float(s), n, exact=False)
        # sector index p is the auxiliary occupation; the site holds n - p
        for p_in in range(n + 1):
            i = n - p_in
            if i > m_cap or p_in > a_max:
                continue
            for p_out in range(n + 1):
                j = n - p_out
                if j > m_cap:
                    continue
                out[j, i] += w[p_in] * dens[p_out, p_in]
    return out


def right_boundary_closed_form(beta: float, m_cap: int) -> np.ndarray:
    """``Khat'(0)/(2 Khat(0))`` at s = 1/2 in closed form.

    ``|m> -> (h(m) - log(1-beta)) |m> - sum_{k<=m} 1/k |m-k> - sum_k beta^k/k |m+k>``.
    """
    out = np.zeros((m_cap + 1, m_cap + 1))
    mass = -math.log1p(-beta)
    for m in range(m_cap + 1):
        out[m, m] = psi_diff(1.0, m) + mass
        for k in range(1, m + 1):
            out[m - k, m] -= 1.0 / k
        for k in range(1, m_cap - m + 1):
            out[m + k, m] -= beta**k / k
    return out


def right_boundary_from_sums(beta: float, m_cap: int) -> np.ndarray:
    """``Khat'(0)/(2 Khat(0)) = O - psi(1)`` with O assembled entry by entry from the two middle-part sums."""
    out = np.zeros((m_cap + 1, m_cap + 1))
    for k in range(m_cap + 1):
        for l in range(m_cap + 1):
            out[k, l] = coef1_sum(k, l, beta) + coef2_sum(k, l, beta)
    return out - special.digamma(1) * np.eye(m_cap + 1)


def right_boundary_conjugation(beta, s, m_cap: int, pad: int = 50) -> np.ndarray:
    """``G (psi(S0 + s) - psi(2s)) G^-1`` with ``G = e^{beta S+} e^{-alpha S-}``, alpha = 1/(1-beta).

    The diagonal ``psi(m + 2s) - psi(2s)`` is rational, so the conjugation is
    done in rational arithmetic at ``m_cap + pad`` (float cancellation is
    severe) and cropped.  The series converges only for ``beta < 1/2``.
    """
    beta, s = _rational(beta), _rational(s)
    if not 0 < beta < Fraction(1, 2):
        raise ValueError("the truncated conjugation converges only for 0 < beta < 1/2")
    cap = m_cap + pad
    mid = zeros((cap + 1, cap + 1), True)
    for m in range(cap + 1):
        mid[m, m] = psi_diff(2 * s, m)
    out = k_operator_conjugate(mid, 1 / (1 - beta), beta, s, cap)
    return out[: m_cap + 1, : m_cap + 1].astype(float)


def k_operator_conjugate(mid: np.ndarray, alpha, beta, s, cap: int) -> np.ndarray:
    """``e^{beta S+} e^{-alpha S-} mid e^{alpha S-} e^{-beta S+}`` on the truncated module."""
    exact = mid.dtype == object
    e = fock.exp_shift
    return _prod(
        e("raise", beta, s, cap, exact).entries,
        e("lower", -alpha, s, cap, exact).entries,
        mid,
        e("lower", alpha, s, cap, exact).entries,
        e("raise", -beta, s, cap, exact).entries,
    )


def _embed_site(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    d = op.shape[0]
    out = np.ones((1, 1))
    for i in reversed(range(n_sites)):
        out = np.kron(out, op if i == site else np.eye(d))
    return out


def _bulk_two_site(s, m_cap: int, site: int, n_sites: int) -> np.ndarray:
    states = process.box_states(n_sites, m_cap)
    index = {tuple(st): u for u, st in enumerate(states)}
    out = np.zeros((len(states), len(states)))
    dens = {}
    for u, st in enumerate(states):
        n = int(st[site] + st[site + 1])
        if n not in dens:
            dens[n] = process.density_from_casimir(float(s), n, exact=False)
        p_in = int(st[site])
        for p_out in range(n + 1):
            if p_out > m_cap or n - p_out > m_cap:
                continue
            v = dens[n][p_out, p_in]
            if v == 0:
                continue
            tgt = list(st)
            tgt[site], tgt[site + 1] = p_out, n - p_out
            out[index[tuple(tgt)], u] += v
    return out


def hamiltonian_from_transfer(spec: process.ChainSpec, m_cap: int, right: str = "closed", tol: float = 1e-14) -> np.ndarray:
    """Generator rebuilt from ``H = (1 + d/dx ln T(x)|_0) / 2``.

    Pieces: bulk ``2(psi(SS) - psi(2s))`` per bond from the irrep
    decomposition; left boundary ``tr_a Kunhat_a(0) H_{a,1}`` using the trace
    weights (``tr Kunhat(0) = 1``, ``tr Kunhat'(0) = -1`` cancel the constant);
    right boundary ``Khat'(0)/(2 Khat(0))`` from ``right`` in
    ``{'closed', 'sums', 'conjugation'}``.
    """
    if spec.closed:
        raise ValueError("hamiltonian_from_transfer needs an open chain")
    n, s = spec.n_sites, float(spec.s)
    bl, br = float(spec.beta_left), float(spec.beta_right)
    if right in ("closed", "sums") and s != 0.5:
        raise ValueError("the closed-form right boundary is for s = 1/2; use right='conjugation'")
    dim = (m_cap + 1) ** n
    h = np.zeros((dim, dim))
    for site in range(n - 1):
        h += _bulk_two_site(s, m_cap, site, n)
    h += _embed_site(_left_boundary_from_trace(s, bl, m_cap, tol), 0, n)
    if right == "closed":
        rb = right_boundary_closed_form(br, m_cap)
    elif right == "sums":
        rb = right_boundary_from_sums(br, m_cap)
    elif right == "conjugation":
        rb = right_boundary_conjugation(br, s, m_cap)
    else:
        raise ValueError(f"unknown right-boundary construction {right!r}")
    h += _embed_site(rb, n - 1, n)
    return h


def hamiltonian_residual(spec: process.ChainSpec, m_cap: int, right: str = "closed") -> float:
    """Max-abs difference between the rebuilt and the rate-built generator.

    Every piece of the rebuilt operator is assembled without truncated
    intermediate sums, so the whole box is a safe block.
    """
    a = hamiltonian_from_transfer(spec, m_cap, right)
    b = process.build_generator(spec, m_cap=m_cap, clip_policy="restrict", exact=False).dense()
    return _max_abs(a - b)


# ---------------------------------------------------------------------------
# similarity transformations of the K-matrices
# ---------------------------------------------------------------------------


def _mat(rows) -> np.ndarray:
    return np.array([[as_exact(v) for v in r] for r in rows], dtype=object)


def triangularize_checks(beta, beta_p, x=Fraction(37, 100), gamma=1, s=Fraction(1, 2), m_cap: int = 12) -> dict:
    """Residuals of the 2x2 gauge identities of the stochastic K-matrices and of the Lax matrix.

    Everything runs in rational arithmetic and every entry should be exactly
    zero: the 2x2 identities are finite, and the Lax gauges and generator
    shifts involve a single triangular exponential, which is exact on the
    safe block ``<= m_cap - 2``.  Returns a mapping from check name to residual.
    """
    beta, beta_p, x, gamma, s = (as_exact(v) for v in (beta, beta_p, x, gamma, s))
    h = Fraction(1, 2)
    out = {}
    lower, lower_inv = _mat([[1, -1], [0, 1]]), _mat([[1, 1], [0, 1]])
    upper, upper_inv = _mat([[1, 0], [-1, 1]]), _mat([[1, 0], [1, 1]])
    params = (1 / (1 - beta), beta, gamma, Fraction(0))
    params_p = (1 / (1 - beta_p), beta_p, gamma, Fraction(0))
    khat = k_matrix_2x2("hat", x, params, exact=True)
    kun = k_matrix_2x2("unhat", x, params_p, exact=True)
    out["khat_lower"] = _max_abs(lower @ khat @ lower_inv - _mat([[h, 0], [1 / (beta - 1), -h]]) * (-x * gamma))
    out["k_lower"] = _max_abs(lower @ kun @ lower_inv - _mat([[h, 0], [1 / (beta_p - 1), -h]]) * (-(x + 1) * gamma))
    out["khat_upper"] = _max_abs(upper @ khat @ upper_inv - _mat([[h, -beta / (1 - beta)], [0, -h]]) * (x * gamma))
    out["k_upper"] = _max_abs(upper @ kun @ upper_inv - _mat([[h, -beta_p / (1 - beta_p)], [0, -h]]) * ((x + 1) * gamma))
    # equilibrium: S_beta diagonalises both K-matrices
    def s_gauge(b):
        return _mat([[1, -b], [1 / (b - 1), 1 / (1 - b)]]), _mat([[1 / (1 - b), b], [1 / (1 - b), 1]])

    sb, sb_inv = s_gauge(beta)
    sbp, sbp_inv = s_gauge(beta_p)
    sig3 = _mat([[1, 0], [0, -1]])
    out["khat_diag"] = _max_abs(sb @ khat @ sb_inv - sig3 * (x * gamma / 2))
    out["k_diag"] = _max_abs(sbp @ kun @ sbp_inv - sig3 * ((x + 1) * gamma / 2))

    e = fock.exp_shift

    def lax_pair(cap, left, right, fock_left, fock_right):
        d = cap + 1
        lax = lax_matrix(x, s, cap, exact=True)
        eye = identity(d, True)
        lhs = _prod(np.kron(left, eye), lax, np.kron(right, eye))
        rhs = _prod(np.kron(identity(2, True), fock_left), lax, np.kron(identity(2, True), fock_right))
        return lhs - rhs

    rows = _safe_rows(2, m_cap + 1, 2)
    res = lax_pair(m_cap, lower, lower_inv, e("raise", 1, s, m_cap, True).entries, e("raise", -1, s, m_cap, True).entries)
    out["lax_lower"] = _restricted(res, rows)
    res = lax_pair(m_cap, upper, upper_inv, e("lower", -1, s, m_cap, True).entries, e("lower", 1, s, m_cap, True).entries)
    out["lax_upper"] = _restricted(res, rows)
    # adjoint action of single exponentials on the generators
    sp, sm, s0 = (op.entries for op in fock.sl2_generators(s, m_cap, True))
    rows1 = fock.safe_indices(m_cap + 1, 2)
    worst = Fraction(0)
    for omega in (beta, -beta_p, Fraction(1)):
        for direction, up, down in (("raise", sp, sm), ("lower", sm, sp)):
            sign = 1 if direction == "raise" else -1
            ex, ex_inv = e(direction, omega, s, m_cap, True).entries, e(direction, -omega, s, m_cap, True).entries
            r0 = _prod(ex, s0, ex_inv) - (s0 - up * (sign * omega))
            r1 = _prod(ex, down, ex_inv) - (down - s0 * (sign * 2 * omega) + up * (omega * omega))
            worst = max(worst, _max_abs(r0[np.ix_(rows1, rows1)]), _max_abs(r1[np.ix_(rows1, rows1)]))
    out["generator_shifts"] = worst
    return {k: float(v) for k, v in out.items()}
