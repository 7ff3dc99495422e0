"""Continuum scaling limit: integral generators on polynomials and Levy jump simulation.

Polynomials in N variables are dicts ``{exponent tuple: Fraction}``.  All
generator integrals of monomials have closed forms, so results are exact.
"""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import exp1

from . import kernels
from .arith import as_exact, binom
from .simulate import CHUNK, StatSummary, Trajectory, _summarise, n_workers, trajectory_seeds

__all__ = [
    "LevySpec",
    "Poly",
    "monomial",
    "poly_add",
    "poly_scale",
    "poly_eval",
    "poly_max_abs",
    "levy_apply",
    "f1_f2_relation_residual",
    "discrete_apply",
    "scaling_limit_residual",
    "cutoff_drift",
    "injection_intensity",
    "levy_simulate",
    "run_levy_ensemble",
]

Poly = dict


@dataclass(frozen=True)
class LevySpec:
    n_sites: int
    lam_left: float
    lam_right: float

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("need at least one site")
        for lam in (self.lam_left, self.lam_right):
            if not lam > 0:
                raise ValueError(f"lambda must be positive, got {lam}")


# ---------------------------------------------------------------------------
# polynomial helpers
# ---------------------------------------------------------------------------


def monomial(exponents, coeff=1) -> Poly:
    exps = tuple(int(e) for e in exponents)
    if any(e < 0 for e in exps):
        raise ValueError("exponents must be non-negative")
    return {exps: Fraction(coeff)}


def poly_add(*polys: Poly) -> Poly:
    out = defaultdict(Fraction)
    for p in polys:
        for e, c in p.items():
            out[e] += c
    return {e: c for e, c in out.items() if c != 0}


def poly_scale(p: Poly, c) -> Poly:
    c = as_exact(c) if not isinstance(c, Fraction) else c
    return {e: v * c for e, v in p.items() if v * c != 0}


def poly_eval(p: Poly, x) -> float:
    return float(sum(float(c) * float(np.prod([xi**e for xi, e in zip(x, exps)])) for exps, c in p.items()))


def poly_max_abs(p: Poly):
    return max((abs(c) for c in p.values()), default=Fraction(0))


def _bump(exps, i, di, j=None, dj=0):
    e = list(exps)
    e[i] += di
    if j is not None:
        e[j] += dj
    return tuple(e)


def _bulk_monomial(exps, i, j) -> Poly:
    """Exact bulk generator on one monomial, bond (i, j)."""
    a, b = exps[i], exps[j]
    out = defaultdict(Fraction)
    # mass alpha moves i -> j, integrated over (0, x_i)
    for p in range(a + 1):
        for q in range(b + 1):
            if p + q == 0:
                continue
            c = Fraction(binom(a, p) * binom(b, q) * (-1) ** p, p + q)
            out[_bump(exps, i, q, j, -q)] += c
    # mass alpha moves j -> i, integrated over (0, x_j)
    for p in range(a + 1):
        for q in range(b + 1):
            if p + q == 0:
                continue
            c = Fraction(binom(a, p) * binom(b, q) * (-1) ** q, p + q)
            out[_bump(exps, i, -p, j, p)] += c
    return {e: c for e, c in out.items() if c != 0}


def _boundary_monomial(exps, i, lam) -> Poly:
    """Reservoir generator at site i: removal over (0, x_i) plus injection with weight exp(-lam alpha)."""
    n = exps[i]
    lam = as_exact(lam)
    out = defaultdict(Fraction)
    removal = sum(Fraction(binom(n, b) * (-1) ** b, b) for b in range(1, n + 1))
    if removal:
        out[tuple(exps)] += removal
    for a in range(1, n + 1):
        out[_bump(exps, i, -a)] += Fraction(binom(n, a) * math.factorial(a - 1)) / lam**a
    return {e: c for e, c in out.items() if c != 0}


def _derkachov_monomial(exps, i, j) -> Poly:
    """``int_0^1 dalpha/alpha`` of the two convex-combination shifts, on one monomial."""
    a, b = exps[i], exps[j]
    out = defaultdict(Fraction)
    # x_i -> x_i + alpha (x_j - x_i):  sum_p C(a,p)/p x_i^{a-p} (x_j - x_i)^p
    for p in range(1, a + 1):
        for r in range(p + 1):
            c = Fraction(binom(a, p) * binom(p, r) * (-1) ** (p - r), p)
            out[_bump(exps, i, -p + (p - r), j, r)] += c
    # x_j -> x_j + alpha (x_i - x_j)
    for p in range(1, b + 1):
        for r in range(p + 1):
            c = Fraction(binom(b, p) * binom(p, r) * (-1) ** (p - r), p)
            out[_bump(exps, j, -p + (p - r), i, r)] += c
    return {e: c for e, c in out.items() if c != 0}


def levy_apply(kind: str, f: Poly, site: int = 0, lam=None) -> Poly:
    """Apply a continuum generator piece to polynomial ``f``.

    ``kind`` is ``bulk`` or ``derkachov_bulk`` (bond ``site``, ``site+1``),
    ``boundary_left`` or ``boundary_right`` (reservoir with rate ``lam``;
    ``site`` is ignored and the first/last variable is used).
    """
    if isinstance(f, tuple):
        f = monomial(f)
    nvar = len(next(iter(f))) if f else 0
    parts = []
    for exps, c in f.items():
        if kind == "bulk":
            term = _bulk_monomial(exps, site, site + 1)
        elif kind == "derkachov_bulk":
            term = _derkachov_monomial(exps, site, site + 1)
        elif kind in ("boundary_left", "boundary_right"):
            if lam is None or not lam > 0:
                raise ValueError(f"lambda must be positive, got {lam}")
            term = _boundary_monomial(exps, 0 if kind == "boundary_left" else nvar - 1, lam)
        else:
            raise ValueError(f"unknown generator kind {kind!r}")
        parts.append(poly_scale(term, c))
    return poly_add(*parts)


def f1_f2_relation_residual(m_i: int, m_j: int) -> Fraction:
    """Compare the Derkachov form on ``x^a y^b`` with the Levy generator on ``x^a y^b / (a! b!)``.

    The two coefficient tables agree once each output monomial of the latter
    is rescaled by its factorial weight; the max-abs mismatch is returned.
    """
    h = levy_apply("derkachov_bulk", monomial((m_i, m_j)))
    weight = Fraction(1, math.factorial(m_i) * math.factorial(m_j))
    lf = levy_apply("bulk", monomial((m_i, m_j), weight))
    keys = set(h) | set(lf)
    diffs = [
        abs(lf.get(e, Fraction(0)) * math.factorial(e[0]) * math.factorial(e[1]) - h.get(e, Fraction(0)))
        for e in keys
    ]
    return max(diffs, default=Fraction(0))


# ---------------------------------------------------------------------------
# scaling limit
# ---------------------------------------------------------------------------


def _series_sum(beta: float, fn, tol: float = 1e-17) -> float:
    """``sum_{k>=1} beta^k / k * fn(k)`` for polynomially growing ``fn``."""
    total = 0.0
    k0 = 1
    block = 4096
    while True:
        k = np.arange(k0, k0 + block, dtype=float)
        terms = np.exp(k * math.log(beta)) / k * fn(k)
        total += math.fsum(terms)
        if abs(terms[-1]) < tol * max(1.0, abs(total)) and k0 > 1:
            return total
        k0 += block


def discrete_apply(f, x, M: int, side: str, lam: float = 1.0) -> float:
    """Discrete generator at resolution M on ``f(m / M)``, evaluated at ``m = M x``.

    ``side='bulk'`` uses the bond (0, 1) with rates 1/k; ``side='boundary'``
    the left reservoir with ``beta = 1 - lam/M``.
    """
    m = [int(round(xi * M)) for xi in x]
    if any(abs(mi - xi * M) > 1e-9 for mi, xi in zip(m, x)):
        raise ValueError("probe point must lie on the 1/M lattice")
    g = lambda mm: f(np.asarray(mm, dtype=float) / M)  # noqa: E731
    base = g(m)
    if side == "bulk":
        total = 0.0
        for k in range(1, m[0] + 1):
            mm = list(m)
            mm[0] -= k
            mm[1] += k
            total += (g(mm) - base) / k
        for k in range(1, m[1] + 1):
            mm = list(m)
            mm[0] += k
            mm[1] -= k
            total += (g(mm) - base) / k
        return total
    if side == "boundary":
        beta = 1 - lam / M
        total = 0.0
        for k in range(1, m[0] + 1):
            mm = list(m)
            mm[0] -= k
            total += (g(mm) - base) / k

        def inj(k):
            shifted = np.array([g([m[0] + int(kk)] + m[1:]) for kk in k])
            return shifted - base

        total += _series_sum(beta, inj)
        return total
    raise ValueError("side must be 'bulk' or 'boundary'")


def scaling_limit_residual(M: int, f: Poly | tuple | None = None, side: str = "bulk", probe=None, lam: float = 1.0) -> float:
    """Distance between the discrete generator at resolution M and its integral limit at a probe point.

    Defaults: ``x_1^2`` at (1, 1) for the bulk, ``x`` at 1 for the boundary.
    """
    if M < 2:
        raise ValueError("M must be at least 2")
    if side == "bulk":
        f = monomial((2, 0)) if f is None else f
        probe = (1.0, 1.0) if probe is None else probe
        exact = levy_apply("bulk", monomial(f) if isinstance(f, tuple) else f, site=0)
    elif side == "boundary":
        f = monomial((1,)) if f is None else f
        probe = (1.0,) if probe is None else probe
        exact = levy_apply("boundary_left", monomial(f) if isinstance(f, tuple) else f, lam=lam)
    else:
        raise ValueError("side must be 'bulk' or 'boundary'")
    poly = monomial(f) if isinstance(f, tuple) else f
    fn = lambda y: poly_eval(poly, y)  # noqa: E731
    return abs(discrete_apply(fn, probe, M, side, lam) - poly_eval(exact, probe))


def cutoff_drift(eps: float) -> float:
    """Mean mass per unit time carried by jumps smaller than ``eps`` in one channel: ``int_0^eps alpha dalpha/alpha``."""
    return float(eps)


def injection_intensity(lam: float, eps: float) -> float:
    """Rate ``E1(lam eps)`` of injections larger than ``eps``."""
    return float(exp1(lam * eps))


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def _check_levy(spec: LevySpec, init, eps):
    if not eps > 0:
        raise ValueError("cutoff eps must be positive")
    x = np.array(init, dtype=float)
    if x.shape != (spec.n_sites,):
        raise ValueError(f"initial state must have {spec.n_sites} entries")
    if (x < 0).any():
        raise ValueError("masses must be non-negative")
    return x


def levy_simulate(spec: LevySpec, init, eps: float, horizon: float, seed: int) -> Trajectory:
    """Compound-Poisson approximation with jumps smaller than ``eps`` discarded."""
    x = _check_levy(spec, init, eps)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    initial = x.copy()
    inj_l = injection_intensity(spec.lam_left, eps)
    inj_r = injection_intensity(spec.lam_right, eps)
    n = spec.n_sites
    empty1, empty2 = np.zeros((0, n)), np.zeros((0, n, n))
    chunks, t, kseed = [], 0.0, int(seed) % (2**32)
    while True:
        bt, ba = np.empty(CHUNK), np.empty(CHUNK)
        bs, bk = np.empty(CHUNK, dtype=np.int64), np.empty(CHUNK, dtype=np.int64)
        n_rec, _, t, status = kernels.levy_kernel(
            x, float(spec.lam_left), float(spec.lam_right), float(eps), inj_l, inj_r, t, float(horizon), kseed,
            bt, bs, bk, ba, 0.0, 1.0, empty1, empty2,
        )
        kseed = -1
        chunks.append((bt[:n_rec], bs[:n_rec], bk[:n_rec], ba[:n_rec]))
        if status != kernels.STATUS_BUFFER_FULL:
            break
    cat = [np.concatenate([c[i] for c in chunks]) for i in range(4)]
    return Trajectory(spec, initial, x, float(horizon), cat[0], cat[1], cat[2], cat[3], "alpha", int(seed))


def run_levy_ensemble(
    spec: LevySpec,
    init,
    eps: float,
    horizon: float,
    n_traj: int,
    seed: int,
    burn_in: float = 0.0,
    n_batches: int = 20,
    threads: int | None = None,
) -> StatSummary:
    """Time-averaged statistics of independent Levy runs, no events stored."""
    _check_levy(spec, init, eps)
    if not 0 <= burn_in < horizon:
        raise ValueError("need 0 <= burn_in < horizon")
    n = spec.n_sites
    inj_l = injection_intensity(spec.lam_left, eps)
    inj_r = injection_intensity(spec.lam_right, eps)
    batch_len = (horizon - burn_in) / n_batches

    def job(sd):
        x = np.array(init, dtype=float)
        s1, s2 = np.zeros((n_batches, n)), np.zeros((n_batches, n, n))
        ef, ei = np.empty(0), np.empty(0, dtype=np.int64)
        _, n_ev, _, _ = kernels.levy_kernel(
            x, float(spec.lam_left), float(spec.lam_right), float(eps), inj_l, inj_r, 0.0, float(horizon), sd,
            ef, ei, ei, ef, float(burn_in), batch_len, s1, s2,
        )
        return s1, s2, n_ev

    seeds = trajectory_seeds(seed, n_traj)
    workers = n_workers(threads, n_traj)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, seeds))
    else:
        results = [job(sd) for sd in seeds]
    return _summarise(
        np.concatenate([r[0] for r in results]),
        np.concatenate([r[1] for r in results]),
        batch_len,
        sum(r[2] for r in results),
    )
