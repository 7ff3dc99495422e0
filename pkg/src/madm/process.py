"""Jump rates and generator matrices of the boundary-driven particle process.

Sign convention: ``H`` is the "Hamiltonian", ``<m'|H|m>`` is minus the rate of
``m -> m'`` off the diagonal and the total exit rate on it, so the master
equation reads ``d mu/dt = -H mu`` and columns of ``H`` sum to zero.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp

from . import fock
from .arith import auto_exact, coerce, harmonic, poch, psi_diff, zeros

__all__ = [
    "ChainSpec",
    "StateSpaceTooLarge",
    "jump_rate",
    "rate_table",
    "boundary_rates",
    "injection_mass",
    "hamiltonian_density",
    "density_from_casimir",
    "transitions",
    "SparseGenerator",
    "build_generator",
    "stationary_distribution",
    "stationary_leak",
    "detailed_balance_residual",
    "geometric_weight",
    "negative_binomial_weight",
    "madm_density",
    "madm_limit_residual",
    "qpoch",
    "qhahn_rate",
    "qhahn_limit_residual",
]

DEFAULT_MAX_STATES = 2_000_000


class StateSpaceTooLarge(MemoryError):
    """The requested truncated state space exceeds the configured cap."""


@dataclass(frozen=True)
class ChainSpec:
    """Chain of ``n_sites`` sites with spin ``s``.

    Open chains carry reservoirs ``beta_left``/``beta_right`` in (0, 1); closed
    chains have an extra bond between the last and the first site.
    """

    n_sites: int
    s: object = Fraction(1, 2)
    beta_left: object = None
    beta_right: object = None
    closed: bool = False

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("need at least one site")
        if not self.s > 0:
            raise ValueError("spin label must be positive")
        if self.closed:
            if self.beta_left is not None or self.beta_right is not None:
                raise ValueError("closed chains take no reservoir parameters")
        else:
            for b in (self.beta_left, self.beta_right):
                if b is None or not 0 < b < 1:
                    raise ValueError(f"beta out of (0,1): {b}")

    @property
    def exact(self) -> bool:
        return auto_exact(self.s, self.beta_left, self.beta_right)

    def bonds(self) -> list[tuple[int, int]]:
        n = self.n_sites
        bonds = [(i, i + 1) for i in range(n - 1)]
        if self.closed and n > 2:
            bonds.append((n - 1, 0))
        elif self.closed and n == 2:
            # the two bonds of a 2-ring connect the same pair
            bonds.append((1, 0))
        return bonds

    def densities(self) -> tuple:
        """Reservoir densities ``rho = beta / (1 - beta)`` (left, right)."""
        return tuple(b / (1 - b) for b in (self.beta_left, self.beta_right))


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------


def jump_rate(s, m: int, k: int, exact: bool | None = None):
    """Rate at which k of the m particles on a site hop to a neighbour.

    ``(1/k) Gamma(m+1) Gamma(m-k+2s) / (Gamma(m-k+1) Gamma(m+2s))``; equal to
    ``1/k`` at s = 1/2.
    """
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m, got k={k}, m={m}")
    if exact is None:
        exact = auto_exact(s)
    s = coerce(s, exact)
    num = math.perm(m, k)
    den = poch(m - k + 2 * s, k)
    return num / (k * den) if not exact else Fraction(num) / (k * den)


def rate_table(s, m_max: int, exact: bool = False) -> np.ndarray:
    """``R[m, k] = jump_rate(s, m, k)`` for k <= m <= m_max, zero elsewhere."""
    out = zeros((m_max + 1, m_max + 1), exact)
    s = coerce(s, exact)
    one = Fraction(1) if exact else 1.0
    for m in range(1, m_max + 1):
        t = one
        for k in range(1, m + 1):
            t = t * (m - k + 1) / (m - k + 2 * s)
            out[m, k] = t / k
    return out


def injection_mass(beta, exact: bool = False):
    """Total injection rate ``sum_k beta^k / k = -log(1 - beta)``."""
    if exact:
        raise ValueError("the injection mass is transcendental; use float mode")
    return -math.log1p(-float(beta))


def boundary_rates(s, beta, m: int, k_max: int, exact: bool | None = None):
    """Removal rates (k = 1..m) and injection rates (k = 1..k_max) at a reservoir site."""
    if exact is None:
        exact = auto_exact(s, beta)
    beta = coerce(beta, exact)
    if not 0 < beta < 1:
        raise ValueError(f"beta out of (0,1): {beta}")
    removal = [jump_rate(s, m, k, exact) for k in range(1, m + 1)]
    injection = [beta**k / k for k in range(1, k_max + 1)]
    return removal, injection


def hamiltonian_density(s, n: int, exact: bool | None = None) -> np.ndarray:
    """Two-site density on the sector ``m_i + m_{i+1} = n`` (index p = m_i)."""
    if exact is None:
        exact = auto_exact(s)
    s = fock.check_spin(s, exact)
    h = zeros((n + 1, n + 1), exact)
    for p in range(n + 1):
        q = n - p
        h[p, p] = harmonic(p, s, exact) + harmonic(q, s, exact)
        for k in range(1, p + 1):
            h[p - k, p] -= jump_rate(s, p, k, exact)
        for k in range(1, q + 1):
            h[p + k, p] -= jump_rate(s, q, k, exact)
    return h


def density_from_casimir(s, n: int, exact: bool | None = None) -> np.ndarray:
    """``2 (psi(SS) - psi(2s))`` on sector n, built from the irrep decomposition."""
    if exact is None:
        exact = auto_exact(s)
    basis = fock.irrep_decompose(s, n, exact)
    two_s = 2 * coerce(s, exact)
    return fock.function_of_S(lambda lam: 2 * psi_diff(two_s, int(round(lam - two_s))), basis)


# ---------------------------------------------------------------------------
# transitions and generators
# ---------------------------------------------------------------------------


def transitions(spec: ChainSpec, m: tuple, k_inject_max: int, exact: bool | None = None) -> Iterator[tuple[tuple, object]]:
    """Yield ``(target, rate)`` for every move out of ``m``.

    Injection batches are listed up to ``k_inject_max``; the rest of the
    (infinite) series is the caller's business.
    """
    if exact is None:
        exact = spec.exact
    s = spec.s
    m = tuple(m)
    for a, b in spec.bonds():
        for k in range(1, m[a] + 1):
            t = list(m)
            t[a] -= k
            t[b] += k
            yield tuple(t), jump_rate(s, m[a], k, exact)
        for k in range(1, m[b] + 1):
            t = list(m)
            t[a] += k
            t[b] -= k
            yield tuple(t), jump_rate(s, m[b], k, exact)
    if spec.closed:
        return
    last = spec.n_sites - 1
    for site, beta in ((0, spec.beta_left), (last, spec.beta_right)):
        beta = coerce(beta, exact)
        for k in range(1, m[site] + 1):
            t = list(m)
            t[site] -= k
            yield tuple(t), jump_rate(s, m[site], k, exact)
        for k in range(1, k_inject_max + 1):
            t = list(m)
            t[site] += k
            yield tuple(t), beta**k / k


def box_states(n_sites: int, m_cap: int) -> np.ndarray:
    """All of ``{0..m_cap}^N`` in colexicographic order (site 0 varies fastest)."""
    d = m_cap + 1
    idx = np.arange(d**n_sites)
    return np.stack(np.unravel_index(idx, (d,) * n_sites, order="F"), axis=1).astype(np.int64)


def sector_states(n_sites: int, n: int) -> np.ndarray:
    """Compositions of n into ``n_sites`` parts, colexicographic."""
    out = []
    for comp in itertools.product(range(n + 1), repeat=n_sites):
        if sum(comp) == n:
            out.append(comp[::-1])
    out.sort(key=lambda c: c[::-1])
    return np.array(out, dtype=np.int64).reshape(-1, n_sites)


@dataclass
class SparseGenerator:
    """``H`` on an enumerated truncated state space.

    ``deficit[j]`` is the exit rate of state j towards states outside the
    space.  With ``clip_policy='clip'`` those moves are dropped from the
    diagonal too (a proper generator, zero column sums); with ``'restrict'``
    the diagonal keeps the full exit rate and column sums equal the deficit.
    """

    spec: ChainSpec
    states: np.ndarray
    matrix: object
    deficit: np.ndarray
    clip_policy: str
    m_cap: int | None = None
    sector: int | None = None
    exact: bool = False
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index = {tuple(int(x) for x in row): i for i, row in enumerate(self.states)}

    @property
    def size(self) -> int:
        return len(self.states)

    def index(self, config) -> int:
        return self._index[tuple(int(x) for x in config)]

    def column_sums(self) -> np.ndarray:
        if self.exact:
            return np.array([sum(self.matrix[:, j]) for j in range(self.size)], dtype=object)
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def dense(self) -> np.ndarray:
        return self.matrix if self.exact else self.matrix.toarray()


def _series_tail(beta: float, k_from: int) -> float:
    """``sum_{k >= k_from} beta^k / k``."""
    if k_from <= 1:
        return -math.log1p(-beta)
    head = sum(beta**k / k for k in range(1, k_from))
    return max(-math.log1p(-beta) - head, 0.0)


def build_generator(
    spec: ChainSpec,
    m_cap: int | None = None,
    sector: int | None = None,
    clip_policy: str = "clip",
    exact: bool = False,
    max_states: int = DEFAULT_MAX_STATES,
) -> SparseGenerator:
    """Assemble ``H`` on the box ``{0..m_cap}^N`` (open) or a particle sector (closed)."""
    if clip_policy not in ("clip", "restrict"):
        raise ValueError("clip_policy must be 'clip' or 'restrict'")
    if spec.closed:
        if sector is None:
            raise ValueError("closed chains need a particle sector")
        n_states = math.comb(sector + spec.n_sites - 1, spec.n_sites - 1)
    else:
        if m_cap is None:
            raise ValueError("open chains need m_cap")
        n_states = (m_cap + 1) ** spec.n_sites
    if n_states > max_states:
        raise StateSpaceTooLarge(
            f"{n_states} states exceed the cap of {max_states} (N={spec.n_sites}, m_cap={m_cap}, sector={sector})"
        )
    if exact or spec.closed:
        return _build_by_enumeration(spec, m_cap, sector, clip_policy, exact)
    return _build_box_vectorized(spec, m_cap, clip_policy)


def _build_by_enumeration(spec, m_cap, sector, clip_policy, exact) -> SparseGenerator:
    states = sector_states(spec.n_sites, sector) if spec.closed else box_states(spec.n_sites, m_cap)
    index = {tuple(int(x) for x in row): i for i, row in enumerate(states)}
    size = len(states)
    k_max = 0 if spec.closed else m_cap
    rows, cols, vals = [], [], []
    diag = [0] * size
    deficit = [0] * size
    for j, row in enumerate(states):
        m = tuple(int(x) for x in row)
        for target, rate in transitions(spec, m, k_max, exact):
            i = index.get(target)
            if i is None:
                deficit[j] += rate
                if clip_policy == "restrict":
                    diag[j] += rate
                continue
            rows.append(i)
            cols.append(j)
            vals.append(-rate)
            diag[j] += rate
        if not spec.closed and not exact:
            # injection batches beyond m_cap never fit in the box
            extra = _series_tail(float(spec.beta_left), k_max + 1) + _series_tail(float(spec.beta_right), k_max + 1)
            deficit[j] += extra
            if clip_policy == "restrict":
                diag[j] += extra
    if exact:
        mat = zeros((size, size), True)
        for i, j, v in zip(rows, cols, vals):
            mat[i, j] += v
        for j in range(size):
            mat[j, j] += diag[j]
        deficit_arr = np.array(deficit, dtype=object)
    else:
        rows += list(range(size))
        cols += list(range(size))
        vals += [float(d) for d in diag]
        mat = sp.csc_matrix((np.array(vals, dtype=float), (rows, cols)), shape=(size, size))
        deficit_arr = np.array([float(d) for d in deficit])
    return SparseGenerator(spec, states, mat, deficit_arr, clip_policy, m_cap, sector, exact, index)


def _build_box_vectorized(spec: ChainSpec, m_cap: int, clip_policy: str) -> SparseGenerator:
    n = spec.n_sites
    d = m_cap + 1
    states = box_states(n, m_cap)
    size = len(states)
    idx = np.arange(size, dtype=np.int64)
    stride = d ** np.arange(n, dtype=np.int64)
    rt = rate_table(float(spec.s), m_cap, exact=False)
    hsum = rt.sum(axis=1)  # total hop rate h^{(s)}(m)
    rows, cols, vals = [], [], []
    out_full = np.zeros(size)
    out_in = np.zeros(size)

    def add(src_mask, shift, rate):
        src = idx[src_mask]
        rows.append(src + shift)
        cols.append(src)
        vals.append(-rate)
        np.add.at(out_in, src, rate)

    for a, b in spec.bonds():
        for src_site, dst_site in ((a, b), (b, a)):
            ms = states[:, src_site]
            out_full += hsum[ms]
            for k in range(1, m_cap + 1):
                mask = (ms >= k) & (states[:, dst_site] + k <= m_cap)
                if not mask.any():
                    continue
                add(mask, k * (stride[dst_site] - stride[src_site]), rt[ms[mask], k])
    for site, beta in ((0, float(spec.beta_left)), (n - 1, float(spec.beta_right))):
        ms = states[:, site]
        out_full += hsum[ms] - math.log1p(-beta)
        for k in range(1, m_cap + 1):
            mask = ms >= k
            add(mask, -k * stride[site], rt[ms[mask], k])
            mask = ms + k <= m_cap
            add(mask, k * stride[site], np.full(int(mask.sum()), beta**k / k))
    deficit = np.maximum(out_full - out_in, 0.0)
    diag = out_full if clip_policy == "restrict" else out_in
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    mat = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    mat.sum_duplicates()
    return SparseGenerator(spec, states, mat, deficit, clip_policy, m_cap, None, False)


# ---------------------------------------------------------------------------
# stationary law
# ---------------------------------------------------------------------------


def geometric_weight(beta, m, exact: bool | None = None):
    """Product geometric law ``prod beta^{m_i} (1 - beta)``."""
    if exact is None:
        exact = auto_exact(beta)
    beta = coerce(beta, exact)
    out = Fraction(1) if exact else 1.0
    for x in m:
        out *= beta ** int(x) * (1 - beta)
    return out


def negative_binomial_weight(s, beta, m, exact: bool | None = None):
    """Product negative-binomial law ``prod beta^m (2s)_m / m! (1 - beta)^{2s}``.

    In exact mode the ``(1-beta)^{2s}`` normalisation is dropped (it may be
    irrational); ratios, which is all detailed balance needs, are unaffected.
    """
    if exact is None:
        exact = auto_exact(s, beta)
    s = coerce(s, exact)
    beta = coerce(beta, exact)
    out = Fraction(1) if exact else 1.0
    for x in m:
        x = int(x)
        out *= beta**x * poch(2 * s, x) / math.factorial(x)
        if not exact:
            out *= (1 - beta) ** (2 * s)
    return out


def detailed_balance_residual(gen: SparseGenerator, weight: Callable) -> object:
    """Max over transitions inside the space of ``|pi(m) r(m->m') - pi(m') r(m'->m)|``."""
    mat = gen.matrix if gen.exact else gen.matrix.tocsc()
    pis = [weight(tuple(row)) for row in gen.states]
    worst = Fraction(0) if gen.exact else 0.0
    if gen.exact:
        size = gen.size
        for j in range(size):
            for i in range(size):
                if i == j or mat[i, j] == 0:
                    continue
                r = abs(pis[j] * mat[i, j] - pis[i] * mat[j, i])
                worst = max(worst, r)
        return worst
    coo = mat.tocoo()
    back = mat.T.tocsr()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        if i == j:
            continue
        worst = max(worst, abs(pis[j] * v - pis[i] * back[i, j]))
    return worst


def stationary_distribution(
    gen: SparseGenerator,
    direct_limit: int = 4000,
    tol: float = 1e-13,
    max_leak: float | None = None,
) -> np.ndarray:
    """Normalised solution of ``H mu = 0``.

    Small spaces use a dense LU of ``H`` with one equation replaced by the
    normalisation; larger ones use Gauss-Seidel sweeps seeded with a product
    geometric guess (sparse LU suffers catastrophic fill-in here because
    batch moves couple each state to O(N M_cap) others).  ``max_leak`` optionally bounds the stationary outflow
    ``sum_j mu_j deficit_j`` through the truncation.
    """
    if gen.exact:
        raise ValueError("stationary_distribution works in float mode")
    h = gen.matrix.tocsr().astype(float)
    size = gen.size
    if gen.clip_policy != "clip":
        raise ValueError("stationary solves need a conservative ('clip') generator")
    if size == 1:
        return np.ones(1)
    if size <= direct_limit:
        mu = _solve_direct(h)
    else:
        mu = _solve_iterative(gen, h, tol)
    resid = np.abs(h @ mu).max()
    if mu.min() < -1e-9 * mu.max() or resid > 1e-8 * max(1.0, np.abs(h.diagonal()).max() * mu.max()):
        raise np.linalg.LinAlgError(f"null space is not one-dimensional or solve failed (residual {resid:.3e})")
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    if max_leak is not None:
        leak = float(mu @ gen.deficit)
        if leak > max_leak:
            raise ValueError(f"stationary leakage {leak:.3e} through the truncation exceeds {max_leak:.1e}")
    return mu


def stationary_leak(gen: SparseGenerator, mu: np.ndarray) -> float:
    return float(mu @ gen.deficit)


def _solve_direct(h: sp.csr_matrix) -> np.ndarray:
    a = h.toarray()
    a[-1, :] = 1.0
    b = np.zeros(a.shape[0])
    b[-1] = 1.0
    return np.linalg.solve(a, b)


def _solve_iterative(gen: SparseGenerator, h: sp.csr_matrix, tol: float, max_sweeps: int = 5000) -> np.ndarray:
    from .kernels import gauss_seidel_sweeps

    # product-geometric seed interpolating the reservoir densities
    spec = gen.spec
    if spec.closed:
        mu = np.ones(gen.size)
    else:
        rho = np.linspace(*(float(x) for x in spec.densities()), spec.n_sites + 2)[1:-1]
        mu = np.prod((rho / (1 + rho))[None, :] ** gen.states, axis=1)
    mu /= mu.sum()
    h = h.tocsr()
    h.sort_indices()
    scale = np.abs(h.diagonal()).max()
    done = 0
    while done < max_sweeps:
        mu = gauss_seidel_sweeps(h.indptr, h.indices, h.data, mu, 10)
        done += 10
        if np.abs(h @ mu).sum() <= tol * scale:
            return mu
    raise np.linalg.LinAlgError(f"Gauss-Seidel did not reach tolerance {tol:.1e} in {max_sweeps} sweeps")


# ---------------------------------------------------------------------------
# Sasamoto-Wadati and q-Hahn limits
# ---------------------------------------------------------------------------


def _qnum(x: int, q: float) -> float:
    return (q**x - q ** (-x)) / (q - 1 / q)


def madm_density(q: float, M: int) -> np.ndarray:
    """Multi-particle asymmetric diffusion density with M particles on a bond.

    Rows/columns i = 1..M+1 correspond to i - 1 particles on the left site.
    """
    if not q > 0 or q == 1:
        raise ValueError("q must be positive and different from 1")
    size = M + 1
    h = np.zeros((size, size))
    for i in range(1, size + 1):
        for j in range(1, size + 1):
            if i == j:
                h[i - 1, i - 1] = q * sum(q ** (i - l) / _qnum(abs(i - l), q) for l in range(1, size + 1) if l != i)
            else:
                h[i - 1, j - 1] = -q * q ** (j - i) / _qnum(abs(i - j), q)
    return h


def madm_limit_residual(M: int, eps: float = 1e-6) -> float:
    """Max-abs distance between the q = 1 + eps density and the harmonic action."""
    return float(np.abs(madm_density(1 + eps, M) - hamiltonian_density(0.5, M, exact=False)).max())


def qpoch(a: float, gamma: float, m: int) -> float:
    out = 1.0
    for j in range(m):
        out *= 1 - a * gamma**j
    return out


def _one_minus_pow(gamma: float, x: float) -> float:
    """``1 - gamma^x`` without cancellation."""
    return -math.expm1(x * math.log(gamma))


def qhahn_rate(mu: float, nu: float, gamma: float, m: int, n: int) -> float:
    """q-Hahn weight ``phi_{mu,nu,gamma}(m|n)`` of m out of n particles jumping."""
    if not 0 <= m <= n:
        raise ValueError("need 0 <= m <= n")
    if any(abs(1 - nu * gamma**j) < 1e-14 for j in range(n)):
        raise ZeroDivisionError("nu = gamma^(-j) makes (nu; gamma)_n vanish")
    den = qpoch(nu, gamma, n) * qpoch(gamma, gamma, n - m) * qpoch(gamma, gamma, m)
    if den == 0:
        raise ZeroDivisionError("vanishing q-Pochhammer in the denominator")
    num = mu**m * qpoch(nu / mu, gamma, m) * qpoch(mu, gamma, n - m) * qpoch(gamma, gamma, n)
    return num / den


def _qpoch_pow(x: float, gamma: float, m: int) -> float:
    """``(gamma^x; gamma)_m`` evaluated stably for gamma near 1."""
    out = 1.0
    for j in range(m):
        out *= _one_minus_pow(gamma, x + j)
    return out


def qhahn_limit_weight(s: float, s_prime: float, gamma: float, m: int, n: int) -> float:
    """``phi_{gamma^{2s}, gamma^{2s'}, gamma}(m|n)`` with cancellation-free Pochhammers."""
    num = (
        gamma ** (2 * s * m)
        * _qpoch_pow(2 * (s_prime - s), gamma, m)
        * _qpoch_pow(2 * s, gamma, n - m)
        * _qpoch_pow(1, gamma, n)
    )
    den = _qpoch_pow(2 * s_prime, gamma, n) * _qpoch_pow(1, gamma, n - m) * _qpoch_pow(1, gamma, m)
    return num / den


def qhahn_limit_residual(s: float, m: int, n: int, eps_gamma: float = 1e-4, eps_s: float = 1e-5) -> float:
    """Relative error of the scaled double limit against ``-jump_rate(s, n, m)``."""
    if not 1 <= m <= n:
        raise ValueError("the limit relation holds for 1 <= m <= n")
    s = float(s)
    s_prime = s - eps_s
    approx = qhahn_limit_weight(s, s_prime, 1 - eps_gamma, m, n) / (2 * (s - s_prime))
    target = -jump_rate(s, n, m, exact=False)
    return abs(approx - target) / abs(target)
