"""Truncated lowest-weight sl(2) modules.

Each site carries the discrete-series module with basis ``|m>``, m = 0, 1, ...,
truncated to ``m <= m_cap``::

    S+ |m> = (m + 2s) |m + 1>,   S- |m> = m |m - 1>,   S0 |m> = (m + s) |m>

Operators are dense numpy arrays, of dtype ``object`` holding Fractions in
exact mode and float64 otherwise.  ``entries[m', m] = <m'|A|m>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import sympy

from .arith import as_exact, auto_exact, coerce, identity, poch, zeros

__all__ = [
    "check_spin",
    "TruncatedFockOperator",
    "sl2_generators",
    "exp_shift",
    "IrrepBasis",
    "pair_lowering",
    "pair_casimir",
    "irrep_decompose",
    "function_of_S",
    "safe_indices",
]


def check_spin(s, exact: bool):
    s = coerce(s, exact)
    if not s > 0:
        raise ValueError(f"spin label must be positive, got {s}")
    return s


@dataclass(frozen=True)
class TruncatedFockOperator:
    """Matrix of a single-site operator on ``{|0>, ..., |m_cap>}``.

    ``band = (max_lower, max_raise)`` bounds how far the operator moves the
    occupation number; products add bands.
    """

    entries: np.ndarray
    band: tuple[int, int]
    exact: bool

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def m_cap(self) -> int:
        return self.dim - 1

    def __matmul__(self, other: "TruncatedFockOperator") -> "TruncatedFockOperator":
        cap = self.dim - 1
        band = (min(self.band[0] + other.band[0], cap), min(self.band[1] + other.band[1], cap))
        return TruncatedFockOperator(self.entries @ other.entries, band, self.exact and other.exact)

    def __add__(self, other: "TruncatedFockOperator") -> "TruncatedFockOperator":
        band = (max(self.band[0], other.band[0]), max(self.band[1], other.band[1]))
        return TruncatedFockOperator(self.entries + other.entries, band, self.exact and other.exact)

    def __sub__(self, other: "TruncatedFockOperator") -> "TruncatedFockOperator":
        band = (max(self.band[0], other.band[0]), max(self.band[1], other.band[1]))
        return TruncatedFockOperator(self.entries - other.entries, band, self.exact and other.exact)

    def scale(self, c) -> "TruncatedFockOperator":
        c = coerce(c, self.exact)
        return TruncatedFockOperator(self.entries * c, self.band, self.exact)

    def band_violation(self) -> int:
        """Number of nonzero entries outside the declared band (should be 0)."""
        lo, hi = self.band
        bad = 0
        for i, j in zip(*np.nonzero(self.entries != 0)):
            if i - j > hi or j - i > lo:
                bad += 1
        return bad


def sl2_generators(s, m_cap: int, exact: bool | None = None):
    """Return ``(S+, S-, S0)`` on the truncated spin-s module."""
    if exact is None:
        exact = auto_exact(s)
    s = check_spin(s, exact)
    if m_cap < 1:
        raise ValueError("m_cap must be at least 1")
    d = m_cap + 1
    sp, sm, s0 = zeros((d, d), exact), zeros((d, d), exact), zeros((d, d), exact)
    for m in range(d):
        s0[m, m] = m + s
        if m + 1 < d:
            sp[m + 1, m] = m + 2 * s
        if m >= 1:
            sm[m - 1, m] = coerce(m, exact)
    return (
        TruncatedFockOperator(sp, (0, 1), exact),
        TruncatedFockOperator(sm, (1, 0), exact),
        TruncatedFockOperator(s0, (0, 0), exact),
    )


def exp_shift(direction: str, gamma, s, m_cap: int, exact: bool | None = None) -> TruncatedFockOperator:
    """Closed form of ``exp(gamma S+)`` (``direction='raise'``) or ``exp(gamma S-)``.

    Raising: ``<m|e^{g S+}|l> = g^(m-l) (l+2s)_(m-l) / (m-l)!``.
    Lowering: ``<l|e^{g S-}|m> = g^(m-l) C(m, l)``, independent of s.
    Both are triangular, so the truncated matrices are exact.
    """
    if exact is None:
        exact = auto_exact(gamma, s)
    s = check_spin(s, exact)
    g = coerce(gamma, exact)
    if m_cap < 1:
        raise ValueError("m_cap must be at least 1")
    d = m_cap + 1
    out = zeros((d, d), exact)
    one = Fraction(1) if exact else 1.0
    from math import comb, factorial

    for hi in range(d):
        for lo in range(hi + 1):
            r = hi - lo
            if direction == "raise":
                out[hi, lo] = g**r * poch(lo + 2 * s, r) / factorial(r) * one
            elif direction == "lower":
                out[lo, hi] = g**r * comb(hi, lo) * one
            else:
                raise ValueError(f"direction must be 'raise' or 'lower', got {direction!r}")
    band = (0, m_cap) if direction == "raise" else (m_cap, 0)
    return TruncatedFockOperator(out, band, exact)


def safe_indices(dim: int, width: int) -> np.ndarray:
    """Occupations at distance > ``width`` from the cutoff, where truncation cannot leak."""
    return np.arange(max(dim - width, 0))


# ---------------------------------------------------------------------------
# two-site sectors
# ---------------------------------------------------------------------------
# Sector n is spanned by |p, n - p>, p = 0..n, indexed by p.


def pair_lowering(n: int, exact: bool = True) -> np.ndarray:
    """Total ``S-`` from sector n to sector n-1 (an n x (n+1) matrix)."""
    a = zeros((max(n, 0), n + 1), exact)
    for p in range(n + 1):
        q = n - p
        if p >= 1:
            a[p - 1, p] += p
        if q >= 1:
            a[p, p] += q
    return a


def pair_raising(s, n: int, exact: bool | None = None) -> np.ndarray:
    """Total ``S+`` from sector n to sector n+1 (an (n+2) x (n+1) matrix)."""
    if exact is None:
        exact = auto_exact(s)
    s = coerce(s, exact)
    a = zeros((n + 2, n + 1), exact)
    for p in range(n + 1):
        q = n - p
        a[p + 1, p] += p + 2 * s
        a[p, p] += q + 2 * s
    return a


def pair_casimir(s, n: int, exact: bool | None = None) -> np.ndarray:
    """Two-site Casimir ``C = S0^2 - S0 - S+ S-`` restricted to sector n."""
    if exact is None:
        exact = auto_exact(s)
    s = coerce(s, exact)
    lam = n + 2 * s
    c = identity(n + 1, exact) * (lam * lam - lam)
    if n >= 1:
        c = c - pair_raising(s, n - 1, exact) @ pair_lowering(n, exact)
    return c


def _pair_gram(s, n: int, exact: bool) -> np.ndarray:
    """Diagonal of the invariant form in which S- is the adjoint of S+."""
    s = coerce(s, exact)
    from math import factorial

    def g(m):
        return factorial(m) / poch(2 * s, m) if not exact else Fraction(factorial(m)) / poch(2 * s, m)

    return np.array([g(p) * g(n - p) for p in range(n + 1)], dtype=object if exact else float)


def _kernel(a: np.ndarray, exact: bool) -> np.ndarray:
    if exact:
        ns = sympy.Matrix(a.tolist()).nullspace()
        if len(ns) != 1:
            raise np.linalg.LinAlgError(f"lowest-weight kernel has dimension {len(ns)}, expected 1")
        v = np.array([as_exact(sympy.Rational(x)) for x in ns[0]], dtype=object)
        pivot = next(x for x in v if x != 0)
        return v / pivot
    ns = scipy.linalg.null_space(a.astype(float))
    if ns.shape[1] != 1:
        raise np.linalg.LinAlgError(f"lowest-weight kernel has dimension {ns.shape[1]}, expected 1")
    return ns[:, 0]


@dataclass(frozen=True)
class IrrepBasis:
    """Irrep-adapted basis of the two-site sector with total occupation n.

    Column j of ``vectors`` spans the copy of irrep ``[labels[j]]`` inside the
    sector; ``labels[j] = 2s + j``.
    """

    s: object
    n: int
    labels: tuple
    vectors: np.ndarray
    norms: np.ndarray
    gram: np.ndarray
    exact: bool

    def inverse(self) -> np.ndarray:
        # columns are orthogonal for the invariant form, so no generic inversion
        inv = self.vectors.T * self.gram[None, :]
        return inv / self.norms[:, None]


def irrep_decompose(s, n: int, exact: bool | None = None) -> IrrepBasis:
    """Decompose sector n of ``[s] x [s]`` into ``[2s + j]``, j = 0..n.

    The lowest-weight vector of ``[2s+j]`` is the kernel of total S- on
    sector j; it is raised with total S+ up to sector n.
    """
    if exact is None:
        exact = auto_exact(s)
    s = check_spin(s, exact)
    if n < 0:
        raise ValueError("sector must be non-negative")
    cols = []
    for j in range(n + 1):
        v = _kernel(pair_lowering(j, exact), exact) if j > 0 else np.array([coerce(1, exact)], dtype=object if exact else float)
        for level in range(j, n):
            v = pair_raising(s, level, exact) @ v
            if not exact:
                v = v / np.max(np.abs(v))
        cols.append(v)
    vectors = np.column_stack(cols) if cols else zeros((1, 1), exact)
    gram = _pair_gram(s, n, exact)
    norms = np.array([np.sum(vectors[:, j] * vectors[:, j] * gram) for j in range(n + 1)], dtype=object if exact else float)
    labels = tuple(2 * s + j for j in range(n + 1))
    return IrrepBasis(s, n, labels, vectors, norms, gram, exact)


def function_of_S(f: Callable, basis: IrrepBasis) -> np.ndarray:
    """Matrix of ``f(SS)`` on the sector, SS being the two-site spin operator.

    ``f`` is called with each label (a Fraction in exact mode).
    """
    vals = []
    for lam in basis.labels:
        try:
            v = f(lam)
        except ZeroDivisionError as exc:
            raise ZeroDivisionError(f"f has a pole at label {lam}") from exc
        if not basis.exact and not np.isfinite(float(v)):
            raise ZeroDivisionError(f"f has a pole at label {lam}")
        vals.append(v)
    vals = np.array(vals, dtype=object if basis.exact else float)
    return (basis.vectors * vals[None, :]) @ basis.inverse()


def embed_diag(values: Sequence, exact: bool) -> TruncatedFockOperator:
    d = len(values)
    out = zeros((d, d), exact)
    for i, v in enumerate(values):
        out[i, i] = v
    return TruncatedFockOperator(out, (0, 0), exact)
