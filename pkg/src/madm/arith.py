"""Scalar helpers shared by the exact (Fraction) and float arithmetic modes."""

from __future__ import annotations

from fractions import Fraction
from numbers import Rational

import numpy as np
from scipy import special

__all__ = [
    "Fraction",
    "as_exact",
    "auto_exact",
    "zeros",
    "identity",
    "harmonic",
    "poch",
    "psi_diff",
    "digamma",
    "binom",
]


def as_exact(x) -> Fraction:
    """Convert ``x`` to a Fraction; floats are read through their decimal repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, Rational):
        return Fraction(x.numerator, x.denominator)
    if isinstance(x, (float, np.floating)):
        return Fraction(repr(float(x)))
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"cannot convert {type(x).__name__} to an exact rational")


def auto_exact(*values) -> bool:
    """True when every value is an int/Fraction/str, i.e. exact mode is possible."""
    for v in values:
        if isinstance(v, (bool, np.bool_)):
            continue
        if isinstance(v, (float, np.floating, complex)):
            return False
    return True


def coerce(x, exact: bool):
    return as_exact(x) if exact else float(x)


def zeros(shape, exact: bool) -> np.ndarray:
    if exact:
        out = np.empty(shape, dtype=object)
        out.fill(Fraction(0))
        return out
    return np.zeros(shape)


def identity(n: int, exact: bool) -> np.ndarray:
    out = zeros((n, n), exact)
    for i in range(n):
        out[i, i] = Fraction(1) if exact else 1.0
    return out


def harmonic(m: int, s=Fraction(1, 2), exact: bool = True):
    """Spin-s harmonic number ``sum_{k=1}^m 1/(k + 2s - 1)``; ``h(m)`` at s=1/2."""
    two_s = 2 * coerce(s, exact)
    one = Fraction(1) if exact else 1.0
    return sum((one / (k + two_s - 1) for k in range(1, m + 1)), 0 * one)


def poch(a, n: int):
    """Rising factorial (a)_n for integer n >= 0, in the arithmetic of ``a``."""
    out = 1 if not isinstance(a, float) else 1.0
    for j in range(n):
        out *= a + j
    return out


def psi_diff(a, j: int):
    """``psi(a + j) - psi(a)`` via the recurrence; exact when ``a`` is a Fraction."""
    one = Fraction(1) if isinstance(a, Fraction) else 1.0
    return sum((one / (a + r) for r in range(j)), 0 * one)


def digamma(x: float) -> float:
    return float(special.digamma(x))


def binom(n: int, k: int) -> int:
    """Binomial coefficient, zero outside 0 <= k <= n."""
    if k < 0 or n < 0 or k > n:
        return 0
    from math import comb

    return comb(n, k)
