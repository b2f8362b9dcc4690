"""
specfun.py

Configurable-precision real arithmetic and the special functions needed by
the series engine: log-gamma, regularized incomplete gamma, the Gauss
hypergeometric function 2F1, generalized Laguerre polynomials, and the
Pochhammer symbol.

All routines run on mpmath arbitrary-precision floats. The working precision
is carried by an explicitly passed PrecisionContext, so every function is a
pure map from (arguments, context) to a value and is safe to call from any
number of threads.

Example
-------
>>> from sumstat.specfun import PrecisionContext, ln_gamma
>>> ctx = PrecisionContext(50)
>>> ln_gamma(5, ctx)
mpf('3.1780538303479456196469416012970554088739909609035161')
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction

import mpmath as mp

__all__ = [
    "PrecisionContext",
    "RealHP",
    "DEFAULT_CONTEXT",
    "mpreal",
    "ln_gamma",
    "reg_lower_inc_gamma",
    "reg_upper_inc_gamma",
    "gauss_2f1",
    "laguerre",
    "pochhammer",
]

# The high-precision real type used throughout the package. Values are
# mpmath floats whose precision is set by the active PrecisionContext.
RealHP = mp.mpf


@dataclass(frozen=True)
class PrecisionContext:
    """
    Working precision in decimal digits.

    Parameters
    ----------
    digits : int
        Decimal digits of working precision, at least 30. Results of the
        functions in this module carry relative error no worse than
        10**(-digits + 5).
    """

    digits: int

    def __post_init__(self) -> None:
        if not isinstance(self.digits, int) or self.digits < 30:
            raise ValueError("PrecisionContext.digits must be an integer >= 30.")

    @contextmanager
    def working(self, extra: int = 0):
        """Context manager setting mpmath's precision to digits + extra."""
        with mp.workdps(self.digits + extra):
            yield

    def doubled(self) -> "PrecisionContext":
        """A context with twice the digits (used by stability checks)."""
        return PrecisionContext(2 * self.digits)


DEFAULT_CONTEXT = PrecisionContext(50)


def mpreal(x, ctx: PrecisionContext = DEFAULT_CONTEXT) -> RealHP:
    """
    Convert x to a high-precision real at the context's precision.

    Accepts int, float, str, Fraction, and mpmath floats. Strings are
    parsed in decimal, which is the lossless way to feed non-binary
    constants like "1.1".
    """
    with ctx.working():
        if isinstance(x, Fraction):
            return mp.mpf(x.numerator) / x.denominator
        return mp.mpf(x)


def ln_gamma(x, ctx: PrecisionContext = DEFAULT_CONTEXT) -> RealHP:
    """
    Natural log of the gamma function for positive real x.

    Parameters
    ----------
    x : real
        Must be strictly positive.
    ctx : PrecisionContext
        Working precision.

    Returns
    -------
    RealHP
        ln(Gamma(x)) to context precision.
    """
    with ctx.working(5):
        xm = mpreal(x, ctx)
        if xm <= 0:
            raise ValueError("ln_gamma requires x > 0, got %r." % (x,))
        return +mp.loggamma(xm)


def reg_lower_inc_gamma(a, x, ctx: PrecisionContext = DEFAULT_CONTEXT) -> RealHP:
    """
    Regularized lower incomplete gamma function P(a, x) in [0, 1].

    This is the integral of t**(a-1) e**(-t) from 0 to x, divided by
    Gamma(a). It is monotone nondecreasing in x with limit 1 as x grows.

    Parameters
    ----------
    a : real
        Shape parameter, must be strictly positive.
    x : real
        Upper integration limit, must be nonnegative.
    ctx : PrecisionContext
        Working precision.
    """
    with ctx.working(5):
        am = mpreal(a, ctx)
        xm = mpreal(x, ctx)
        if am <= 0:
            raise ValueError("reg_lower_inc_gamma requires a > 0, got %r." % (a,))
        if xm < 0:
            raise ValueError("reg_lower_inc_gamma requires x >= 0, got %r." % (x,))
        if xm == 0:
            return mp.mpf(0)
        return +mp.gammainc(am, 0, xm, regularized=True)


def reg_upper_inc_gamma(a, x, ctx: PrecisionContext = DEFAULT_CONTEXT) -> RealHP:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    with ctx.working(5):
        am = mpreal(a, ctx)
        xm = mpreal(x, ctx)
        if am <= 0:
            raise ValueError("reg_upper_inc_gamma requires a > 0, got %r." % (a,))
        if xm < 0:
            raise ValueError("reg_upper_inc_gamma requires x >= 0, got %r." % (x,))
        return +mp.gammainc(am, xm, mp.inf, regularized=True)


def _is_nonpositive_int(v) -> bool:
    return v <= 0 and v == mp.floor(v)


def _hyp2f1_series(a, b, c, z, max_terms: int = 200000) -> RealHP:
    """Plain power series for 2F1 at 0 <= z < 1; terminates on polynomials."""
    term = mp.mpf(1)
    total = mp.mpf(1)
    tol = mp.mpf(10) ** (-mp.mp.dps)
    k = 0
    while k < max_terms:
        term = term * (a + k) * (b + k) / ((c + k) * (k + 1)) * z
        if term == 0:
            break
        total += term
        if abs(term) < tol * max(mp.mpf(1), abs(total)):
            break
        k += 1
    else:
        raise ValueError("gauss_2f1 series did not converge within %d terms." % max_terms)
    return total


def gauss_2f1(a, b, c, z, ctx: PrecisionContext = DEFAULT_CONTEXT) -> RealHP:
    """
    Gauss hypergeometric function 2F1(a, b; c; z) for real arguments.

    Negative z is mapped onto (0, 1) with the Pfaff transformation
    2F1(a, b; c; z) = (1 - z)**(-a) 2F1(a, c - b; c; z / (z - 1)),
    after which the series has one sign and sums without cancellation.
    Arguments with z >= 1 are outside the implemented domain.

    Parameters
    ----------
    a, b, c : real
        Upper and lower parameters; c must not be a non-positive integer.
    z : real
        Argument with z < 1. Any negative z is accepted.
    ctx : PrecisionContext
        Working precision.
    """
    with ctx.working(10):
        am = mpreal(a, ctx)
        bm = mpreal(b, ctx)
        cm = mpreal(c, ctx)
        zm = mpreal(z, ctx)
        if _is_nonpositive_int(cm):
            raise ValueError("gauss_2f1 requires c not a non-positive integer, got c=%r." % (c,))
        if zm >= 1:
            raise ValueError("gauss_2f1 implemented for z < 1 only, got z=%r." % (z,))
        if zm == 0:
            return mp.mpf(1)
        if zm < 0:
            w = zm / (zm - 1)
            return +((1 - zm) ** (-am) * _hyp2f1_series(am, cm - bm, cm, w))
        return +_hyp2f1_series(am, bm, cm, zm)


def laguerre(k: int, a, x, ctx: PrecisionContext = DEFAULT_CONTEXT) -> RealHP:
    """
    Generalized Laguerre polynomial L_k^a(x) by the three-term recurrence.

    The recurrence in the degree,
    (k + 1) L_{k+1} = (2k + a + 1 - x) L_k - (k + a) L_{k-1},
    is the standard stable way to walk up to degree k.
    """
    if k < 0:
        raise ValueError("laguerre requires k >= 0, got %r." % (k,))
    with ctx.working(5):
        am = mpreal(a, ctx)
        xm = mpreal(x, ctx)
        prev = mp.mpf(1)
        if k == 0:
            return prev
        cur = 1 + am - xm
        for j in range(1, k):
            prev, cur = cur, ((2 * j + am + 1 - xm) * cur - (j + am) * prev) / (j + 1)
        return +cur


def pochhammer(a, n: int, ctx: PrecisionContext = DEFAULT_CONTEXT):
    """
    Pochhammer symbol (a)_n = a (a+1) ... (a+n-1) by direct product.

    Exact for exact inputs: integer or Fraction a stays rational.
    """
    if n < 0:
        raise ValueError("pochhammer requires n >= 0, got %r." % (n,))
    if isinstance(a, (int, Fraction)):
        out = a ** 0 if n == 0 else a
        for j in range(1, n):
            out = out * (a + j)
        return out if n > 0 else 1
    with ctx.working(5):
        am = mpreal(a, ctx)
        out = mp.mpf(1)
        for j in range(n):
            out *= am + j
        return +out


def factorial_exact(n: int) -> int:
    """Exact integer factorial, a thin wrapper kept for symmetry."""
    return math.factorial(n)
