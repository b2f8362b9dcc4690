"""
sumcore.py

The series engine: compose the Laplace coefficient streams of independent
positive summands into a single coefficient table for the sum, evaluate
the sum's PDF and CDF as truncated power series, and control truncation
with an analytic tail bound that certifies the evaluation domain.

A summand enters as a LaplaceSeriesDescriptor holding the expansion

    transform(s) = psi * sum_i eta_i * s**(-beta - i*theta),

and a SumSeries turns L such streams into the composed coefficients
delta_i through a log-derivative recursion. The sum's PDF and CDF are

    pdf(x) = prod(psi_l) * sum_i delta_i * x**(theta*i + B - 1) / Gamma(theta*i + B)
    cdf(x) = prod(psi_l) * sum_i delta_i * x**(theta*i + B)     / Gamma(theta*i + B + 1)

with B = sum(beta_l). Truncating at t0 terms leaves a tail controlled by
truncation_bound, which grows like exp(x**theta), so a fixed t0 certifies
only a finite x range. All recursions are duck-typed: streams of exact
Fractions stay exact, streams of mpmath floats run at the precision of
the PrecisionContext passed to every operation.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import count
from typing import Callable, Optional, Sequence

import mpmath as mp
import numpy as np
from mpmath.libmp import from_int, mpf_div, mpf_mul, mpf_neg, mpf_sum, round_nearest
from scipy.special import gammaln, logsumexp

from sumstat.specfun import (
    DEFAULT_CONTEXT,
    PrecisionContext,
    mpreal,
    reg_lower_inc_gamma,
)

__all__ = [
    "CoefficientStream",
    "LaplaceSeriesDescriptor",
    "SumSeries",
    "TruncationPolicy",
    "GrowthDiagnostic",
    "DEFAULT_TERM_CAP",
    "phi_coeffs",
    "delta_coeffs",
    "delta_coeffs_iid",
    "sum_density",
    "sum_cdf",
    "truncation_bound",
    "select_term_count",
    "tail_terms_ok",
    "partial_mean_integral",
    "growth_diagnostic",
    "heuristic_digits",
    "estimate_required_digits",
]

DEFAULT_TERM_CAP = 600


def _to_mpf(v):
    """Coerce a stream value (mpf, int, float, Fraction) to mpf."""
    if isinstance(v, mp.mpf):
        return v
    if isinstance(v, Fraction):
        return mp.mpf(v.numerator) / v.denominator
    return mp.mpf(v)


class CoefficientStream:
    """
    Lazily materialized coefficient sequence with per-precision caching.

    Wraps a factory that, given a PrecisionContext, returns an iterator of
    successive coefficients. Values are cached per context digits, so a
    repeated query at the same index and precision is bit-identical.
    Extension happens under a lock (single writer); readers only ever see
    completed prefixes.

    Parameters
    ----------
    factory : callable
        factory(ctx) -> iterator of coefficient values.
    log_abs_probe : callable, optional
        n -> numpy array of float upper envelopes for log|c_i|, i < n.
        Used by the fast precision estimator; never by exact evaluation.
    """

    def __init__(self, factory, log_abs_probe: Optional[Callable[[int], np.ndarray]] = None):
        self._factory = factory
        self._states = {}
        self._lock = threading.RLock()
        self.log_abs_probe = log_abs_probe

    @classmethod
    def from_function(cls, fn, log_abs_probe=None) -> "CoefficientStream":
        """Build a stream from an index-wise function fn(i, ctx)."""
        def factory(ctx):
            return (fn(i, ctx) for i in count())
        return cls(factory, log_abs_probe)

    def prefix(self, n: int, ctx: PrecisionContext) -> list:
        """First n coefficients at the context's precision (a copy)."""
        key = ctx.digits
        with self._lock:
            state = self._states.get(key)
            if state is None:
                with ctx.working():
                    state = (self._factory(ctx), [])
                self._states[key] = state
            gen, values = state
            if len(values) < n:
                with ctx.working():
                    while len(values) < n:
                        values.append(next(gen))
            return values[:n]

    def value(self, i: int, ctx: PrecisionContext):
        """Coefficient at index i."""
        key = ctx.digits
        with self._lock:
            state = self._states.get(key)
            if state is None or len(state[1]) <= i:
                self.prefix(i + 1, ctx)
                state = self._states[key]
            return state[1][i]

    def default_log_abs(self, n: int, ctx: PrecisionContext) -> np.ndarray:
        """Fallback probe: materialize the prefix and take float log|c_i|."""
        vals = self.prefix(n, ctx)
        out = np.empty(n)
        with ctx.working():
            for i, v in enumerate(vals):
                vm = abs(_to_mpf(v))
                out[i] = float(mp.log(vm)) if vm > 0 else -math.inf
        return out


@dataclass
class LaplaceSeriesDescriptor:
    """
    One summand's Laplace coefficient stream.

    Parameters
    ----------
    psi : positive real
        Prefactor of the transform expansion.
    beta : positive real
        Base exponent offset.
    theta : positive real
        Exponent step; all summands composed together must share it.
    eta : CoefficientStream
        Coefficient stream with eta_0 != 0 (checked on first use).
    label : str
        Optional name used in error messages.
    """

    psi: object
    beta: object
    theta: object
    eta: CoefficientStream
    label: str = ""
    _phi: Optional[CoefficientStream] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("psi", "beta", "theta"):
            v = getattr(self, name)
            if not float(v) > 0:
                raise ValueError(
                    "LaplaceSeriesDescriptor requires %s > 0, got %r (%s)."
                    % (name, v, self.label or "unnamed")
                )

    def phi_stream(self) -> CoefficientStream:
        """Log-derivative coefficient stream of this summand (cached)."""
        if self._phi is None:
            self._phi = CoefficientStream(_phi_factory(self))
        return self._phi


def _phi_factory(desc: LaplaceSeriesDescriptor):
    def factory(ctx):
        eta = desc.eta
        e0 = eta.value(0, ctx)
        if e0 == 0:
            raise ValueError(
                "summand %r has leading coefficient zero; the composition "
                "recursion divides by it." % (desc.label or "unnamed",)
            )
        etas = [e0, eta.value(1, ctx)]
        phis = [etas[1] / e0]
        yield phis[0]
        if isinstance(e0, mp.mpf):
            # Hot path: run the convolution on raw mantissa tuples so the
            # O(h) inner sum skips operator dispatch and context lookups.
            prec = mp.mp.prec
            e0_r = e0._mpf_
            etas_r = [e0_r, _to_mpf(etas[1])._mpf_]
            phis_r = [_to_mpf(phis[0])._mpf_]
            mul = mpf_mul
            for h in count(1):
                etas_r.append(_to_mpf(eta.value(h + 1, ctx))._mpf_)
                terms = [mul(from_int(h + 1), etas_r[h + 1], prec, round_nearest)]
                terms.extend(
                    mpf_neg(mul(etas_r[t], phis_r[h - t], prec, round_nearest))
                    for t in range(1, h + 1)
                )
                val = mpf_div(mpf_sum(terms, prec, round_nearest), e0_r, prec, round_nearest)
                phis_r.append(val)
                yield mp.make_mpf(val)
        else:
            for h in count(1):
                etas.append(eta.value(h + 1, ctx))
                total = (h + 1) * etas[h + 1]
                total = total - sum(etas[t] * phis[h - t] for t in range(1, h + 1))
                val = total / e0
                phis.append(val)
                yield val
    return factory


def phi_coeffs(desc: LaplaceSeriesDescriptor, h_max: int, ctx: PrecisionContext = DEFAULT_CONTEXT) -> list:
    """
    Log-derivative coefficients phi_0 .. phi_h_max of a summand's stream.

    These satisfy phi_0 = eta_1/eta_0 and, for h >= 1,
    phi_h = ((h+1) eta_{h+1} - sum_{t=1}^{h} eta_t phi_{h-t}) / eta_0,
    which is the coefficient recursion for d/dz log(sum eta_i z**i).
    """
    if h_max < 0:
        raise ValueError("phi_coeffs requires h_max >= 0.")
    return desc.phi_stream().prefix(h_max + 1, ctx)


class SumSeries:
    """
    The composed series for a sum of independent summands.

    Holds the member descriptors, the shared exponent step, and lazily
    extended coefficient tables (cached per precision). Construction
    checks that all members share one theta; the leading-coefficient
    check happens on first table extension.

    Use SumSeries.compose for a general list of summands and
    SumSeries.compose_iid for L identical copies of one summand, which
    runs a cheaper single-stream recursion with identical values.
    """

    def __init__(self, descriptors: Sequence[LaplaceSeriesDescriptor], iid_count: Optional[int] = None):
        if iid_count is None:
            if len(descriptors) == 0:
                raise ValueError("SumSeries requires at least one summand.")
            thetas = [float(d.theta) for d in descriptors]
            for idx, th in enumerate(thetas[1:], start=1):
                if th != thetas[0]:
                    raise ValueError(
                        "composition error: summand %d (%s) has theta=%r but summand 0 "
                        "(%s) has theta=%r; all summands must share one exponent step."
                        % (idx, descriptors[idx].label or "unnamed", th,
                           descriptors[0].label or "unnamed", thetas[0])
                    )
            self.descriptors = list(descriptors)
            self.L = len(self.descriptors)
            self.iid = False
        else:
            if iid_count < 1:
                raise ValueError("compose_iid requires L >= 1.")
            self.descriptors = [descriptors[0]]
            self.L = iid_count
            self.iid = True
        self.theta = self.descriptors[0].theta
        self._delta = CoefficientStream(self._delta_factory())
        self._lock = threading.RLock()
        self._scalar_cache = {}
        self._coef_cache = {}

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------
    @classmethod
    def compose(cls, descriptors: Sequence[LaplaceSeriesDescriptor]) -> "SumSeries":
        """Compose a general list of summands (shared theta required)."""
        return cls(descriptors)

    @classmethod
    def compose_iid(cls, descriptor: LaplaceSeriesDescriptor, L: int) -> "SumSeries":
        """Compose L identical copies of one summand via the fast path."""
        return cls([descriptor], iid_count=L)

    def _delta_factory(self):
        if self.iid:
            desc, L = self.descriptors[0], self.L

            def factory(ctx):
                eta = desc.eta
                e0 = eta.value(0, ctx)
                if e0 == 0:
                    raise ValueError(
                        "summand %r has leading coefficient zero; the composition "
                        "recursion divides by it." % (desc.label or "unnamed",)
                    )
                etas = [e0]
                deltas = [e0 ** L]
                yield deltas[0]
                for i in count(1):
                    etas.append(eta.value(i, ctx))
                    total = sum(
                        deltas[i - h] * etas[h] * (h * L + h - i)
                        for h in range(1, i + 1)
                    )
                    val = total / i / e0
                    deltas.append(val)
                    yield val
            return factory

        descs = self.descriptors

        def factory(ctx):
            d0 = 1
            for d in descs:
                e0 = d.eta.value(0, ctx)
                if e0 == 0:
                    raise ValueError(
                        "summand %r has leading coefficient zero; the composition "
                        "recursion divides by it." % (d.label or "unnamed",)
                    )
                d0 = d0 * e0
            streams = [d.phi_stream() for d in descs]
            yield d0
            if isinstance(d0, mp.mpf):
                # Hot path: the Cauchy product dominates wide-domain runs,
                # so drive it on raw mantissa tuples.
                prec = mp.mp.prec
                deltas_r = [d0._mpf_]
                combined_r = []
                mul = mpf_mul
                for i in count(1):
                    while len(combined_r) < i:
                        hh = len(combined_r)
                        vals = [_to_mpf(s.value(hh, ctx))._mpf_ for s in streams]
                        combined_r.append(mpf_sum(vals, prec, round_nearest))
                    terms = [
                        mul(deltas_r[i - h], combined_r[h - 1], prec, round_nearest)
                        for h in range(1, i + 1)
                    ]
                    val = mpf_div(
                        mpf_sum(terms, prec, round_nearest), from_int(i), prec, round_nearest
                    )
                    deltas_r.append(val)
                    yield mp.make_mpf(val)
            else:
                deltas = [d0]
                combined = []
                for i in count(1):
                    while len(combined) < i:
                        hh = len(combined)
                        combined.append(sum(s.value(hh, ctx) for s in streams))
                    total = sum(deltas[i - h] * combined[h - 1] for h in range(1, i + 1))
                    val = total / i
                    deltas.append(val)
                    yield val
        return factory

    # ------------------------------------------------------------------
    # Cached scalars and coefficient tables
    # ------------------------------------------------------------------
    def psi_prod(self, ctx: PrecisionContext) -> mp.mpf:
        """Product of the member prefactors (psi**L on the iid path)."""
        return self._scalar(ctx, "psi", lambda: self._psi_prod(ctx))

    def _psi_prod(self, ctx):
        if self.iid:
            return mpreal(self.descriptors[0].psi, ctx) ** self.L
        out = mp.mpf(1)
        for d in self.descriptors:
            out *= mpreal(d.psi, ctx)
        return out

    def beta_sum(self, ctx: PrecisionContext) -> mp.mpf:
        """Sum of the member base exponents (L*beta on the iid path)."""
        return self._scalar(ctx, "beta", lambda: self._beta_sum(ctx))

    def _beta_sum(self, ctx):
        if self.iid:
            return self.L * mpreal(self.descriptors[0].beta, ctx)
        return mp.fsum(mpreal(d.beta, ctx) for d in self.descriptors)

    def _scalar(self, ctx, name, compute):
        key = (ctx.digits, name)
        with self._lock:
            if key not in self._scalar_cache:
                with ctx.working():
                    self._scalar_cache[key] = compute()
            return self._scalar_cache[key]

    def delta_prefix(self, n: int, ctx: PrecisionContext) -> list:
        """Composed coefficients delta_0 .. delta_{n-1}."""
        return self._delta.prefix(n, ctx)

    def _coefficients(self, n: int, varrho: int, ctx: PrecisionContext) -> list:
        """Per-term constants delta_i / Gamma(theta*i + B + varrho), cached."""
        key = (ctx.digits, varrho)
        with self._lock:
            cache = self._coef_cache.setdefault(key, [])
            if len(cache) < n:
                deltas = self.delta_prefix(n, ctx)
                with ctx.working():
                    th = mpreal(self.theta, ctx)
                    B = self.beta_sum(ctx)
                    for i in range(len(cache), n):
                        g = mp.gamma(th * i + B + varrho)
                        cache.append(_to_mpf(deltas[i]) / g)
            return cache[:n]


def delta_coeffs(
    descs: Sequence[LaplaceSeriesDescriptor],
    i_max: int,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
) -> list:
    """
    Composed coefficients delta_0 .. delta_i_max for a list of summands.

    delta_0 is the product of the leading coefficients, and
    delta_i = (1/i) sum_{h=1}^{i} delta_{i-h} * sum_l phi_{h-1,l}.
    """
    return SumSeries.compose(descs).delta_prefix(i_max + 1, ctx)


def delta_coeffs_iid(
    desc: LaplaceSeriesDescriptor,
    L: int,
    i_max: int,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
) -> list:
    """
    Composed coefficients for L identical summands by the single-stream
    recursion delta_i = (1/(i eta_0)) sum_h delta_{i-h} eta_h (hL + h - i).

    Produces the same values as delta_coeffs on L copies of desc.
    """
    return SumSeries.compose_iid(desc, L).delta_prefix(i_max + 1, ctx)


# ----------------------------------------------------------------------
# Series evaluation
# ----------------------------------------------------------------------
def _series_value(series: SumSeries, x, t0: int, varrho: int, ctx: PrecisionContext) -> mp.mpf:
    if t0 < 1:
        raise ValueError("term count t0 must be positive.")
    coeffs = series._coefficients(t0, varrho, ctx)
    with ctx.working():
        xm = mpreal(x, ctx)
        if xm <= 0:
            raise ValueError("series evaluation requires x > 0, got %r." % (x,))
        th = mpreal(series.theta, ctx)
        B = series.beta_sum(ctx)
        xt = xm ** th
        p = xm ** (B - 1 + varrho)
        terms = []
        for i in range(t0):
            terms.append(coeffs[i] * p)
            p = p * xt
        return +(series.psi_prod(ctx) * mp.fsum(terms))


def sum_density(series: SumSeries, x, t0: int, ctx: PrecisionContext = DEFAULT_CONTEXT) -> mp.mpf:
    """
    Truncated PDF of the sum at x > 0, using the first t0 series terms.

    The distance to the infinite series is bounded by
    truncation_bound(series, x, t0, 0, ctx) wherever that bound is valid.
    Terms are accumulated in working precision with one final rounding.
    """
    return _series_value(series, x, t0, 0, ctx)


def sum_cdf(series: SumSeries, x, t0: int, ctx: PrecisionContext = DEFAULT_CONTEXT) -> mp.mpf:
    """
    Truncated CDF of the sum at x > 0, using the first t0 series terms.

    Returns the raw partial sum; presentation-level clamping to [0, 1]
    is left to callers so the raw value stays available for diagnostics.
    """
    return _series_value(series, x, t0, 1, ctx)


def truncation_bound(
    series: SumSeries,
    x,
    t0: int,
    varrho: int,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
) -> mp.mpf:
    """
    Analytic envelope on the series tail beyond the first t0 terms.

    bound(x) = exp(x**theta) * prod(psi) * x**(theta + varrho - 1 + B)
               * P(t0 - 1, x**theta)

    with P the regularized lower incomplete gamma function. varrho is 0
    for the PDF series and 1 for the CDF series. The bound is monotone
    increasing in x and decreasing in t0, and needs t0 >= 3.
    """
    if varrho not in (0, 1):
        raise ValueError("varrho must be 0 (PDF) or 1 (CDF), got %r." % (varrho,))
    if t0 < 3:
        raise ValueError("truncation_bound requires t0 >= 3, got %r." % (t0,))
    with ctx.working():
        xm = mpreal(x, ctx)
        if xm <= 0:
            raise ValueError("truncation_bound requires x > 0, got %r." % (x,))
        th = mpreal(series.theta, ctx)
        B = series.beta_sum(ctx)
        xt = xm ** th
        p = reg_lower_inc_gamma(t0 - 1, xt, ctx)
        return +(mp.e ** xt * series.psi_prod(ctx) * xm ** (th + varrho - 1 + B) * p)


@dataclass
class TruncationPolicy:
    """
    Target tolerance and evaluation domain for term-count selection.

    Parameters
    ----------
    epsilon : float
        Target absolute error for the truncated series.
    x_max : float
        Largest abscissa the bound must cover.
    varrho : int
        0 for the PDF series, 1 for the CDF series.
    t0 : int, optional
        Explicit term count; when None it is selected automatically.
    term_cap : int
        Upper limit for automatic selection.
    """

    epsilon: float
    x_max: float
    varrho: int = 1
    t0: Optional[int] = None
    term_cap: int = DEFAULT_TERM_CAP

    def __post_init__(self) -> None:
        if not float(self.epsilon) > 0:
            raise ValueError("TruncationPolicy.epsilon must be positive.")
        if not float(self.x_max) > 0:
            raise ValueError("TruncationPolicy.x_max must be positive.")
        if self.varrho not in (0, 1):
            raise ValueError("TruncationPolicy.varrho must be 0 or 1.")
        if self.t0 is not None and self.t0 < 3:
            raise ValueError("TruncationPolicy.t0 must be at least 3.")
        if self.term_cap < 3:
            raise ValueError("TruncationPolicy.term_cap must be at least 3.")


def _term_magnitudes(series, x, lo, hi, varrho, ctx):
    """|psi_prod * delta_i * x**(...) / Gamma(...)| for i in [lo, hi)."""
    coeffs = series._coefficients(hi, varrho, ctx)
    with ctx.working():
        xm = mpreal(x, ctx)
        th = mpreal(series.theta, ctx)
        B = series.beta_sum(ctx)
        psi = series.psi_prod(ctx)
        xt = xm ** th
        p = xm ** (B - 1 + varrho) * xt ** lo
        out = []
        for i in range(lo, hi):
            out.append(abs(coeffs[i] * p * psi))
            p = p * xt
        return out


def tail_terms_ok(
    series: SumSeries,
    x,
    t0: int,
    varrho: int,
    epsilon,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
    window: int = 5,
) -> bool:
    """
    True when the last `window` raw series terms at x are each below
    epsilon/10 in absolute value. This is the empirical half of the dual
    truncation criterion; it guards against streams whose tail the
    analytic bound under-represents.
    """
    lo = max(0, t0 - window)
    mags = _term_magnitudes(series, x, lo, t0, varrho, ctx)
    with ctx.working():
        thresh = mpreal(epsilon, ctx) / 10
        return all(m < thresh for m in mags)


def select_term_count(
    series: SumSeries,
    policy: TruncationPolicy,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
) -> int:
    """
    Smallest t0 satisfying the dual truncation criterion at x_max.

    The criterion is (a) truncation_bound(x_max, t0) <= epsilon and
    (b) the last five raw series terms at x_max are each below
    epsilon/10. Raises when no t0 up to policy.term_cap satisfies both.
    """
    eps = policy.epsilon
    x = policy.x_max
    rho = policy.varrho
    cap = policy.term_cap

    def bound_ok(t):
        with ctx.working():
            return truncation_bound(series, x, t, rho, ctx) <= mpreal(eps, ctx)

    if not bound_ok(cap):
        raise ValueError(
            "domain too wide for tolerance: no term count up to %d brings the "
            "analytic bound below %g at x_max=%g." % (cap, float(eps), float(x))
        )
    lo, hi = 3, cap
    while lo < hi:
        mid = (lo + hi) // 2
        if bound_ok(mid):
            hi = mid
        else:
            lo = mid + 1
    t_bound = lo

    window = 5
    t = max(t_bound, 3)
    flags = []

    def extend_flags(upto):
        if len(flags) < upto:
            mags = _term_magnitudes(series, x, len(flags), upto, rho, ctx)
            with ctx.working():
                thresh = mpreal(eps, ctx) / 10
                flags.extend(m < thresh for m in mags)

    while t <= cap:
        extend_flags(t)
        if all(flags[max(0, t - window):t]):
            return t
        t += 1
    raise ValueError(
        "domain too wide for tolerance: raw series terms at x_max=%g do not "
        "settle below epsilon/10 within %d terms." % (float(x), cap)
    )


def partial_mean_integral(
    series: SumSeries,
    upper,
    t0: int,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
) -> mp.mpf:
    """
    Integral of x * pdf(x) over (0, upper], term by term in closed form:
    each series term integrates to U**(1 + theta*i + B) / (1 + theta*i + B)
    times its coefficient. Used by the mean-additivity check.
    """
    coeffs = series._coefficients(t0, 0, ctx)
    with ctx.working():
        um = mpreal(upper, ctx)
        if um <= 0:
            raise ValueError("partial_mean_integral requires upper > 0.")
        th = mpreal(series.theta, ctx)
        B = series.beta_sum(ctx)
        ut = um ** th
        p = um ** (B + 1)
        terms = []
        for i in range(t0):
            terms.append(coeffs[i] * p / (th * i + B + 1))
            p = p * ut
        return +(series.psi_prod(ctx) * mp.fsum(terms))


@dataclass
class GrowthDiagnostic:
    """Probe of |eta_i| / Gamma(i*theta + epsilon_exp) over a tail window."""

    indices: list
    values: list
    warn: bool


def growth_diagnostic(
    desc: LaplaceSeriesDescriptor,
    epsilon_exp,
    i_probe: int,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
) -> GrowthDiagnostic:
    """
    Heuristic check of the coefficient growth condition.

    Computes r_i = |eta_i| / Gamma(i*theta + epsilon_exp) for
    i in [i_probe/2, i_probe] and sets the warn flag when the last five
    consecutive ratios r_{i+1}/r_i all exceed 1. The flag is advisory
    only; it never blocks evaluation.
    """
    if i_probe < 10:
        raise ValueError("growth_diagnostic requires i_probe >= 10.")
    lo = i_probe // 2
    vals = desc.eta.prefix(i_probe + 1, ctx)
    with ctx.working():
        th = mpreal(desc.theta, ctx)
        eps = mpreal(epsilon_exp, ctx)
        indices = list(range(lo, i_probe + 1))
        ratios = [abs(_to_mpf(vals[i])) / mp.gamma(th * i + eps) for i in indices]
        warn = False
        tail = [r for r in ratios[-6:]]
        if len(tail) == 6 and all(tail[k + 1] > tail[k] for k in range(5)):
            warn = True
    return GrowthDiagnostic(indices=indices, values=ratios, warn=warn)


# ----------------------------------------------------------------------
# Precision selection
# ----------------------------------------------------------------------
def heuristic_digits(t0: int, theta) -> int:
    """
    Conservative working-precision formula driven only by the term count:
    max(50, ceil(0.45 * t0 * theta * log10(max(t0, 2))) + 25).

    Scales hard with t0 and over-provisions for wide domains; prefer
    estimate_required_digits when the streams can be probed.
    """
    return max(50, math.ceil(0.45 * t0 * float(theta) * math.log10(max(t0, 2))) + 25)


def _majorant_log_phi(le: np.ndarray) -> np.ndarray:
    """Log-domain absolute-value version of the phi recursion."""
    n = len(le) - 1
    out = np.full(n, -np.inf)
    if n == 0:
        return out
    out[0] = le[1] - le[0]
    for h in range(1, n):
        a = math.log(h + 1) + le[h + 1]
        conv = logsumexp(le[1:h + 1] + out[h - 1::-1])
        out[h] = np.logaddexp(a, conv) - le[0]
    return out


def _majorant_log_delta(le0_sum: float, lphi_comb: np.ndarray, n: int) -> np.ndarray:
    """Log-domain absolute-value version of the delta recursion."""
    out = np.full(n, -np.inf)
    out[0] = le0_sum
    for i in range(1, n):
        out[i] = logsumexp(out[i - 1::-1] + lphi_comb[:i]) - math.log(i)
    return out


def estimate_required_digits(
    series: SumSeries,
    x_max,
    t_scan: int,
    probe_ctx: PrecisionContext = PrecisionContext(30),
    guard: int = 30,
    floor: int = 50,
) -> int:
    """
    Working precision from a fast float majorant of the composed series.

    Runs the phi and delta recursions with absolute values in the float
    log domain (a true majorant: no cancellation can hide magnitude),
    finds the largest term magnitude at x_max over the first t_scan
    indices, and returns enough digits to absorb that peak plus a guard.
    Streams may attach a log_abs_probe for speed; otherwise the prefix is
    materialized at probe_ctx precision.

    The intermediate terms of these series reach magnitudes like
    exp((x/scale)**theta) while the summed value stays order one, so the
    required digits grow with the evaluation domain, not just with t0.
    """
    n = t_scan + 1
    probes = []
    for d in series.descriptors:
        if d.eta.log_abs_probe is not None:
            probes.append(np.asarray(d.eta.log_abs_probe(n), dtype=float))
        else:
            probes.append(d.eta.default_log_abs(n, probe_ctx))
    lphis = [_majorant_log_phi(p) for p in probes]
    if series.iid:
        lphi_comb = lphis[0] + math.log(series.L)
        le0_sum = series.L * probes[0][0]
        ln_psi = series.L * float(mp.log(mpreal(series.descriptors[0].psi, probe_ctx)))
    else:
        lphi_comb = logsumexp(np.stack(lphis), axis=0)
        le0_sum = float(sum(p[0] for p in probes))
        ln_psi = float(
            sum(mp.log(mpreal(d.psi, probe_ctx)) for d in series.descriptors)
        )
    ldelta = _majorant_log_delta(le0_sum, lphi_comb, t_scan)

    th = float(series.theta)
    B = float(sum(float(d.beta) for d in series.descriptors)) if not series.iid \
        else series.L * float(series.descriptors[0].beta)
    x = float(x_max)
    idx = np.arange(t_scan)
    lx = math.log(x)
    expo = th * idx + B - 1 + (1 if lx > 0 else 0)
    lterms = ln_psi + ldelta + expo * lx - gammaln(th * idx + B)
    peak = float(np.max(lterms))
    peak = max(peak, 0.0)
    digits = math.ceil(peak / math.log(10)) + guard + math.ceil(2 * math.log10(max(t_scan, 10)))
    return max(floor, digits)
