"""
Independent validation oracles.

This module provides reference implementations that deliberately avoid
the transform-series machinery: direct Monte Carlo samplers built from
each model's stochastic construction, float-precision marginal curve
evaluators, empirical CDF comparisons, and a grid-convolution reference
for small sums. Agreement between these and the series engine is the
package's main correctness evidence, so nothing here may import from
sumcore evaluation paths.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gammainc, gammaln

from .fading import (
    AlphaMuMixtureModel,
    GaussianConstructionSpec,
    MftrParams,
    RatioAlphaMuModel,
)
from .specfun import PrecisionContext

ModelLike = Union[AlphaMuMixtureModel, RatioAlphaMuModel]

_FLOAT_CTX = PrecisionContext(30)

# Kolmogorov-Smirnov critical coefficient at the 1% level; the sup
# deviation threshold for n samples is this over sqrt(n).
KS_COEFF_1PCT = 1.63

MAX_CONVOLUTION_COMPONENTS = 6


# ----------------------------------------------------------------------
# Random streams
# ----------------------------------------------------------------------
def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """Independent child generators from one root seed."""
    if count < 1:
        raise ValueError("spawn_rngs needs count >= 1.")
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(c) for c in children]


# ----------------------------------------------------------------------
# Samplers
# ----------------------------------------------------------------------
def sample_alpha_mu(rng: np.random.Generator, count: int,
                    alpha: float, mu: float, r_hat: float) -> np.ndarray:
    """
    Draw from the plain power-gamma envelope.

    The alpha-power of the envelope divided by r_hat**alpha is
    Gamma(mu, 1/mu) distributed, which is the definition used by the
    analytic side, so this sampler is exact.
    """
    g = rng.gamma(shape=float(mu), scale=1.0, size=count)
    return float(r_hat) * (g / float(mu)) ** (1.0 / float(alpha))


def sample_mftr_conditional(rng: np.random.Generator, count: int,
                            params: MftrParams) -> np.ndarray:
    """
    Draw fluctuating two-ray envelopes from the physical construction.

    Conditional on the gamma fluctuation and the uniform phase offset,
    the squared envelope is a scaled noncentral chi-square; sampling the
    conditioning variables explicitly keeps this independent of the
    phase-averaged weight machinery under test.
    """
    k_fac = float(params.K)
    delta = float(params.Delta)
    mu = float(params.mu_bar)
    m = float(params.m)
    gbar = float(params.gamma_bar)
    zeta = rng.gamma(shape=m, scale=1.0 / m, size=count)
    phase = rng.uniform(0.0, np.pi, size=count)
    kappa_c = k_fac * zeta * (1.0 + delta * np.cos(phase))
    # Phase draws can push the conditional dominance epsilon-negative
    # through rounding when delta == 1; clip before using it as a
    # noncentrality.
    kappa_c = np.maximum(kappa_c, 0.0)
    sigma2 = gbar / (2.0 * mu * (1.0 + k_fac))
    x = rng.noncentral_chisquare(2.0 * mu, 2.0 * mu * kappa_c, size=count)
    return np.sqrt(sigma2 * x)


def sample_gaussian_construction(rng: np.random.Generator, count: int,
                                 spec: GaussianConstructionSpec) -> np.ndarray:
    """
    Draw envelopes from the deterministic-offset Gaussian construction.

    Each cluster contributes a (non)central chi-square of the cluster's
    degrees of freedom, scaled so the alpha-power mean equals
    r_hat**alpha. Weights never enter, making this the independent
    oracle for the signed-weight expansion.
    """
    mu = spec.mu_total
    total = np.zeros(count)
    for n in range(spec.N):
        t_n = float(spec.T_n[n])
        s2 = float(spec.sigma2_n[n])
        p_n = sum(float(p) ** 2 for p in spec.P_mn[n]) / s2
        a_n = 2.0 * mu / (spec.N * (t_n + p_n))
        if p_n > 0:
            draw = rng.noncentral_chisquare(t_n, p_n, size=count)
        else:
            draw = rng.chisquare(t_n, size=count)
        total += 0.5 * a_n * draw
    return float(spec.r_hat) * (total / mu) ** (1.0 / float(spec.alpha))


def sample_ratio(rng: np.random.Generator, count: int,
                 model: RatioAlphaMuModel) -> np.ndarray:
    """Draw from the envelope ratio as an explicit quotient."""
    num = sample_alpha_mu(rng, count, model.alpha_M, model.mu_M, model.Omega_M)
    den = sample_alpha_mu(rng, count, model.alpha_Q, model.mu_Q, model.Omega_Q)
    return num / den


def sample_mixture_index(rng: np.random.Generator, count: int,
                         weights: np.ndarray) -> np.ndarray:
    """
    Draw component indices from a truncated weight vector.

    Requires nonnegative weights; constructions with signed weights have
    no mixture-of-distributions reading and need their own sampler.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-d array.")
    if np.any(w < -1e-12):
        raise ValueError(
            "negative mixture weights; this model needs a dedicated "
            "construction sampler rather than index sampling.")
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if not 0.999 < total < 1.001:
        raise ValueError(
            "truncated weights sum to %.6f; extend the prefix before "
            "sampling." % total)
    return rng.choice(w.size, size=count, p=w / total)


def _float_weight_prefix(model: AlphaMuMixtureModel,
                         tail_tol: float = 1e-10,
                         cap: int = 20000) -> np.ndarray:
    """Pull mixture weights as floats until their mass reaches 1."""
    out = []
    acc = 0.0
    for i in range(cap):
        w = float(model.weights.value(i, _FLOAT_CTX))
        out.append(w)
        acc += w
        if acc >= 1.0 - tail_tol and i >= 8:
            return np.array(out)
    raise ValueError(
        "mixture weights did not accumulate to 1 within %d terms." % cap)


def sample_model(rng: np.random.Generator, count: int,
                 model: ModelLike) -> np.ndarray:
    """
    Draw envelopes for any supported model, preferring samplers that do
    not reuse the weight streams under test.
    """
    if isinstance(model, RatioAlphaMuModel):
        return sample_ratio(rng, count, model)
    tag = model.model_tag
    if tag == "mftr":
        return sample_mftr_conditional(rng, count, model.params)
    if tag == "gaussian_construction":
        return sample_gaussian_construction(rng, count, model.params)
    if tag == "aekm":
        raise ValueError(
            "no independent sampler exists for the in-phase/quadrature "
            "family; validate it with the convolution oracle instead.")
    if tag == "alpha_mu":
        return sample_alpha_mu(rng, count, model.alpha, model.T,
                               float(model.r_hat))
    # kappa_mu and generic nonnegative mixtures: index sampling.
    weights = _float_weight_prefix(model)
    idx = sample_mixture_index(rng, count, weights)
    shape = float(model.T) + idx.astype(float)
    g = rng.gamma(shape=shape, scale=1.0, size=count)
    return float(model.r_hat) * (g / float(model.T)) ** (1.0 / float(model.alpha))


def sample_sum(seed: int, count: int,
               components: Sequence[ModelLike]) -> np.ndarray:
    """Draw from the sum of independent components, one RNG stream each."""
    if not components:
        raise ValueError("sample_sum needs at least one component.")
    rngs = spawn_rngs(seed, len(components))
    total = np.zeros(count)
    for rng, comp in zip(rngs, components):
        total += sample_model(rng, count, comp)
    return total


# ----------------------------------------------------------------------
# Empirical comparison
# ----------------------------------------------------------------------
@dataclass
class ComparisonReport:
    """Outcome of one empirical-vs-analytic curve comparison."""

    label: str
    sample_count: int
    max_abs_deviation: float
    threshold: float
    passed: bool
    grid: List[float] = field(default_factory=list, repr=False)
    deviations: List[float] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "sample_count": self.sample_count,
            "max_abs_deviation": self.max_abs_deviation,
            "threshold": self.threshold,
            "passed": self.passed,
            "grid": list(self.grid),
            "deviations": list(self.deviations),
        }


def empirical_cdf(samples: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Empirical CDF of the samples evaluated at each grid point."""
    data = np.sort(np.asarray(samples, dtype=float))
    return np.searchsorted(data, np.asarray(xs, dtype=float),
                           side="right") / data.size


def central_mass_grid(samples: np.ndarray, points: int = 40,
                      coverage: float = 0.98) -> np.ndarray:
    """
    Evenly spaced quantiles covering the central probability mass.

    Comparison grids built this way avoid the far tails, where an
    empirical CDF carries no information at practical sample counts.
    """
    if not 0 < coverage < 1:
        raise ValueError("coverage must be in (0, 1).")
    if points < 2:
        raise ValueError("points must be at least 2.")
    lo = (1.0 - coverage) / 2.0
    qs = np.linspace(lo, 1.0 - lo, points)
    return np.quantile(np.asarray(samples, dtype=float), qs)


def empirical_cdf_compare(samples: np.ndarray,
                          reference_cdf: np.ndarray,
                          xs: np.ndarray,
                          threshold: Optional[float] = None,
                          label: str = "") -> ComparisonReport:
    """
    Sup-deviation test between sample ECDF and a reference CDF.

    With threshold omitted, the 1% Kolmogorov-Smirnov critical value is
    used; pass an explicit threshold to fold in the reference curve's
    own certified error.
    """
    xs = np.asarray(xs, dtype=float)
    ref = np.asarray(reference_cdf, dtype=float)
    if xs.shape != ref.shape:
        raise ValueError("grid and reference CDF shapes differ.")
    ecdf = empirical_cdf(samples, xs)
    dev = np.abs(ecdf - ref)
    n = np.asarray(samples).size
    if threshold is None:
        threshold = KS_COEFF_1PCT / np.sqrt(n)
    worst = float(dev.max())
    threshold = float(threshold)
    return ComparisonReport(label=label, sample_count=int(n),
                            max_abs_deviation=worst,
                            threshold=threshold,
                            passed=worst <= threshold,
                            grid=[float(v) for v in xs],
                            deviations=[float(v) for v in dev])


# ----------------------------------------------------------------------
# Float marginal curves
# ----------------------------------------------------------------------
def _log_power_gamma_pdf(r: np.ndarray, alpha: float, mu: float,
                         omega: float) -> np.ndarray:
    """Log density of the standard power-gamma envelope, -inf at r <= 0."""
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, -np.inf)
    pos = r > 0
    rp = r[pos]
    out[pos] = (np.log(alpha) + (alpha * mu - 1.0) * np.log(rp)
                + mu * np.log(mu) - mu * (rp / omega) ** alpha
                - alpha * mu * np.log(omega) - gammaln(mu))
    return out


def mixture_pdf_grid(model: AlphaMuMixtureModel, xs: np.ndarray,
                     tail_tol: float = 1e-12) -> np.ndarray:
    """
    Density of a mixture model on a float grid.

    Sums the weighted component densities directly; works for signed
    weights too, since only the weight-stream prefix is reused and the
    transform series never enters.
    """
    xs = np.asarray(xs, dtype=float)
    weights = _signed_weight_prefix(model, tail_tol)
    alpha = float(model.alpha)
    t_base = float(model.T)
    r_hat = float(model.r_hat)
    idx = np.arange(weights.size, dtype=float)
    shapes = t_base + idx
    out = np.zeros(xs.shape)
    pos = xs > 0
    xp = xs[pos]
    y = t_base * (xp / r_hat) ** alpha
    log_y = np.log(y)
    # In terms of y, component i is (alpha/r) y**(T+i) e**-y / Gamma(T+i);
    # build its log on the (terms, points) outer product.
    log_f = (shapes[:, None] * log_y[None, :] - y[None, :]
             - gammaln(shapes)[:, None]
             + (np.log(alpha) - np.log(xp))[None, :])
    vals = np.where(np.isfinite(log_f), np.exp(log_f), 0.0)
    out[pos] = weights @ vals
    return out


def mixture_cdf_grid(model: AlphaMuMixtureModel, xs: np.ndarray,
                     tail_tol: float = 1e-12) -> np.ndarray:
    """Distribution function of a mixture model on a float grid."""
    xs = np.asarray(xs, dtype=float)
    weights = _signed_weight_prefix(model, tail_tol)
    alpha = float(model.alpha)
    t_base = float(model.T)
    r_hat = float(model.r_hat)
    shapes = t_base + np.arange(weights.size, dtype=float)
    out = np.zeros(xs.shape)
    pos = xs > 0
    y = t_base * (xs[pos] / r_hat) ** alpha
    out[pos] = weights @ gammainc(shapes[:, None], y[None, :])
    return out


def _signed_weight_prefix(model: AlphaMuMixtureModel,
                          tail_tol: float, cap: int = 20000) -> np.ndarray:
    """
    Float weight prefix long enough that the remaining tail is
    negligible, tolerating signed entries.
    """
    out = []
    acc = 0.0
    quiet = 0
    for i in range(cap):
        w = float(model.weights.value(i, _FLOAT_CTX))
        out.append(w)
        acc += w
        if abs(w) < tail_tol and abs(acc - 1.0) < 100 * tail_tol:
            quiet += 1
            if quiet >= 10:
                return np.array(out)
        else:
            quiet = 0
    raise ValueError(
        "weight prefix did not settle within %d terms." % cap)


def ratio_pdf_grid(model: RatioAlphaMuModel, xs: np.ndarray,
                   inner_points: int = 4097) -> np.ndarray:
    """
    Density of the envelope ratio on a float grid.

    Integrates the closed product form over the denominator by
    trapezoid quadrature, which stays stable far beyond where the
    alternating series is usable in double precision.
    """
    xs = np.asarray(xs, dtype=float)
    a_q = float(model.alpha_Q)
    mu_q = float(model.mu_Q)
    om_q = float(model.Omega_Q)
    # Cover the denominator's mass: beyond q_max the exponential factor
    # is below e**-45.
    q_max = om_q * (45.0 / mu_q) ** (1.0 / a_q)
    qs = np.linspace(0.0, q_max, inner_points)
    log_den = _log_power_gamma_pdf(qs, a_q, mu_q, om_q)
    base = np.where(np.isfinite(log_den), np.exp(log_den), 0.0) * qs

    out = np.zeros(xs.shape)
    pos = np.nonzero(xs > 0)[0]
    chunk = max(1, int(5e6) // inner_points)
    for start in range(0, pos.size, chunk):
        sel = pos[start:start + chunk]
        grid = xs[sel][:, None] * qs[None, :]
        log_num = _log_power_gamma_pdf(grid, float(model.alpha_M),
                                       float(model.mu_M),
                                       float(model.Omega_M))
        num = np.where(np.isfinite(log_num), np.exp(log_num), 0.0)
        out[sel] = np.trapezoid(num * base[None, :], qs, axis=1)
    return out


def pdf_grid(model: ModelLike, xs: np.ndarray) -> np.ndarray:
    """Float marginal density for any supported model."""
    if isinstance(model, RatioAlphaMuModel):
        return ratio_pdf_grid(model, xs)
    return mixture_pdf_grid(model, xs)


def cdf_grid(model: ModelLike, xs: np.ndarray) -> np.ndarray:
    """
    Float marginal distribution for any supported model. The ratio
    branch integrates its density grid, so feed it a grid that starts
    near zero.
    """
    if isinstance(model, RatioAlphaMuModel):
        xs = np.asarray(xs, dtype=float)
        dense = np.linspace(0.0, float(xs.max()), 8193)
        pdf = ratio_pdf_grid(model, dense)
        cdf = np.concatenate(
            ([0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(dense))))
        return np.interp(xs, dense, cdf)
    return mixture_cdf_grid(model, xs)


# ----------------------------------------------------------------------
# Convolution reference
# ----------------------------------------------------------------------
def brennan_convolve(pdfs: Sequence[np.ndarray], dx: float,
                     keep: Optional[int] = None,
                     mass_tol: Optional[float] = 1e-4) -> np.ndarray:
    """
    Density of a sum of independent positive variables by iterated grid
    convolution.

    Each input samples one marginal density on the uniform grid k*dx,
    k = 0..M-1, and must carry essentially all of its mass within that
    window. The result covers the extended grid of the sum; pass keep
    to truncate the returned length. Discretization error compounds with
    the component count, so sums longer than six are refused.

    With mass_tol=None the mass checks and the final normalization are
    skipped. Use that when the marginals are deliberately cut at the
    window edge: for positive summands the convolution below the edge
    only sees marginal values below it, so those outputs stay exact and
    only the far grid (and total mass) are short.
    """
    if not pdfs:
        raise ValueError("need at least one marginal density.")
    if len(pdfs) > MAX_CONVOLUTION_COMPONENTS:
        raise ValueError(
            "convolution reference refuses more than %d components; "
            "use the Monte Carlo oracle for longer sums."
            % MAX_CONVOLUTION_COMPONENTS)
    if dx <= 0:
        raise ValueError("dx must be positive.")
    arrays = [np.asarray(p, dtype=float) for p in pdfs]
    for i, arr in enumerate(arrays):
        if arr.ndim != 1 or arr.size < 8:
            raise ValueError("marginal %d is not a usable 1-d grid." % i)
        mass = np.trapezoid(arr, dx=dx)
        if mass_tol is not None and abs(mass - 1.0) > 50 * mass_tol:
            raise ValueError(
                "marginal %d holds mass %.6f on its grid; widen the "
                "window or refine the step." % (i, mass))

    acc = arrays[0]
    for nxt in arrays[1:]:
        full = fftconvolve(acc, nxt) * dx
        # Rectangle-rule convolution counts both endpoints with full
        # weight; shave the halves to recover trapezoid accuracy.
        m = min(full.size, nxt.size)
        full[:m] -= 0.5 * dx * acc[0] * nxt[:m]
        m = min(full.size, acc.size)
        full[:m] -= 0.5 * dx * nxt[0] * acc[:m]
        acc = np.clip(full, 0.0, None)

    if mass_tol is not None:
        mass = np.trapezoid(acc, dx=dx)
        if abs(mass - 1.0) > mass_tol:
            raise ValueError(
                "convolved density holds mass %.6f; the component grids do "
                "not support the sum adequately." % mass)
        acc = acc / mass
    if keep is not None:
        acc = acc[:keep]
    return acc


def brennan_cdf(pdf_values: np.ndarray, dx: float) -> np.ndarray:
    """Cumulative trapezoid integral of a convolution-reference density."""
    pdf_values = np.asarray(pdf_values, dtype=float)
    steps = (pdf_values[1:] + pdf_values[:-1]) * 0.5 * dx
    return np.concatenate(([0.0], np.cumsum(steps)))
