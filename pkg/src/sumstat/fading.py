"""
fading.py

Distribution models for positive envelope and ratio random variables,
expressed in a shared mixture form, plus the conversion of each model
into the Laplace coefficient descriptor consumed by the series engine.

Every envelope model here is a countable mixture of power-gamma
components: conditional on an index i, the variable R has density

    f_i(r) = alpha * T**(T+i) * r**(alpha*(T+i)-1)
             * exp(-T * (r/r_hat)**alpha) / (r_hat**(alpha*(T+i)) * Gamma(T+i))

and the model supplies the mixture weights phi_i as a CoefficientStream.
The scale convention throughout is that r_hat enters through the
exponential as T*(r/r_hat)**alpha; an AlphaMuMixtureModel stores r_hat
on this convention, and mixture_to_series applies the matching rescale
when it builds transform coefficients.

The ratio family (RatioAlphaMuModel) covers M/Q for independent
power-gamma envelopes M and Q and converts directly to a coefficient
descriptor without a mixture representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import mpmath as mp
import numpy as np
from mpmath.libmp import from_int, mpf_div, mpf_mul, mpf_neg, mpf_sum, round_nearest
from scipy.special import gammaln, logsumexp

from sumstat.specfun import (
    DEFAULT_CONTEXT,
    PrecisionContext,
    gauss_2f1,
    mpreal,
    reg_lower_inc_gamma,
)
from sumstat.sumcore import CoefficientStream, LaplaceSeriesDescriptor

__all__ = [
    "MODEL_TAGS",
    "MftrParams",
    "AekmParams",
    "GaussianConstructionSpec",
    "AlphaMuMixtureModel",
    "RatioAlphaMuModel",
    "normalize_aekm_params",
    "mftr_weight_stream",
    "mftr_weights",
    "mftr_weight_explicit",
    "aekm_weight_stream",
    "aekm_weights",
    "gaussian_construction_weight_stream",
    "gaussian_construction_weights",
    "poisson_weight_stream",
    "mftr_model",
    "aekm_model",
    "alpha_mu_model",
    "kappa_mu_model",
    "gaussian_construction_model",
    "fisher_snedecor_model",
    "balanced_ratio_model",
    "mixture_marginal_pdf",
    "mixture_marginal_cdf",
    "ratio_marginal_pdf",
    "mixture_to_series",
    "ratio_to_series",
    "marginal_mean",
    "adaptive_weight_sum",
]

MODEL_TAGS = frozenset({
    "generic", "alpha_mu", "kappa_mu", "mftr", "aekm", "gaussian_construction",
})

# Clamp for the fully correlated edge of the MFTR fluctuation parameter,
# where the closed weight formulas lose an integrable endpoint.
_DELTA_CLAMP = 1e-8
# Relative nudge applied to the aekm shape ratio when its two spread
# parameters coincide and an internal expansion argument would diverge.
_AEKM_PERTURB = 1e-6
# Derived scale constants (r_hat, transform prefactors) are evaluated once
# at this fixed precision so they stay exact under any later working
# precision instead of bottoming out at float accuracy.
_SCALE_CTX = PrecisionContext(160)


def _to_mpf(v):
    if isinstance(v, mp.mpf):
        return v
    if isinstance(v, Fraction):
        return mp.mpf(v.numerator) / v.denominator
    return mp.mpf(v)


# ----------------------------------------------------------------------
# Parameter containers
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class MftrParams:
    """
    Parameters of the fluctuating two-ray envelope family.

    K is the ratio of dominant to diffuse power, Delta in [0, 1] sets how
    unequal the two dominant components are allowed to be, mu_bar counts
    diffuse clusters, m is the shape of the gamma fluctuation on the
    dominant power, and gamma_bar is the mean of the squared envelope.
    """

    K: float
    Delta: float
    mu_bar: float
    m: float
    gamma_bar: float

    def __post_init__(self) -> None:
        if not self.K > 0:
            raise ValueError("MftrParams.K must be positive.")
        if not 0 <= self.Delta <= 1:
            raise ValueError("MftrParams.Delta must lie in [0, 1].")
        for name in ("mu_bar", "m", "gamma_bar"):
            if not getattr(self, name) > 0:
                raise ValueError("MftrParams.%s must be positive." % name)

    @property
    def delta_eff(self) -> float:
        """Delta clamped away from the fully correlated endpoint."""
        return min(self.Delta, 1.0 - _DELTA_CLAMP)


@dataclass(frozen=True)
class AekmParams:
    """
    Parameters of the generalized in-phase/quadrature envelope family.

    alpha_bar is the envelope power exponent, eta_bar the quadrature to
    in-phase power ratio, kappa the dominant to diffuse power ratio,
    mu_bar the cluster count, p the in-phase/quadrature cluster asymmetry,
    q the split of dominant power between the two branches, and r_bar the
    root-mean-alpha_bar envelope scale. delta_aux and xi_bar are derived
    auxiliaries; leave them None to have normalize_aekm_params fill them.
    """

    alpha_bar: float
    eta_bar: float
    kappa: float
    mu_bar: float
    p: float
    q: float
    r_bar: float
    delta_aux: Optional[float] = None
    xi_bar: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("alpha_bar", "eta_bar", "kappa", "mu_bar", "p", "q", "r_bar"):
            if not getattr(self, name) > 0:
                raise ValueError("AekmParams.%s must be positive." % name)


def normalize_aekm_params(params: AekmParams) -> AekmParams:
    """
    Canonical orientation and derived auxiliaries for aekm parameters.

    The weight expansion converges only when the quadrature branch does
    not dominate too strongly; when eta_bar/p >= 2 the two branches are
    relabeled (eta_bar, p, q) -> (1/eta_bar, 1/p, 1/q), which describes
    the same envelope. Supplied auxiliaries are transformed accordingly
    (delta_aux -> delta_aux/(p*q), xi_bar -> xi_bar*p/eta_bar); missing
    ones are derived from the normalized parameters. Exact equality
    eta_bar == p would make an internal expansion argument infinite, so
    eta_bar is nudged by a relative 1e-6 first.
    """
    eta, p, q = params.eta_bar, params.p, params.q
    d_aux, xi = params.delta_aux, params.xi_bar
    if eta == p:
        nudge = (Fraction(1_000_001, 1_000_000) if isinstance(eta, Fraction)
                 else 1.0 + _AEKM_PERTURB)
        eta = eta * nudge
        d_aux = xi = None
    if eta / p >= 2:
        if d_aux is not None:
            d_aux = d_aux / (p * q)
        if xi is not None:
            xi = xi * p / eta
        eta, p, q = 1 / eta, 1 / p, 1 / q
    if d_aux is None:
        d_aux = (1 + p) * (1 + eta * q) / (1 + eta)
    if xi is None:
        xi = (1 + params.kappa) * (1 + eta) / (1 + p)
    return replace(params, eta_bar=eta, p=p, q=q, delta_aux=d_aux, xi_bar=xi)


@dataclass(frozen=True)
class GaussianConstructionSpec:
    """
    Direct construction of an envelope from N groups of Gaussian draws.

    Group n contributes T_n squared Gaussians of variance sigma2_n, with
    fixed offsets P_mn[n][m] (deterministic line-of-sight components) on
    the first len(P_mn[n]) of them. The envelope is the alpha-th root of
    the rescaled total power; r_hat sets its scale on the mixture
    convention used by AlphaMuMixtureModel.
    """

    N: int
    T_n: Sequence[float]
    sigma2_n: Sequence[float]
    P_mn: Sequence[Sequence[float]]
    alpha: float
    r_hat: float

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("GaussianConstructionSpec.N must be at least 1.")
        for name in ("T_n", "sigma2_n", "P_mn"):
            if len(getattr(self, name)) != self.N:
                raise ValueError(
                    "GaussianConstructionSpec.%s must have N=%d entries." % (name, self.N))
        if any(not t > 0 for t in self.T_n):
            raise ValueError("GaussianConstructionSpec.T_n entries must be positive.")
        if any(not s > 0 for s in self.sigma2_n):
            raise ValueError("GaussianConstructionSpec.sigma2_n entries must be positive.")
        for n, (t, offs) in enumerate(zip(self.T_n, self.P_mn)):
            if len(offs) > int(t):
                raise ValueError(
                    "GaussianConstructionSpec.P_mn[%d] has more offsets than draws." % n)
        if not self.alpha > 0 or not self.r_hat > 0:
            raise ValueError("GaussianConstructionSpec alpha and r_hat must be positive.")

    @property
    def mu_total(self) -> float:
        """Mixture base shape: half the total number of Gaussian draws."""
        return 0.5 * float(sum(self.T_n))


@dataclass(frozen=True)
class AlphaMuMixtureModel:
    """
    A positive envelope expressed as a gamma-type mixture.

    alpha is the power exponent, T the base shape, r_hat the scale on the
    convention exp(-T*(r/r_hat)**alpha), weights the mixture weight
    stream, and model_tag identifies the constructor family (one of
    MODEL_TAGS) for samplers and validators.
    """

    alpha: float
    T: float
    r_hat: float
    weights: CoefficientStream
    model_tag: str = "generic"
    params: object = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("AlphaMuMixtureModel.alpha must be positive.")
        if not self.T > 0:
            raise ValueError("AlphaMuMixtureModel.T must be positive.")
        if not self.r_hat > 0:
            raise ValueError("AlphaMuMixtureModel.r_hat must be positive.")
        if self.model_tag not in MODEL_TAGS:
            raise ValueError(
                "unknown model_tag %r; expected one of %s."
                % (self.model_tag, sorted(MODEL_TAGS)))


@dataclass(frozen=True)
class RatioAlphaMuModel:
    """
    Ratio Z = M/Q of two independent power-gamma envelopes.

    The numerator has exponent alpha_M, shape mu_M, scale Omega_M and the
    denominator alpha_Q, mu_Q, Omega_Q. The coefficient expansion of the
    ratio density requires alpha_M strictly below alpha_Q.
    """

    alpha_M: float
    alpha_Q: float
    mu_M: float
    mu_Q: float
    Omega_M: float
    Omega_Q: float

    def __post_init__(self) -> None:
        for name in ("alpha_M", "alpha_Q", "mu_M", "mu_Q", "Omega_M", "Omega_Q"):
            if not getattr(self, name) > 0:
                raise ValueError("RatioAlphaMuModel.%s must be positive." % name)
        if not self.alpha_M < self.alpha_Q:
            raise ValueError(
                "ratio expansion requires alpha_M < alpha_Q strictly; got "
                "alpha_M=%r, alpha_Q=%r." % (self.alpha_M, self.alpha_Q))

    def rho_tilde_hp(self, ctx: PrecisionContext = DEFAULT_CONTEXT) -> mp.mpf:
        """Composite inverse-scale of the ratio at working precision."""
        with ctx.working():
            return (mpreal(self.Omega_Q, ctx) * mpreal(self.mu_M, ctx) ** (1 / mpreal(self.alpha_M, ctx))
                    / (mpreal(self.Omega_M, ctx) * mpreal(self.mu_Q, ctx) ** (1 / mpreal(self.alpha_Q, ctx))))

    @property
    def rho_tilde(self) -> float:
        """Float view of the composite inverse-scale."""
        return float(self.rho_tilde_hp(PrecisionContext(30)))


# ----------------------------------------------------------------------
# MFTR weights
# ----------------------------------------------------------------------
def _mftr_node_count(params: MftrParams, digits: int) -> int:
    """
    Quadrature size for the phase-average weight accelerator.

    The integrand, viewed as a function of cos(u), is analytic inside the
    ellipse through its nearest pole; the node count follows from the
    geometric convergence rate on that ellipse.
    """
    delta = float(params.delta_eff)
    if delta < 1e-12:
        return 4
    w_star = (float(params.m) / (float(params.K) * float(params.mu_bar)) + 1.0) / delta
    rho_ell = w_star + math.sqrt(w_star * w_star - 1.0)
    return int(math.ceil(digits * math.log(10) / (2.0 * math.log(rho_ell)))) + 12


def mftr_weight_stream(params: MftrParams) -> CoefficientStream:
    """
    Mixture weight stream of the fluctuating two-ray envelope.

    Each weight is the phase average over u in (0, pi) of a negative
    binomial mass with success scale c(u) = K*mu_bar*(1 + Delta*cos(u)),
    evaluated by Chebyshev-weighted quadrature with the node count chosen
    from the working precision. All weights are positive and sum to one.
    """
    def factory(ctx):
        n = _mftr_node_count(params, ctx.digits)
        m = mpreal(params.m, ctx)
        c_base = mpreal(params.K, ctx) * mpreal(params.mu_bar, ctx)
        delta = mpreal(params.delta_eff, ctx)
        nodes = [c_base * (1 + delta * mp.cospi(mp.mpf(2 * k - 1) / (2 * n)))
                 for k in range(1, n + 1)]
        vals = [(m / (c + m)) ** m for c in nodes]
        j = 0
        while True:
            yield mp.fsum(vals) / n
            vals = [v * c * (j + m) / ((j + 1) * (c + m))
                    for v, c in zip(vals, nodes)]
            j += 1

    m_f = float(params.m)
    c_max = float(params.K) * float(params.mu_bar) * (1.0 + float(params.delta_eff))

    def probe(n):
        j = np.arange(n, dtype=float)
        ln_nb = (m_f * math.log(m_f) + j * math.log(c_max)
                 - (j + m_f) * math.log(c_max + m_f)
                 + gammaln(j + m_f) - gammaln(m_f) - gammaln(j + 1))
        return np.minimum(ln_nb, 0.0)

    return CoefficientStream(factory, log_abs_probe=probe)


def mftr_weights(params: MftrParams, i_max: int, ctx: PrecisionContext = DEFAULT_CONTEXT) -> list:
    """First i_max + 1 mixture weights of the fluctuating two-ray model."""
    return mftr_weight_stream(params).prefix(i_max + 1, ctx)


def mftr_weight_explicit(params: MftrParams, i: int, ctx: PrecisionContext = DEFAULT_CONTEXT) -> mp.mpf:
    """
    Single mixture weight by the closed hypergeometric formula.

    Slower than the stream (one Gauss hypergeometric evaluation per inner
    term) but structurally independent of it; used for cross-checks.
    """
    with ctx.working(10):
        m = mpreal(params.m, ctx)
        km = mpreal(params.K, ctx) * mpreal(params.mu_bar, ctx)
        delta = mpreal(params.delta_eff, ctx)
        one_m = 1 - delta
        denom = one_m * km + m
        z = -2 * delta * km / denom
        pref = (m ** m * one_m ** i * km ** i * mp.gamma(i + m)
                / (mp.sqrt(mp.pi) * mp.factorial(i) * mp.gamma(m) * denom ** (i + m)))
        total = mp.mpf(0)
        for qq in range(i + 1):
            t = (mp.binomial(i, qq) * mp.gamma(qq + mp.mpf(1) / 2) / mp.factorial(qq)
                 * (2 * delta / one_m) ** qq
                 * gauss_2f1(i + m, qq + mp.mpf(1) / 2, qq + 1, z, ctx))
            total += t
        return +(pref * total)


# ----------------------------------------------------------------------
# aekm weights
# ----------------------------------------------------------------------
def aekm_weight_stream(params: AekmParams) -> CoefficientStream:
    """
    Mixture weight stream of the in-phase/quadrature envelope family.

    Parameters are normalized first (branch relabeling and auxiliary
    derivation; see normalize_aekm_params). The weights combine a
    generalized Laguerre sequence in the branch imbalance with a Poisson
    kernel in the dominant power, streamed with O(i) work per index.
    """
    base = normalize_aekm_params(params)

    def factory(ctx):
        eta = mpreal(base.eta_bar, ctx)
        kap = mpreal(base.kappa, ctx)
        mu = mpreal(base.mu_bar, ctx)
        p = mpreal(base.p, ctx)
        q = mpreal(base.q, ctx)
        d_aux = mpreal(base.delta_aux, ctx)
        nu = mu / (p + 1) - 1
        x_star = eta * kap * mu / (d_aux * (eta - p))
        g = kap * mu * p ** 2 * q / d_aux
        c0 = (mp.e ** (-kap * mu * (p * q + 1) / d_aux)
              * eta ** mu * (p / eta) ** (mu * p / (p + 1)))
        pk = p - eta
        a_vals = []
        b_vals = []
        lag_prev = None
        lag_curr = None
        i = 0
        while True:
            k = i
            if k == 0:
                lag_curr = mp.mpf(1)
                a_vals.append(mp.mpf(1))
            elif k == 1:
                lag_prev, lag_curr = lag_curr, 1 + nu - x_star
                a_vals.append(pk * lag_curr)
            else:
                nxt = ((2 * (k - 1) + nu + 1 - x_star) * lag_curr
                       - (k - 1 + nu) * lag_prev) / k
                lag_prev, lag_curr = lag_curr, nxt
                a_vals.append(pk ** k * lag_curr)
            b_vals.append(g ** i / mp.factorial(i))
            conv = mp.fsum(a_vals[k_] * b_vals[i - k_] for k_ in range(i + 1))
            yield +(c0 * p ** (-(mu + i)) * conv)
            i += 1

    b = base
    nu_f = b.mu_bar / (b.p + 1.0) - 1.0
    x_abs = abs(b.eta_bar * b.kappa * b.mu_bar / (b.delta_aux * (b.eta_bar - b.p)))
    g_f = b.kappa * b.mu_bar * b.p ** 2 * b.q / b.delta_aux
    lc_abs = (-b.kappa * b.mu_bar * (b.p * b.q + 1.0) / b.delta_aux
              + b.mu_bar * math.log(b.eta_bar)
              + (b.mu_bar * b.p / (b.p + 1.0)) * (math.log(b.p) - math.log(b.eta_bar)))
    l_pk = math.log(abs(b.p - b.eta_bar))

    def probe(n):
        # Majorant Laguerre recurrence with all-positive coefficients.
        llag = np.empty(n)
        llag[0] = 0.0
        if n > 1:
            llag[1] = math.log(1.0 + abs(nu_f) + x_abs)
        for k in range(1, n - 1):
            t1 = math.log((2 * k + abs(nu_f) + 1 + x_abs) / (k + 1)) + llag[k]
            kn = abs(k + nu_f)
            t2 = (math.log(kn / (k + 1)) + llag[k - 1]) if kn > 0 else -np.inf
            llag[k + 1] = np.logaddexp(t1, t2)
        ks = np.arange(n, dtype=float)
        la = ks * l_pk + llag
        if g_f > 0:
            lb = ks * math.log(g_f) - gammaln(ks + 1)
        else:
            lb = np.full(n, -np.inf)
            lb[0] = 0.0
        out = np.empty(n)
        for i in range(n):
            conv = logsumexp(la[:i + 1] + lb[i::-1])
            out[i] = lc_abs - (b.mu_bar + i) * math.log(b.p) + conv
        return out

    return CoefficientStream(factory, log_abs_probe=probe)


def aekm_weights(params: AekmParams, i_max: int, ctx: PrecisionContext = DEFAULT_CONTEXT) -> list:
    """First i_max + 1 mixture weights of the in-phase/quadrature model."""
    return aekm_weight_stream(params).prefix(i_max + 1, ctx)


# ----------------------------------------------------------------------
# Gaussian construction weights
# ----------------------------------------------------------------------
def gaussian_construction_weight_stream(spec: GaussianConstructionSpec) -> CoefficientStream:
    """
    Mixture weight stream for the direct Gaussian construction.

    The squared envelope is a weighted sum of noncentral chi-square
    variables; matching its Laplace transform against the mixture form
    yields a power-series composition: an auxiliary sequence c_j built by
    a log-derivative recursion, then weights
    phi_i = ((-mu)**i / i!) * sum_{j>=i} j! c_j / (j-i)!. Weights may be
    negative; they still sum to one.
    """
    def factory(ctx):
        N = spec.N
        mu = mpreal(spec.mu_total, ctx)
        alpha = mpreal(spec.alpha, ctx)
        r_hat_a = mpreal(spec.r_hat, ctx) ** alpha
        T = [mpreal(t, ctx) for t in spec.T_n]
        s2 = [mpreal(s, ctx) for s in spec.sigma2_n]
        P = [mp.fsum(mpreal(o, ctx) ** 2 for o in offs) / s2[n]
             for n, offs in enumerate(spec.P_mn)]
        v = [r_hat_a / (s2[n] * N * (T[n] + P[n])) for n in range(N)]
        a = [2 * v[n] * s2[n] * mu / r_hat_a for n in range(N)]
        B = [a[n] * (mu - 1) + 1 for n in range(N)]
        if any(b == 0 for b in B):
            raise ValueError(
                "singular construction: a group scale hits the expansion pole; "
                "adjust sigma2_n or T_n.")
        w = [1 - a[n] for n in range(N)]
        c0 = mu ** mu
        for n in range(N):
            c0 *= B[n] ** (-T[n] / 2)
        c0 *= mp.e ** (-mp.fsum((mu - 1) * a[n] * P[n] / (2 * B[n]) for n in range(N)))

        c_vals = [c0]
        d_vals = []

        def extend_c():
            j = len(c_vals)
            while len(d_vals) < j:
                ll = len(d_vals) + 1
                d_vals.append(mp.fsum(
                    (T[n] / 2) * (w[n] / B[n]) ** ll
                    - (ll * mu * a[n] * P[n] / 2) * w[n] ** (ll - 1) / B[n] ** (ll + 1)
                    for n in range(N)))
            c_vals.append(mp.fsum(d_vals[l - 1] * c_vals[j - l]
                                  for l in range(1, j + 1)) / j)

        tol_stop = mp.mpf(10) ** (-(ctx.digits + 5))
        i = 0
        while True:
            pref = (-mu) ** i / mp.factorial(i)
            total = mp.mpf(0)
            j = i
            quiet = 0
            while True:
                while len(c_vals) <= j:
                    extend_c()
                inc = c_vals[j] * mp.factorial(j) / mp.factorial(j - i)
                total += inc
                if abs(inc) < tol_stop * (1 + abs(total)):
                    quiet += 1
                    if quiet >= 5:
                        break
                else:
                    quiet = 0
                j += 1
            yield +(pref * total)
            i += 1

    def probe(n):
        N = spec.N
        mu = spec.mu_total
        r_a = float(spec.r_hat) ** float(spec.alpha)
        T = [float(t) for t in spec.T_n]
        s2 = [float(s) for s in spec.sigma2_n]
        P = [sum(float(o) ** 2 for o in offs) / s2[k]
             for k, offs in enumerate(spec.P_mn)]
        v = [r_a / (s2[k] * N * (T[k] + P[k])) for k in range(N)]
        a = [2 * v[k] * s2[k] * mu / r_a for k in range(N)]
        B = [a[k] * (mu - 1) + 1 for k in range(N)]
        w = [1 - a[k] for k in range(N)]
        lc0 = (mu * math.log(mu)
               + sum(-T[k] / 2 * math.log(abs(B[k])) for k in range(N))
               + sum(abs((mu - 1) * a[k] * P[k] / (2 * B[k])) for k in range(N)))
        lw = [math.log(abs(w[k])) if w[k] != 0 else -math.inf for k in range(N)]
        lb = [math.log(abs(B[k])) for k in range(N)]

        def _exp0(v):
            # Guarded exponential: powers of w and B are only ever needed
            # as ratios, so a huge exponent means the majorant truly
            # saturates and inf is the honest answer.
            return math.inf if v > 700.0 else math.exp(v)

        c_abs = [math.exp(lc0)]
        d_abs = []
        J = n + 600
        for j in range(1, J):
            while len(d_abs) < j:
                ll = len(d_abs) + 1
                tot = 0.0
                for k in range(N):
                    tot += abs(T[k] / 2) * _exp0(ll * (lw[k] - lb[k]))
                    coef = abs(ll * mu * a[k] * P[k] / 2)
                    if coef:
                        lnum = (ll - 1) * lw[k] if ll > 1 else 0.0
                        tot += coef * _exp0(lnum - (ll + 1) * lb[k])
                d_abs.append(tot)
            c_abs.append(sum(d_abs[l - 1] * c_abs[j - l] for l in range(1, j + 1)) / j)
        lc_abs = np.array([math.log(c) if c > 0 else -np.inf for c in c_abs])
        js = np.arange(J, dtype=float)
        out = np.empty(n)
        lgj = gammaln(js + 1)
        for i in range(n):
            tail = lgj[i:] + lc_abs[i:] - gammaln(js[i:] - i + 1)
            out[i] = i * math.log(mu) - float(gammaln(i + 1)) + logsumexp(tail)
        return out

    return CoefficientStream(factory, log_abs_probe=probe)


def gaussian_construction_weights(
    spec: GaussianConstructionSpec,
    i_max: int,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
) -> list:
    """First i_max + 1 mixture weights of the Gaussian construction."""
    return gaussian_construction_weight_stream(spec).prefix(i_max + 1, ctx)


def poisson_weight_stream(kappa: float, mu: float) -> CoefficientStream:
    """Poisson mixture weights exp(-kappa*mu) (kappa*mu)**i / i!."""
    if not kappa >= 0:
        raise ValueError("poisson_weight_stream requires kappa >= 0.")
    if not mu > 0:
        raise ValueError("poisson_weight_stream requires mu > 0.")

    def factory(ctx):
        lam = mpreal(kappa, ctx) * mpreal(mu, ctx)
        val = mp.e ** (-lam)
        i = 0
        while True:
            yield val
            val = val * lam / (i + 1)
            i += 1

    lam_f = float(kappa) * float(mu)

    def probe(n):
        i = np.arange(n, dtype=float)
        if lam_f == 0.0:
            out = np.full(n, -np.inf)
            out[0] = 0.0
            return out
        return -lam_f + i * math.log(lam_f) - gammaln(i + 1)

    return CoefficientStream(factory, log_abs_probe=probe)


# ----------------------------------------------------------------------
# Model constructors
# ----------------------------------------------------------------------
def mftr_model(params: MftrParams) -> AlphaMuMixtureModel:
    """Mixture model of the fluctuating two-ray envelope (exponent 2)."""
    with _SCALE_CTX.working():
        r_hat = mp.sqrt(mpreal(params.gamma_bar, _SCALE_CTX)
                        / (mpreal(params.K, _SCALE_CTX) + 1))
    return AlphaMuMixtureModel(alpha=2.0, T=params.mu_bar, r_hat=r_hat,
                               weights=mftr_weight_stream(params),
                               model_tag="mftr", params=params)


def aekm_model(params: AekmParams) -> AlphaMuMixtureModel:
    """Mixture model of the in-phase/quadrature envelope family."""
    base = normalize_aekm_params(params)
    with _SCALE_CTX.working():
        ab = mpreal(base.alpha_bar, _SCALE_CTX)
        r_hat = (mpreal(base.eta_bar, _SCALE_CTX)
                 * mpreal(base.r_bar, _SCALE_CTX) ** ab
                 / (mpreal(base.xi_bar, _SCALE_CTX) * mpreal(base.p, _SCALE_CTX))
                 ) ** (1 / ab)
    return AlphaMuMixtureModel(alpha=base.alpha_bar, T=base.mu_bar, r_hat=r_hat,
                               weights=aekm_weight_stream(base),
                               model_tag="aekm", params=base)


def alpha_mu_model(alpha: float, mu: float, r_hat: float) -> AlphaMuMixtureModel:
    """
    Plain power-gamma envelope: a single mixture component with weight 1
    on index 0. r_hat is the alpha-root-mean scale, E[R**alpha]**(1/alpha).
    """
    def factory(ctx):
        yield mp.mpf(1)
        while True:
            yield mp.mpf(0)

    def probe(n):
        out = np.full(n, -np.inf)
        out[0] = 0.0
        return out

    return AlphaMuMixtureModel(alpha=alpha, T=mu, r_hat=r_hat,
                               weights=CoefficientStream(factory, log_abs_probe=probe),
                               model_tag="alpha_mu")


def kappa_mu_model(kappa: float, mu: float, r_hat_rms: float) -> AlphaMuMixtureModel:
    """
    Envelope with a fixed dominant component over diffuse clusters
    (exponent 2): Poisson mixture weights with rate kappa*mu. r_hat_rms
    is the root-mean-square envelope, rescaled internally to the mixture
    convention by 1/sqrt(1 + kappa).
    """
    with _SCALE_CTX.working():
        r_hat = mpreal(r_hat_rms, _SCALE_CTX) / mp.sqrt(1 + mpreal(kappa, _SCALE_CTX))
    return AlphaMuMixtureModel(alpha=2.0, T=mu, r_hat=r_hat,
                               weights=poisson_weight_stream(kappa, mu),
                               model_tag="kappa_mu")


def gaussian_construction_model(spec: GaussianConstructionSpec) -> AlphaMuMixtureModel:
    """Mixture model for the direct Gaussian construction."""
    return AlphaMuMixtureModel(alpha=float(spec.alpha), T=spec.mu_total,
                               r_hat=float(spec.r_hat),
                               weights=gaussian_construction_weight_stream(spec),
                               model_tag="gaussian_construction", params=spec)


_RATIO_EXPONENT_GAP = 1e-3


def fisher_snedecor_model(mu_M: float, mu_Q: float, Omega_M: float, Omega_Q: float) -> RatioAlphaMuModel:
    """
    Near Fisher-Snedecor ratio: both exponents at 2 up to the small split
    the expansion needs (alpha_Q = 2 + 1e-3).
    """
    return RatioAlphaMuModel(alpha_M=2.0, alpha_Q=2.0 + _RATIO_EXPONENT_GAP,
                             mu_M=mu_M, mu_Q=mu_Q,
                             Omega_M=Omega_M, Omega_Q=Omega_Q)


def balanced_ratio_model(alpha: float, mu_M: float, mu_Q: float,
                         Omega_M: float, Omega_Q: float) -> RatioAlphaMuModel:
    """
    Ratio with a common nominal exponent alpha on both sides, realized as
    alpha_M = alpha*(1 - 1e-3) to satisfy the strict ordering.
    """
    return RatioAlphaMuModel(alpha_M=float(alpha) * (1.0 - _RATIO_EXPONENT_GAP),
                             alpha_Q=float(alpha), mu_M=mu_M, mu_Q=mu_Q,
                             Omega_M=Omega_M, Omega_Q=Omega_Q)


# ----------------------------------------------------------------------
# Marginal evaluation
# ----------------------------------------------------------------------
def mixture_marginal_pdf(model: AlphaMuMixtureModel, r, t: int,
                         ctx: PrecisionContext = DEFAULT_CONTEXT) -> mp.mpf:
    """
    Density of the mixture envelope at r > 0 using the first t weights.

    Component densities are generated by a single forward recurrence in
    the index, so the cost is one exponential plus O(t) multiplies.
    """
    if t < 1:
        raise ValueError("mixture_marginal_pdf requires t >= 1.")
    phis = model.weights.prefix(t, ctx)
    with ctx.working():
        rm = mpreal(r, ctx)
        if rm <= 0:
            raise ValueError("mixture_marginal_pdf requires r > 0.")
        alpha = mpreal(model.alpha, ctx)
        T = mpreal(model.T, ctx)
        r_hat = mpreal(model.r_hat, ctx)
        y = T * (rm / r_hat) ** alpha
        g = alpha / rm * y ** T * mp.e ** (-y) / mp.gamma(T)
        terms = []
        for i in range(t):
            terms.append(_to_mpf(phis[i]) * g)
            g = g * y / (T + i)
        return +mp.fsum(terms)


def mixture_marginal_cdf(model: AlphaMuMixtureModel, r, t: int,
                         ctx: PrecisionContext = DEFAULT_CONTEXT) -> mp.mpf:
    """
    Distribution function of the mixture envelope at r > 0 using the
    first t weights: a weight-averaged regularized lower incomplete
    gamma, advanced across the index by its one-step recurrence.
    """
    if t < 1:
        raise ValueError("mixture_marginal_cdf requires t >= 1.")
    phis = model.weights.prefix(t, ctx)
    with ctx.working():
        rm = mpreal(r, ctx)
        if rm <= 0:
            raise ValueError("mixture_marginal_cdf requires r > 0.")
        alpha = mpreal(model.alpha, ctx)
        T = mpreal(model.T, ctx)
        r_hat = mpreal(model.r_hat, ctx)
        y = T * (rm / r_hat) ** alpha
        pval = reg_lower_inc_gamma(T, y, ctx)
        step = y ** T * mp.e ** (-y) / mp.gamma(T + 1)
        terms = []
        for i in range(t):
            terms.append(_to_mpf(phis[i]) * pval)
            pval = pval - step
            step = step * y / (T + i + 1)
        return +mp.fsum(terms)


def ratio_marginal_pdf(model: RatioAlphaMuModel, z, t: int,
                       ctx: PrecisionContext = DEFAULT_CONTEXT) -> mp.mpf:
    """
    Density of the ratio envelope at z > 0 from the first t expansion
    terms. The expansion alternates and its terms eventually grow, so t
    must come from a truncation policy fitted to the evaluation range.
    """
    if t < 1:
        raise ValueError("ratio_marginal_pdf requires t >= 1.")
    with ctx.working():
        zm = mpreal(z, ctx)
        if zm <= 0:
            raise ValueError("ratio_marginal_pdf requires z > 0.")
        aM = mpreal(model.alpha_M, ctx)
        aQ = mpreal(model.alpha_Q, ctx)
        muM = mpreal(model.mu_M, ctx)
        muQ = mpreal(model.mu_Q, ctx)
        rho = model.rho_tilde_hp(ctx)
        pref = aM / (zm * mp.gamma(muM) * mp.gamma(muQ))
        rz = rho * zm
        terms = []
        for i in range(t):
            sign = -1 if i % 2 else 1
            terms.append(sign / mp.factorial(i) * rz ** (aM * (i + muM))
                         * mp.gamma(aM * (i + muM) / aQ + muQ))
        return +(pref * mp.fsum(terms))


# ----------------------------------------------------------------------
# Conversion to transform descriptors
# ----------------------------------------------------------------------
def mixture_to_series(model: AlphaMuMixtureModel, i_max: Optional[int] = None,
                      ctx: PrecisionContext = DEFAULT_CONTEXT) -> LaplaceSeriesDescriptor:
    """
    Transform descriptor of a mixture envelope.

    With r_b = r_hat * T**(-1/alpha) the transform expands as
    psi * sum_i lambda_i * s**(-beta - i*alpha) with psi = alpha/r_b**(alpha*T),
    beta = alpha*T, and

    lambda_i = Gamma(alpha*(i+T)) / r_b**(alpha*i)
               * sum_{j<=i} (-1)**(i-j) phi_j / ((i-j)! * Gamma(j+T)).

    The lambda stream alternates in sign with factorial-type growth: the
    expansion is asymptotic, and downstream evaluation relies on the
    truncation policy, not on convergence. When i_max is given the first
    i_max + 1 coefficients are materialized eagerly at ctx precision.
    """
    alpha_f = float(model.alpha)
    T_f = float(model.T)
    r_b_f = float(model.r_hat) * T_f ** (-1.0 / alpha_f)
    weights = model.weights

    def factory(ctx_):
        alpha = mpreal(model.alpha, ctx_)
        T = mpreal(model.T, ctx_)
        scale = mpreal(model.r_hat, ctx_) ** alpha / T
        inv_scale_r = (1 / scale)._mpf_
        prec = mp.mp.prec
        # Incremental tables keep the inner convolution free of
        # per-element gamma evaluations; raw mantissa ops keep the O(i)
        # alternating sum itself cheap.
        wg_r = []
        inv_fact_r = [from_int(1)]
        inv_gam = 1 / mp.gamma(T)
        scale_pow_r = from_int(1)
        i = 0
        mul = mpf_mul
        while True:
            w = _to_mpf(weights.value(i, ctx_))
            if i:
                inv_fact_r.append(mpf_div(inv_fact_r[-1], from_int(i), prec, round_nearest))
                inv_gam = inv_gam / (T + i - 1)
                scale_pow_r = mul(scale_pow_r, inv_scale_r, prec, round_nearest)
            wg_r.append((w * inv_gam)._mpf_)
            terms = [
                mul(wg_r[j], inv_fact_r[i - j], prec, round_nearest)
                if (i - j) % 2 == 0
                else mpf_neg(mul(wg_r[j], inv_fact_r[i - j], prec, round_nearest))
                for j in range(i + 1)
            ]
            inner = mp.make_mpf(mpf_sum(terms, prec, round_nearest))
            yield +(mp.gamma(alpha * (i + T)) * mp.make_mpf(scale_pow_r) * inner)
            i += 1

    wp = weights.log_abs_probe
    if wp is not None:
        def probe(n):
            lphi = np.asarray(wp(n), dtype=float)
            js = np.arange(n, dtype=float)
            base = lphi - gammaln(js + T_f)
            out = np.empty(n)
            la = alpha_f * math.log(r_b_f)
            for i in range(n):
                conv = logsumexp(base[:i + 1] - gammaln(i - js[:i + 1] + 1))
                out[i] = gammaln(alpha_f * (i + T_f)) - i * la + conv
            return out
    else:
        probe = None

    with _SCALE_CTX.working():
        alpha_s = mpreal(model.alpha, _SCALE_CTX)
        T_s = mpreal(model.T, _SCALE_CTX)
        scale_s = mpreal(model.r_hat, _SCALE_CTX) ** alpha_s / T_s
        psi = alpha_s / scale_s ** T_s
        beta = alpha_s * T_s

    label = "%s(alpha=%g, T=%g)" % (model.model_tag, alpha_f, T_f)
    desc = LaplaceSeriesDescriptor(
        psi=psi,
        beta=beta,
        theta=model.alpha,
        eta=CoefficientStream(factory, log_abs_probe=probe),
        label=label)
    if i_max is not None:
        desc.eta.prefix(i_max + 1, ctx)
    return desc


def ratio_to_series(model: RatioAlphaMuModel, i_max: Optional[int] = None,
                    ctx: PrecisionContext = DEFAULT_CONTEXT) -> LaplaceSeriesDescriptor:
    """
    Transform descriptor of a ratio envelope: psi = alpha_M/(Gamma(mu_M)
    Gamma(mu_Q)), beta = alpha_M*mu_M, theta = alpha_M, and coefficients

    u_i = ((-1)**i / i!) * Gamma(alpha_M*(i+mu_M)) * rho**(alpha_M*(mu_M+i))
          * Gamma(alpha_M*(i+mu_M)/alpha_Q + mu_Q)

    with rho the composite inverse-scale. The stream alternates and grows
    factorially; see mixture_to_series for the truncation caveat.
    """
    aM_f = float(model.alpha_M)
    aQ_f = float(model.alpha_Q)
    muM_f = float(model.mu_M)
    muQ_f = float(model.mu_Q)

    def factory(ctx_):
        aM = mpreal(model.alpha_M, ctx_)
        aQ = mpreal(model.alpha_Q, ctx_)
        muM = mpreal(model.mu_M, ctx_)
        muQ = mpreal(model.mu_Q, ctx_)
        rho = model.rho_tilde_hp(ctx_)
        i = 0
        while True:
            sign = -1 if i % 2 else 1
            yield +(sign / mp.factorial(i) * mp.gamma(aM * (i + muM))
                    * rho ** (aM * (muM + i)) * mp.gamma(aM * (i + muM) / aQ + muQ))
            i += 1

    lrho = math.log(model.rho_tilde)

    def probe(n):
        i = np.arange(n, dtype=float)
        return (-gammaln(i + 1) + gammaln(aM_f * (i + muM_f))
                + aM_f * (muM_f + i) * lrho
                + gammaln(aM_f * (i + muM_f) / aQ_f + muQ_f))

    with _SCALE_CTX.working():
        psi = (mpreal(model.alpha_M, _SCALE_CTX)
               / (mp.gamma(mpreal(model.mu_M, _SCALE_CTX))
                  * mp.gamma(mpreal(model.mu_Q, _SCALE_CTX))))
        beta = mpreal(model.alpha_M, _SCALE_CTX) * mpreal(model.mu_M, _SCALE_CTX)

    label = "ratio(alpha_M=%g, alpha_Q=%g)" % (aM_f, aQ_f)
    desc = LaplaceSeriesDescriptor(
        psi=psi,
        beta=beta,
        theta=model.alpha_M,
        eta=CoefficientStream(factory, log_abs_probe=probe),
        label=label)
    if i_max is not None:
        desc.eta.prefix(i_max + 1, ctx)
    return desc


# ----------------------------------------------------------------------
# Moments and weight sums
# ----------------------------------------------------------------------
def adaptive_weight_sum(stream: CoefficientStream,
                        ctx: PrecisionContext = DEFAULT_CONTEXT,
                        term_tol: float = 1e-12,
                        window: int = 10,
                        max_terms: int = 200000) -> mp.mpf:
    """
    Sum a weight stream until `window` consecutive terms fall below
    term_tol in absolute value. Suited to streams with geometric tails;
    raises if the stopping rule is not met within max_terms.
    """
    with ctx.working():
        tol = mpreal(term_tol, ctx)
        total = mp.mpf(0)
        quiet = 0
        i = 0
        while i < max_terms:
            v = _to_mpf(stream.value(i, ctx))
            total += v
            quiet = quiet + 1 if abs(v) < tol else 0
            if quiet >= window:
                return +total
            i += 1
        raise ValueError(
            "weight sum did not settle below %g within %d terms."
            % (term_tol, max_terms))


def marginal_mean(model, ctx: PrecisionContext = DEFAULT_CONTEXT) -> mp.mpf:
    """
    Mean of a single envelope.

    Mixture models: E[R] = sum_i phi_i * r_hat * Gamma(T+i+1/alpha)
    / (T**(1/alpha) * Gamma(T+i)), summed adaptively over the weight
    tail. Ratio models: E[M/Q] = E[M] * E[1/Q] by independence, which
    requires alpha_Q * mu_Q > 1 for the inverse moment to exist.
    """
    if isinstance(model, RatioAlphaMuModel):
        if not model.alpha_Q * model.mu_Q > 1:
            raise ValueError(
                "ratio mean requires alpha_Q * mu_Q > 1; the denominator's "
                "inverse moment diverges.")
        with ctx.working():
            aM = mpreal(model.alpha_M, ctx)
            aQ = mpreal(model.alpha_Q, ctx)
            muM = mpreal(model.mu_M, ctx)
            muQ = mpreal(model.mu_Q, ctx)
            oM = mpreal(model.Omega_M, ctx)
            oQ = mpreal(model.Omega_Q, ctx)
            mean_m = oM * mp.gamma(muM + 1 / aM) / (muM ** (1 / aM) * mp.gamma(muM))
            mean_inv_q = muQ ** (1 / aQ) * mp.gamma(muQ - 1 / aQ) / (oQ * mp.gamma(muQ))
            return +(mean_m * mean_inv_q)
    if not isinstance(model, AlphaMuMixtureModel):
        raise TypeError("marginal_mean expects a mixture or ratio model.")
    with ctx.working():
        alpha = mpreal(model.alpha, ctx)
        T = mpreal(model.T, ctx)
        r_hat = mpreal(model.r_hat, ctx)
        scale = r_hat / T ** (1 / alpha)
        tol = mp.mpf(10) ** (-(ctx.digits + 5))
        total = mp.mpf(0)
        quiet = 0
        i = 0
        while True:
            phi = _to_mpf(model.weights.value(i, ctx))
            term = phi * mp.gamma(T + i + 1 / alpha) / mp.gamma(T + i)
            total += term
            if abs(term) < tol * (1 + abs(total)):
                quiet += 1
                if quiet >= 10:
                    break
            else:
                quiet = 0
            i += 1
            if i > 200000:
                raise ValueError("mixture mean did not converge within 200000 terms.")
        return +(scale * total)
