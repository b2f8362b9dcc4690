"""Engine-level tests: composition recursions, series evaluation, tail control."""

import math
import threading
from fractions import Fraction

import mpmath as mp
import pytest

from sumstat.specfun import PrecisionContext, mpreal
from sumstat.sumcore import (
    CoefficientStream,
    GrowthDiagnostic,
    LaplaceSeriesDescriptor,
    SumSeries,
    TruncationPolicy,
    delta_coeffs,
    delta_coeffs_iid,
    estimate_required_digits,
    growth_diagnostic,
    heuristic_digits,
    partial_mean_integral,
    phi_coeffs,
    select_term_count,
    sum_cdf,
    sum_density,
    tail_terms_ok,
    truncation_bound,
)

CTX50 = PrecisionContext(50)
CTX60 = PrecisionContext(60)


# ----------------------------------------------------------------------
# Synthetic streams
# ----------------------------------------------------------------------
def exp_stream(a):
    """eta_i = a**i / i! (exact when a is int or Fraction)."""
    def fn(i, ctx):
        return Fraction(a) ** i / Fraction(math.factorial(i))
    return CoefficientStream.from_function(fn)


def geometric_stream(a):
    """eta_i = a**i."""
    def fn(i, ctx):
        return Fraction(a) ** i
    return CoefficientStream.from_function(fn)


def rayleigh_stream():
    """lambda_i = (-1)**i * (2i+1)! / i!, the unit-scale squared-envelope
    coefficient stream whose composed density is 2*x*exp(-x**2)."""
    def fn(i, ctx):
        v = Fraction(math.factorial(2 * i + 1), math.factorial(i))
        return -v if i % 2 else v
    return CoefficientStream.from_function(fn)


def exp_desc(a, theta=1, beta=1, psi=1, label=""):
    return LaplaceSeriesDescriptor(psi=psi, beta=beta, theta=theta,
                                   eta=exp_stream(a), label=label)


def rayleigh_desc():
    return LaplaceSeriesDescriptor(psi=2, beta=2, theta=2,
                                   eta=rayleigh_stream(), label="rayleigh")


# ----------------------------------------------------------------------
# CoefficientStream
# ----------------------------------------------------------------------
class TestCoefficientStream:
    def test_prefix_values_and_extension(self):
        s = geometric_stream(Fraction(1, 2))
        assert s.prefix(3, CTX50) == [1, Fraction(1, 2), Fraction(1, 4)]
        assert s.value(5, CTX50) == Fraction(1, 32)

    def test_repeated_queries_are_identical_objects(self):
        def fn(i, ctx):
            return mp.mpf(1) / (i + 1)
        s = CoefficientStream.from_function(fn)
        a = s.prefix(10, CTX50)
        b = s.prefix(10, CTX50)
        assert all(x is y for x, y in zip(a, b))

    def test_per_precision_caches_are_separate(self):
        def fn(i, ctx):
            return mp.mpf(1) / 3
        s = CoefficientStream.from_function(fn)
        v50 = s.value(0, CTX50)
        v60 = s.value(0, CTX60)
        assert v50 != v60

    def test_concurrent_extension_is_consistent(self):
        def fn(i, ctx):
            return mp.mpf(i) ** 2 + 1
        s = CoefficientStream.from_function(fn)
        results = []

        def worker():
            results.append(s.prefix(200, CTX50))

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r == results[0] for r in results[1:])


# ----------------------------------------------------------------------
# phi recursion
# ----------------------------------------------------------------------
class TestPhiCoeffs:
    def test_exponential_stream_has_constant_log_derivative(self):
        # sum a**i/i! z**i = exp(a z), so the log-derivative series is the
        # constant a: phi_0 = a and phi_h = 0 for h >= 1, exactly.
        d = exp_desc(Fraction(3, 7))
        phis = phi_coeffs(d, 12, CTX50)
        assert phis[0] == Fraction(3, 7)
        assert all(p == 0 for p in phis[1:])

    def test_geometric_stream_log_derivative(self):
        # sum a**i z**i = 1/(1 - a z); log-derivative a/(1 - a z) has
        # coefficients phi_h = a**(h+1).
        a = Fraction(2, 5)
        d = LaplaceSeriesDescriptor(psi=1, beta=1, theta=1, eta=geometric_stream(a))
        phis = phi_coeffs(d, 10, CTX50)
        assert phis == [a ** (h + 1) for h in range(11)]

    def test_leading_zero_coefficient_raises(self):
        def fn(i, ctx):
            return 0 if i == 0 else 1
        d = LaplaceSeriesDescriptor(psi=1, beta=1, theta=1,
                                    eta=CoefficientStream.from_function(fn),
                                    label="degenerate")
        with pytest.raises(ValueError, match="leading coefficient zero"):
            phi_coeffs(d, 3, CTX50)

    def test_h_max_validation(self):
        with pytest.raises(ValueError):
            phi_coeffs(exp_desc(1), -1, CTX50)


# ----------------------------------------------------------------------
# delta recursions
# ----------------------------------------------------------------------
class TestDeltaCoeffs:
    def test_two_stream_composition_is_cauchy_product(self):
        # The composed coefficients of two summands must equal the Cauchy
        # product of their streams.
        a, b = Fraction(1, 3), Fraction(3, 4)
        d1 = LaplaceSeriesDescriptor(psi=1, beta=1, theta=1, eta=geometric_stream(a))
        d2 = LaplaceSeriesDescriptor(psi=1, beta=2, theta=1, eta=exp_stream(b))
        got = delta_coeffs([d1, d2], 15, CTX50)
        e1 = [a ** i for i in range(16)]
        e2 = [Fraction(b) ** i / Fraction(math.factorial(i)) for i in range(16)]
        want = [sum(e1[j] * e2[i - j] for j in range(i + 1)) for i in range(16)]
        assert got == want

    def test_exponential_streams_compose_to_summed_rate(self):
        # exp(a1 z) * exp(a2 z) * exp(a3 z) = exp((a1+a2+a3) z).
        rates = [Fraction(1, 2), Fraction(2, 3), Fraction(5, 4)]
        descs = [exp_desc(r) for r in rates]
        got = delta_coeffs(descs, 20, CTX50)
        s = sum(rates)
        want = [Fraction(s) ** i / Fraction(math.factorial(i)) for i in range(21)]
        assert got == want

    def test_unit_exponential_three_copies_exact(self):
        # eta_i = 1/i! with three copies gives delta_i = 3**i / i! as
        # exact rationals.
        got = delta_coeffs_iid(exp_desc(1), 3, 30, CTX50)
        want = [Fraction(3 ** i, math.factorial(i)) for i in range(31)]
        assert got == want

    def test_single_summand_is_identity(self):
        d = exp_desc(Fraction(7, 5))
        got = delta_coeffs([d], 12, CTX50)
        assert got == d.eta.prefix(13, CTX50)

    def test_iid_path_matches_general_path_exactly(self):
        d = exp_desc(Fraction(2, 7))
        via_iid = delta_coeffs_iid(d, 4, 25, CTX50)
        fresh = [exp_desc(Fraction(2, 7)) for _ in range(4)]
        via_general = delta_coeffs(fresh, 25, CTX50)
        assert via_iid == via_general

    def test_iid_path_matches_general_path_in_floats(self):
        # Same comparison on an alternating mpf stream at 60 digits. The
        # index range stays modest because the composed coefficients of
        # this stream decay while the inputs peak, which costs relative
        # accuracy in any order of summation.
        def fn(i, ctx):
            sign = -1 if i % 2 else 1
            return mp.mpf(sign) * mp.mpf(2) ** i / mp.factorial(i)
        mk = lambda: LaplaceSeriesDescriptor(
            psi=1, beta=Fraction(3, 2), theta=2,
            eta=CoefficientStream.from_function(fn))
        via_iid = delta_coeffs_iid(mk(), 5, 40, CTX60)
        via_general = delta_coeffs([mk() for _ in range(5)], 40, CTX60)
        with CTX60.working():
            for i, (u, v) in enumerate(zip(via_iid, via_general)):
                if v == 0:
                    assert u == 0
                else:
                    assert abs(u - v) / abs(v) < mp.mpf(10) ** -35, i

    def test_theta_mismatch_raises_with_indices(self):
        d1 = exp_desc(1, theta=1, label="first")
        d2 = exp_desc(1, theta=2, label="second")
        with pytest.raises(ValueError, match="summand 1"):
            SumSeries.compose([d1, d2])

    def test_empty_composition_raises(self):
        with pytest.raises(ValueError):
            SumSeries.compose([])

    def test_descriptor_positivity_validation(self):
        with pytest.raises(ValueError, match="beta"):
            LaplaceSeriesDescriptor(psi=1, beta=0, theta=1, eta=exp_stream(1))
        with pytest.raises(ValueError, match="psi"):
            LaplaceSeriesDescriptor(psi=-2, beta=1, theta=1, eta=exp_stream(1))


# ----------------------------------------------------------------------
# Series evaluation against closed forms
# ----------------------------------------------------------------------
class TestSeriesEvaluation:
    def test_single_summand_density_matches_closed_form(self):
        # The unit-scale squared-envelope stream composes (L=1) to the
        # density 2 x exp(-x**2).
        series = SumSeries.compose([rayleigh_desc()])
        with CTX50.working():
            for x in ("0.3", "0.9", "1.7", "2.4"):
                xm = mpreal(x, CTX50)
                want = 2 * xm * mp.e ** (-xm ** 2)
                got = sum_density(series, xm, 80, CTX50)
                assert abs(got - want) < mp.mpf(10) ** -30

    def test_single_summand_cdf_matches_closed_form(self):
        series = SumSeries.compose([rayleigh_desc()])
        with CTX50.working():
            for x in ("0.3", "0.9", "1.7", "2.4"):
                xm = mpreal(x, CTX50)
                want = 1 - mp.e ** (-xm ** 2)
                got = sum_cdf(series, xm, 80, CTX50)
                assert abs(got - want) < mp.mpf(10) ** -30

    def test_cdf_derivative_is_density(self):
        series = SumSeries.compose([rayleigh_desc()])
        with CTX50.working():
            x = mpreal("1.3", CTX50)
            h = mp.mpf(10) ** -12
            num = (sum_cdf(series, x + h, 80, CTX50)
                   - sum_cdf(series, x - h, 80, CTX50)) / (2 * h)
            den = sum_density(series, x, 80, CTX50)
            assert abs(num - den) < mp.mpf(10) ** -20

    def test_two_copies_match_quadrature_convolution(self):
        # CDF of the sum of two independent unit-scale draws, checked
        # against direct numerical convolution of the closed densities.
        series = SumSeries.compose_iid(rayleigh_desc(), 2)
        with PrecisionContext(40).working():
            x = mp.mpf(2)
            f = lambda u: 2 * u * mp.e ** (-u ** 2)
            want = mp.quad(lambda u: f(u) * (1 - mp.e ** (-(x - u) ** 2)), [0, x])
            got = sum_cdf(series, x, 120, PrecisionContext(40))
            assert abs(got - want) < mp.mpf(10) ** -25

    def test_nonpositive_x_rejected(self):
        series = SumSeries.compose([rayleigh_desc()])
        with pytest.raises(ValueError, match="x > 0"):
            sum_density(series, 0, 20, CTX50)
        with pytest.raises(ValueError, match="x > 0"):
            sum_cdf(series, -1, 20, CTX50)

    def test_partial_mean_integral_matches_quadrature(self):
        series = SumSeries.compose([rayleigh_desc()])
        with CTX50.working():
            u = mpreal("1.8", CTX50)
            want = mp.quad(lambda t: t * 2 * t * mp.e ** (-t ** 2), [0, u])
            got = partial_mean_integral(series, u, 80, CTX50)
            assert abs(got - want) < mp.mpf(10) ** -25


# ----------------------------------------------------------------------
# Transform consistency
# ----------------------------------------------------------------------
class TestTransformConsistency:
    def test_descriptor_transform_matches_quadrature_exactly(self):
        # For theta = 1/2 the term-by-term Laplace transform of the
        # truncated density equals the truncated descriptor expansion
        # psi * sum eta_i s**(-beta - i/2); both sides are entire in the
        # truncation, so they agree to quadrature accuracy.
        d = LaplaceSeriesDescriptor(psi=1, beta=1, theta=Fraction(1, 2),
                                    eta=exp_stream(Fraction(1, 4)))
        series = SumSeries.compose([d])
        k = 40
        ctx = PrecisionContext(40)
        with ctx.working():
            etas = d.eta.prefix(k, ctx)
            th = mpreal(d.theta, ctx)
            for s in (2, 5, 10):
                sm = mp.mpf(s)
                lhs = mp.quad(lambda x: sum_density(series, x, k, ctx)
                              * mp.e ** (-sm * x), [0, mp.inf])
                rhs = mp.fsum(mpreal(e, ctx) * sm ** (-1 - th * i)
                              for i, e in enumerate(etas))
                assert abs(lhs - rhs) < mp.mpf(10) ** -6

    def test_divergent_expansion_agrees_asymptotically(self):
        # For theta = 2 the descriptor expansion is asymptotic, not
        # convergent. At large s the optimally truncated expansion agrees
        # with the exact transform of 2 x exp(-x**2) to within twice the
        # first omitted term.
        d = rayleigh_desc()
        ctx = PrecisionContext(300)
        with ctx.working():
            for s, scan in ((20, 200), (40, 500)):
                sm = mp.mpf(s)
                exact = 1 - (sm * mp.sqrt(mp.pi) / 2) * mp.e ** (sm ** 2 / 4) \
                    * mp.erfc(sm / 2)
                quadv = mp.quad(lambda x: 2 * x * mp.e ** (-x ** 2)
                                * mp.e ** (-sm * x), [0, mp.inf])
                assert abs(exact - quadv) < mp.mpf(10) ** -40
                etas = d.eta.prefix(scan, ctx)
                terms = [2 * mpreal(e, ctx) * sm ** (-2 - 2 * i)
                         for i, e in enumerate(etas)]
                mags = [abs(t) for t in terms]
                k_star = mags.index(min(mags))
                assert 0 < k_star < scan - 1
                partial = mp.fsum(terms[:k_star])
                assert abs(exact - partial) <= 2 * mags[k_star]


# ----------------------------------------------------------------------
# Truncation bound and term-count selection
# ----------------------------------------------------------------------
class TestTruncationBound:
    def test_bound_dominates_true_tail(self):
        # Measured at 150 digits so the observed truncation error is not
        # swamped by rounding when the analytic bound sits near 1e-70.
        ctx = PrecisionContext(150)
        series = SumSeries.compose([rayleigh_desc()])
        with ctx.working():
            for t0 in (10, 20, 40):
                for x in ("0.5", "1.0", "1.5"):
                    xm = mpreal(x, ctx)
                    true_pdf = 2 * xm * mp.e ** (-xm ** 2)
                    true_cdf = 1 - mp.e ** (-xm ** 2)
                    err_pdf = abs(sum_density(series, xm, t0, ctx) - true_pdf)
                    err_cdf = abs(sum_cdf(series, xm, t0, ctx) - true_cdf)
                    assert err_pdf <= truncation_bound(series, xm, t0, 0, ctx)
                    assert err_cdf <= truncation_bound(series, xm, t0, 1, ctx)

    def test_bound_monotone_in_x_and_t0(self):
        series = SumSeries.compose([rayleigh_desc()])
        with CTX50.working():
            b1 = truncation_bound(series, "1.0", 20, 1, CTX50)
            b2 = truncation_bound(series, "2.0", 20, 1, CTX50)
            b3 = truncation_bound(series, "1.0", 40, 1, CTX50)
            assert b2 > b1
            assert b3 < b1

    def test_bound_validates_arguments(self):
        series = SumSeries.compose([rayleigh_desc()])
        with pytest.raises(ValueError, match="varrho"):
            truncation_bound(series, 1, 20, 2, CTX50)
        with pytest.raises(ValueError, match="t0 >= 3"):
            truncation_bound(series, 1, 2, 1, CTX50)
        with pytest.raises(ValueError, match="x > 0"):
            truncation_bound(series, 0, 20, 1, CTX50)

    def test_select_satisfies_dual_criterion_minimally(self):
        series = SumSeries.compose_iid(rayleigh_desc(), 2)
        policy = TruncationPolicy(epsilon=1e-10, x_max=2.5, varrho=1)
        t0 = select_term_count(series, policy, CTX50)
        with CTX50.working():
            eps = mp.mpf("1e-10")
            assert truncation_bound(series, policy.x_max, t0, 1, CTX50) <= eps
        assert tail_terms_ok(series, policy.x_max, t0, 1, policy.epsilon, CTX50)
        both_hold_below = (
            truncation_bound(series, policy.x_max, t0 - 1, 1, CTX50) <= mp.mpf("1e-10")
            and tail_terms_ok(series, policy.x_max, t0 - 1, 1, policy.epsilon, CTX50)
        )
        assert not both_hold_below

    def test_select_monotone_in_tolerance_and_domain(self):
        series = SumSeries.compose([rayleigh_desc()])
        t_loose = select_term_count(series, TruncationPolicy(1e-6, 2.0), CTX50)
        t_tight = select_term_count(series, TruncationPolicy(1e-12, 2.0), CTX50)
        t_wide = select_term_count(series, TruncationPolicy(1e-6, 3.0), CTX50)
        assert t_tight >= t_loose
        assert t_wide >= t_loose

    def test_select_raises_when_domain_too_wide(self):
        series = SumSeries.compose([rayleigh_desc()])
        policy = TruncationPolicy(epsilon=1e-10, x_max=40.0, varrho=1, term_cap=50)
        with pytest.raises(ValueError, match="domain too wide for tolerance"):
            select_term_count(series, policy, CTX50)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            TruncationPolicy(epsilon=0, x_max=1)
        with pytest.raises(ValueError):
            TruncationPolicy(epsilon=1e-8, x_max=-1)
        with pytest.raises(ValueError):
            TruncationPolicy(epsilon=1e-8, x_max=1, varrho=3)
        with pytest.raises(ValueError):
            TruncationPolicy(epsilon=1e-8, x_max=1, t0=2)


# ----------------------------------------------------------------------
# Diagnostics and precision selection
# ----------------------------------------------------------------------
class TestDiagnostics:
    def test_growth_diagnostic_benign_stream(self):
        diag = growth_diagnostic(exp_desc(1), Fraction(1, 2), 20, CTX50)
        assert isinstance(diag, GrowthDiagnostic)
        assert diag.indices == list(range(10, 21))
        assert not diag.warn

    def test_growth_diagnostic_flags_runaway_stream(self):
        def fn(i, ctx):
            return Fraction(math.factorial(3 * i))
        d = LaplaceSeriesDescriptor(psi=1, beta=1, theta=1,
                                    eta=CoefficientStream.from_function(fn))
        diag = growth_diagnostic(d, Fraction(1, 2), 20, CTX50)
        assert diag.warn

    def test_growth_diagnostic_never_blocks(self):
        # A flagged stream still evaluates; the diagnostic is advisory.
        def fn(i, ctx):
            return Fraction(math.factorial(3 * i))
        d = LaplaceSeriesDescriptor(psi=1, beta=1, theta=1,
                                    eta=CoefficientStream.from_function(fn))
        series = SumSeries.compose([d])
        sum_density(series, "0.01", 5, CTX50)

    def test_growth_diagnostic_probe_validation(self):
        with pytest.raises(ValueError):
            growth_diagnostic(exp_desc(1), 1, 5, CTX50)

    def test_heuristic_digits_known_values(self):
        assert heuristic_digits(36, 2) == max(
            50, math.ceil(0.45 * 36 * 2 * math.log10(36)) + 25)
        assert heuristic_digits(3, 0.5) == 50

    def test_estimate_required_digits_scales_with_domain(self):
        series_narrow = SumSeries.compose([rayleigh_desc()])
        series_wide = SumSeries.compose([rayleigh_desc()])
        d_narrow = estimate_required_digits(series_narrow, 1.5, 60)
        d_wide = estimate_required_digits(series_wide, 8.0, 300)
        assert d_narrow == 50
        assert d_wide > d_narrow
        # Peak term magnitude near exp(x**2) means roughly
        # 64/ln(10) = 27.8 digits of cancellation at x = 8.
        assert 60 <= d_wide <= 160

    def test_estimate_covers_true_cancellation(self):
        # Evaluate a wide point with the estimated precision and confirm
        # the result matches the closed form to the policy tolerance.
        series = SumSeries.compose([rayleigh_desc()])
        digits = estimate_required_digits(series, 6.0, 200)
        ctx = PrecisionContext(digits)
        with ctx.working():
            x = mp.mpf(6)
            got = sum_cdf(series, x, 160, ctx)
            want = 1 - mp.e ** (-x ** 2)
            assert abs(got - want) < mp.mpf(10) ** -12
