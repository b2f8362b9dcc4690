"""
Command-line surface: JSON scenario configs in, CSV curves and
validation reports out.

A scenario config names an ordered list of summand models, an
evaluation grid, and a certification tolerance. The `pdf` and `cdf`
commands evaluate the sum's curves with certified truncation, `validate`
cross-checks them against the sampling or convolution oracles, and
`terms` reports term-count diagnostics for the configured domain.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .fading import (
    AekmParams,
    GaussianConstructionSpec,
    MftrParams,
    RatioAlphaMuModel,
    aekm_model,
    alpha_mu_model,
    gaussian_construction_model,
    kappa_mu_model,
    mftr_model,
    mixture_to_series,
    ratio_to_series,
)
from .oracle import (
    ComparisonReport,
    brennan_cdf,
    brennan_convolve,
    cdf_grid,
    central_mass_grid,
    empirical_cdf_compare,
    pdf_grid,
    sample_sum,
    KS_COEFF_1PCT,
    MAX_CONVOLUTION_COMPONENTS,
)
from .specfun import PrecisionContext, mpreal
from .sumcore import (
    DEFAULT_TERM_CAP,
    SumSeries,
    TruncationPolicy,
    estimate_required_digits,
    select_term_count,
    sum_cdf,
    sum_density,
    truncation_bound,
)

DEFAULT_SAMPLES = 1_000_000
DEFAULT_SEED = 20240823
BRENNAN_GRID_POINTS = 8193
BRENNAN_CDF_TOLERANCE = 2e-3
CSV_HEADER = "x,pdf,cdf,pdf_bound,cdf_bound,certified"


class ConfigError(ValueError):
    """A scenario config failed validation; message names the culprit."""


_REQUIRED_FIELDS = {
    "mftr": ("K", "Delta", "mu", "m", "gamma_bar"),
    "aekm": ("alpha", "eta", "kappa", "mu", "p", "q", "r_bar"),
    "ratio": ("alpha_M", "alpha_Q", "mu_M", "mu_Q", "Omega_M", "Omega_Q"),
    "alpha_mu": ("alpha", "mu", "r_hat"),
    "kappa_mu": ("kappa", "mu", "r_hat"),
    "gaussian_construction": ("T_n", "sigma2_n", "P_mn", "alpha", "r_hat"),
}

_OPTIONAL_FIELDS = {
    "aekm": ("delta_aux", "xi_bar"),
}


@dataclass
class GridSpec:
    """Uniform evaluation grid: points values from min to max inclusive."""

    min_x: float
    max_x: float
    points: int

    def values(self) -> np.ndarray:
        return np.linspace(self.min_x, self.max_x, self.points)


@dataclass
class ScenarioConfig:
    """One parsed scenario: models, grid, tolerance, oracle settings."""

    epsilon: float
    grid: GridSpec
    summands: List[object]
    summand_labels: List[str]
    label: str = "scenario"
    precision_digits: Optional[int] = None
    seed: int = DEFAULT_SEED
    oracle: Optional[str] = None
    samples: int = DEFAULT_SAMPLES
    term_cap: int = DEFAULT_TERM_CAP
    t0: Optional[int] = None


@dataclass
class CurveRow:
    """One evaluated grid point with its certification data."""

    x: float
    pdf: float
    cdf: float
    pdf_bound: float
    cdf_bound: float
    certified: bool


@dataclass
class EvaluationPlan:
    """Resolved evaluation state shared by the commands."""

    config: ScenarioConfig
    series: SumSeries
    ctx: PrecisionContext
    digits: int
    digits_source: str
    t0: int


# ----------------------------------------------------------------------
# Config parsing
# ----------------------------------------------------------------------
def _model_theta(model) -> float:
    if isinstance(model, RatioAlphaMuModel):
        return float(model.alpha_M)
    return float(model.alpha)


def _build_summand(index: int, block):
    if not isinstance(block, dict):
        raise ConfigError("summand %d: expected an object." % index)
    data = dict(block)
    tag = data.pop("model", None)
    if tag is None:
        raise ConfigError("summand %d: missing 'model' tag." % index)
    label = data.pop("label", None)
    required = _REQUIRED_FIELDS.get(tag)
    if required is None:
        raise ConfigError(
            "summand %d: unknown model tag %r; expected one of %s."
            % (index, tag, sorted(_REQUIRED_FIELDS)))
    missing = [k for k in required if k not in data]
    if missing:
        raise ConfigError(
            "summand %d (%s): missing parameter(s) %s."
            % (index, tag, ", ".join(missing)))
    extra = sorted(set(data) - set(required) - set(_OPTIONAL_FIELDS.get(tag, ())))
    if extra:
        raise ConfigError(
            "summand %d (%s): unrecognized field(s) %s."
            % (index, tag, ", ".join(extra)))
    try:
        if tag == "mftr":
            model = mftr_model(MftrParams(
                K=data["K"], Delta=data["Delta"], mu_bar=data["mu"],
                m=data["m"], gamma_bar=data["gamma_bar"]))
        elif tag == "aekm":
            model = aekm_model(AekmParams(
                alpha_bar=data["alpha"], eta_bar=data["eta"],
                kappa=data["kappa"], mu_bar=data["mu"], p=data["p"],
                q=data["q"], r_bar=data["r_bar"],
                delta_aux=data.get("delta_aux"),
                xi_bar=data.get("xi_bar")))
        elif tag == "ratio":
            model = RatioAlphaMuModel(
                alpha_M=data["alpha_M"], alpha_Q=data["alpha_Q"],
                mu_M=data["mu_M"], mu_Q=data["mu_Q"],
                Omega_M=data["Omega_M"], Omega_Q=data["Omega_Q"])
        elif tag == "alpha_mu":
            model = alpha_mu_model(data["alpha"], data["mu"], data["r_hat"])
        elif tag == "kappa_mu":
            model = kappa_mu_model(data["kappa"], data["mu"], data["r_hat"])
        else:
            t_n = data["T_n"]
            sigma2_n = data["sigma2_n"]
            p_mn = data["P_mn"]
            if not (isinstance(t_n, list) and isinstance(sigma2_n, list)
                    and isinstance(p_mn, list)
                    and all(isinstance(row, list) for row in p_mn)):
                raise ConfigError(
                    "summand %d (gaussian_construction): T_n, sigma2_n "
                    "must be arrays and P_mn an array of arrays." % index)
            model = gaussian_construction_model(GaussianConstructionSpec(
                N=len(t_n), T_n=tuple(t_n), sigma2_n=tuple(sigma2_n),
                P_mn=tuple(tuple(row) for row in p_mn),
                alpha=data["alpha"], r_hat=data["r_hat"]))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError("summand %d (%s): %s" % (index, tag, exc)) from exc
    return model, label or ("%d:%s" % (index, tag))


def parse_config(text: str) -> ScenarioConfig:
    """
    Parse and validate a JSON scenario config.

    Decimal literals are kept exact (parsed as fractions) so model
    constants do not inherit binary rounding from the config file.
    """
    try:
        raw = json.loads(text, parse_float=Fraction)
    except json.JSONDecodeError as exc:
        raise ConfigError("config is not valid JSON: %s" % exc) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object.")

    known = {"epsilon", "grid", "summands", "label", "precision_digits",
             "seed", "oracle", "samples", "term_cap", "t0"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError("unrecognized config field(s): %s." % ", ".join(unknown))

    for key in ("epsilon", "grid", "summands"):
        if key not in raw:
            raise ConfigError("config is missing required field %r." % key)

    epsilon = float(raw["epsilon"])
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive.")

    grid_raw = raw["grid"]
    if (not isinstance(grid_raw, dict)
            or set(grid_raw) != {"min", "max", "points"}):
        raise ConfigError("grid must be an object with min, max, points.")
    grid = GridSpec(min_x=float(grid_raw["min"]), max_x=float(grid_raw["max"]),
                    points=int(grid_raw["points"]))
    if grid.min_x < 0:
        raise ConfigError("grid.min must be >= 0.")
    if not grid.max_x > grid.min_x:
        raise ConfigError("grid.max must exceed grid.min.")
    if grid.points < 2:
        raise ConfigError("grid.points must be at least 2.")

    blocks = raw["summands"]
    if not isinstance(blocks, list) or not blocks:
        raise ConfigError("summands must be a nonempty array.")
    summands = []
    labels = []
    for i, block in enumerate(blocks):
        model, lbl = _build_summand(i, block)
        summands.append(model)
        labels.append(lbl)
    theta0 = _model_theta(summands[0])
    for i, model in enumerate(summands[1:], start=1):
        if _model_theta(model) != theta0:
            raise ConfigError(
                "summand %d: power exponent %g differs from summand 0 "
                "(%g); all summands must share one exponent."
                % (i, _model_theta(model), theta0))

    digits = raw.get("precision_digits")
    if digits is not None:
        digits = int(digits)
        if digits < 10:
            raise ConfigError("precision_digits must be at least 10.")

    oracle = raw.get("oracle")
    if oracle is not None and oracle not in ("mc", "brennan", "both"):
        raise ConfigError("oracle must be one of mc, brennan, both.")

    samples = int(raw.get("samples", DEFAULT_SAMPLES))
    if samples < 100:
        raise ConfigError("samples must be at least 100.")

    term_cap = int(raw.get("term_cap", DEFAULT_TERM_CAP))
    if term_cap < 3:
        raise ConfigError("term_cap must be at least 3.")

    t0 = raw.get("t0")
    if t0 is not None:
        t0 = int(t0)
        if t0 < 3:
            raise ConfigError("t0 must be at least 3.")

    return ScenarioConfig(
        epsilon=epsilon, grid=grid, summands=summands, summand_labels=labels,
        label=str(raw.get("label", "scenario")),
        precision_digits=digits, seed=int(raw.get("seed", DEFAULT_SEED)),
        oracle=oracle, samples=samples, term_cap=term_cap, t0=t0)


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read())


# ----------------------------------------------------------------------
# Evaluation planning
# ----------------------------------------------------------------------
def build_series(config: ScenarioConfig) -> SumSeries:
    descriptors = []
    for model in config.summands:
        if isinstance(model, RatioAlphaMuModel):
            descriptors.append(ratio_to_series(model))
        else:
            descriptors.append(mixture_to_series(model))
    return SumSeries.compose(descriptors)


def resolve_digits(config: ScenarioConfig, series: SumSeries):
    """Working precision: environment beats config beats the estimator."""
    env = os.environ.get("SUMSTAT_DIGITS")
    if env:
        try:
            digits = int(env)
        except ValueError:
            raise ConfigError("SUMSTAT_DIGITS must be an integer, got %r." % env)
        if digits < 10:
            raise ConfigError("SUMSTAT_DIGITS must be at least 10.")
        return digits, "environment"
    if config.precision_digits is not None:
        return config.precision_digits, "config"
    digits = estimate_required_digits(series, config.grid.max_x,
                                      config.term_cap)
    return digits, "estimated"


def build_plan(config: ScenarioConfig) -> EvaluationPlan:
    series = build_series(config)
    digits, source = resolve_digits(config, series)
    ctx = PrecisionContext(digits)
    if config.t0 is not None:
        t0 = config.t0
    else:
        t0 = max(
            select_term_count(series, TruncationPolicy(
                config.epsilon, config.grid.max_x, varrho=0,
                term_cap=config.term_cap), ctx),
            select_term_count(series, TruncationPolicy(
                config.epsilon, config.grid.max_x, varrho=1,
                term_cap=config.term_cap), ctx))
    return EvaluationPlan(config=config, series=series, ctx=ctx,
                          digits=digits, digits_source=source, t0=t0)


def evaluate_rows(plan: EvaluationPlan,
                  xs: Optional[Sequence[float]] = None) -> List[CurveRow]:
    """
    Evaluate CurveRows at the grid (or custom abscissas), concurrently
    over the shared coefficient table.
    """
    config = plan.config
    series, ctx, t0 = plan.series, plan.ctx, plan.t0
    if xs is None:
        xs = config.grid.values()
    xs = [float(v) for v in xs]
    if not xs:
        return []

    def one(x: float) -> CurveRow:
        if x <= 0:
            return CurveRow(x, 0.0, 0.0, 0.0, 0.0, True)
        xm = mpreal(x, ctx)
        pdf = float(sum_density(series, xm, t0, ctx))
        cdf = float(sum_cdf(series, xm, t0, ctx))
        pb = float(truncation_bound(series, xm, t0, 0, ctx))
        cb = float(truncation_bound(series, xm, t0, 1, ctx))
        return CurveRow(x, pdf, cdf, pb, cb,
                        max(pb, cb) <= config.epsilon)

    # Warm the caches serially so the pool threads only read; all
    # threads then run at one shared precision, which keeps the nested
    # precision guards idempotent.
    warm = max(x for x in xs)
    with ctx.working():
        one(warm)
        workers = min(4, len(xs)) or 1
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, xs))
    return rows


def write_curve_csv(path: str, rows: Sequence[CurveRow]) -> None:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append("%s,%s,%s,%s,%s,%s" % (
            repr(r.x), repr(r.pdf), repr(r.cdf), repr(r.pdf_bound),
            repr(r.cdf_bound), "true" if r.certified else "false"))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------
def run_evaluate(config: ScenarioConfig, out_path: str) -> int:
    plan = build_plan(config)
    rows = evaluate_rows(plan)
    write_curve_csv(out_path, rows)
    certified = sum(r.certified for r in rows)
    print("%s: wrote %d rows to %s (certified %d/%d, t0=%d, digits=%d %s)"
          % (config.label, len(rows), out_path, certified, len(rows),
             plan.t0, plan.digits, plan.digits_source))
    return 0 if certified == len(rows) else 1


def run_terms(config: ScenarioConfig, epsilon: Optional[float],
              xmax: Optional[float]) -> int:
    eps = epsilon if epsilon is not None else config.epsilon
    x_max = xmax if xmax is not None else config.grid.max_x
    if eps <= 0 or x_max <= 0:
        raise ConfigError("terms needs positive epsilon and xmax.")
    series = build_series(config)
    digits, source = resolve_digits(config, series)
    ctx = PrecisionContext(digits)
    t0 = max(
        select_term_count(series, TruncationPolicy(
            eps, x_max, varrho=0, term_cap=config.term_cap), ctx),
        select_term_count(series, TruncationPolicy(
            eps, x_max, varrho=1, term_cap=config.term_cap), ctx))
    pb = float(truncation_bound(series, x_max, t0, 0, ctx))
    cb = float(truncation_bound(series, x_max, t0, 1, ctx))
    print("%s: epsilon=%g, x_max=%g" % (config.label, eps, x_max))
    print("selected t0: %d" % t0)
    print("bound at x_max: pdf %.6e, cdf %.6e" % (pb, cb))
    print("working precision: %d digits (%s)" % (digits, source))
    print("fixed-t0 certification sweep:")
    for t_fix in (15, 30, 60, 120):
        reach = _certified_reach(series, t_fix, eps, x_max, ctx)
        if reach is None:
            print("  t0 = %3d: no certified domain below x = %g"
                  % (t_fix, x_max))
        elif reach >= x_max:
            print("  t0 = %3d: certified up to x = %g (full domain)"
                  % (t_fix, x_max))
        else:
            print("  t0 = %3d: certified up to x = %.6g" % (t_fix, reach))
    return 0


def _certified_reach(series: SumSeries, t0: int, eps: float, x_max: float,
                     ctx: PrecisionContext) -> Optional[float]:
    """Largest x in (0, x_max] with both tail bounds below eps."""

    def worst(x: float) -> float:
        return max(float(truncation_bound(series, x, t0, 0, ctx)),
                   float(truncation_bound(series, x, t0, 1, ctx)))

    if worst(x_max) <= eps:
        return x_max
    lo = x_max * 1e-6
    if worst(lo) > eps:
        return None
    hi = x_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if worst(mid) <= eps:
            lo = mid
        else:
            hi = mid
    return lo


def _support_radius(model, tail: float) -> float:
    """Abscissa beyond which the marginal carries less than tail mass."""
    x = 1.0
    for _ in range(60):
        if float(cdf_grid(model, np.array([x]))[0]) >= 1.0 - tail:
            return x
        x *= 1.35
    raise ValueError(
        "could not bracket the support of a marginal; its tail is too "
        "heavy for the convolution oracle.")


def run_validate(config: ScenarioConfig, oracle_choice: Optional[str],
                 samples: Optional[int], seed: Optional[int],
                 out_path: Optional[str],
                 sample_config: Optional[ScenarioConfig]) -> int:
    choice = oracle_choice or config.oracle
    if choice is None:
        raise ConfigError(
            "no oracle requested; pass --oracle or set it in the config.")
    n_samples = samples if samples is not None else config.samples
    rng_seed = seed if seed is not None else config.seed
    if choice in ("mc", "both"):
        for i, model in enumerate(config.summands):
            if getattr(model, "model_tag", None) == "aekm":
                raise ConfigError(
                    "summand %d uses the in-phase/quadrature family, "
                    "which has no physical sampler; run the brennan "
                    "oracle for this scenario instead." % i)
    if (choice in ("brennan", "both")
            and len(config.summands) > MAX_CONVOLUTION_COMPONENTS):
        raise ConfigError(
            "brennan oracle supports at most %d summands; this scenario "
            "has %d." % (MAX_CONVOLUTION_COMPONENTS, len(config.summands)))

    plan = build_plan(config)
    grid_xs = [float(x) for x in config.grid.values() if x > 0]
    rows = evaluate_rows(plan, grid_xs)
    certified_rows = [r for r in rows if r.certified]
    if not certified_rows:
        raise ValueError(
            "no certified grid points at epsilon=%g; validation has "
            "nothing trustworthy to compare." % config.epsilon)

    comparisons = []
    if choice in ("mc", "both"):
        comparisons.append(_validate_mc(plan, rows, n_samples, rng_seed,
                                        sample_config))
    if choice in ("brennan", "both"):
        comparisons.append(_validate_brennan(plan, certified_rows))

    passed = all(c.passed for c in comparisons)
    report = {
        "label": config.label,
        "oracle": choice,
        "samples": n_samples if choice in ("mc", "both") else None,
        "seed": rng_seed,
        "digits": plan.digits,
        "t0": plan.t0,
        "epsilon": config.epsilon,
        "comparisons": [c.as_dict() for c in comparisons],
        "passed": passed,
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    else:
        print(text)
    for c in comparisons:
        print("%s: max deviation %.6f vs threshold %.6f -> %s"
              % (c.label, c.max_abs_deviation, c.threshold,
                 "pass" if c.passed else "FAIL"))
    return 0 if passed else 2


def _validate_mc(plan: EvaluationPlan, rows: List[CurveRow], n_samples: int,
                 seed: int, sample_config: Optional[ScenarioConfig]):
    config = plan.config
    source_models = config.summands
    if sample_config is not None:
        if len(sample_config.summands) != len(config.summands):
            raise ConfigError(
                "--sample-config must declare the same number of "
                "summands as the main config.")
        source_models = sample_config.summands
    draws = sample_sum(seed, n_samples, source_models)

    # Compare wherever the analytic curve is certified: the config grid
    # plus the sample's central-mass quantiles that fall inside it.
    extra = [float(q) for q in central_mass_grid(draws, points=40)
             if 0 < q <= config.grid.max_x]
    known = {r.x for r in rows}
    fresh = evaluate_rows(plan, [q for q in extra if q not in known])
    cert = sorted((r for r in list(rows) + fresh if r.certified),
                  key=lambda r: r.x)
    if not cert:
        raise ValueError(
            "no certified points inside the comparison domain; widen "
            "the grid or relax epsilon.")
    xs = np.array([r.x for r in cert])
    ref = np.array([r.cdf for r in cert])
    threshold = (KS_COEFF_1PCT / np.sqrt(n_samples)
                 + max(r.cdf_bound for r in cert))
    return empirical_cdf_compare(draws, ref, xs, threshold=threshold,
                                 label="monte-carlo")


def _validate_brennan(plan: EvaluationPlan, certified_rows: List[CurveRow]):
    config = plan.config
    models = config.summands
    tail = 1e-4 / (4.0 * len(models))
    radius = max(_support_radius(m, tail) for m in models)
    xs_m = np.linspace(0.0, radius, BRENNAN_GRID_POINTS)
    dx = xs_m[1]
    conv = brennan_convolve([pdf_grid(m, xs_m) for m in models], dx)
    conv_cdf = brennan_cdf(conv, dx)
    conv_xs = np.arange(conv.size) * dx

    pts = np.array([r.x for r in certified_rows])
    analytic = np.array([r.cdf for r in certified_rows])
    reference = np.interp(pts, conv_xs, conv_cdf)
    dev = np.abs(analytic - reference)
    threshold = BRENNAN_CDF_TOLERANCE + max(r.cdf_bound for r in certified_rows)
    worst = float(dev.max())
    return ComparisonReport(label="brennan", sample_count=int(conv.size),
                            max_abs_deviation=worst,
                            threshold=float(threshold),
                            passed=worst <= threshold,
                            grid=[float(v) for v in pts],
                            deviations=[float(v) for v in dev])


# ----------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------
def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sumstat",
        description="Certified PDF/CDF curves for sums of independent "
                    "positive envelopes, plus validation oracles.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, blurb in (("pdf", "evaluate the sum's density curve"),
                        ("cdf", "evaluate the sum's distribution curve")):
        cmd = sub.add_parser(name, help=blurb, description=(
            blurb + "; the CSV carries the full curve row (both pdf and "
            "cdf columns with their tail bounds) either way."))
        cmd.add_argument("--config", required=True,
                         help="path to a JSON scenario config")
        cmd.add_argument("--out", required=True, help="output CSV path")

    val = sub.add_parser(
        "validate", help="cross-check the analytic curves against oracles")
    val.add_argument("--config", required=True)
    val.add_argument("--oracle", choices=("mc", "brennan", "both"),
                     help="which oracle to run (default: config's choice)")
    val.add_argument("--samples", type=int, help="Monte Carlo draw count")
    val.add_argument("--seed", type=int, help="Monte Carlo seed")
    val.add_argument("--out", help="write the JSON report here "
                                   "(default: stdout)")
    val.add_argument("--sample-config",
                     help="draw oracle samples from this scenario instead "
                          "of --config (sensitivity and negative controls)")

    trm = sub.add_parser(
        "terms", help="report term-count selection and certification reach")
    trm.add_argument("--config", required=True)
    trm.add_argument("--epsilon", type=float,
                     help="override the config tolerance")
    trm.add_argument("--xmax", type=float,
                     help="override the config domain edge")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.command in ("pdf", "cdf"):
            return run_evaluate(config, args.out)
        if args.command == "terms":
            return run_terms(config, args.epsilon, args.xmax)
        sample_cfg = None
        if args.sample_config:
            sample_cfg = load_config(args.sample_config)
        return run_validate(config, args.oracle, args.samples, args.seed,
                            args.out, sample_cfg)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 3
    except OSError as exc:
        print("i/o error: %s" % exc, file=sys.stderr)
        return 3
    except ValueError as exc:
        print("evaluation failed: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
