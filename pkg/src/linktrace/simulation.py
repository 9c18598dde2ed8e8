"""Synthetic populations and the replicated Monte Carlo harness.

Two generator families are provided.  The first draws additive venue and
person link effects (the fitted model is correctly specified); the
second uses a two-class venue-by-class logit table, a deliberate
misspecification stressing the estimators.  Venue sizes follow a
zero-truncated negative binomial; the continuous response is noncentral
chi-square with two degrees of freedom (sampled exactly through its
Poisson mixture), the binary response is Bernoulli.

The harness replays the design r times, fits, estimates, optionally
bootstraps, and aggregates relative bias / root relative MSE / median
(absolute) relative error per estimator, plus coverage and relative
lengths per interval.  Everything is reproducible from a single master
seed; replicates run on independent substreams so any worker count gives
identical output.
"""
from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bootstrap import BootConfig, bootstrap_estimates
from .errors import InvalidArgument, LinktraceError
from .estimators import EstimateSet, compute_estimates
from .likelihood import FitOptions, fit_conditional, fit_unconditional
from .model import FrameGeometry, Portion
from .quadrature import make_rule
from .sampling import (ExplicitLinks, LatentClassLinks, LtsSample, Population,
                       RaschLinks, draw_sample, observed_counts)
from ._numeric import sigmoid, softplus

__all__ = [
    "PopulationKind", "PopulationSpec", "McConfig", "McMetricRow", "McReport",
    "synth_population", "correlation_check", "run_monte_carlo",
    "replicate_rows", "metrics_from_rows", "true_parameters",
    "CONTINUOUS", "BINARY",
]

CONTINUOUS = "continuous"
BINARY = "binary"

_STREAM_POP = 0
_STREAM_DRAW = 1
_STREAM_BOOT = 2


class PopulationKind(enum.Enum):
    ADDITIVE = "additive"          # person-level latent effects, model holds
    LATENT_CLASS = "latent_class"  # two-class misspecification
    EXPLICIT_FILE = "explicit_file"


@dataclass(frozen=True)
class PopulationSpec:
    """Constants of a synthetic population.

    Defaults reproduce the additive-effect population; use
    :meth:`latent_class` for the two-class variant.  ``link_scale`` maps
    a venue of size M to the effect c / (0.001 + M**0.25).
    """

    kind: PopulationKind = PopulationKind.ADDITIVE
    n_frame: int = 150
    size_mean: float = 8.0
    size_var: float = 24.0
    tau2: int = 400
    link_scale: tuple[float, float] = (-5.45, -5.85)
    chi2_gain: tuple[float, float] = (87.0, 65.0)
    bernoulli_gain: tuple[float, float] = (0.6, 0.39)
    # latent-class constants
    class_intercept: tuple[float, float] = (0.25, 0.05)
    class_effects: tuple[float, float] = (1.5, 0.0)
    interaction_sd: float = 1.25
    class_probs: tuple[float, float] = (0.3, 0.7)
    path: str | None = None        # explicit-file populations

    @staticmethod
    def additive() -> "PopulationSpec":
        return PopulationSpec()

    @staticmethod
    def latent_class() -> "PopulationSpec":
        # frame-portion link scale calibrated so the n=15 sampling
        # fraction is 0.5; the off-frame portion keeps its sparse scale,
        # which makes off-frame fits genuinely fragile
        return PopulationSpec(kind=PopulationKind.LATENT_CLASS,
                              link_scale=(-6.93, -12.0),
                              chi2_gain=(65.05, 50.05),
                              bernoulli_gain=(0.46, 0.33))


def _zero_truncated_nbinom(mean: float, var: float, size: int,
                           rng: np.random.Generator) -> np.ndarray:
    if var <= mean:
        raise InvalidArgument("negative binomial needs variance > mean")
    p = mean / var
    r = mean * mean / (var - mean)
    out = rng.negative_binomial(r, p, size=size)
    while (zero := out == 0).any():
        out[zero] = rng.negative_binomial(r, p, size=int(zero.sum()))
    return out.astype(np.int64)


def _noncentral_chi2_df2(psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Poisson(psi/2)-mixed central chi-square with 2 + 2K df: exact
    k = rng.poisson(psi / 2.0)
    return rng.chisquare(2.0 + 2.0 * k)


def synth_population(spec: PopulationSpec, rng: np.random.Generator) -> Population:
    """Materialize one population instance from a spec.

    Sizes, effects, class labels, and responses are drawn once; link
    indicators stay probabilistic (realized per sample draw).
    """
    if spec.kind is PopulationKind.EXPLICIT_FILE:
        raise InvalidArgument("explicit-file populations are loaded, not synthesized")
    sizes = _zero_truncated_nbinom(spec.size_mean, spec.size_var, spec.n_frame, rng)
    tau1 = int(sizes.sum())
    alpha = [spec.link_scale[k] / (0.001 + sizes.astype(float) ** 0.25) for k in range(2)]

    y: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    if spec.kind is PopulationKind.ADDITIVE:
        betas = [rng.standard_normal(tau1), rng.standard_normal(spec.tau2)]
        links = [RaschLinks(alpha=alpha[k], beta=betas[k]) for k in range(2)]
        response_drive = betas
    else:
        probs = list(spec.class_probs)
        link_classes = [rng.choice(2, size=t, p=probs) for t in (tau1, spec.tau2)]
        tables = []
        for k in range(2):
            inter = rng.normal(0.0, spec.interaction_sd, size=spec.n_frame)
            table = np.empty((spec.n_frame, 2))
            table[:, 0] = spec.class_intercept[k] + alpha[k] + spec.class_effects[0] + inter
            table[:, 1] = spec.class_intercept[k] + alpha[k] + spec.class_effects[1]
            tables.append(table)
        links = [LatentClassLinks(logit_table=tables[k], classes=link_classes[k])
                 for k in range(2)]
        # responses ride on an independent class draw with the same mixture,
        # keeping them uncorrelated with the link propensities
        resp_classes = [rng.choice(2, size=t, p=probs) for t in (tau1, spec.tau2)]
        effects = np.asarray(spec.class_effects)
        response_drive = [spec.class_intercept[k] + effects[resp_classes[k]]
                          for k in range(2)]

    yc, yb = [], []
    for k in range(2):
        s = sigmoid(response_drive[k])
        psi = 5.0 + spec.chi2_gain[k] * s
        yc.append(_noncentral_chi2_df2(psi, rng))
        yb.append((rng.random(s.shape) < spec.bernoulli_gain[k] * s).astype(float))
    y[CONTINUOUS] = (yc[0], yc[1])
    y[BINARY] = (yb[0], yb[1])

    return Population(venue_sizes=sizes, y=y, links1=links[0], links2=links[1],
                      meta={"spec": spec})


def true_parameters(pop: Population) -> dict[tuple[str, str], float]:
    """The population parameters implied by a synthesized instance."""
    out: dict[tuple[str, str], float] = {
        ("tau1", ""): float(pop.tau1),
        ("tau2", ""): float(pop.tau2),
        ("tau", ""): float(pop.tau),
    }
    for var, (y1, y2) in pop.y.items():
        t1, t2 = float(y1.sum()), float(y2.sum())
        out[("Y1", var)] = t1
        out[("Y2", var)] = t2
        out[("Y", var)] = t1 + t2
        out[("Ybar1", var)] = t1 / pop.tau1
        out[("Ybar2", var)] = t2 / pop.tau2
        out[("Ybar", var)] = (t1 + t2) / pop.tau
    return out


def correlation_check(pop: Population, n: int, var: str | None = None,
                      rng: np.random.Generator | None = None,
                      samples: int = 50) -> tuple[float | None, float | None]:
    """Average Pearson correlation between responses and true inclusion
    probabilities over repeated venue samples of size n."""
    if isinstance(pop.links1, ExplicitLinks) or isinstance(pop.links2, ExplicitLinks):
        raise InvalidArgument("correlation check needs a generator population")
    rng = rng or np.random.default_rng(0)
    var = var or next(iter(pop.y))
    f = n / pop.n_frame
    y1, y2 = pop.y[var]

    def corr(y: np.ndarray, pi: np.ndarray) -> float | None:
        if np.std(y) == 0.0 or np.std(pi) == 0.0:
            return None
        return float(np.corrcoef(y, pi)[0, 1])

    rhos1, rhos2 = [], []
    for _ in range(samples):
        venues = np.sort(rng.choice(pop.n_frame, size=n, replace=False))
        no1 = np.exp(-softplus(pop.links1.logits(venues)).sum(axis=0))
        no2 = np.exp(-softplus(pop.links2.logits(venues)).sum(axis=0))
        r1 = corr(y1, 1.0 - (1.0 - f) * no1)
        r2 = corr(y2, 1.0 - no2)
        if r1 is not None:
            rhos1.append(r1)
        if r2 is not None:
            rhos2.append(r2)
    return (float(np.mean(rhos1)) if rhos1 else None,
            float(np.mean(rhos2)) if rhos2 else None)


# --------------------------------------------------------------------------
# Monte Carlo harness

@dataclass(frozen=True)
class McConfig:
    population: PopulationSpec
    n: int = 15
    r: int = 300
    methods: tuple[str, ...] = ("U",)
    estimators: tuple[str, ...] = ("mle", "ht", "hk")
    q: int = 15
    fit: FitOptions = field(default_factory=FitOptions)
    bootstrap: BootConfig | None = None
    master_seed: int = 0
    persist_samples: bool = False

    def __post_init__(self):
        if self.r < 1:
            raise InvalidArgument("need at least one replicate")
        for m in self.methods:
            if m not in ("U", "C"):
                raise InvalidArgument(f"unknown fit method {m!r}")
        for e in self.estimators:
            if e not in ("mle", "ht", "hk"):
                raise InvalidArgument(f"unknown estimator family {e!r}")


@dataclass
class ReplicateRecord:
    replicate: int
    method: str
    estimator: str
    parameter: str
    variable: str
    value: float | None
    sd: float | None
    ci_kind: str | None
    ci_lower: float | None
    ci_upper: float | None
    failed: bool
    failure_reason: str | None


@dataclass
class McMetricRow:
    method: str
    estimator: str
    parameter: str
    variable: str
    true_value: float
    n_success: int
    n_fail: int
    r_bias: float | None
    sqrt_r_mse: float | None
    mdre: float | None
    mdare: float | None
    ci_n: int
    cp: float | None
    mrl: float | None
    mdrl: float | None


@dataclass
class McReport:
    rows: list[McMetricRow]
    failure_pct: dict[tuple[str, str], float]       # (method, portion) -> percent
    r: int
    true_values: dict[tuple[str, str], float]

    def row(self, method: str, estimator: str, parameter: str,
            variable: str = "") -> McMetricRow:
        for row in self.rows:
            if (row.method, row.estimator, row.parameter, row.variable) == \
                    (method, estimator, parameter, variable):
                return row
        raise KeyError((method, estimator, parameter, variable))


def _records_from_set(est: EstimateSet, idx: int, method: str,
                      enabled: tuple[str, ...]) -> list[ReplicateRecord]:
    rows = []
    for (estimator, parameter, variable), rec in sorted(est.records.items()):
        if estimator not in enabled:
            continue
        ci = rec.ci
        rows.append(ReplicateRecord(
            replicate=idx, method=method, estimator=estimator, parameter=parameter,
            variable=variable, value=rec.value, sd=rec.sd,
            ci_kind=ci.kind if ci else None,
            ci_lower=ci.lower if ci else None,
            ci_upper=ci.upper if ci else None,
            failed=rec.missing, failure_reason=rec.missing_reason))
    return rows


def _failed_records(idx: int, method: str, enabled: tuple[str, ...],
                    variables: list[str], reason: str) -> list[ReplicateRecord]:
    rows = []
    for estimator in enabled:
        for parameter in ("tau1", "tau2", "tau"):
            if estimator in ("mle", "ht"):
                rows.append(ReplicateRecord(idx, method, estimator, parameter, "",
                                            None, None, None, None, None, True, reason))
        for var in variables:
            params = (("Y1", "Y2", "Y", "Ybar1", "Ybar2", "Ybar")
                      if estimator in ("ht", "hk") else ())
            for parameter in params:
                rows.append(ReplicateRecord(idx, method, estimator, parameter, var,
                                            None, None, None, None, None, True, reason))
    return rows


def replicate_rows(pop: Population, config: McConfig, idx: int,
                   ) -> tuple[list[ReplicateRecord], dict, LtsSample]:
    """Run one full replicate: draw, fit, estimate, optionally bootstrap."""
    rng = np.random.default_rng(
        np.random.SeedSequence([config.master_seed, _STREAM_DRAW, idx]))
    sample = draw_sample(pop, config.n, rng)
    counts = observed_counts(sample)
    geom = FrameGeometry(config.n, pop.n_frame)
    rule = make_rule(config.q)

    rows: list[ReplicateRecord] = []
    portion_failures: dict = {}
    for mi, method in enumerate(config.methods):
        fitter = fit_conditional if method == "C" else fit_unconditional
        try:
            fit1 = fitter(counts, geom, Portion.U1, rule, config.fit)
            fail1 = None
        except LinktraceError as exc:
            fail1 = f"{type(exc).__name__}: {exc}"
        if fail1 is not None:
            rows.extend(_failed_records(idx, method, config.estimators,
                                        sample.variables, fail1))
            portion_failures[(method, "U1")] = fail1
            portion_failures[(method, "U2")] = fail1
            continue
        fit2 = None
        fail2 = None
        if sample.r2 > 0:
            try:
                fit2 = fitter(counts, geom, Portion.U2, rule, config.fit)
            except LinktraceError as exc:
                fail2 = f"{type(exc).__name__}: {exc}"
        else:
            fail2 = "NonIdentifiable: no off-frame people were observed"
        if fail2 is not None:
            portion_failures[(method, "U2")] = fail2

        if config.bootstrap is not None:
            boot_rng = np.random.default_rng(
                np.random.SeedSequence([config.master_seed, _STREAM_BOOT, idx, mi]))
            est = bootstrap_estimates(sample, fit1, fit2, geom, rule,
                                      config.bootstrap, boot_rng, config.fit,
                                      fit2_failure=fail2)
        else:
            est = compute_estimates(sample, fit1, fit2, geom, rule, fit2_failure=fail2)
        rows.extend(_records_from_set(est, idx, method, config.estimators))
    return rows, portion_failures, sample


# worker-side state for process pools
_WORKER: dict = {}


def _init_worker(config: McConfig, population: Population | None):
    pop = population if population is not None else synth_population(
        config.population, np.random.default_rng(
            np.random.SeedSequence([config.master_seed, _STREAM_POP])))
    _WORKER["pop"] = pop
    _WORKER["config"] = config


def _run_worker(idx: int):
    rows, failures, sample = replicate_rows(_WORKER["pop"], _WORKER["config"], idx)
    keep = sample if _WORKER["config"].persist_samples else None
    return idx, rows, failures, keep


def run_monte_carlo(config: McConfig, workers: int = 1,
                    population: Population | None = None,
                    ) -> tuple[McReport, list[ReplicateRecord], list[LtsSample | None]]:
    """Replicate the design r times and aggregate performance metrics.

    ``population`` bypasses synthesis (explicit-file populations).
    Output is identical for any worker count: the population and every
    replicate derive from fixed substreams of the master seed, and
    aggregation orders strictly by replicate index.
    """
    pop = population if population is not None else synth_population(
        config.population, np.random.default_rng(
            np.random.SeedSequence([config.master_seed, _STREAM_POP])))
    truth = true_parameters(pop)

    results: list = [None] * config.r
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(config, population)) as pool:
            for idx, rows, failures, sample in pool.map(_run_worker, range(config.r),
                                                        chunksize=8):
                results[idx] = (rows, failures, sample)
    else:
        for idx in range(config.r):
            rows, failures, sample = replicate_rows(pop, config, idx)
            results[idx] = (rows, failures, sample)

    all_rows = [row for rows, _, _ in results for row in rows]
    samples = [sample for _, _, sample in results]

    failure_pct: dict[tuple[str, str], float] = {}
    for method in config.methods:
        u1 = sum(1 for _, f, _ in results if (method, "U1") in f)
        u2 = sum(1 for _, f, _ in results if (method, "U2") in f)
        u = sum(1 for _, f, _ in results
                if (method, "U1") in f or (method, "U2") in f)
        failure_pct[(method, "U1")] = 100.0 * u1 / config.r
        failure_pct[(method, "U2")] = 100.0 * u2 / config.r
        failure_pct[(method, "U")] = 100.0 * u / config.r

    report = McReport(rows=metrics_from_rows(all_rows, truth),
                      failure_pct=failure_pct, r=config.r, true_values=truth)
    return report, all_rows, samples


def metrics_from_rows(rows: list[ReplicateRecord],
                      truth: dict[tuple[str, str], float]) -> list[McMetricRow]:
    """Aggregate per-replicate records into the performance metrics.

    Re-running this on persisted records reproduces the report exactly.
    """
    groups: dict[tuple[str, str, str, str], list[ReplicateRecord]] = {}
    for row in rows:
        groups.setdefault((row.method, row.estimator, row.parameter, row.variable),
                          []).append(row)
    out: list[McMetricRow] = []
    for key in sorted(groups):
        method, estimator, parameter, variable = key
        recs = sorted(groups[key], key=lambda r: r.replicate)
        theta = truth[(parameter, variable)]
        vals = np.array([r.value for r in recs if not r.failed], dtype=float)
        n_fail = sum(r.failed for r in recs)
        if vals.size and theta != 0.0:
            err = (vals - theta) / theta
            r_bias = float(err.mean())
            sqrt_r_mse = float(np.sqrt((err ** 2).mean()))
            mdre = float(np.median(err))
            mdare = float(np.median(np.abs(err)))
        else:
            r_bias = sqrt_r_mse = mdre = mdare = None
        cis = [(r.ci_lower, r.ci_upper) for r in recs
               if not r.failed and r.ci_lower is not None]
        if cis and theta != 0.0:
            lo = np.array([c[0] for c in cis])
            hi = np.array([c[1] for c in cis])
            cp = float(((lo <= theta) & (theta <= hi)).mean())
            rel_len = (hi - lo) / theta
            mrl = float(rel_len.mean())
            mdrl = float(np.median(rel_len))
        else:
            cp = mrl = mdrl = None
        out.append(McMetricRow(method, estimator, parameter, variable, theta,
                               int(vals.size), int(n_fail), r_bias, sqrt_r_mse,
                               mdre, mdare, len(cis), cp, mrl, mdrl))
    return out
