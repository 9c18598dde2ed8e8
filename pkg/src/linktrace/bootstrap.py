"""Finite-population parametric bootstrap for variances and confidence
intervals.

A pseudo-population is built from one realized sample: the observed
venue sizes are tiled across the frame (trimmed so they never exceed the
fitted frame-portion size), fitted venue effects ride along, everyone
observed keeps their predicted latent effect and response value, and the
unobserved remainder gets the zero-pattern prediction plus responses
drawn from a regression of response on estimated inclusion probability.
Each bootstrap replicate redraws venues and links, refits, and recomputes
every estimator.  Replicate spread is summarized by Huber's proposal-2
scale (robust to the occasional wild refit), and intervals use a
lognormal form for sizes, Korn-Graubard for proportions, and normal
(Wald) for totals and continuous means.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import f as f_dist
from scipy.stats import norm

from .errors import DegenerateWorld, InvalidArgument, LinktraceError
from .estimators import (EstimateSet, SIZE_PARAMS, MEAN_PARAMS,
                         compute_estimates, inclusion_for_sample)
from .likelihood import FitOptions, RaschFit, fit_conditional, fit_unconditional
from .model import FrameGeometry, Portion
from .quadrature import LinkPattern, QuadratureRule
from .sampling import LtsSample, PersonRecord, Stratum, observed_counts
from ._numeric import sigmoid

log = logging.getLogger(__name__)

__all__ = [
    "BootConfig", "BootWorld", "CiRecord", "RegressionMode",
    "build_boot_world", "boot_replicate", "huber_scale",
    "ci_lognormal_size", "ci_korn_graubard", "ci_wald", "bootstrap_estimates",
]


class RegressionMode(enum.Enum):
    AUTO = "auto"
    FORCE_LINEAR = "linear"
    FORCE_LOGISTIC = "logistic"


@dataclass(frozen=True)
class BootConfig:
    B: int = 50
    alpha_level: float = 0.05
    huber_tuning: float = 1.5
    regression_mode: RegressionMode = RegressionMode.AUTO

    def __post_init__(self):
        if self.B < 2:
            raise InvalidArgument("need at least B=2 bootstrap replicates")
        if not 0.0 < self.alpha_level < 1.0:
            raise InvalidArgument("alpha_level must be in (0, 1)")


@dataclass(frozen=True)
class CiRecord:
    parameter: str
    lower: float
    upper: float
    kind: str                    # "lognormal_size" | "korn_graubard" | "wald"
    sd_used: float
    degenerate: bool = False


# --------------------------------------------------------------------------
# pseudo-population construction

@dataclass
class BootWorld:
    """The bootstrap pseudo-population plus everything a replicate needs."""

    m_boot: np.ndarray                    # cluster sizes, length N_boot
    alpha1: np.ndarray                    # venue effects aligned to m_boot
    alpha2: np.ndarray | None
    beta1: np.ndarray                     # latent effects, length floor(tau1_hat)
    beta2: np.ndarray | None              # length floor(tau2_hat), None if no U2 side
    y1: dict[str, np.ndarray]
    y2: dict[str, np.ndarray] | None
    n: int                                # venues per replicate
    variables: list[str]
    binary: dict[str, bool]
    method: str                           # "U" | "C"
    sigma1: float                         # refit warm starts
    sigma2: float | None
    opts: FitOptions
    rule: QuadratureRule

    @property
    def n_boot(self) -> int:
        return int(self.m_boot.shape[0])

    @property
    def geometry(self) -> FrameGeometry:
        return FrameGeometry(self.n, self.n_boot)


def _is_binary(y: np.ndarray) -> bool:
    return bool(np.isin(y, (0.0, 1.0)).all())


def _linear_predictor(x: np.ndarray, y: np.ndarray):
    """OLS of y on x with intercept; None when numerically singular."""
    if x.size < 3:
        return None
    X = np.column_stack([np.ones_like(x), x])
    if np.linalg.cond(X) > 1e10:
        return None
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < 2:
        return None
    resid = y - X @ coef
    res_var = float(resid @ resid) / (x.size - 2)
    return coef, res_var


def _logistic_predictor(x: np.ndarray, y: np.ndarray):
    """IRLS logistic fit of y on x with intercept; None when singular."""
    if x.size < 3 or len(np.unique(y)) < 2:
        return None
    X = np.column_stack([np.ones_like(x), x])
    if np.linalg.cond(X) > 1e10:
        return None
    coef = np.zeros(2)
    for _ in range(50):
        p = sigmoid(X @ coef)
        w = np.clip(p * (1.0 - p), 1e-10, None)
        try:
            step = np.linalg.solve((X * w[:, None]).T @ X, X.T @ (y - p))
        except np.linalg.LinAlgError:
            return None
        coef = coef + step
        if np.abs(step).max() < 1e-10:
            break
        if np.abs(coef).max() > 1e3:      # separation
            return None
    return coef


def _predict_tail_y(pi_obs: np.ndarray, y_obs: np.ndarray, pi0: float, count: int,
                    binary: bool, rng: np.random.Generator) -> np.ndarray:
    """Responses for unobserved people: regression prediction at the
    zero-pattern inclusion probability plus model noise, falling back to
    the observed mean/variance when the design is singular."""
    if count <= 0:
        return np.empty(0)
    if binary:
        fit = _logistic_predictor(pi_obs, y_obs)
        p0 = float(sigmoid(fit @ np.array([1.0, pi0]))) if fit is not None else float(y_obs.mean())
        return (rng.random(count) < p0).astype(float)
    fit = _linear_predictor(pi_obs, y_obs)
    if fit is not None:
        coef, res_var = fit
        mean = float(coef @ np.array([1.0, pi0]))
        sd = math.sqrt(max(res_var, 0.0))
    else:
        mean = float(y_obs.mean())
        sd = float(y_obs.std(ddof=1)) if y_obs.size > 1 else 0.0
    return mean + sd * rng.standard_normal(count)


def build_boot_world(sample: LtsSample, fit1: RaschFit, fit2: RaschFit | None,
                     geom: FrameGeometry, rule: QuadratureRule,
                     rng: np.random.Generator,
                     config: BootConfig = BootConfig(),
                     opts: FitOptions = FitOptions()) -> BootWorld:
    """Steps: tile the observed cluster sizes to frame length (SRSWOR
    completes a partial tile), trim from the tail until the sizes fit
    under the fitted frame-portion size, replicate venue effects
    alongside, then lay out latent effects and responses with the
    observed people first and model-predicted fill behind them.
    """
    n, N = geom.n_sampled, geom.n_frame
    ms = np.asarray(sample.venue_sizes_sampled, dtype=np.int64)
    if fit1.tau_hat < ms.max():
        raise DegenerateWorld(
            f"fitted frame-portion size {fit1.tau_hat:.1f} is below the largest "
            f"observed cluster ({ms.max()})")

    a, b = divmod(N, n)
    src = np.tile(np.arange(n), a)
    if b:
        src = np.concatenate([src, rng.choice(n, size=b, replace=False)])
    m_boot = ms[src]
    while m_boot.sum() > fit1.tau_hat:
        m_boot, src = m_boot[:-1], src[:-1]

    inc1, inc2 = inclusion_for_sample(sample, fit1, fit2, geom, rule)
    mode = config.regression_mode
    binary: dict[str, bool] = {}

    t1 = int(math.floor(fit1.tau_hat))
    beta1 = np.concatenate([inc1.beta, np.full(t1 - inc1.beta.size, inc1.beta0)])
    y1: dict[str, np.ndarray] = {}
    for var in sample.variables:
        y_obs = np.array([sample.persons[i].y[var] for i in inc1.person_idx])
        binary[var] = (mode is RegressionMode.FORCE_LOGISTIC or
                       (mode is RegressionMode.AUTO and _is_binary(y_obs)))
        tail = _predict_tail_y(inc1.pi, y_obs, inc1.pi0, t1 - y_obs.size,
                               binary[var], rng)
        y1[var] = np.concatenate([y_obs, tail])

    alpha2 = beta2 = y2 = None
    if fit2 is not None and inc2 is not None and inc2.person_idx.size > 0:
        alpha2 = fit2.alpha_hat[src]
        t2 = int(math.floor(fit2.tau_hat))
        beta2 = np.concatenate([inc2.beta, np.full(t2 - inc2.beta.size, inc2.beta0)])
        y2 = {}
        for var in sample.variables:
            y_obs = np.array([sample.persons[i].y[var] for i in inc2.person_idx])
            tail = _predict_tail_y(inc2.pi, y_obs, inc2.pi0, t2 - y_obs.size,
                                   binary[var], rng)
            y2[var] = np.concatenate([y_obs, tail])

    return BootWorld(
        m_boot=m_boot, alpha1=fit1.alpha_hat[src], alpha2=alpha2,
        beta1=beta1, beta2=beta2, y1=y1, y2=y2, n=n,
        variables=list(sample.variables), binary=binary,
        method="C" if fit1.method == "conditional" else "U",
        sigma1=fit1.sigma_hat,
        sigma2=fit2.sigma_hat if fit2 is not None else None,
        opts=opts, rule=rule)


def _boot_sample(world: BootWorld, rng: np.random.Generator) -> LtsSample:
    sel = np.sort(rng.choice(world.n_boot, size=world.n, replace=False))
    starts = np.concatenate([[0], np.cumsum(world.m_boot)])
    t1 = world.beta1.size

    p1 = sigmoid(world.alpha1[sel][:, None] + world.beta1[None, :])
    x1 = (rng.random(p1.shape) < p1).astype(np.int8)
    if world.beta2 is not None:
        p2 = sigmoid(world.alpha2[sel][:, None] + world.beta2[None, :])
        x2 = (rng.random(p2.shape) < p2).astype(np.int8)

    persons: list[PersonRecord] = []
    in_venue = np.zeros(t1, dtype=bool)
    n = world.n
    for slot, v in enumerate(sel):
        members = np.arange(starts[v], starts[v + 1])
        in_venue[members] = True
        other = np.delete(np.arange(n), slot)
        for j in members:
            persons.append(PersonRecord(
                stratum=Stratum.IN_VENUE, pattern=LinkPattern(x1[other, j]),
                y={var: float(world.y1[var][j]) for var in world.variables},
                venue_slot=slot))
    for j in np.flatnonzero(~in_venue & (x1.sum(axis=0) >= 1)):
        persons.append(PersonRecord(
            stratum=Stratum.BEYOND_FRAME, pattern=LinkPattern(x1[:, j]),
            y={var: float(world.y1[var][j]) for var in world.variables}))
    if world.beta2 is not None:
        for j in np.flatnonzero(x2.sum(axis=0) >= 1):
            persons.append(PersonRecord(
                stratum=Stratum.OUTSIDE_FRAME, pattern=LinkPattern(x2[:, j]),
                y={var: float(world.y2[var][j]) for var in world.variables}))
    return LtsSample(selected_venues=sel, venue_sizes_sampled=world.m_boot[sel],
                     persons=persons, n_frame=world.n_boot, variables=world.variables)


def boot_replicate(world: BootWorld, rng: np.random.Generator) -> EstimateSet:
    """Redraw venues and links inside the pseudo-population, refit with
    the original method, and recompute every estimator.  Fit failures
    propagate to the caller, which records a missing replicate.
    """
    sample = _boot_sample(world, rng)
    counts = observed_counts(sample)
    geom = world.geometry
    sel = sample.selected_venues
    fitter = fit_conditional if world.method == "C" else fit_unconditional
    fit1 = fitter(counts, geom, Portion.U1, world.rule, world.opts,
                  start=(world.alpha1[sel], world.sigma1))
    fit2 = None
    reason = None
    if world.beta2 is not None and sample.r2 > 0:
        try:
            fit2 = fitter(counts, geom, Portion.U2, world.rule, world.opts,
                          start=(world.alpha2[sel], world.sigma2))
        except LinktraceError as exc:
            reason = f"{type(exc).__name__}: {exc}"
    elif world.beta2 is not None:
        reason = "no off-frame people were observed in the replicate"
    else:
        reason = "the pseudo-population has no off-frame side"
    return compute_estimates(sample, fit1, fit2, geom, world.rule, fit2_failure=reason)


# --------------------------------------------------------------------------
# robust scale and confidence intervals

def _huber_chi(k: float) -> float:
    # E psi_k(Z)^2 under Z ~ N(0,1)
    return float(2.0 * norm.cdf(k) - 1.0 - 2.0 * k * norm.pdf(k)
                 + 2.0 * k * k * norm.sf(k))


def huber_scale(values, tuning: float = 1.5) -> tuple[float, float]:
    """Joint location/scale M-estimate (Huber's proposal 2).

    The location solves sum psi((v - mu)/s) = 0 and the scale solves
    sum psi^2((v - mu)/s) = (B - 1) * E[psi^2(Z)], alternated to a fixed
    point.  The scale is a robust standard-deviation estimate.
    """
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size < 2:
        raise InvalidArgument("need at least two finite values")
    k = float(tuning)
    mu = float(np.median(v))
    s = float(np.median(np.abs(v - mu))) * 1.4826
    if s == 0.0:
        s = float(v.std(ddof=1))
    if s == 0.0:
        log.warning("huber_scale: zero spread, returning scale 0")
        return mu, 0.0
    chi = _huber_chi(k)
    denom = (v.size - 1) * chi
    for _ in range(500):
        u = (v - mu) / s
        psi = np.clip(u, -k, k)
        mu_new = mu + s * psi.mean()
        s_new = s * math.sqrt(float(psi @ psi) / denom)
        moved = max(abs(mu_new - mu), abs(s_new - s))
        mu, s = mu_new, s_new
        if s == 0.0:
            log.warning("huber_scale: scale collapsed to 0")
            return mu, 0.0
        if moved <= 1e-12 * s:
            break
    return mu, s


def _z_upper(alpha_level: float) -> float:
    return float(norm.ppf(1.0 - alpha_level / 2.0))


def ci_lognormal_size(tau_hat: float, nu_k: float, var_hat: float,
                      alpha_level: float, parameter: str = "size") -> CiRecord:
    """Interval assuming the excess of the size estimate over the number
    of people actually seen is lognormal."""
    sd = math.sqrt(max(var_hat, 0.0))
    excess = tau_hat - nu_k
    if excess <= 0.0 or var_hat <= 0.0:
        lo = hi = nu_k if excess <= 0.0 else tau_hat
        return CiRecord(parameter, float(lo), float(hi), "lognormal_size", sd,
                        degenerate=True)
    c = math.exp(_z_upper(alpha_level) * math.sqrt(math.log1p(var_hat / excess ** 2)))
    return CiRecord(parameter, nu_k + excess / c, nu_k + excess * c,
                    "lognormal_size", sd)


def ci_korn_graubard(p_hat: float, var_hat: float, alpha_level: float,
                     parameter: str = "proportion") -> CiRecord:
    """Clopper-Pearson-style interval at the effective sample size
    implied by the variance estimate."""
    sd = math.sqrt(max(var_hat, 0.0))
    p = min(max(p_hat, 0.0), 1.0)
    if var_hat <= 0.0:
        return CiRecord(parameter, p, p, "korn_graubard", sd, degenerate=True)
    if var_hat >= p * (1.0 - p):
        # effective sample size <= 1 (always the case at p in {0, 1}):
        # widest interval, one-sided at the boundary when p is degenerate
        return CiRecord(parameter, 0.0, 1.0, "korn_graubard", sd, degenerate=True)
    n_eff = p * (1.0 - p) / var_hat
    y_eff = n_eff * p
    a = alpha_level
    if y_eff <= 0.0:
        lower = 0.0
    else:
        d1, d2 = 2.0 * y_eff, 2.0 * (n_eff - y_eff + 1.0)
        fq = f_dist.ppf(a / 2.0, d1, d2)
        lower = d1 * fq / (d2 + d1 * fq)
    if n_eff - y_eff <= 0.0:
        upper = 1.0
    else:
        d3, d4 = 2.0 * (y_eff + 1.0), 2.0 * (n_eff - y_eff)
        fq = f_dist.ppf(1.0 - a / 2.0, d3, d4)
        upper = d3 * fq / (d4 + d3 * fq)
    return CiRecord(parameter, min(max(lower, 0.0), 1.0), min(max(upper, 0.0), 1.0),
                    "korn_graubard", sd)


def ci_wald(theta_hat: float, var_hat: float, alpha_level: float,
            parameter: str = "theta") -> CiRecord:
    """Normal-theory interval."""
    sd = math.sqrt(max(var_hat, 0.0))
    h = _z_upper(alpha_level) * sd
    return CiRecord(parameter, theta_hat - h, theta_hat + h, "wald", sd,
                    degenerate=var_hat <= 0.0)


# --------------------------------------------------------------------------
# the full variance/CI pipeline

def bootstrap_estimates(sample: LtsSample, fit1: RaschFit, fit2: RaschFit | None,
                        geom: FrameGeometry, rule: QuadratureRule,
                        config: BootConfig, rng: np.random.Generator,
                        opts: FitOptions = FitOptions(),
                        fit2_failure: str | None = None) -> EstimateSet:
    """Point estimates with bootstrap SDs and CIs attached.

    Sizes get lognormal intervals anchored at the observed counts,
    binary-variable means get Korn-Graubard intervals, all totals and
    continuous means get Wald intervals.  Replicates whose refit fails
    are dropped and counted; parameters losing more than half their
    replicates are flagged unreliable.
    """
    point = compute_estimates(sample, fit1, fit2, geom, rule, fit2_failure=fit2_failure)
    world = build_boot_world(sample, fit1, fit2, geom, rule, rng, config, opts)
    streams = rng.spawn(config.B)
    reps: list[EstimateSet | None] = []
    failures = 0
    for child in streams:
        try:
            reps.append(boot_replicate(world, child))
        except LinktraceError as exc:
            log.debug("bootstrap replicate failed: %s", exc)
            reps.append(None)
            failures += 1

    nu_for = {"tau1": point.nu1, "tau2": point.nu2, "tau": point.nu1 + point.nu2}
    for key, rec in point.records.items():
        if rec.missing:
            continue
        estimator, parameter, variable = key
        vals = [r.records[key].value for r in reps
                if r is not None and not r.records[key].missing]
        n_missing = config.B - len(vals)
        if n_missing > config.B / 2:
            point.diagnostics.setdefault("unreliable", []).append(key)
        if len(vals) < 2:
            rec.missing_reason = "too few bootstrap replicates succeeded"
            continue
        _, scale = huber_scale(vals, config.huber_tuning)
        rec.sd = scale
        var_hat = scale * scale
        name = ".".join(filter(None, key))
        if parameter in SIZE_PARAMS:
            rec.ci = ci_lognormal_size(rec.value, nu_for[parameter], var_hat,
                                       config.alpha_level, name)
        elif parameter in MEAN_PARAMS and world.binary.get(variable, False):
            rec.ci = ci_korn_graubard(rec.value, var_hat, config.alpha_level, name)
        else:
            rec.ci = ci_wald(rec.value, var_hat, config.alpha_level, name)
    point.diagnostics["boot_failures"] = failures
    point.diagnostics["boot_B"] = config.B
    return point
