"""Model-based Horvitz-Thompson-like and Hajek-like estimators of
population sizes, totals, and means.

Each sampled person's latent link propensity is predicted by its
conditional expectation given the observed pattern, which depends on the
pattern only through the number of linked venues.  Plugging the
prediction into the inclusion-probability formulas yields weights
1/pi_hat; totals are inverse-probability sums, Hajek means are
self-normalized ratios, and means of the frame/off-frame portions divide
by the fitted maximum-likelihood sizes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, UndefinedEstimate
from .likelihood import RaschFit
from .model import FrameGeometry, Portion, clamp_probs
from .quadrature import LinkPattern, QuadratureRule
from .sampling import LtsSample, Stratum
from ._numeric import softplus

__all__ = [
    "BetaPredictor", "EstimateRecord", "EstimateSet", "PortionInclusion",
    "predict_beta", "make_beta_predictor", "inclusion_for_sample",
    "ht_total", "ht_size", "ht_mean", "hk_mean", "hk_total",
    "compute_estimates", "SIZE_PARAMS", "TOTAL_PARAMS", "MEAN_PARAMS",
]

SIZE_PARAMS = ("tau1", "tau2", "tau")
TOTAL_PARAMS = ("Y1", "Y2", "Y")
MEAN_PARAMS = ("Ybar1", "Ybar2", "Ybar")


def _beta_given_sum(alpha: np.ndarray, sigma: float, s: float, rule: QuadratureRule,
                    exclude: int | None = None) -> float:
    if exclude is not None:
        alpha = np.delete(alpha, exclude)
    z = rule.nodes
    a = alpha[None, :] + sigma * z[:, None]
    logw = rule.log_weights + sigma * z * s - softplus(a).sum(axis=1)
    w = np.exp(logw - logw.max())
    return float(sigma * (z @ w) / w.sum())


def predict_beta(fit: RaschFit, pattern: LinkPattern, excluded_venue: int | None,
                 rule: QuadratureRule) -> float:
    """Conditional expectation of a person's latent effect given their
    link pattern, at the fitted parameters.  Depends on the pattern only
    through its sum.
    """
    n = fit.alpha_hat.shape[0]
    expected = n - 1 if excluded_venue is not None else n
    if len(pattern) != expected:
        raise InvalidArgument(f"pattern length {len(pattern)} should be {expected}")
    return _beta_given_sum(fit.alpha_hat, fit.sigma_hat, pattern.count_ones, rule,
                           exclude=excluded_venue)


@dataclass
class BetaPredictor:
    """Latent-effect predictions indexed by linked-venue count, for named
    people (``named[s]``) and per venue of membership (``venue[i, s]``)."""

    fit: RaschFit
    named: np.ndarray
    venue: np.ndarray | None

    @property
    def beta0(self) -> float:
        return float(self.named[0])


def make_beta_predictor(fit: RaschFit, rule: QuadratureRule) -> BetaPredictor:
    n = fit.alpha_hat.shape[0]
    named = np.array([_beta_given_sum(fit.alpha_hat, fit.sigma_hat, s, rule)
                      for s in range(n + 1)])
    venue = None
    if fit.portion is Portion.U1 and n >= 2:
        venue = np.array([[_beta_given_sum(fit.alpha_hat, fit.sigma_hat, s, rule, exclude=i)
                           for s in range(n)] for i in range(n)])
    return BetaPredictor(fit=fit, named=named, venue=venue)


@dataclass
class PortionInclusion:
    """Per-person estimated inclusion probabilities for one portion."""

    portion: Portion
    person_idx: np.ndarray       # indices into sample.persons
    pi: np.ndarray               # clamped inclusion probabilities
    beta: np.ndarray             # predicted latent effects, same order
    beta0: float                 # prediction for the all-zero pattern
    pi0: float                   # inclusion probability at beta0
    clamp_count: int


def _u1_inclusion(alpha: np.ndarray, beta: np.ndarray, f: float) -> np.ndarray:
    no_link = np.exp(-softplus(alpha[None, :] + np.atleast_1d(beta)[:, None]).sum(axis=1))
    return 1.0 - (1.0 - f) * no_link


def _u2_inclusion(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return -np.expm1(-softplus(alpha[None, :] + np.atleast_1d(beta)[:, None]).sum(axis=1))


def inclusion_for_sample(sample: LtsSample, fit1: RaschFit, fit2: RaschFit | None,
                         geom: FrameGeometry, rule: QuadratureRule,
                         ) -> tuple[PortionInclusion, PortionInclusion | None]:
    """Predict latent effects and inclusion probabilities for everyone in
    the sample.  Members of sampled venues get the prediction that skips
    their own venue, but their inclusion probability multiplies over all
    sampled venues, using the predicted effect for the own-venue factor.
    """
    f = geom.venue_fraction
    bp1 = make_beta_predictor(fit1, rule)

    idx1, beta1 = [], []
    for i, p in enumerate(sample.persons):
        if p.stratum is Stratum.IN_VENUE:
            src = bp1.named if bp1.venue is None else bp1.venue[p.venue_slot]
            beta1.append(float(src[p.pattern.count_ones]))
        elif p.stratum is Stratum.BEYOND_FRAME:
            beta1.append(float(bp1.named[p.pattern.count_ones]))
        else:
            continue
        idx1.append(i)
    pi1_raw = _u1_inclusion(fit1.alpha_hat, np.array(beta1), f) if idx1 else np.empty(0)
    pi1, nc1 = clamp_probs(pi1_raw)
    pi0_1 = float(_u1_inclusion(fit1.alpha_hat, np.array([bp1.beta0]), f)[0])
    inc1 = PortionInclusion(Portion.U1, np.array(idx1, dtype=int), pi1,
                            np.array(beta1), bp1.beta0, pi0_1, nc1)

    inc2 = None
    if fit2 is not None:
        bp2 = make_beta_predictor(fit2, rule)
        idx2 = [i for i, p in enumerate(sample.persons) if p.stratum is Stratum.OUTSIDE_FRAME]
        beta2 = np.array([bp2.named[sample.persons[i].pattern.count_ones] for i in idx2])
        pi2_raw = _u2_inclusion(fit2.alpha_hat, beta2) if idx2 else np.empty(0)
        pi2, nc2 = clamp_probs(pi2_raw)
        pi0_2 = float(_u2_inclusion(fit2.alpha_hat, np.array([bp2.beta0]))[0])
        inc2 = PortionInclusion(Portion.U2, np.array(idx2, dtype=int), pi2,
                                np.array(beta2), bp2.beta0, pi0_2, nc2)
    return inc1, inc2


# --------------------------------------------------------------------------
# estimator arithmetic

def _ht_sum(y: np.ndarray, pi: np.ndarray) -> float:
    return float((y / pi).sum())


def ht_total(sample: LtsSample, fit1: RaschFit, fit2: RaschFit | None,
             geom: FrameGeometry, rule: QuadratureRule, var: str | None = None,
             ) -> tuple[float, float, float]:
    """Inverse-inclusion-probability estimates of the portion totals and
    their sum.  An empty off-frame stratum contributes 0.
    """
    var = var or sample.variables[0]
    inc1, inc2 = inclusion_for_sample(sample, fit1, fit2, geom, rule)
    y1 = np.array([sample.persons[i].y[var] for i in inc1.person_idx])
    t1 = _ht_sum(y1, inc1.pi)
    if inc2 is None or inc2.person_idx.size == 0:
        t2 = 0.0
    else:
        y2 = np.array([sample.persons[i].y[var] for i in inc2.person_idx])
        t2 = _ht_sum(y2, inc2.pi)
    return t1, t2, t1 + t2


def ht_size(sample: LtsSample, fit1: RaschFit, fit2: RaschFit | None,
            geom: FrameGeometry, rule: QuadratureRule) -> tuple[float, float, float]:
    """Size estimates: the total estimator applied to unit responses."""
    inc1, inc2 = inclusion_for_sample(sample, fit1, fit2, geom, rule)
    t1 = _ht_sum(np.ones(inc1.person_idx.size), inc1.pi)
    t2 = 0.0 if inc2 is None else _ht_sum(np.ones(inc2.person_idx.size), inc2.pi)
    return t1, t2, t1 + t2


def ht_mean(ht_totals: tuple[float, float, float],
            mle_sizes: tuple[float, float, float]) -> tuple[float, float, float]:
    """Totals divided by the fitted maximum-likelihood sizes."""
    if any(s <= 0 for s in mle_sizes):
        raise UndefinedEstimate("mean estimate needs positive fitted sizes")
    return tuple(t / s for t, s in zip(ht_totals, mle_sizes))


def hk_mean(ht_totals: tuple[float, float, float],
            ht_sizes: tuple[float, float, float]) -> tuple[float, float, float]:
    """Self-normalized means: totals divided by same-weighted sizes."""
    if any(s <= 0 for s in ht_sizes):
        raise UndefinedEstimate("self-normalized mean needs a nonempty stratum")
    return tuple(t / s for t, s in zip(ht_totals, ht_sizes))


def hk_total(hk_means: tuple[float, float, float],
             mle_sizes: tuple[float, float, float]) -> tuple[float, float, float]:
    """Self-normalized means scaled back up by the fitted sizes."""
    return tuple(m * s for m, s in zip(hk_means, mle_sizes))


# --------------------------------------------------------------------------
# estimate bundles

@dataclass
class EstimateRecord:
    estimator: str               # "mle" | "ht" | "hk"
    parameter: str
    variable: str                # "" for sizes
    value: float | None
    sd: float | None = None
    ci: object | None = None
    missing_reason: str | None = None

    @property
    def missing(self) -> bool:
        return self.value is None


@dataclass
class EstimateSet:
    """Point estimates for every (estimator family, parameter, variable),
    with bootstrap SDs and CIs attached later."""

    method: str                  # "U" | "C"
    records: dict[tuple[str, str, str], EstimateRecord]
    nu1: int                     # people sampled from the frame portion
    nu2: int                     # people sampled from outside the frame
    clamp_count: int = 0
    diagnostics: dict = field(default_factory=dict)

    def get(self, estimator: str, parameter: str, variable: str = "") -> EstimateRecord:
        return self.records[(estimator, parameter, variable)]

    def value(self, estimator: str, parameter: str, variable: str = "") -> float | None:
        return self.get(estimator, parameter, variable).value


def compute_estimates(sample: LtsSample, fit1: RaschFit, fit2: RaschFit | None,
                      geom: FrameGeometry, rule: QuadratureRule,
                      fit2_failure: str | None = None) -> EstimateSet:
    """Every estimator family for every response variable in the sample.

    When the off-frame fit is unavailable, off-frame and whole-population
    records are reported as missing with the failure reason.
    """
    method = "C" if fit1.method == "conditional" else "U"
    records: dict[tuple[str, str, str], EstimateRecord] = {}
    reason = fit2_failure or "off-frame fit unavailable"

    inc1, inc2 = inclusion_for_sample(sample, fit1, fit2, geom, rule)
    have2 = fit2 is not None
    clamp = inc1.clamp_count + (inc2.clamp_count if inc2 is not None else 0)

    def put(est, param, var, value, missing_reason=None):
        records[(est, param, var)] = EstimateRecord(
            estimator=est, parameter=param, variable=var,
            value=None if value is None else float(value),
            missing_reason=missing_reason)

    tau1 = fit1.tau_hat
    tau2 = fit2.tau_hat if have2 else None
    put("mle", "tau1", "", tau1)
    put("mle", "tau2", "", tau2, None if have2 else reason)
    put("mle", "tau", "", tau1 + tau2 if have2 else None, None if have2 else reason)

    ht1 = _ht_sum(np.ones(inc1.person_idx.size), inc1.pi)
    ht2 = _ht_sum(np.ones(inc2.person_idx.size), inc2.pi) if have2 else None
    put("ht", "tau1", "", ht1)
    put("ht", "tau2", "", ht2, None if have2 else reason)
    put("ht", "tau", "", ht1 + ht2 if have2 else None, None if have2 else reason)

    for var in sample.variables:
        y1 = np.array([sample.persons[i].y[var] for i in inc1.person_idx])
        t1 = _ht_sum(y1, inc1.pi)
        if have2:
            y2 = np.array([sample.persons[i].y[var] for i in inc2.person_idx])
            t2 = _ht_sum(y2, inc2.pi)
        put("ht", "Y1", var, t1)
        put("ht", "Y2", var, t2 if have2 else None, None if have2 else reason)
        put("ht", "Y", var, t1 + t2 if have2 else None, None if have2 else reason)

        put("ht", "Ybar1", var, t1 / tau1)
        put("ht", "Ybar2", var, t2 / tau2 if have2 else None, None if have2 else reason)
        put("ht", "Ybar", var, (t1 + t2) / (tau1 + tau2) if have2 else None,
            None if have2 else reason)

        hk1 = t1 / ht1 if ht1 > 0 else None
        put("hk", "Ybar1", var, hk1, None if hk1 is not None else "empty stratum")
        put("hk", "Y1", var, hk1 * tau1 if hk1 is not None else None,
            None if hk1 is not None else "empty stratum")
        if have2 and ht2 > 0:
            hk2 = t2 / ht2
            hkall = (t1 + t2) / (ht1 + ht2)
            put("hk", "Ybar2", var, hk2)
            put("hk", "Y2", var, hk2 * tau2)
            put("hk", "Ybar", var, hkall)
            put("hk", "Y", var, hkall * (tau1 + tau2))
        else:
            why = reason if not have2 else "empty stratum"
            for param in ("Ybar2", "Y2", "Ybar", "Y"):
                put("hk", param, var, None, why)

    return EstimateSet(method=method, records=records, nu1=sample.m_total + sample.r1,
                       nu2=sample.r2, clamp_count=clamp,
                       diagnostics={"fit1": fit1, "fit2": fit2,
                                    "inc1": inc1, "inc2": inc2})
