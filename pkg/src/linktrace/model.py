"""Logistic (Rasch-type) link model and model-based inclusion probabilities.

A person j is linked to sampled venue i with probability
sigmoid(alpha_i + beta_j).  For frame-covered people the sampling design
adds the chance n/N of entering through their own venue, giving

    incl_u1(j) = 1 - (1 - n/N) * prod_i (1 - p_ij)        >= n/N
    incl_u2(j) = 1 - prod_i (1 - p_ij)

Estimated inclusion probabilities are clamped away from 0/1 before they
are used as divisors; clamping is counted and logged by the callers.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from ._numeric import sigmoid, softplus

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
PROB_CEIL = 1.0 - 1e-12


class Portion(enum.Enum):
    """Which part of the population a parameter set describes."""

    U1 = 1  # covered by the venue frame
    U2 = 2  # outside the frame


@dataclass(frozen=True)
class FrameGeometry:
    """n sampled venues out of an N-venue frame."""

    n_sampled: int
    n_frame: int

    def __post_init__(self):
        if not 1 <= self.n_sampled <= self.n_frame:
            raise InvalidArgument(
                f"need 1 <= n <= N, got n={self.n_sampled}, N={self.n_frame}"
            )

    @property
    def venue_fraction(self) -> float:
        return self.n_sampled / self.n_frame


@dataclass(frozen=True)
class RaschParams:
    """Venue effects and latent-effect scale for one portion."""

    alpha: np.ndarray
    sigma: float
    portion: Portion

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if not np.isfinite(alpha).all():
            raise InvalidArgument("venue effects must be finite")
        if self.sigma < 0:
            raise InvalidArgument("sigma must be nonnegative")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)


def link_prob(alpha_i: float, beta_j: float) -> float:
    """sigmoid(alpha_i + beta_j), stable for extreme arguments."""
    return float(sigmoid(alpha_i + beta_j))


def _no_link_log(alpha: np.ndarray, beta_j: float) -> float:
    # log prod_i (1 - p_ij) = -sum_i softplus(alpha_i + beta_j)
    return -float(softplus(alpha + beta_j).sum())


def inclusion_prob_u1(params: RaschParams, beta_j: float, geom: FrameGeometry) -> float:
    """Chance a frame-covered person enters the sample (own venue or link)."""
    if params.portion is not Portion.U1:
        raise InvalidArgument("inclusion_prob_u1 requires U1 parameters")
    f = geom.venue_fraction
    return 1.0 - (1.0 - f) * float(np.exp(_no_link_log(params.alpha, beta_j)))


def inclusion_prob_u2(params: RaschParams, beta_j: float) -> float:
    """Chance an off-frame person is linked to at least one sampled venue."""
    if params.portion is not Portion.U2:
        raise InvalidArgument("inclusion_prob_u2 requires U2 parameters")
    return -float(np.expm1(_no_link_log(params.alpha, beta_j)))


def clamp_probs(p: np.ndarray) -> tuple[np.ndarray, int]:
    """Clamp probabilities into [1e-12, 1-1e-12] for use as divisors.

    Returns the clamped array and the number of entries that moved.
    """
    p = np.asarray(p, dtype=float)
    clipped = np.clip(p, PROB_FLOOR, PROB_CEIL)
    n_clamped = int((clipped != p).sum())
    if n_clamped:
        log.warning("clamped %d inclusion probabilities into [%g, %g]",
                    n_clamped, PROB_FLOOR, PROB_CEIL)
    return clipped, n_clamped
