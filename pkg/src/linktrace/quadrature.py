"""Gauss-Hermite quadrature against the standard normal density and
quadrature-approximated link-pattern cell probabilities.

A pattern cell probability is the chance that a randomly drawn person,
whose per-venue link propensity follows a logistic model with a shared
N(0, 1) latent effect scaled by ``sigma``, exhibits a given 0/1 link
pattern across the ``n`` venues:

    cell(x) = sum_t nu_t * prod_i exp[x_i (alpha_i + sigma z_t)]
                               / (1 + exp(alpha_i + sigma z_t))

with nodes z_t and weights nu_t normalized for the N(0, 1) density.
All products are accumulated in log space.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import logsumexp

from .errors import InvalidArgument
from ._numeric import softplus

__all__ = ["QuadratureRule", "LinkPattern", "make_rule", "cell_prob", "cell_prob_excluding"]


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights for expectations against N(0, 1). Immutable."""

    q: int
    nodes: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "log_weights", np.log(self.weights))
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)
        self.log_weights.setflags(write=False)


@dataclass(frozen=True)
class LinkPattern:
    """A 0/1 link-indicator vector with its popcount cached."""

    bits: np.ndarray
    count_ones: int = field(init=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int8)
        if bits.ndim != 1 or not np.isin(bits, (0, 1)).all():
            raise InvalidArgument("pattern bits must be a 1-D 0/1 vector")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "count_ones", int(bits.sum()))

    def __len__(self) -> int:
        return self.bits.shape[0]


def make_rule(q: int) -> QuadratureRule:
    """Build the q-node rule via the Hermite-polynomial eigenvalue method,
    rescaled from weight exp(-x^2) to the N(0, 1) density (z = sqrt(2) x,
    nu = w / sqrt(pi)).  Deterministic for fixed q.
    """
    if q < 2:
        raise InvalidArgument(f"need at least 2 quadrature nodes, got q={q}")
    x, w = hermgauss(int(q))
    return QuadratureRule(q=int(q), nodes=np.sqrt(2.0) * x, weights=w / np.sqrt(np.pi))


def _log_cell_terms(alpha: np.ndarray, sigma: float, bits: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    # log of each node's contribution: log nu_t + sum_i log-sigmoid terms
    a = alpha[None, :] + sigma * rule.nodes[:, None]         # (q, n)
    # x_i*a - softplus(a) == -softplus((1-2x)*a), the log Bernoulli factor
    signs = 1.0 - 2.0 * bits
    return rule.log_weights - softplus(signs[None, :] * a).sum(axis=1)


def cell_prob(alpha, sigma: float, x: LinkPattern, rule: QuadratureRule) -> float:
    """Probability that a random person shows link pattern ``x`` across the
    n venues with effects ``alpha`` and latent-effect scale ``sigma``.
    """
    alpha = np.asarray(alpha, dtype=float)
    if len(x) != alpha.shape[0]:
        raise InvalidArgument(
            f"pattern length {len(x)} does not match {alpha.shape[0]} venue effects"
        )
    if sigma < 0:
        raise InvalidArgument("sigma must be nonnegative")
    return float(np.exp(logsumexp(_log_cell_terms(alpha, float(sigma), x.bits, rule))))


def cell_prob_excluding(alpha, sigma: float, excluded_venue: int, x: LinkPattern, rule: QuadratureRule) -> float:
    """Same as :func:`cell_prob` but the product skips ``excluded_venue``
    (0-based), for members of that venue whose own-venue link is undefined.
    """
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.shape[0]
    if not 0 <= excluded_venue < n:
        raise InvalidArgument(f"excluded venue index {excluded_venue} out of range for n={n}")
    if len(x) != n - 1:
        raise InvalidArgument(f"pattern length {len(x)} must be n-1 = {n - 1}")
    keep = np.delete(np.arange(n), excluded_venue)
    return cell_prob(alpha[keep], sigma, x, rule)
