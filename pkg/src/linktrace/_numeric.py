"""Shared numerically-stable scalar/array primitives."""
from __future__ import annotations

import numpy as np


def sigmoid(x):
    """exp(x)/(1+exp(x)), stable for large |x|."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softplus(x):
    """log(1+exp(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if out.ndim == 0:
        return float(out)
    return out


def log_sigmoid(x):
    """log of sigmoid(x) = -softplus(-x)."""
    return -softplus(-np.asarray(x, dtype=float))


def logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


def log1mexp(x):
    """log(1 - exp(x)) for x < 0, stable near both 0 and -inf."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > -np.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))
    if out.ndim == 0:
        return float(out)
    return out
