"""Maximum-likelihood fitting of the link model: joint (unconditional)
and conditional variants.

The observed-data likelihood is a product of multinomials: the split of
frame-covered people over sampled venues / the rest of the frame, the
pattern counts of people named from outside the initial sample, and one
pattern multinomial per sampled venue.  Because a pattern's cell
probability factors as exp(x . alpha) * T(sum x), the log-likelihood
depends on the data only through per-venue link totals and histograms of
pattern sums; evaluation cost is independent of the number of people.

Size updates follow the plug-in form

    tau1 = (m + r1) / (1 - (1 - n/N) * pi0)
    tau2 = r2 / (1 - pi0)

with pi0 the zero-pattern cell probability.  The joint fit folds the
size dimension into the objective: every iterate computes the exact
maximizer of the concave size profile (the plug-in value refined by a
one-dimensional root solve) and moves (alpha, sigma) by a quasi-Newton
step, keeping the objective monotone across iterations.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import digamma, gammaln, logsumexp, xlogy

from .errors import Diverged, InvalidArgument, NonIdentifiable
from .model import FrameGeometry, Portion, RaschParams
from .quadrature import QuadratureRule, make_rule
from .sampling import ObservedCounts
from ._numeric import log1mexp, logit, sigmoid, softplus

__all__ = [
    "FitOptions", "RaschFit",
    "loglik_unconditional", "loglik_conditional",
    "fit_unconditional", "fit_conditional", "tau_update",
]


@dataclass(frozen=True)
class FitOptions:
    """Knobs for the optimizer.  Everything is deterministic (no RNG)."""

    q: int = 15                      # quadrature nodes when building rules
    rel_tol: float = 1e-6           # relative objective-change stopping rule
    max_outer: int = 500            # alternating iterations (joint fit)
    max_inner: int = 200            # quasi-Newton iterations per inner step
    tau_cap: float = 1e6            # sizes above this raise Diverged
    denom_floor: float = 1e-8       # smallest admissible size-update denominator
    alpha_bound: float = 35.0
    sigma_max: float = 50.0
    sigma_init: float = 0.5
    rate_clamp: float = 1e-3        # clamp on link rates used to start alpha


@dataclass
class RaschFit:
    """Fitted parameters for one portion."""

    portion: Portion
    tau_hat: float
    alpha_hat: np.ndarray
    sigma_hat: float
    method: str                     # "unconditional" | "conditional"
    loglik: float
    converged: bool
    iterations: int
    nu_obs: int                     # people observed from this portion
    flags: dict = field(default_factory=dict)

    @property
    def params(self) -> RaschParams:
        return RaschParams(alpha=self.alpha_hat, sigma=self.sigma_hat, portion=self.portion)


# --------------------------------------------------------------------------
# sufficient statistics

@dataclass
class _PortionData:
    portion: Portion
    n: int
    m_i: np.ndarray          # sampled venue sizes (zeros for the off-frame portion)
    r: int                   # named people
    links_named: np.ndarray  # (n,) links to each venue among named people
    hist_named: np.ndarray   # (n+1,) named pattern-sum counts (index = sum)
    member_links: np.ndarray # (n, n) links from venue i's members to venue i'
    hist_member: np.ndarray  # (n, n) member pattern-sum counts (sums 0..n-1)

    @property
    def m(self) -> int:
        return int(self.m_i.sum())

    @property
    def nu(self) -> int:
        return self.m + self.r

    @property
    def saturated(self) -> bool:
        # every observed pattern has every available slot set
        full_named = self.hist_named[: self.n].sum() == 0
        full_member = self.n < 2 or self.hist_member[:, : self.n - 1].sum() == 0
        return (self.r + self.m) > 0 and full_named and full_member


def _decode(key: bytes) -> np.ndarray:
    return np.frombuffer(key, dtype=np.int8).astype(np.int64)


def portion_data(counts: ObservedCounts, portion: Portion) -> _PortionData:
    n = counts.n
    links = np.zeros(n)
    hist = np.zeros(n + 1)
    member_links = np.zeros((n, n))
    hist_member = np.zeros((n, n))
    if portion is Portion.U1:
        for key, c in counts.hist_u1.items():
            bits = _decode(key)
            links += c * bits
            hist[int(bits.sum())] += c
        for slot, h in enumerate(counts.hist_venue):
            other = np.delete(np.arange(n), slot)
            for key, c in h.items():
                bits = _decode(key)
                member_links[slot, other] += c * bits
                hist_member[slot, int(bits.sum())] += c
        return _PortionData(portion, n, counts.venue_sizes, counts.r1,
                            links, hist, member_links, hist_member)
    for key, c in counts.hist_u2.items():
        bits = _decode(key)
        links += c * bits
        hist[int(bits.sum())] += c
    return _PortionData(portion, n, np.zeros(n, dtype=np.int64), counts.r2,
                        links, hist, member_links, hist_member)


# --------------------------------------------------------------------------
# objective evaluation

def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    # logsumexp over finite inputs, without scipy's dispatch overhead
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.exp(a - m).sum(axis=axis))


def _node_quantities(alpha: np.ndarray, sigma: float, rule: QuadratureRule):
    a = alpha[None, :] + sigma * rule.nodes[:, None]      # (q, n)
    sp = softplus(a)
    return sp, sp.sum(axis=1), sigmoid(a)


def _value_and_grad(alpha: np.ndarray, sigma: float, data: _PortionData,
                    geom: FrameGeometry, rule: QuadratureRule,
                    tau: float | None, conditional: bool,
                    opts: FitOptions | None = None):
    """Log-likelihood with gradient in (alpha, sigma).

    ``tau`` feeds the unobserved-cell count of the joint likelihood;
    ``tau=None`` in joint mode maximizes the concave size profile in
    place (requires ``opts``) and folds the size-only terms in.
    ``conditional`` switches to the per-person conditional normalizer.
    Returns (value, grad alpha, grad sigma, tau used).
    """
    n = data.n
    z, lognu = rule.nodes, rule.log_weights
    sp, SP, sig = _node_quantities(alpha, sigma, rule)
    G = sig.sum(axis=1)                                   # (q,)
    S = np.arange(n + 1, dtype=float)
    LT = lognu[:, None] + sigma * z[:, None] * S[None, :] - SP[:, None]   # (q, n+1)
    logT = _lse(LT, axis=0)
    W = np.exp(LT - logT[None, :])

    kappa = 1.0 - geom.venue_fraction if data.portion is Portion.U1 else 1.0

    counts = data.hist_named.astype(float).copy()
    f = float(data.links_named @ alpha)
    galpha = data.links_named.astype(float).copy()
    gsigma = 0.0

    if conditional:
        f += float(counts @ logT)
        V = W @ counts
        U = W @ (counts * S)
        galpha -= sig.T @ V
        gsigma += float(z @ (U - V * G))
        # everyone sampled from the portion is conditioned on inclusion,
        # whose probability is 1 - kappa*pi0; this keeps the conditional
        # fit equivalent to profiling the joint likelihood over the size
        coef = data.nu
        if coef > 0 and kappa > 0.0:
            lk = np.log(kappa) + logT[0]
            f -= coef * log1mexp(lk)
            # d/dtheta of -coef*log(1 - kappa*T0)
            T0 = np.exp(logT[0])
            c = coef * kappa * T0 / -np.expm1(lk)
            dlogT0_da = -(sig.T @ W[:, 0])
            galpha += c * dlogT0_da
            gsigma += c * float(-(z * G) @ W[:, 0])
    else:
        if tau is None:
            if opts is None:
                raise InvalidArgument("profiling the size needs fit options")
            tau = _maximize_tau_at(float(np.exp(logT[0])), data, geom, opts)
        counts[0] += tau - data.nu
        f += float(counts @ logT) + _tau_terms(tau, data, geom)
        V = W @ counts
        U = W @ (counts * S)
        galpha -= sig.T @ V
        gsigma += float(z @ (U - V * G))

    if data.portion is Portion.U1 and data.m > 0:
        Sm = S[:n]
        LTv = (lognu[None, :, None] + sigma * z[None, :, None] * Sm[None, None, :]
               - (SP[None, :, None] - sp.T[:, :, None]))     # (n, q, n)
        logTv = _lse(LTv, axis=1)                            # (n, n)
        Wv = np.exp(LTv - logTv[:, None, :])
        H = data.hist_member
        f += float(data.member_links.sum(axis=0) @ alpha) + float((H * logTv).sum())
        Vv = np.einsum("iqs,is->iq", Wv, H)                  # (n, q)
        Uv = np.einsum("iqs,is,s->iq", Wv, H, Sm)
        galpha += data.member_links.sum(axis=0)
        galpha -= sig.T @ Vv.sum(axis=0) - np.einsum("qi,iq->i", sig, Vv)
        gsigma += float((z[None, :] * (Uv - Vv * (G[None, :] - sig.T))).sum())

    return f, galpha, gsigma, tau


def _tau_terms(tau: float, data: _PortionData, geom: FrameGeometry) -> float:
    # parts of the joint log-likelihood that involve only the size
    f = gammaln(tau + 1.0) - gammaln(tau - data.nu + 1.0)
    if data.portion is Portion.U1:
        f += xlogy(tau - data.m, 1.0 - geom.venue_fraction)
    return float(f)


def _full_loglik(tau: float, alpha: np.ndarray, sigma: float, data: _PortionData,
                 geom: FrameGeometry, rule: QuadratureRule) -> float:
    f, _, _, _ = _value_and_grad(alpha, sigma, data, geom, rule, tau=tau,
                                 conditional=False)
    return f


def loglik_unconditional(counts: ObservedCounts, geom: FrameGeometry, tau_k: float,
                         params: RaschParams, rule: QuadratureRule) -> float:
    """Joint log-likelihood of (tau, alpha, sigma), up to a constant that
    depends only on the data.
    """
    data = portion_data(counts, params.portion)
    if tau_k < data.nu:
        raise InvalidArgument(
            f"size {tau_k} is below the {data.nu} people observed from this portion"
        )
    if params.alpha.shape[0] != counts.n:
        raise InvalidArgument("venue-effect vector length must match sampled venues")
    return _full_loglik(float(tau_k), params.alpha, float(params.sigma), data, geom, rule)


def loglik_conditional(counts: ObservedCounts, geom: FrameGeometry,
                       params: RaschParams, rule: QuadratureRule) -> float:
    """Conditional log-likelihood of (alpha, sigma) given the observed
    counts, up to a constant depending only on the data.
    """
    data = portion_data(counts, params.portion)
    f, _, _, _ = _value_and_grad(params.alpha, float(params.sigma), data, geom, rule,
                                 tau=None, conditional=True)
    return f


def tau_update(counts: ObservedCounts, geom: FrameGeometry, params: RaschParams,
               rule: QuadratureRule, opts: FitOptions = FitOptions()) -> float:
    """Plug-in size estimate at the given parameters."""
    data = portion_data(counts, params.portion)
    pi0 = _zero_cell(params.alpha, float(params.sigma), rule)
    if pi0 >= 1.0:
        raise InvalidArgument("zero-pattern probability must be < 1")
    kappa = 1.0 - geom.venue_fraction if params.portion is Portion.U1 else 1.0
    denom = 1.0 - kappa * pi0
    if denom <= opts.denom_floor:
        raise Diverged(f"size-update denominator {denom:.3e} below {opts.denom_floor:.0e}")
    return data.nu / denom


def _zero_cell(alpha: np.ndarray, sigma: float, rule: QuadratureRule) -> float:
    _, SP, _ = _node_quantities(alpha, sigma, rule)
    return float(np.exp(_lse(rule.log_weights - SP, axis=0)))


# --------------------------------------------------------------------------
# fitting

def _init_alpha(data: _PortionData, opts: FitOptions) -> np.ndarray:
    n = data.n
    links = data.links_named + data.member_links.sum(axis=0)
    exposure = np.full(n, float(data.r))
    if data.portion is Portion.U1:
        exposure += data.m - data.m_i          # members of the other venues
    rate = np.divide(links, exposure, out=np.full(n, 0.5), where=exposure > 0)
    rate = np.clip(rate, opts.rate_clamp, 1.0 - opts.rate_clamp)
    return np.array([logit(r) for r in rate])


def _maximize_inner(alpha0: np.ndarray, sigma0: float, data: _PortionData,
                    geom: FrameGeometry, rule: QuadratureRule, opts: FitOptions,
                    tau: float | None, conditional: bool, fix_sigma: bool):
    """Quasi-Newton ascent over (alpha, log sigma) with analytic gradients."""
    n = data.n

    if fix_sigma:
        def negf(theta):
            f, ga, _, _ = _value_and_grad(theta, sigma0, data, geom, rule,
                                          tau, conditional, opts)
            return -f, -ga
        x0 = alpha0
        bounds = [(-opts.alpha_bound, opts.alpha_bound)] * n
    else:
        def negf(theta):
            sigma = float(np.exp(theta[n]))
            f, ga, gs, _ = _value_and_grad(theta[:n], sigma, data, geom, rule,
                                           tau, conditional, opts)
            return -f, -np.concatenate([ga, [gs * sigma]])
        x0 = np.concatenate([alpha0, [np.log(max(sigma0, 1e-8))]])
        bounds = [(-opts.alpha_bound, opts.alpha_bound)] * n + [(-20.0, np.log(opts.sigma_max))]

    res = minimize(negf, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": opts.max_inner, "ftol": 1e-12, "gtol": 1e-9})
    if fix_sigma:
        return res.x, sigma0, -float(res.fun), bool(res.success)
    return res.x[:n], float(np.exp(res.x[n])), -float(res.fun), bool(res.success)


def _maximize_tau_at(pi0: float, data: _PortionData, geom: FrameGeometry,
                     opts: FitOptions) -> float:
    """Exact maximizer of the concave size profile at fixed (alpha, sigma),
    clipped to [nu, tau_cap].  The plug-in estimate is its large-count
    approximation and brackets the root."""
    kappa = 1.0 - geom.venue_fraction if data.portion is Portion.U1 else 1.0
    w = kappa * pi0
    nu = data.nu
    if w <= 0.0:
        return float(nu)
    if 1.0 - w <= opts.denom_floor:
        return float(opts.tau_cap)
    logw = np.log(w)

    def slope(tau: float) -> float:
        return float(digamma(tau + 1.0) - digamma(tau - nu + 1.0) + logw)

    if slope(nu) <= 0.0:
        return float(nu)
    if slope(opts.tau_cap) >= 0.0:
        return float(opts.tau_cap)
    return float(brentq(slope, nu, opts.tau_cap, xtol=1e-10 * max(nu, 1)))


def _check_identifiable(data: _PortionData, conditional: bool):
    if data.nu < 1:
        raise NonIdentifiable(
            f"no people observed from portion {data.portion.name}; its size is not estimable"
        )
    if conditional and data.portion is Portion.U2 and data.n == 1:
        raise NonIdentifiable(
            "single venue: every named pattern is (1), the conditional "
            "likelihood carries no information"
        )


def fit_unconditional(counts: ObservedCounts, geom: FrameGeometry, portion: Portion,
                      rule: QuadratureRule | None = None,
                      opts: FitOptions = FitOptions(),
                      start: tuple[np.ndarray, float] | None = None,
                      trace: list | None = None) -> RaschFit:
    """Jointly maximize the likelihood over (tau, alpha, sigma).

    Each iteration recomputes the exact size maximizer at the current
    (alpha, sigma) and takes one quasi-Newton step on the remaining
    parameters, so the objective never decreases across iterations.
    Returns best-so-far with ``converged=False`` on budget exhaustion.
    ``start`` seeds (alpha, sigma) (bootstrap refits); ``trace`` collects
    the objective value at each accepted iterate.
    """
    rule = rule or make_rule(opts.q)
    data = portion_data(counts, portion)
    _check_identifiable(data, conditional=False)

    flags: dict = {}
    fix_sigma = data.saturated
    if fix_sigma:
        flags["saturated"] = True

    if start is not None and not fix_sigma:
        alpha = np.clip(np.asarray(start[0], dtype=float),
                        -opts.alpha_bound, opts.alpha_bound)
        sigma = min(max(float(start[1]), 1e-6), opts.sigma_max)
    else:
        alpha = _init_alpha(data, opts)
        sigma = 0.0 if fix_sigma else opts.sigma_init

    n = data.n

    def profile(alpha_: np.ndarray, sigma_: float):
        # size step folded into the objective; by Danskin's lemma the
        # profile gradient is the partial gradient at the maximizing size
        return _value_and_grad(alpha_, sigma_, data, geom, rule,
                               tau=None, conditional=False, opts=opts)

    if trace is not None:
        def record(theta):
            s_ = sigma if fix_sigma else float(np.exp(theta[n]))
            trace.append(profile(theta[:n], s_)[0])

    if fix_sigma:
        def negf(theta):
            f_, ga, _, _ = profile(theta, sigma)
            return -f_, -ga
        x0 = alpha
        bounds = [(-opts.alpha_bound, opts.alpha_bound)] * n
    else:
        def negf(theta):
            s_ = float(np.exp(theta[n]))
            f_, ga, gs, _ = profile(theta[:n], s_)
            return -f_, -np.concatenate([ga, [gs * s_]])
        x0 = np.concatenate([alpha, [np.log(max(sigma, 1e-8))]])
        bounds = [(-opts.alpha_bound, opts.alpha_bound)] * n + \
                 [(-20.0, np.log(opts.sigma_max))]

    res = minimize(negf, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   callback=record if trace is not None else None,
                   options={"maxiter": opts.max_outer, "ftol": 1e-12, "gtol": 1e-8})
    alpha = res.x if fix_sigma else res.x[:n]
    sigma = sigma if fix_sigma else float(np.exp(res.x[n]))
    f, _, _, tau = profile(alpha, sigma)

    fit = RaschFit(portion=portion, tau_hat=float(tau), alpha_hat=alpha,
                   sigma_hat=float(sigma), method="unconditional", loglik=float(f),
                   converged=bool(res.success), iterations=int(res.nit),
                   nu_obs=data.nu, flags=flags)
    if tau >= opts.tau_cap * (1.0 - 1e-12):
        raise Diverged(f"fitted size reached the cap {opts.tau_cap:.0e}", partial=fit)
    return fit


def fit_conditional(counts: ObservedCounts, geom: FrameGeometry, portion: Portion,
                    rule: QuadratureRule | None = None,
                    opts: FitOptions = FitOptions(),
                    start: tuple[np.ndarray, float] | None = None) -> RaschFit:
    """Maximize the conditional likelihood over (alpha, sigma), then set
    the size by the closed-form plug-in estimate.
    """
    rule = rule or make_rule(opts.q)
    data = portion_data(counts, portion)
    _check_identifiable(data, conditional=True)

    flags: dict = {}
    fix_sigma = data.saturated
    if fix_sigma:
        flags["saturated"] = True

    if start is not None and not fix_sigma:
        alpha0 = np.clip(np.asarray(start[0], dtype=float),
                         -opts.alpha_bound, opts.alpha_bound)
        sigma0 = min(max(float(start[1]), 1e-6), opts.sigma_max)
    else:
        alpha0 = _init_alpha(data, opts)
        sigma0 = 0.0 if fix_sigma else opts.sigma_init
    alpha, sigma, f, ok = _maximize_inner(
        alpha0, sigma0, data, geom, rule, opts, tau=None, conditional=True,
        fix_sigma=fix_sigma)

    fit = RaschFit(portion=portion, tau_hat=float("nan"), alpha_hat=alpha,
                   sigma_hat=float(sigma), method="conditional", loglik=float(f),
                   converged=ok, iterations=1, nu_obs=data.nu, flags=flags)
    params = RaschParams(alpha=alpha, sigma=sigma, portion=portion)
    try:
        tau = tau_update(counts, geom, params, rule, opts)
    except Diverged as exc:
        exc.partial = fit
        raise
    if tau > opts.tau_cap:
        raise Diverged(f"fitted size {tau:.3e} exceeds the cap {opts.tau_cap:.0e}", partial=fit)
    return replace(fit, tau_hat=float(tau))
