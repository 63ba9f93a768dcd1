"""Partition functions, posteriors and predictive densities.

``fit_posterior`` is the workhorse: it picks a method for a (family, prior)
pair, computes log Z, and returns an object that can evaluate the
posterior density, draw from it and score new observations.  The public
operations below are thin wrappers that accept :class:`Dataset` objects.

Likelihood tempering (``power`` != 1) integrates rho(theta) q(X|theta)^power
and is only supported by the non-conjugate paths.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import legendre
from scipy import optimize, special

from .conjugate import conjugate_for
from .errors import DomainError, SingularityError
from .families import Dataset, ModelFamily, Parameterization
from .mc import StreamSpec, as_stream
from .priors import Prior, default_domain

METHODS = ("auto", "conjugate_closed_form", "quadrature", "importance_sampling", "laplace")
MIN_ESS = 50
RHAT_LIMIT = 1.05


@dataclass(frozen=True)
class EvidenceMethod:
    kind: str = "auto"
    n_nodes: int = 256
    n_samples: int = 10_000
    inflation: float = 1.5
    window_sd: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ValueError(f"unknown evidence method {self.kind!r}")


@dataclass(frozen=True)
class LogEvidence:
    value: float
    std_error: float
    method: str
    n_obs: int
    diagnostics: dict = field(default_factory=dict)
    flags: tuple = ()

    @property
    def free_energy(self) -> float:
        return -self.value

    def to_json(self) -> str:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return json.dumps(d, default=float, sort_keys=True)


def _as_method(method) -> EvidenceMethod:
    if method is None:
        return EvidenceMethod()
    if isinstance(method, str):
        return EvidenceMethod(kind=method)
    return method


def _stats_of(family, data):
    if isinstance(data, Dataset):
        return family.suff_stats(data.observations), data.n
    arr = np.asarray(data, dtype=float)
    return family.suff_stats(arr), arr.shape[0]


def _check_prior(family, prior):
    if prior.family_id != family.family_id:
        raise DomainError(f"prior is for {prior.family_id!r}, family is {family.family_id!r}")


# ---------------------------------------------------------------------------
# posterior objects
# ---------------------------------------------------------------------------

@dataclass
class PosteriorDraws:
    theta: np.ndarray
    method: str
    acceptance_rate: Optional[float] = None
    rhat: Optional[np.ndarray] = None
    ess: Optional[np.ndarray] = None
    flags: tuple = ()

    def as_parameterizations(self, family_id: str) -> list:
        return [Parameterization(family_id, tuple(t)) for t in self.theta]


class Posterior:
    """Posterior under a (possibly improper) prior, with tempering ``power``."""

    def __init__(self, family, prior, stats, n_obs, evidence: LogEvidence, power=1.0):
        self.family = family
        self.prior = prior
        self.stats = stats
        self.n_obs = n_obs
        self.evidence = evidence
        self.power = power
        self._mode = None

    @property
    def log_z(self) -> float:
        return self.evidence.value

    def log_target(self, theta_batch) -> np.ndarray:
        tb = np.atleast_2d(theta_batch)
        lp = self.prior.log_density_batch(tb)
        out = np.full(tb.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if ok.any():
            out[ok] = self.power * self.family.loglik_stats(tb[ok], self.stats) + lp[ok]
        return out

    def logpdf(self, theta_batch) -> np.ndarray:
        return self.log_target(theta_batch) - self.log_z

    def laplace(self):
        if self._mode is None:
            self._mode = laplace_point(self.family, self.prior, self.stats, self.power)
        return self._mode

    def sample(self, n: int, rng, sampler: str = "auto", n_chains: int = 8) -> PosteriorDraws:
        if sampler not in ("auto", "mcmc"):
            raise ValueError(f"{type(self).__name__} cannot use sampler {sampler!r}")
        mode, cov = self.laplace()
        return rw_metropolis(self.log_target, mode, cov, n, rng, n_chains=n_chains)

    def log_predictive(self, x) -> np.ndarray:
        raise NotImplementedError


class ConjugatePosterior(Posterior):
    def __init__(self, family, prior, stats, n_obs, evidence, handler):
        super().__init__(family, prior, stats, n_obs, evidence)
        self.handler = handler

    def sample(self, n, rng, sampler="auto", n_chains=8):
        if sampler == "mcmc":
            return super().sample(n, rng, "mcmc", n_chains)
        return PosteriorDraws(self.handler.sample(self.stats, n, rng), "conjugate_closed_form")

    def mean(self) -> np.ndarray:
        return self.handler.mean(self.stats)

    def log_predictive(self, x) -> np.ndarray:
        ps = self.family.point_stats(x)
        return self.handler.log_partition(self.stats + ps) - self.log_z


class GridPosterior(Posterior):
    """Tensor-product Gauss-Legendre quadrature for K <= 2."""

    def __init__(self, family, prior, stats, n_obs, evidence, nodes, log_wf, power, window=None):
        super().__init__(family, prior, stats, n_obs, evidence, power)
        self.nodes = nodes
        self.log_wf = log_wf  # log(weight * integrand) at each node
        self.window = window

    def sample(self, n, rng, sampler="auto", n_chains=8):
        """Inverse-CDF draws on the quadrature window for K = 1, else MCMC.

        One uniform per draw keeps common random numbers aligned across priors.
        """
        if sampler == "mcmc" or self.prior.K != 1 or self.window is None:
            return super().sample(n, rng, "mcmc" if sampler == "auto" else sampler, n_chains)
        lo, hi = self.window[0][0], self.window[1][0]
        grid = np.linspace(lo, hi, 8193)
        lt = self.log_target(grid[:, None])
        dens = np.exp(lt - np.max(lt))
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        return PosteriorDraws(np.interp(rng.random(n), cdf, grid)[:, None], "inverse_cdf")

    def log_predictive(self, x) -> np.ndarray:
        ps = self.family.point_stats(x)
        ll = self.family.loglik_stats(self.nodes, ps[:, None, :])
        return special.logsumexp(self.log_wf[None, :] + ll, axis=1) - self.log_z


class WeightedPosterior(Posterior):
    """Importance-sampling representation (self-normalized predictive)."""

    def __init__(self, family, prior, stats, n_obs, evidence, draws, log_w, power):
        super().__init__(family, prior, stats, n_obs, evidence, power)
        self.draws = draws
        self.log_w = log_w

    def log_predictive(self, x) -> np.ndarray:
        ps = self.family.point_stats(x)
        ll = self.family.loglik_stats(self.draws, ps[:, None, :])
        lw = self.log_w - special.logsumexp(self.log_w)
        return special.logsumexp(lw[None, :] + ll, axis=1)


# ---------------------------------------------------------------------------
# numerical building blocks
# ---------------------------------------------------------------------------

def laplace_point(family, prior, stats, power=1.0):
    """Posterior mode and inverse negative Hessian (for windows and proposals)."""
    K = prior.K
    start = family.mle_closed(stats, K)
    x0 = start[0] if start is not None else family.initial_guess(stats, K)
    x0 = np.asarray(x0, dtype=float)
    lo = np.array([b[0] for b in family.bounds(K)])
    hi = np.array([b[1] for b in family.bounds(K)])
    if prior.domain is not None:
        lo, hi = np.maximum(lo, prior.domain.lower), np.minimum(hi, prior.domain.upper)
    span = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    inset = 1e-9 * span + 1e-12
    x0 = np.clip(x0, lo + inset, hi - inset)

    def f(t):
        v = power * family.loglik_stats(t[None], stats)[0] + prior.log_density_batch(t[None])[0]
        return -v if np.isfinite(v) else 1e300

    if prior.form != "const" or not prior.is_structured or prior.domain is not None or power != 1.0:
        res = optimize.minimize(f, x0, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000 * K})
        if res.fun < f(x0):
            x0 = res.x
    H = power * family.observed_information(x0, stats)
    H = H + _neg_hessian(lambda t: prior.log_density_batch(t[None])[0], x0)
    try:
        cov = np.linalg.inv(H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = np.diag(np.where(np.isfinite(span), (span / 20) ** 2, 1.0))
    if not np.all(np.isfinite(cov)):
        cov = np.diag(np.where(np.isfinite(span), (span / 20) ** 2, 1.0))
    return x0, cov


def _neg_hessian(fn, x):
    K = x.size
    h = 1e-4 * (1.0 + np.abs(x))
    H = np.zeros((K, K))
    f0 = fn(x)
    if not np.isfinite(f0):
        return H
    for i in range(K):
        for j in range(i, K):
            ei, ej = np.zeros(K), np.zeros(K)
            ei[i], ej[j] = h[i], h[j]
            vals = [fn(x + ei + ej), fn(x + ei - ej), fn(x - ei + ej), fn(x - ei - ej)]
            if not np.all(np.isfinite(vals)):
                return np.zeros((K, K))
            H[i, j] = H[j, i] = -(vals[0] - vals[1] - vals[2] + vals[3]) / (4 * h[i] * h[j])
    return H


def _window(family, prior, mode, cov, width):
    K = prior.K
    sd = np.sqrt(np.diag(cov))
    lo, hi = mode - width * sd, mode + width * sd
    blo = np.array([b[0] for b in family.bounds(K)])
    bhi = np.array([b[1] for b in family.bounds(K)])
    lo, hi = np.maximum(lo, blo), np.minimum(hi, bhi)
    if prior.domain is not None:
        lo, hi = np.maximum(lo, prior.domain.lower), np.minimum(hi, prior.domain.upper)
    bad = ~(np.isfinite(lo) & np.isfinite(hi) & (hi > lo))
    if bad.any():
        d = default_domain(family, K)
        lo = np.where(bad, d.lower, lo)
        hi = np.where(bad, d.upper, hi)
    return lo, hi


def _gl_rule(lo, hi, n, panels=8):
    """Composite Gauss-Legendre nodes/weights on [lo, hi]."""
    per = max(n // panels, 2)
    x, w = legendre.leggauss(per)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _grid(lo, hi, n):
    rules = [_gl_rule(a, b, n) for a, b in zip(lo, hi)]
    if len(rules) == 1:
        return rules[0][0][:, None], np.log(rules[0][1])
    (x0, w0), (x1, w1) = rules
    g0, g1 = np.meshgrid(x0, x1, indexing="ij")
    lw = np.log(w0)[:, None] + np.log(w1)[None, :]
    return np.column_stack([g0.ravel(), g1.ravel()]), lw.ravel()


def _quadrature(family, prior, stats, n_obs, method, power):
    if prior.K > 2:
        raise ValueError("quadrature is limited to K <= 2")
    mode, cov = laplace_point(family, prior, stats, power)
    lo, hi = _window(family, prior, mode, cov, method.window_sd)
    post = Posterior(family, prior, stats, n_obs, None, power)
    def integrate(n):
        nodes, lw = _grid(lo, hi, n)
        lwf = lw + post.log_target(nodes)
        return nodes, lwf, float(special.logsumexp(lwf))

    n = method.n_nodes
    nodes, lwf, logz = integrate(n)
    coarse = integrate(max(n // 2, 16))[2]
    # refine until halving the node count no longer moves log Z
    while np.isfinite(logz) and abs(logz - coarse) > 1e-9 and n < 4096:
        n *= 2
        coarse = logz
        nodes, lwf, logz = integrate(n)
    diag = {"nodes_per_dim": n, "window": [lo.tolist(), hi.tolist()]}
    ev = LogEvidence(logz, 0.0, "quadrature", n_obs, diag, _flags(prior, n_obs, logz))
    return GridPosterior(family, prior, stats, n_obs, ev, nodes, lwf, power, (lo, hi))


def _importance(family, prior, stats, n_obs, method, power, rng):
    mode, cov = laplace_point(family, prior, stats, power)
    K = prior.K
    L = np.linalg.cholesky(cov) * method.inflation
    z = rng.standard_normal((method.n_samples, K))
    draws = mode + z @ L.T
    log_q = (-0.5 * np.sum(z * z, axis=1) - 0.5 * K * math.log(2 * math.pi)
             - np.sum(np.log(np.diag(L))))
    post = Posterior(family, prior, stats, n_obs, None, power)
    log_w = post.log_target(draws) - log_q
    n = draws.shape[0]
    top = np.max(log_w)
    flags = list(_flags(prior, n_obs, top))
    if not np.isfinite(top):
        ev = LogEvidence(-math.inf, 0.0, "importance_sampling", n_obs, {"ess": 0.0}, tuple(flags + ["zero_likelihood"]))
        return WeightedPosterior(family, prior, stats, n_obs, ev, draws, log_w, power)
    w = np.exp(log_w - top)
    mean_w = w.mean()
    rel_se = float(np.std(w, ddof=1) / (mean_w * math.sqrt(n)))
    ess = float(w.sum() ** 2 / np.sum(w * w))
    # log of a sample mean is biased low by ~rel_se^2 / 2; add it back
    value = top + math.log(mean_w) + 0.5 * rel_se**2
    if ess < MIN_ESS:
        flags.append("low_ess")
        warnings.warn(f"importance sampling ESS {ess:.1f} < {MIN_ESS}", RuntimeWarning, stacklevel=4)
    diag = {"ess": ess, "n_samples": n, "inflation": method.inflation,
            "bias_correction": 0.5 * rel_se**2, "residual_bias": "O(1/n)"}
    ev = LogEvidence(value, rel_se, "importance_sampling", n_obs, diag, tuple(flags))
    return WeightedPosterior(family, prior, stats, n_obs, ev, draws, log_w, power)


def _laplace(family, prior, stats, n_obs, power):
    K = prior.K
    start = family.mle_closed(stats, K)
    if start is None:
        raise NotImplementedError("Laplace needs a closed-form MLE from sufficient statistics")
    theta = np.asarray(start[0], dtype=float)
    H = power * family.observed_information(theta, stats)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise SingularityError(f"Hessian at the MLE is not negative definite ({theta.tolist()})") from None
    _, logdet = np.linalg.slogdet(H)
    ll = power * family.loglik_stats(theta[None], stats)[0]
    lp = prior.log_density_batch(theta[None])[0]
    value = float(ll + lp + 0.5 * K * math.log(2 * math.pi) - 0.5 * logdet)
    diag = {"mle": theta.tolist(), "logdet_neg_hessian": float(logdet)}
    ev = LogEvidence(value, 0.0, "laplace", n_obs, diag, _flags(prior, n_obs, value))
    post = Posterior(family, prior, stats, n_obs, ev, power)
    post._mode = (theta, np.linalg.inv(H))
    return post


def _flags(prior, n_obs, value):
    flags = []
    if prior.n_obs is not None and prior.n_obs != n_obs:
        flags.append("n_mismatch")
    if value == -math.inf:
        flags.append("zero_likelihood")
    return tuple(flags)


def fit_posterior(family: ModelFamily, prior: Prior, stats, n_obs: int, method=None,
                  rng=None, power: float = 1.0) -> Posterior:
    """Fit on sufficient statistics; see module docstring."""
    method = _as_method(method)
    kind = method.kind
    handler = conjugate_for(family, prior) if power == 1.0 else None
    if kind == "auto":
        kind = ("conjugate_closed_form" if handler is not None
                else "quadrature" if prior.K <= 2 else "importance_sampling")
    if kind == "conjugate_closed_form":
        if handler is None:
            raise ValueError(f"no closed form for {family.family_id} with prior {prior.name}")
        value = float(handler.log_partition(stats))
        ev = LogEvidence(value, 0.0, kind, n_obs, {}, _flags(prior, n_obs, value))
        return ConjugatePosterior(family, prior, stats, n_obs, ev, handler)
    if kind == "quadrature":
        return _quadrature(family, prior, stats, n_obs, method, power)
    if kind == "importance_sampling":
        if rng is None:
            rng = StreamSpec(method.seed, ("is",)).generator()
        return _importance(family, prior, stats, n_obs, method, power, rng)
    if kind == "laplace":
        return _laplace(family, prior, stats, n_obs, power)
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# Metropolis sampler
# ---------------------------------------------------------------------------

def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction, chains shape (m, n, K)."""
    m, n, K = chains.shape
    half = n // 2
    parts = np.concatenate([chains[:, :half], chains[:, half:2 * half]], axis=0)
    means = parts.mean(axis=1)
    B = half * means.var(axis=0, ddof=1)
    W = parts.var(axis=1, ddof=1).mean(axis=0)
    var = (half - 1) / half * W + B / half
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(np.where(W > 0, var / W, 1.0))


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    """Pooled ESS using the initial positive autocorrelation sequence."""
    m, n, K = chains.shape
    out = np.empty(K)
    for k in range(K):
        x = chains[:, :, k] - chains[:, :, k].mean(axis=1, keepdims=True)
        f = np.fft.rfft(x, n=2 * n, axis=1)
        ac = np.fft.irfft(f * np.conj(f), axis=1)[:, :n].mean(axis=0)
        if ac[0] <= 0:
            out[k] = m * n
            continue
        rho = ac / ac[0]
        s = 0.0
        for t in range(1, n - 1, 2):
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            s += pair
        out[k] = m * n / (1.0 + 2.0 * s)
    return out


def rw_metropolis(log_target, start, cov, n_draws: int, rng, n_chains: int = 8,
                  burn: int = 300, thin: int = 2) -> PosteriorDraws:
    """Vectorized random-walk Metropolis over ``n_chains`` parallel chains.

    Proposal covariance is (2.38^2 / K) * cov; chains start from an
    overdispersed cloud around ``start``.
    """
    start = np.asarray(start, dtype=float)
    K = start.size
    L = np.linalg.cholesky(cov)
    step = (2.38 / math.sqrt(K)) * L
    per_chain = -(-n_draws // n_chains)
    x = start + 0.5 * rng.standard_normal((n_chains, K)) @ L.T
    lp = log_target(x)
    # fall back to the start point for chains initialized off-support
    stuck = ~np.isfinite(lp)
    x[stuck] = start
    lp[stuck] = log_target(start[None])[0]
    total = burn + per_chain * thin
    kept = np.empty((n_chains, per_chain, K))
    accepted = 0
    for t in range(total):
        prop = x + rng.standard_normal((n_chains, K)) @ step.T
        lq = log_target(prop)
        acc = np.log(rng.random(n_chains)) < lq - lp
        x[acc] = prop[acc]
        lp[acc] = lq[acc]
        if t >= burn:
            accepted += int(acc.sum())
            if (t - burn) % thin == thin - 1:
                kept[:, (t - burn) // thin] = x
    rhat = split_rhat(kept)
    ess = effective_sample_size(kept)
    flags = ()
    if np.any(rhat > RHAT_LIMIT):
        flags = ("rhat_exceeded",)
        warnings.warn(f"MCMC split-Rhat {rhat.max():.3f} > {RHAT_LIMIT}", RuntimeWarning, stacklevel=3)
    theta = kept.transpose(1, 0, 2).reshape(-1, K)[:n_draws]
    return PosteriorDraws(theta, "mcmc", accepted / (n_chains * per_chain * thin), rhat, ess, flags)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _fit(family, prior, data, method, stream=None):
    _check_prior(family, prior)
    stats, n = _stats_of(family, data)
    rng = as_stream(stream).generator() if stream is not None else None
    return fit_posterior(family, prior, stats, n, method, rng)


def log_partition(family, prior, data, method=None, stream=None) -> LogEvidence:
    return _fit(family, prior, data, method, stream).evidence


def free_energy(family, prior, data, method=None, stream=None) -> float:
    return -log_partition(family, prior, data, method, stream).value


def posterior_log_density(family, prior, data, theta, method=None) -> float:
    post = _fit(family, prior, data, method)
    if isinstance(theta, Parameterization):
        theta = theta.values
    return float(post.logpdf(np.atleast_1d(np.asarray(theta, dtype=float))[None])[0])


def posterior_sample(family, prior, data, n_draws, stream, sampler="auto", method=None) -> PosteriorDraws:
    post = _fit(family, prior, data, method)
    return post.sample(n_draws, as_stream(stream).generator(), sampler)


def log_predictive(family, prior, data, x_new, method=None):
    post = _fit(family, prior, data, method)
    x = np.asarray(x_new, dtype=float)
    scalar = x.ndim == 0 or (family.obs_kind == "pair" and x.ndim == 1)
    batch = x[None] if scalar else x
    out = post.log_predictive(batch)
    return float(out[0]) if scalar else out


def laplace_log_partition(family, prior, data) -> LogEvidence:
    return _fit(family, prior, data, "laplace").evidence
