"""Monte Carlo estimators of performance, predictivity, multiplicity,
Gibbs entropy and parameter-coding information.

Variance control
----------------
Every outer replicate subtracts the true-model log-likelihood of the data it
drew and adds back its exact expectation ``-N * H(theta0)`` (``H`` the
per-observation entropy).  Expectations are unchanged; the O(sqrt(N)) data
noise that would otherwise swamp O(1) effects cancels.  Paired quantities
are always computed inside one replicate so that common random numbers make
differences (scale laws, prior comparisons, stencils) nearly noiseless.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .evidence import EvidenceMethod, fit_posterior
from .families import ModelFamily, Parameterization
from .mc import Budgets, Estimate, as_stream, replicate_values
from .priors import Prior


def _theta(family, theta0) -> np.ndarray:
    return family.check(theta0)


def _budgets(budgets) -> Budgets:
    if budgets is None:
        return Budgets()
    if isinstance(budgets, Budgets):
        return budgets
    return Budgets(*budgets)


def _sub_rngs(rng, k):
    """k independent generators seeded from ``rng`` (re-creatable per prior)."""
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=k)]


def _gen(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _estimate(values, stream, flags=()):
    return Estimate.from_samples(values, as_stream(stream).describe(), flags=tuple(flags))


def _kl_exact(family, a, b):
    base = getattr(family, "base", None)
    if base is not None:
        return _kl_exact(base, family.to_base(np.asarray(a)), family.to_base(np.asarray(b)))
    return float(family.kl_closed(a, b)) if family.has_closed_form_kl else None


def _fisher_exact(family, theta):
    base = getattr(family, "base", None)
    if base is not None:
        theta = np.asarray(theta, dtype=float)
        fb = _fisher_exact(base, family.to_base(theta))
        if fb is None:
            return None
        h = 1e-6 * (1.0 + np.abs(theta))
        J = np.column_stack([(family.to_base(theta + h[i] * e) - family.to_base(theta - h[i] * e)) / (2 * h[i])
                             for i, e in enumerate(np.eye(theta.size))])
        return J.T @ fb @ J
    return family.fisher_closed(theta) if family.has_closed_form_fisher else None


def _scaled_score(family, theta0, stats, n):
    """(U, (n I)^{-1} U) for the score U at the truth, or None without a closed Fisher matrix."""
    fisher = _fisher_exact(family, theta0)
    if fisher is None:
        return None
    K = theta0.size
    h = 1e-5 * (1.0 + np.abs(theta0))
    pts = np.concatenate([theta0 + np.diag(h), theta0 - np.diag(h)])
    ll = family.loglik_stats(pts, stats)
    score = (ll[:K] - ll[K:]) / (2 * h)
    if not np.all(np.isfinite(score)):
        return None
    return score, np.linalg.solve(n * fisher, score)


def _score_deviation(family, theta0, stats, n) -> float:
    """u - K with u = U' (n I)^{-1} U and U the score at the truth.

    E[u] = K exactly for every family with finite Fisher information, so
    multiples of this deviation are zero-mean control variates.  It tracks the
    chi-square fluctuation of log Z - log q(X|theta0) almost perfectly.
    Returns 0.0 when no closed Fisher matrix is at hand.
    """
    sc = _scaled_score(family, theta0, stats, n)
    return 0.0 if sc is None else float(sc[0] @ sc[1]) - theta0.size


def _pair_control(family, theta0, x_stats, y_stats, n) -> float:
    """Zero-mean fluctuation of the two-sample (X, Y) replicates.

    Both cross-validated forms reduce to +-(log Z_X - E_{theta|Y} log q(X|theta))
    up to constants, whose leading fluctuation is
    (u_X - K)/2 + (u_Y - K)/2 - U_X' (n I)^{-1} U_Y.  The cross term has mean
    zero because X and Y are independent.
    """
    sx = _scaled_score(family, theta0, x_stats, n)
    sy = _scaled_score(family, theta0, y_stats, n)
    if sx is None or sy is None:
        return 0.0
    K = theta0.size
    return 0.5 * (sx[0] @ sx[1] - K) + 0.5 * (sy[0] @ sy[1] - K) - float(sx[0] @ sy[1])


def _centre(post):
    if hasattr(post, "mean"):
        return np.asarray(post.mean(), dtype=float)
    return np.asarray(post.laplace()[0], dtype=float)


def _inner_predictive(fam, post, new, new_anchor, theta0) -> float:
    """E_x[log p(x|X) - log q(x|theta0)] over the inner sample.

    Uses log q(x|c) - log q(x|theta0) at a posterior centre c as a control
    variate (its mean is -KL(theta0 || c)); the remainder is O(1/N) per point.
    """
    diff = post.log_predictive(new) - new_anchor
    try:
        c = _centre(post)
        kl = _kl_exact(fam, theta0, c)
        ctrl = fam.logpdf(new, c) - new_anchor
    except Exception:  # no usable centre: plain inner mean
        kl = None
    if kl is None or not math.isfinite(kl) or not np.all(np.isfinite(ctrl)):
        return float(np.mean(diff))
    return float(np.mean(diff - ctrl)) - kl


# ---------------------------------------------------------------------------
# replicate kernels (module-level classes so they pickle for --jobs)
# ---------------------------------------------------------------------------

@dataclass
class _PostPre:
    """Per replicate: [post_1, pre_1, post_2, pre_2, ...] anchored at the truth."""

    family: ModelFamily
    priors: tuple
    N: int
    n_inner: int
    method: object
    theta0: Optional[np.ndarray] = None
    true_prior: Optional[Prior] = None
    control: bool = True

    def __call__(self, rng):
        fam = self.family
        s_truth, s_data, s_new, s_aux = _sub_rngs(rng, 4)
        theta0 = self.theta0 if self.true_prior is None else self.true_prior.sample(1, _gen(s_truth))[0]
        obs = fam.draw(theta0, self.N, _gen(s_data))
        new = fam.draw(theta0, self.n_inner, _gen(s_new))
        stats = fam.suff_stats(obs)
        anchor = fam.loglik_stats(theta0[None], stats)[0]
        new_anchor = fam.logpdf(new, theta0)
        entropy_term = self.N * fam.entropy(theta0)
        half_u = 0.5 * _score_deviation(fam, theta0, stats, self.N) if self.control else 0.0
        out = []
        for prior in self.priors:
            post = fit_posterior(fam, prior, stats, self.N, self.method, _gen(s_aux))
            r_post = post.log_z - anchor
            if self.control:
                r_pre = self.N * _inner_predictive(fam, post, new, new_anchor, theta0)
            else:
                r_pre = self.N * float(np.mean(post.log_predictive(new) - new_anchor))
            out += [r_post - entropy_term - half_u, r_pre - entropy_term + half_u]
        return out


@dataclass
class _CrossValidated:
    """Nested CV replicate for both the multiplicity and coding-information forms.

    ``kind == "multiplicity"``: theta ~ rho(.|Y), value log rho(theta) - log rho(theta|X).
    ``kind == "coding"``: theta ~ rho(.|X), value log rho(theta|Y) - log rho(theta).
    """

    family: ModelFamily
    priors: tuple
    N: int
    n_inner: int
    method: object
    kind: str
    sampler: str = "auto"
    theta0: Optional[np.ndarray] = None
    true_from_prior: bool = False
    control: bool = True

    def __call__(self, rng):
        fam = self.family
        s_truth, s_x, s_y, s_post, s_aux = _sub_rngs(rng, 5)
        out = []
        for prior in self.priors:
            theta0 = self.theta0 if not self.true_from_prior else prior.sample(1, _gen(s_truth))[0]
            x_stats = fam.suff_stats(fam.draw(theta0, self.N, _gen(s_x)))
            y_stats = fam.suff_stats(fam.draw(theta0, self.N, _gen(s_y)))
            post_x = fit_posterior(fam, prior, x_stats, self.N, self.method, _gen(s_aux))
            post_y = fit_posterior(fam, prior, y_stats, self.N, self.method, _gen(s_aux))
            if self.kind == "multiplicity":
                draws = post_y.sample(self.n_inner, _gen(s_post), self.sampler)
                th = draws.theta
                vals = prior.log_density_batch(th) - post_x.logpdf(th)
            else:
                draws = post_x.sample(self.n_inner, _gen(s_post), self.sampler)
                th = draws.theta
                vals = post_y.logpdf(th) - prior.log_density_batch(th)
            vals = vals[np.isfinite(vals)]
            sign = 1.0 if self.kind == "multiplicity" else -1.0
            ctrl = 0.0
            if self.control:
                ctrl = sign * _pair_control(fam, np.asarray(theta0, dtype=float), x_stats, y_stats, self.N)
            out.append(float(np.mean(vals)) - ctrl if vals.size else math.nan)
        return out


# ---------------------------------------------------------------------------
# performance and predictivity
# ---------------------------------------------------------------------------

def post_pre_table(family, theta0, priors: Sequence[Prior], N, budgets=None, stream=0,
                   method=None, jobs=1, control=True) -> np.ndarray:
    """Raw per-replicate matrix, shape (n_outer, 2 * len(priors)).

    ``control=False`` switches off the score and inner control variates,
    leaving only truth anchoring and common random numbers.
    """
    b = _budgets(budgets)
    fn = _PostPre(family, tuple(priors), int(N), b.n_inner, method, _theta(family, theta0), control=control)
    return replicate_values(fn, b.n_outer, as_stream(stream), jobs)


def performance_post(family, theta0, prior, N, budgets=None, stream=0, method=None, jobs=1, control=True) -> Estimate:
    """Expected log partition function over datasets drawn from ``theta0``."""
    vals = post_pre_table(family, theta0, [prior], N, budgets, stream, method, jobs, control)
    return _estimate(vals[:, 0], stream)


def predictivity(family, theta0, prior, N, budgets=None, stream=0, method=None, jobs=1, control=True) -> Estimate:
    """N times the expected log predictive density of a fresh observation.

    The expectation runs over both the training set and the new point.
    """
    vals = post_pre_table(family, theta0, [prior], N, budgets, stream, method, jobs, control)
    return _estimate(vals[:, 1], stream)


@dataclass(frozen=True)
class MultiplicityResult:
    log_m: Estimate
    method: str
    N: int
    prior: str
    theta0: tuple
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {"log_m": self.log_m.to_dict(), "method": self.method, "N": self.N,
                "prior": self.prior, "theta0": list(self.theta0), "flags": list(self.flags)}


def multiplicity_direct(family, theta0, prior, N, budgets=None, stream=0, method=None,
                        jobs=1, control=True) -> MultiplicityResult:
    """log m = performance - predictivity on shared datasets."""
    vals = post_pre_table(family, theta0, [prior], N, budgets, stream, method, jobs, control)
    est = _estimate(vals[:, 0] - vals[:, 1], stream)
    return MultiplicityResult(est, "direct", int(N), prior.name, tuple(_theta(family, theta0)))


def multiplicity_cv(family, theta0, prior, N, budgets=None, stream=0, method=None,
                    jobs=1, sampler="auto", control=True) -> MultiplicityResult:
    b = _budgets(budgets)
    fn = _CrossValidated(family, (prior,), int(N), b.n_inner, method, "multiplicity", sampler,
                         _theta(family, theta0), control=control)
    vals = replicate_values(fn, b.n_outer, as_stream(stream), jobs)[:, 0]
    est = _estimate(vals, stream)
    return MultiplicityResult(est, "cross_validation", int(N), prior.name, tuple(_theta(family, theta0)))


# ---------------------------------------------------------------------------
# Gibbs entropy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemperSchedule:
    """Exponents tau around 1; effective temperature T = 1 / (tau N).

    ``realization`` chooses how a non-integer sample size is realised:

    * ``"data_size"`` evaluates the disorder-averaged log partition function at
      sample sizes round(tau N) (nested prefixes of one dataset), so the
      continuation passes through the actual integer-N values;
    * ``"tempering"`` keeps N points and raises the likelihood to the power tau.

    The two agree on the free energy at tau = 1 but not on its slope: for a
    K-dimensional regular model tempering shifts the entropy by -K/2.
    """

    taus: tuple = (0.8, 0.9, 1.0, 1.1, 1.2)
    realization: str = "data_size"

    def __post_init__(self):
        t = tuple(float(v) for v in self.taus)
        if any(v <= 0 for v in t) or any(b <= a for a, b in zip(t, t[1:])) or 1.0 not in t:
            raise ValueError("taus must be positive, strictly increasing and contain 1")
        if self.realization not in ("data_size", "tempering"):
            raise ValueError(f"unknown realization {self.realization!r}")
        object.__setattr__(self, "taus", t)

    def sizes(self, N: int) -> np.ndarray:
        sizes = np.rint(np.asarray(self.taus) * N).astype(int)
        if self.realization == "data_size" and (np.any(np.diff(sizes) <= 0) or sizes[0] < 1):
            raise ValueError(f"schedule {self.taus} collapses at N={N}; widen the taus")
        return sizes


THREE_POINT = TemperSchedule((0.9, 1.0, 1.1))
FIVE_POINT = TemperSchedule((0.8, 0.9, 1.0, 1.1, 1.2))


def fd_weights(nodes, x0: float, order: int = 1) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at ``x0``."""
    d = np.asarray(nodes, dtype=float) - x0
    n = d.size
    V = np.vander(d, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def _temperatures(schedule: TemperSchedule, N: int) -> np.ndarray:
    if schedule.realization == "data_size":
        return 1.0 / schedule.sizes(N)
    return 1.0 / (np.asarray(schedule.taus) * N)


@dataclass
class _EntropyReplicate:
    family: ModelFamily
    priors: tuple
    N: int
    schedule: TemperSchedule
    method: object
    theta0: np.ndarray
    weights: Optional[np.ndarray] = None
    control: bool = True

    def __call__(self, rng):
        fam = self.family
        s_data, s_aux = _sub_rngs(rng, 2)
        temps = _temperatures(self.schedule, self.N)
        if self.schedule.realization == "data_size":
            sizes = self.schedule.sizes(self.N)
            obs = fam.draw(self.theta0, int(sizes.max()), _gen(s_data))
            csum = np.cumsum(fam.point_stats(obs), axis=0)
            stats = [csum[n - 1] for n in sizes]
            powers = [1.0] * len(sizes)
        else:
            sizes = [self.N] * len(temps)
            st = fam.suff_stats(fam.draw(self.theta0, self.N, _gen(s_data)))
            stats = [st] * len(temps)
            powers = list(self.schedule.taus)
        # zero-mean correction: sum_j w_j T_j (tau_j/2)(u_j - K)
        ctrl = 0.0
        if self.control:
            dev = [pw * 0.5 * _score_deviation(fam, self.theta0, st, int(n))
                   for st, n, pw in zip(stats, sizes, powers)]
            ctrl = float(np.dot(self.weights * temps, dev))
        out = []
        for prior in self.priors:
            row = []
            for st, n, pw in zip(stats, sizes, powers):
                post = fit_posterior(fam, prior, st, int(n), self.method, _gen(s_aux), power=pw)
                row.append(post.log_z - pw * fam.loglik_stats(self.theta0[None], st)[0])
            out.append(float(np.dot(self.weights, temps * np.asarray(row))) - ctrl)
        return out


def gibbs_entropy(family, theta0, prior, N, schedule: TemperSchedule = FIVE_POINT, budgets=None,
                  stream=0, method=None, jobs=1, control=True) -> Estimate:
    """Disorder-averaged Gibbs entropy at T = 1/N by finite differences in T.

    With R = log Z - log q(X|theta0), the free energy is
    F(T) = -T <R> + H(theta0) exactly at every schedule point, so the entropy
    -dF/dT is the T-derivative of T <R>; the constant drops out.
    """
    b = _budgets(budgets)
    theta0 = _theta(family, theta0)
    temps = _temperatures(schedule, int(N))
    w = fd_weights(temps, 1.0 / N)
    fn = _EntropyReplicate(family, (prior,), int(N), schedule, method, theta0, w, control)
    vals = replicate_values(fn, b.n_outer, as_stream(stream), jobs)[:, 0]
    est = _estimate(vals, stream)
    flags = ()
    if est.std_error > abs(est.mean) and est.std_error > 0.5:
        flags = ("inconclusive",)
    return Estimate(est.mean, est.std_error, est.n, est.seed, est.n_excluded,
                    "finite difference in T; O(T) continuation error not removed", flags)


# ---------------------------------------------------------------------------
# parameter-coding information
# ---------------------------------------------------------------------------

def _require_proper(prior):
    if not prior.is_proper:
        raise ValueError(f"prior {prior.name!r} must be proper (normalize it first)")


def coding_information(family, theta0, prior, N, budgets=None, stream=0, method=None,
                       jobs=1, sampler="auto", control=True) -> Estimate:
    _require_proper(prior)
    b = _budgets(budgets)
    fn = _CrossValidated(family, (prior,), int(N), b.n_inner, method, "coding", sampler,
                         _theta(family, theta0), control=control)
    return _estimate(replicate_values(fn, b.n_outer, as_stream(stream), jobs)[:, 0], stream)


def avg_coding_information_table(family, priors: Sequence[Prior], N, budgets=None, stream=0,
                                 method=None, jobs=1, sampler="auto", control=True) -> np.ndarray:
    """Per-replicate values for several proper priors with common random numbers."""
    for p in priors:
        _require_proper(p)
    b = _budgets(budgets)
    fn = _CrossValidated(family, tuple(priors), int(N), b.n_inner, method, "coding", sampler,
                         None, true_from_prior=True, control=control)
    return replicate_values(fn, b.n_outer, as_stream(stream), jobs)


def avg_coding_information(family, prior, N, budgets=None, stream=0, method=None, jobs=1,
                           sampler="auto", control=True) -> Estimate:
    """Coding information averaged over true parameters drawn from the prior itself."""
    vals = avg_coding_information_table(family, [prior], N, budgets, stream, method, jobs, sampler, control)
    return _estimate(vals[:, 0], stream)


# ---------------------------------------------------------------------------
# true-prior optimality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimalityRow:
    name: str
    post: Estimate
    pre: Estimate
    post_gap: Estimate  # candidate minus true prior, paired
    pre_gap: Estimate
    post_minus_pre: Estimate


def true_prior_optimality(family, true_prior: Prior, candidates: dict, N, budgets=None, stream=0,
                          method=None, jobs=1, control=True) -> list:
    """Average performance and predictivity of each candidate under truth ~ ``true_prior``.

    ``candidates`` maps names to proper priors; the true prior is always
    evaluated first under the name ``"true"``.
    """
    _require_proper(true_prior)
    for p in candidates.values():
        _require_proper(p)
    b = _budgets(budgets)
    names = ["true"] + list(candidates)
    priors = (true_prior,) + tuple(candidates.values())
    fn = _PostPre(family, priors, int(N), b.n_inner, method, None, true_prior, control)
    vals = replicate_values(fn, b.n_outer, as_stream(stream), jobs)
    post, pre = vals[:, 0::2], vals[:, 1::2]
    rows = []
    for j, name in enumerate(names):
        rows.append(OptimalityRow(
            name, _estimate(post[:, j], stream), _estimate(pre[:, j], stream),
            _estimate(post[:, j] - post[:, 0], stream), _estimate(pre[:, j] - pre[:, 0], stream),
            _estimate(post[:, j] - pre[:, j], stream)))
    return rows
