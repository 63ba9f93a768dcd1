"""Parametric model families.

Every family works on sufficient statistics that are *additive* over
observations: ``suff_stats(obs)`` is the sum of ``point_stats(obs)``.  This
lets the evidence code update a posterior with a new point (or a batch of
candidate points) by simple addition, and lets the entropy estimator take
prefix sums over one long dataset.

Parameter vectors are plain float arrays inside the numerics; the public
boundary uses :class:`Parameterization`.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import legendre
from scipy import integrate, optimize, special

from .errors import ConvergenceError, DomainError, SingularityError

LOG_2PI = math.log(2.0 * math.pi)
VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class Parameterization:
    family_id: str
    values: tuple
    flags: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in np.atleast_1d(self.values)))
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def K(self) -> int:
        return len(self.values)

    def asarray(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class Dataset:
    observations: np.ndarray
    origin: Optional[dict] = None

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.shape[0] < 1:
            raise ValueError("a dataset needs at least one observation")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    def __len__(self):
        return self.n

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.concatenate([self.observations, other.observations]))

    def head(self, n: int) -> "Dataset":
        return Dataset(self.observations[:n], self.origin)

    def to_csv(self, path) -> None:
        obs = self.observations
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if obs.ndim == 1:
                w.writerow(["x"])
                w.writerows([[repr(float(v))] for v in obs])
            else:
                w.writerow(["x", "y"])
                w.writerows([[repr(float(a)), repr(float(b))] for a, b in obs])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(Path(path), newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        header, body = rows[0], rows[1:]
        try:
            float(header[0])
            body = rows
        except ValueError:
            pass
        arr = np.array([[float(v) for v in r] for r in body])
        if arr.shape[1] == 1:
            arr = arr[:, 0]
        return cls(arr)


def _as_batch(theta, K=None) -> np.ndarray:
    if isinstance(theta, Parameterization):
        theta = theta.values
    arr = np.asarray(theta, dtype=float)
    if arr.ndim == 0:
        arr = arr[None]
    if arr.ndim == 1:
        arr = arr[None, :] if (K is None or arr.shape[0] == K) else arr[:, None]
    return arr


class ModelFamily:
    """Base class; subclasses fill in the closed forms they have."""

    family_id = "abstract"
    obs_kind = "real"  # "real", "binary" or "pair"
    k_min = k_max = 1
    has_closed_form_fisher = True
    has_closed_form_kl = True
    has_conjugate_evidence = True
    support = (-np.inf, np.inf)

    # ---- domain -----------------------------------------------------------
    def bounds(self, K: int) -> list:
        raise NotImplementedError

    def default_truncation(self, K: int) -> list:
        raise NotImplementedError

    def in_domain(self, theta_batch: np.ndarray) -> np.ndarray:
        theta_batch = np.atleast_2d(theta_batch)
        ok = np.ones(theta_batch.shape[0], dtype=bool)
        for j, (lo, hi) in enumerate(self.bounds(theta_batch.shape[1])):
            col = theta_batch[:, j]
            ok &= (col > lo) & (col < hi)
        return ok

    def check(self, theta) -> np.ndarray:
        """Validate a single parameter point; return it as a 1-D array."""
        if isinstance(theta, Parameterization):
            if theta.family_id != self.family_id:
                raise DomainError(f"parameterization for {theta.family_id!r}, family is {self.family_id!r}")
            arr = theta.asarray()
        else:
            arr = np.atleast_1d(np.asarray(theta, dtype=float))
        K = arr.shape[0]
        if not (self.k_min <= K <= self.k_max) and not (K == 0 and self.allows_null):
            raise DomainError(f"complexity {K} outside [{self.k_min}, {self.k_max}]")
        if K and not (np.all(np.isfinite(arr)) and self.in_domain(arr[None])[0]):
            raise DomainError(f"{self.family_id}: theta={arr.tolist()} outside the open domain")
        return arr

    allows_null = False

    def param(self, *values) -> Parameterization:
        vals = np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in values]) if values else np.zeros(0)
        self.check(vals)
        return Parameterization(self.family_id, tuple(vals))

    # ---- densities --------------------------------------------------------
    def logpdf(self, x, theta) -> np.ndarray:
        """Per-point log density, vectorized over observations."""
        raise NotImplementedError

    def point_stats(self, obs) -> np.ndarray:
        raise NotImplementedError

    def suff_stats(self, obs) -> np.ndarray:
        if isinstance(obs, Dataset):
            obs = obs.observations
        return self.point_stats(obs).sum(axis=0)

    def loglik_stats(self, theta_batch, stats) -> np.ndarray:
        """Total log-likelihood for each row of ``theta_batch`` (-inf off-domain).

        ``stats`` may carry leading batch dimensions that broadcast against
        the rows of ``theta_batch``.
        """
        raise NotImplementedError

    def log_likelihood(self, theta, data: Dataset) -> float:
        arr = self.check(theta)
        obs = data.observations if isinstance(data, Dataset) else np.asarray(data, dtype=float)
        with np.errstate(divide="ignore"):
            return float(np.sum(self.logpdf(obs, arr)))

    def draw(self, theta: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample(self, theta, n: int, stream) -> Dataset:
        """Draw ``n`` i.i.d. observations; ``stream`` is a StreamSpec or Generator."""
        arr = self.check(theta)
        if n < 1:
            raise ValueError("n must be >= 1")
        rng, seed = _resolve_rng(stream)
        origin = {"theta": arr.tolist(), "seed": seed}
        return Dataset(self.draw(arr, n, rng), origin)

    def entropy(self, theta) -> float:
        """Differential entropy of one observation."""
        raise NotImplementedError

    # ---- information geometry --------------------------------------------
    def fisher_closed(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_jeffreys_batch(self, theta_batch) -> np.ndarray:
        theta_batch = np.atleast_2d(theta_batch)
        out = np.empty(theta_batch.shape[0])
        for i, th in enumerate(theta_batch):
            sign, logdet = np.linalg.slogdet(self.fisher_information(th))
            out[i] = 0.5 * logdet if sign > 0 else np.nan
        return out

    def fisher_information(self, theta, method: str = "auto", n_samples: int = 10**6,
                           rng=None) -> np.ndarray:
        arr = self.check(theta)
        if method == "auto":
            method = "closed" if self.has_closed_form_fisher else (
                "quad" if self.obs_kind in ("real", "binary") else "mc")
        if method == "closed":
            info = self.fisher_closed(arr)
        elif method == "mc":
            info = self._fisher_mc(arr, n_samples, rng)
        elif method == "quad":
            info = self._expect(arr, lambda x: _outer_rows(self.score(x, arr))).reshape(arr.size, arr.size)
        else:
            raise ValueError(f"unknown Fisher method {method!r}")
        info = np.atleast_2d(info)
        if not np.all(np.isfinite(info)):
            raise SingularityError(f"non-finite Fisher information at {arr.tolist()}")
        return 0.5 * (info + info.T)

    def score(self, x, theta: np.ndarray) -> np.ndarray:
        """Central finite-difference score, shape (n_obs, K)."""
        theta = np.asarray(theta, dtype=float)
        cols = []
        for j in range(theta.size):
            h = 1e-5 * (1.0 + abs(theta[j]))
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            cols.append((self.logpdf(x, up) - self.logpdf(x, dn)) / (2 * h))
        return np.stack(cols, axis=-1)

    def _fisher_mc(self, theta, n_samples, rng):
        rng = rng if rng is not None else np.random.default_rng(20240917)
        s = self.score(self.draw(theta, n_samples, rng), theta)
        return np.cov(s, rowvar=False).reshape(theta.size, theta.size)

    def _expect(self, theta, fn):
        """Exact expectation of a vector-valued ``fn`` over one observation."""
        if self.obs_kind == "binary":
            xs = np.array([0.0, 1.0])
            p = np.exp(self.logpdf(xs, theta))
            return np.tensordot(p, np.atleast_2d(fn(xs).reshape(2, -1)), axes=1)
        if self.obs_kind != "real":
            raise NotImplementedError("quadrature expectation needs a scalar observation space")
        lo, hi = self.support

        def integrand(x):
            xs = np.atleast_1d(x)
            return (np.exp(self.logpdf(xs, theta))[:, None] * fn(xs).reshape(xs.size, -1))[0]

        val, _ = integrate.quad_vec(integrand, lo, hi, epsabs=1e-13, epsrel=1e-11)
        return val

    def kl_closed(self, t1, t2) -> float:
        raise NotImplementedError

    def kl_divergence(self, theta1, theta2, method: str = "auto", n_samples: int = 10**6,
                      rng=None) -> float:
        a, b = self.check(theta1), self.check(theta2)
        if method == "auto":
            method = "closed" if self.has_closed_form_kl else (
                "quad" if self.obs_kind in ("real", "binary") else "mc")
        if method == "closed":
            val = self.kl_closed(a, b)
        elif method == "quad":
            with np.errstate(divide="ignore", invalid="ignore"):
                val = float(self._expect(a, lambda x: self.logpdf(x, a) - self.logpdf(x, b))[0])
        elif method == "mc":
            rng = rng if rng is not None else np.random.default_rng(7)
            x = self.draw(a, n_samples, rng)
            with np.errstate(divide="ignore"):
                val = float(np.mean(self.logpdf(x, a) - self.logpdf(x, b)))
        else:
            raise ValueError(f"unknown KL method {method!r}")
        if np.isnan(val):
            return math.inf
        return max(val, 0.0)

    def kl_batch(self, theta1, theta_batch) -> np.ndarray:
        """D(theta1 || theta) for every row of ``theta_batch``."""
        return np.array([self.kl_divergence(theta1, t) for t in np.atleast_2d(theta_batch)])

    def min_fisher_eigenvalue(self, theta) -> float:
        return float(np.linalg.eigvalsh(self.fisher_information(theta)).min())

    def observed_information(self, theta: np.ndarray, stats) -> np.ndarray:
        """Negative Hessian of the total log-likelihood (finite differences)."""
        theta = np.asarray(theta, dtype=float)
        K = theta.size
        f = lambda t: self.loglik_stats(t[None], stats)[0]
        H = np.empty((K, K))
        h = 1e-4 * (1.0 + np.abs(theta))
        for i in range(K):
            for j in range(i, K):
                ei, ej = np.zeros(K), np.zeros(K)
                ei[i], ej[j] = h[i], h[j]
                H[i, j] = H[j, i] = -(f(theta + ei + ej) - f(theta + ei - ej)
                                      - f(theta - ei + ej) + f(theta - ei - ej)) / (4 * h[i] * h[j])
        return H

    # ---- estimation -------------------------------------------------------
    def initial_guess(self, stats, K: int) -> np.ndarray:
        raise NotImplementedError

    def mle_closed(self, stats, K: int):
        """Return (values, flags) or None when no closed form exists."""
        return None

    def mle(self, data, K: Optional[int] = None, method: str = "auto",
            n_starts: int = 8, rng=None) -> Parameterization:
        obs = data.observations if isinstance(data, Dataset) else np.asarray(data, dtype=float)
        if obs.shape[0] < 1:
            raise ValueError("empty dataset")
        K = self.k_min if K is None else K
        if not (self.k_min <= K <= self.k_max):
            raise DomainError(f"complexity {K} outside [{self.k_min}, {self.k_max}]")
        stats = self.suff_stats(obs)
        if method in ("auto", "closed"):
            res = self.mle_closed(stats, K)
            if res is not None:
                vals, flags = res
                return Parameterization(self.family_id, tuple(vals), flags)
            if method == "closed":
                raise NotImplementedError(f"{self.family_id} has no closed-form MLE")
        vals = numeric_mle(self, stats, K, n_starts=n_starts, rng=rng)
        return Parameterization(self.family_id, tuple(vals))

    def max_log_likelihood(self, data, K: Optional[int] = None) -> float:
        obs = data.observations if isinstance(data, Dataset) else data
        th = self.mle(obs, K)
        return float(self.loglik_stats(th.asarray()[None], self.suff_stats(obs))[0])


def numeric_mle(family: ModelFamily, stats, K: int, n_starts: int = 8, rng=None,
                spread: float = 0.5) -> np.ndarray:
    """Multistart Nelder-Mead on the negative log-likelihood.

    Starts are drawn around the moment-matching guess; ties between equal
    optima go to the smallest Euclidean norm.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x0 = family.initial_guess(stats, K)

    def nll(t):
        v = family.loglik_stats(t[None], stats)[0]
        return -v if np.isfinite(v) else 1e300

    starts = [x0] + [x0 + spread * (1 + np.abs(x0)) * rng.standard_normal(K) for _ in range(n_starts - 1)]
    found = []
    for s in starts:
        if not family.in_domain(s[None])[0]:
            continue
        r = optimize.minimize(nll, s, method="Nelder-Mead",
                              options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000 * K})
        if r.fun < 1e299:
            found.append((r.fun, r.x, r.success))
    if not found:
        raise ConvergenceError("no start produced a finite likelihood", best=x0)
    best = min(f for f, _, _ in found)
    ties = [(np.linalg.norm(x), x, ok) for f, x, ok in found if f <= best + 1e-9 * (1 + abs(best))]
    _, x, ok = min(ties, key=lambda t: t[0])
    if not any(ok for *_, ok in ties):
        raise ConvergenceError("Nelder-Mead did not converge from any start", best=x)
    return x


def _outer_rows(s: np.ndarray) -> np.ndarray:
    return np.einsum("ni,nj->nij", s, s).reshape(s.shape[0], -1)


def _resolve_rng(stream):
    if isinstance(stream, np.random.Generator):
        return stream, None
    if isinstance(stream, (int, np.integer)):
        return np.random.default_rng(int(stream)), int(stream)
    return stream.generator(), stream.describe()


# ---------------------------------------------------------------------------
# concrete families
# ---------------------------------------------------------------------------

class GaussianMean(ModelFamily):
    """Normal with unknown mean and known variance."""

    family_id = "gauss_mean"

    def __init__(self, variance: float = 1.0):
        self.variance = float(variance)

    def bounds(self, K):
        return [(-np.inf, np.inf)]

    def default_truncation(self, K):
        return [(-10.0, 10.0)]

    def logpdf(self, x, theta):
        x = np.asarray(x, dtype=float)
        return -0.5 * (LOG_2PI + math.log(self.variance)) - (x - theta[0]) ** 2 / (2 * self.variance)

    def point_stats(self, obs):
        obs = np.asarray(obs, dtype=float)
        return np.stack([np.ones_like(obs), obs, obs * obs], axis=-1)

    def loglik_stats(self, theta_batch, stats):
        mu = np.asarray(theta_batch, dtype=float)[..., 0]
        n, s1, s2 = stats[..., 0], stats[..., 1], stats[..., 2]
        v = self.variance
        return -0.5 * n * (LOG_2PI + math.log(v)) - (s2 - 2 * mu * s1 + n * mu * mu) / (2 * v)

    def draw(self, theta, n, rng):
        return theta[0] + math.sqrt(self.variance) * rng.standard_normal(n)

    def entropy(self, theta):
        return 0.5 * (LOG_2PI + 1.0 + math.log(self.variance))

    def fisher_closed(self, theta):
        return np.array([[1.0 / self.variance]])

    def log_jeffreys_batch(self, theta_batch):
        return np.full(np.atleast_2d(theta_batch).shape[0], -0.5 * math.log(self.variance))

    def kl_closed(self, a, b):
        return (a[0] - b[0]) ** 2 / (2 * self.variance)

    def kl_batch(self, theta1, theta_batch):
        return (np.atleast_2d(theta_batch)[:, 0] - theta1[0]) ** 2 / (2 * self.variance)

    def observed_information(self, theta, stats):
        return np.array([[stats[0] / self.variance]])

    def initial_guess(self, stats, K):
        return np.array([stats[1] / stats[0]])

    def mle_closed(self, stats, K):
        return np.array([stats[1] / stats[0]]), frozenset()


class GaussianMeanVariance(ModelFamily):
    """Normal with unknown mean and variance, theta = (mu, v)."""

    family_id = "gauss_mv"
    k_min = k_max = 2

    def bounds(self, K):
        return [(-np.inf, np.inf), (0.0, np.inf)]

    def default_truncation(self, K):
        return [(-10.0, 10.0), (1e-2, 1e2)]

    def logpdf(self, x, theta):
        x = np.asarray(x, dtype=float)
        mu, v = theta[0], theta[1]
        return -0.5 * (LOG_2PI + np.log(v)) - (x - mu) ** 2 / (2 * v)

    def point_stats(self, obs):
        obs = np.asarray(obs, dtype=float)
        return np.stack([np.ones_like(obs), obs, obs * obs], axis=-1)

    def loglik_stats(self, theta_batch, stats):
        tb = np.asarray(theta_batch, dtype=float)
        mu, v = tb[..., 0], tb[..., 1]
        n, s1, s2 = stats[..., 0], stats[..., 1], stats[..., 2]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = -0.5 * n * (LOG_2PI + np.log(v)) - (s2 - 2 * mu * s1 + n * mu * mu) / (2 * v)
        return np.where(v > 0, out, -np.inf)

    def draw(self, theta, n, rng):
        return theta[0] + math.sqrt(theta[1]) * rng.standard_normal(n)

    def entropy(self, theta):
        return 0.5 * (LOG_2PI + 1.0 + math.log(theta[1]))

    def fisher_closed(self, theta):
        v = theta[1]
        return np.diag([1.0 / v, 0.5 / v**2])

    def log_jeffreys_batch(self, theta_batch):
        v = np.atleast_2d(theta_batch)[:, 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            return -0.5 * math.log(2.0) - 1.5 * np.log(v)

    def kl_closed(self, a, b):
        (m1, v1), (m2, v2) = a, b
        return 0.5 * (math.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)

    def kl_batch(self, theta1, theta_batch):
        m1, v1 = theta1
        tb = np.atleast_2d(theta_batch)
        m2, v2 = tb[:, 0], tb[:, 1]
        return 0.5 * (np.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)

    def observed_information(self, theta, stats):
        mu, v = theta
        n, s1, s2 = stats
        r1 = s1 - n * mu
        r2 = s2 - 2 * mu * s1 + n * mu * mu
        return np.array([[n / v, r1 / v**2], [r1 / v**2, -n / (2 * v**2) + r2 / v**3]])

    def initial_guess(self, stats, K):
        n, s1, s2 = stats
        m = s1 / n
        return np.array([m, max(s2 / n - m * m, VAR_FLOOR)])

    def mle_closed(self, stats, K):
        n, s1, s2 = stats
        m = s1 / n
        v = s2 / n - m * m
        flags = frozenset()
        if v < VAR_FLOOR:
            warnings.warn("degenerate data: variance MLE clamped", RuntimeWarning, stacklevel=3)
            v, flags = VAR_FLOOR, frozenset({"variance_clamped"})
        return np.array([m, v]), flags


class Bernoulli(ModelFamily):
    family_id = "bernoulli"
    obs_kind = "binary"
    support = (0, 1)

    def bounds(self, K):
        return [(0.0, 1.0)]

    def default_truncation(self, K):
        return [(1e-3, 1.0 - 1e-3)]

    def logpdf(self, x, theta):
        x = np.asarray(x, dtype=float)
        p = theta[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x == 1, np.log(p), np.log1p(-p))
        return np.where((x == 0) | (x == 1), out, -np.inf)

    def point_stats(self, obs):
        obs = np.asarray(obs, dtype=float)
        return np.stack([np.ones_like(obs), obs], axis=-1)

    def loglik_stats(self, theta_batch, stats):
        p = np.asarray(theta_batch, dtype=float)[..., 0]
        n, k = stats[..., 0], stats[..., 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = special.xlogy(k, p) + special.xlog1py(n - k, -p)
        return np.where((p > 0) & (p < 1), out, -np.inf)

    def draw(self, theta, n, rng):
        return (rng.random(n) < theta[0]).astype(float)

    def entropy(self, theta):
        p = theta[0]
        return -(special.xlogy(p, p) + special.xlog1py(1 - p, -p))

    def fisher_closed(self, theta):
        p = theta[0]
        return np.array([[1.0 / (p * (1 - p))]])

    def log_jeffreys_batch(self, theta_batch):
        p = np.atleast_2d(theta_batch)[:, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            return -0.5 * (np.log(p) + np.log1p(-p))

    def kl_closed(self, a, b):
        p, q = a[0], b[0]
        return float(special.xlogy(p, p / q) + special.xlogy(1 - p, (1 - p) / (1 - q)))

    def kl_batch(self, theta1, theta_batch):
        p, q = theta1[0], np.atleast_2d(theta_batch)[:, 0]
        return special.xlogy(p, p / q) + special.xlogy(1 - p, (1 - p) / (1 - q))

    def observed_information(self, theta, stats):
        p = theta[0]
        n, k = stats
        return np.array([[k / p**2 + (n - k) / (1 - p) ** 2]])

    def initial_guess(self, stats, K):
        n, k = stats
        return np.array([np.clip((k + 0.5) / (n + 1), 1e-6, 1 - 1e-6)])

    def mle_closed(self, stats, K):
        n, k = stats
        p = k / n
        if p <= 0 or p >= 1:
            return np.array([min(max(p, VAR_FLOOR), 1 - VAR_FLOOR)]), frozenset({"boundary_clamped"})
        return np.array([p]), frozenset()


class Exponential(ModelFamily):
    """Exponential distribution with rate lambda."""

    family_id = "exponential"
    support = (0.0, np.inf)

    def bounds(self, K):
        return [(0.0, np.inf)]

    def default_truncation(self, K):
        return [(1e-2, 1e2)]

    def logpdf(self, x, theta):
        x = np.asarray(x, dtype=float)
        lam = theta[0]
        return np.where(x >= 0, math.log(lam) - lam * x, -np.inf)

    def point_stats(self, obs):
        obs = np.asarray(obs, dtype=float)
        return np.stack([np.ones_like(obs), obs], axis=-1)

    def loglik_stats(self, theta_batch, stats):
        lam = np.asarray(theta_batch, dtype=float)[..., 0]
        n, s = stats[..., 0], stats[..., 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = n * np.log(lam) - lam * s
        return np.where(lam > 0, out, -np.inf)

    def draw(self, theta, n, rng):
        return rng.exponential(1.0 / theta[0], n)

    def entropy(self, theta):
        return 1.0 - math.log(theta[0])

    def fisher_closed(self, theta):
        return np.array([[1.0 / theta[0] ** 2]])

    def log_jeffreys_batch(self, theta_batch):
        lam = np.atleast_2d(theta_batch)[:, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            return -np.log(lam)

    def kl_closed(self, a, b):
        return math.log(a[0] / b[0]) + b[0] / a[0] - 1.0

    def kl_batch(self, theta1, theta_batch):
        r = np.atleast_2d(theta_batch)[:, 0] / theta1[0]
        return r - np.log(r) - 1.0

    def observed_information(self, theta, stats):
        return np.array([[stats[0] / theta[0] ** 2]])

    def initial_guess(self, stats, K):
        return np.array([stats[0] / stats[1]])

    def mle_closed(self, stats, K):
        return np.array([stats[0] / stats[1]]), frozenset()


class Polynomial(ModelFamily):
    """Nested polynomial regression with Gaussian noise of known sd.

    Observations are pairs (x, y) with x ~ Uniform[-1, 1] and
    y | x ~ N(f(x), sigma^2).  ``f`` is expanded in Legendre polynomials
    normalized to unit second moment under the uniform design, so the Fisher
    information is ``I_K / sigma^2`` and coefficients embed across K by
    zero-padding.
    """

    family_id = "poly"
    obs_kind = "pair"
    k_min = 1
    allows_null = True
    has_conjugate_evidence = True

    def __init__(self, k_max: int = 10, sigma: float = 1.0):
        self.k_max = int(k_max)
        self.sigma = float(sigma)
        self._norms = np.sqrt(2.0 * np.arange(self.k_max) + 1.0)

    def bounds(self, K):
        return [(-np.inf, np.inf)] * K

    def default_truncation(self, K):
        return [(-10.0, 10.0)] * K

    def basis(self, x, K=None) -> np.ndarray:
        K = self.k_max if K is None else K
        if K == 0:
            return np.zeros(np.shape(x) + (0,))
        return legendre.legvander(np.asarray(x, dtype=float), K - 1) * self._norms[:K]

    def mean_function(self, x, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.basis(x, theta.size) @ theta

    def logpdf(self, x, theta):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xs, ys = x[:, 0], x[:, 1]
        r = ys - self.mean_function(xs, theta)
        out = math.log(0.5) - 0.5 * (LOG_2PI + 2 * math.log(self.sigma)) - r * r / (2 * self.sigma**2)
        return np.where(np.abs(xs) <= 1, out, -np.inf)

    # stats layout: [n, yy, Phi'y (k_max), Phi'Phi (k_max^2)]
    def point_stats(self, obs):
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        xs, ys = obs[:, 0], obs[:, 1]
        P = self.basis(xs)
        k = self.k_max
        out = np.empty((obs.shape[0], 2 + k + k * k))
        out[:, 0] = np.where(np.abs(xs) <= 1, 1.0, np.nan)
        out[:, 1] = ys * ys
        out[:, 2:2 + k] = P * ys[:, None]
        out[:, 2 + k:] = np.einsum("ni,nj->nij", P, P).reshape(obs.shape[0], -1)
        return out

    def unpack(self, stats, K):
        k = self.k_max
        n, yy = stats[..., 0], stats[..., 1]
        b = stats[..., 2:2 + k][..., :K]
        A = stats[..., 2 + k:].reshape(stats.shape[:-1] + (k, k))[..., :K, :K]
        return n, yy, b, A

    def loglik_stats(self, theta_batch, stats):
        tb = np.atleast_2d(np.asarray(theta_batch, dtype=float))
        K = tb.shape[-1]
        n, yy, b, A = self.unpack(stats, K)
        zero = np.zeros(tb.shape[:-1])
        quad = np.einsum("...i,...ij,...j->...", tb, A, tb) if K else zero
        lin = np.einsum("...i,...i->...", tb, b) if K else zero
        s2 = self.sigma**2
        return n * (math.log(0.5) - 0.5 * (LOG_2PI + math.log(s2))) - (yy - 2 * lin + quad) / (2 * s2)

    def draw(self, theta, n, rng):
        xs = rng.uniform(-1.0, 1.0, n)
        ys = self.mean_function(xs, theta) + self.sigma * rng.standard_normal(n)
        return np.column_stack([xs, ys])

    def entropy(self, theta):
        return math.log(2.0) + 0.5 * (LOG_2PI + 1.0) + math.log(self.sigma)

    def fisher_closed(self, theta):
        return np.eye(len(theta)) / self.sigma**2

    def log_jeffreys_batch(self, theta_batch):
        tb = np.atleast_2d(theta_batch)
        return np.full(tb.shape[0], -tb.shape[1] * math.log(self.sigma))

    def kl_closed(self, a, b):
        K = max(a.size, b.size)
        pa, pb = np.zeros(K), np.zeros(K)
        pa[:a.size], pb[:b.size] = a, b
        return float(np.sum((pa - pb) ** 2) / (2 * self.sigma**2))

    def kl_batch(self, theta1, theta_batch):
        tb = np.atleast_2d(theta_batch)
        return np.sum((tb - np.asarray(theta1)) ** 2, axis=1) / (2 * self.sigma**2)

    def observed_information(self, theta, stats):
        _, _, _, A = self.unpack(stats, len(theta))
        return A / self.sigma**2

    def initial_guess(self, stats, K):
        return self.mle_closed(stats, K)[0]

    def mle_closed(self, stats, K):
        if K == 0:
            return np.zeros(0), frozenset()
        _, _, b, A = self.unpack(stats, K)
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
        return sol, frozenset()

    def mle(self, data, K=None, method="auto", n_starts=8, rng=None):
        if K == 0:
            return Parameterization(self.family_id, ())
        return super().mle(data, K, method, n_starts, rng)


class Reparameterized(ModelFamily):
    """A family viewed through a smooth coordinate change ``theta = to_base(eta)``.

    No closed forms are carried over on purpose: Fisher information and KL
    fall back to the numeric paths, which is what makes it useful for
    checking reparameterization covariance.
    """

    has_closed_form_fisher = False
    has_closed_form_kl = False
    has_conjugate_evidence = False

    def __init__(self, base: ModelFamily, to_base, from_base, bounds, name: str, truncation=None):
        self.base = base
        self.to_base = to_base
        self.from_base = from_base
        self._bounds = list(bounds)
        self._trunc = truncation
        self.family_id = f"{base.family_id}@{name}"
        self.obs_kind = base.obs_kind
        self.support = base.support
        self.k_min, self.k_max = base.k_min, base.k_max

    def bounds(self, K):
        return self._bounds

    def default_truncation(self, K):
        if self._trunc is not None:
            return self._trunc
        return [tuple(float(self.from_base(np.array([v]))[0]) for v in iv) for iv in self.base.default_truncation(K)]

    def logpdf(self, x, theta):
        return self.base.logpdf(x, self.to_base(np.asarray(theta, dtype=float)))

    def point_stats(self, obs):
        return self.base.point_stats(obs)

    def loglik_stats(self, theta_batch, stats):
        tb = np.atleast_2d(np.asarray(theta_batch, dtype=float))
        return self.base.loglik_stats(np.apply_along_axis(self.to_base, -1, tb), stats)

    def draw(self, theta, n, rng):
        return self.base.draw(self.to_base(theta), n, rng)

    def entropy(self, theta):
        return self.base.entropy(self.to_base(np.asarray(theta, dtype=float)))

    def initial_guess(self, stats, K):
        return self.from_base(self.base.initial_guess(stats, K))

    def mle_closed(self, stats, K):
        res = self.base.mle_closed(stats, K)
        if res is None:
            return None
        return self.from_base(res[0]), res[1]


def log_rate_exponential() -> Reparameterized:
    """Exponential family in eta = log(lambda)."""
    return Reparameterized(Exponential(), np.exp, np.log, [(-np.inf, np.inf)], "log")


FAMILIES = {
    "gauss_mean": GaussianMean,
    "gauss_mv": GaussianMeanVariance,
    "bernoulli": Bernoulli,
    "exponential": Exponential,
    "poly": Polynomial,
}


def get_family(family_id: str, **options) -> ModelFamily:
    try:
        cls = FAMILIES[family_id]
    except KeyError:
        raise KeyError(f"unknown family id {family_id!r}; known: {sorted(FAMILIES)}") from None
    return cls(**options)


# module-level aliases mirroring the operation names
def log_likelihood(family: ModelFamily, theta, data) -> float:
    return family.log_likelihood(theta, data)


def sample(family: ModelFamily, theta, n: int, stream) -> Dataset:
    return family.sample(theta, n, stream)


def fisher_information(family: ModelFamily, theta, **kw) -> np.ndarray:
    return family.fisher_information(theta, **kw)


def kl_divergence(family: ModelFamily, theta1, theta2, **kw) -> float:
    return family.kl_divergence(theta1, theta2, **kw)


def mle(family: ModelFamily, data, K: Optional[int] = None, **kw) -> Parameterization:
    return family.mle(data, K, **kw)
