"""Possibly-improper densities on parameter space.

A :class:`Prior` is a value object.  Its log density is assembled from a
structural *form* (constant, Jeffreys, Gaussian) plus an additive constant
and a scale offset, optionally restricted to a truncation domain and
optionally multiplied by a smooth perturbation.  The evidence code inspects
the form to pick closed-form integrals; anything with a perturbation is
treated as opaque.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, stats

from .errors import DomainError, NormalizationError, SingularityError
from .families import ModelFamily, Parameterization, _as_batch

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TruncationDomain:
    intervals: tuple

    def __post_init__(self):
        iv = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in iv:
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ValueError(f"truncation interval ({lo}, {hi}) has empty interior")
        object.__setattr__(self, "intervals", iv)

    @property
    def K(self) -> int:
        return len(self.intervals)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.intervals])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.intervals])

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, theta_batch) -> np.ndarray:
        tb = np.atleast_2d(theta_batch)
        return np.all((tb >= self.lower) & (tb <= self.upper), axis=-1)

    def scaled(self, factor: float) -> "TruncationDomain":
        """Stretch every interval by ``factor`` about its midpoint."""
        mid = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower) * factor
        return TruncationDomain(tuple(zip(mid - half, mid + half)))

    def check_within(self, family: ModelFamily) -> None:
        for (lo, hi), (blo, bhi) in zip(self.intervals, family.bounds(self.K)):
            if lo <= blo or hi >= bhi:
                raise DomainError(f"truncation [{lo}, {hi}] not inside the open domain ({blo}, {bhi})")


def default_domain(family: ModelFamily, K: int) -> TruncationDomain:
    return TruncationDomain(tuple(family.default_truncation(K)))


@dataclass(frozen=True)
class Perturbation:
    """Smooth multiplicative factor ``1 + amplitude * s(theta)`` with |s| <= 1.

    ``s`` is a random sum of cosines in the domain-rescaled coordinate.
    """

    lower: tuple
    upper: tuple
    coeffs: tuple  # per coordinate: ((a_j, phase_j), ...)
    amplitude: float

    @classmethod
    def random(cls, domain: TruncationDomain, amplitude: float, rng, n_modes: int = 3):
        coeffs = []
        for _ in range(domain.K):
            a = rng.standard_normal(n_modes)
            ph = rng.uniform(0, 2 * np.pi, n_modes)
            coeffs.append(tuple(zip(a.tolist(), ph.tolist())))
        total = sum(abs(a) for c in coeffs for a, _ in c)
        coeffs = tuple(tuple((a / total, p) for a, p in c) for c in coeffs)
        return cls(tuple(domain.lower), tuple(domain.upper), coeffs, float(amplitude))

    def shape(self, theta_batch) -> np.ndarray:
        tb = np.atleast_2d(theta_batch)
        u = (tb - np.array(self.lower)) / (np.array(self.upper) - np.array(self.lower))
        s = np.zeros(tb.shape[0])
        for d, modes in enumerate(self.coeffs):
            for j, (a, ph) in enumerate(modes, start=1):
                s += a * np.cos(2 * np.pi * j * u[:, d] + ph)
        return s

    def log_factor(self, theta_batch) -> np.ndarray:
        return np.log1p(self.amplitude * self.shape(theta_batch))


@dataclass(frozen=True)
class Prior:
    family: ModelFamily
    K: int
    form: str  # "const" | "jeffreys" | "gaussian"
    const_log: float = 0.0
    scale_log: float = 0.0
    is_proper: bool = False
    n_obs: Optional[int] = None
    domain: Optional[TruncationDomain] = None
    params: tuple = ()
    perturbation: Optional[Perturbation] = None
    name: str = ""

    @property
    def family_id(self) -> str:
        return self.family.family_id

    @property
    def jeffreys_power(self) -> int:
        return 1 if self.form == "jeffreys" else 0

    @property
    def is_structured(self) -> bool:
        """True when the density is a recognised closed form (no effective perturbation)."""
        return self.perturbation is None or self.perturbation.amplitude == 0

    def _base(self, tb: np.ndarray) -> np.ndarray:
        if self.form == "const":
            return np.zeros(tb.shape[0])
        if self.form == "jeffreys":
            return self.family.log_jeffreys_batch(tb)
        if self.form == "gaussian":
            m, s = np.asarray(self.params[0]), np.asarray(self.params[1])
            return np.sum(-0.5 * LOG_2PI - np.log(s) - (tb - m) ** 2 / (2 * s * s), axis=-1)
        raise ValueError(f"unknown prior form {self.form!r}")

    def log_density_batch(self, theta_batch) -> np.ndarray:
        tb = np.atleast_2d(np.asarray(theta_batch, dtype=float))
        ok = self.family.in_domain(tb)
        if self.domain is not None:
            ok &= self.domain.contains(tb)
        out = np.full(tb.shape[0], -np.inf)
        if ok.any():
            inner = tb[ok]
            val = self._base(inner) + self.const_log
            if not self.is_structured:
                val = val + self.perturbation.log_factor(inner)
            out[ok] = val + self.scale_log
        return out

    def log_density(self, theta) -> float:
        if isinstance(theta, Parameterization):
            theta = theta.values
        arr = np.atleast_1d(np.asarray(theta, dtype=float))
        return float(self.log_density_batch(arr[None])[0])

    def scaled(self, log_c: float) -> "Prior":
        """The prior multiplied by c = exp(log_c)."""
        return replace(self, scale_log=self.scale_log + float(log_c), is_proper=False if log_c else self.is_proper,
                       name=f"{self.name}*{math.exp(log_c):g}" if log_c else self.name)

    def restricted(self, domain: TruncationDomain) -> "Prior":
        return replace(self, domain=domain)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw from a proper prior; returns shape (n, K).

        One-dimensional priors use inverse-CDF sampling on a dense grid, which
        maps a fixed uniform stream monotonically onto parameter space and so
        keeps common random numbers aligned across priors.
        """
        if self.form == "gaussian" and self.domain is None and self.is_structured:
            m, s = np.asarray(self.params[0]), np.asarray(self.params[1])
            return m + s * rng.standard_normal((n, self.K))
        dom = self.domain
        if dom is None:
            raise NormalizationError("sampling an improper prior needs a truncation domain")
        if self.K == 1:
            grid = np.linspace(dom.lower[0], dom.upper[0], 20001)
            lp = self.log_density_batch(grid[:, None])
            dens = np.exp(lp - np.max(lp[np.isfinite(lp)]))
            dens[~np.isfinite(dens)] = 0.0
            cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
            cdf /= cdf[-1]
            return np.interp(rng.random(n), cdf, grid)[:, None]
        lo, hi = dom.lower, dom.upper
        probe = lo + (hi - lo) * rng.random((4096, self.K))
        bound = np.max(self.log_density_batch(probe)) + math.log(2.0)
        out = []
        while sum(len(o) for o in out) < n:
            cand = lo + (hi - lo) * rng.random((4 * n, self.K))
            keep = np.log(rng.random(4 * n)) < self.log_density_batch(cand) - bound
            out.append(cand[keep])
        return np.concatenate(out)[:n]

    def describe(self) -> dict:
        return {
            "name": self.name, "family": self.family_id, "K": self.K, "form": self.form,
            "const_log": self.const_log, "scale_log": self.scale_log, "is_proper": self.is_proper,
            "n_obs": self.n_obs, "domain": None if self.domain is None else [list(i) for i in self.domain.intervals],
            "params": [np.asarray(p).tolist() for p in self.params],
            "perturbed": self.perturbation is not None,
        }


def _K(family, K):
    return family.k_min if K is None else int(K)


def flat_prior(family: ModelFamily, K: Optional[int] = None, scale_log: float = 0.0) -> Prior:
    return Prior(family, _K(family, K), "const", scale_log=float(scale_log), name="flat")


def jeffreys_prior(family: ModelFamily, K: Optional[int] = None) -> Prior:
    return Prior(family, _K(family, K), "jeffreys", name="jeffreys")


def w_prior_constant(K: int, N: int) -> float:
    """log of (N / 2 pi)^(K/2) e^(-K)."""
    return 0.5 * K * math.log(N / (2 * math.pi)) - K


def w_prior_regular(family: ModelFamily, K: Optional[int] = None, N: int = 1) -> Prior:
    """Jeffreys density times (N/2pi)^(K/2) e^(-K), recorded for sample size N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    K = _K(family, K)
    return Prior(family, K, "jeffreys", const_log=w_prior_constant(K, N), n_obs=int(N), name="wprior")


def gaussian_prior(family: ModelFamily, mean, sd, K: Optional[int] = None) -> Prior:
    K = _K(family, K)
    m = np.broadcast_to(np.asarray(mean, dtype=float), (K,)).copy()
    s = np.broadcast_to(np.asarray(sd, dtype=float), (K,)).copy()
    if np.any(s <= 0):
        raise ValueError("sd must be positive")
    return Prior(family, K, "gaussian", params=(tuple(m), tuple(s)), is_proper=True,
                 name=f"gaussian({','.join(f'{v:g}' for v in m)};{','.join(f'{v:g}' for v in s)})")


def log_integral(prior: Prior, domain: TruncationDomain, n_mc: int = 200_000, rng=None) -> float:
    """log of the integral of the prior density over ``domain``."""
    p = prior.restricted(domain)
    lo, hi = domain.lower, domain.upper
    if domain.K == 1:
        xs = np.linspace(lo[0], hi[0], 2049)
        shift = float(np.max(p.log_density_batch(xs[:, None])))
        f = lambda t: math.exp(p.log_density_batch(np.array([[t]]))[0] - shift)
        val, err = integrate.quad(f, lo[0], hi[0], limit=500, epsabs=0.0, epsrel=1e-12)
    elif domain.K == 2:
        g0, g1 = np.meshgrid(np.linspace(lo[0], hi[0], 129), np.linspace(lo[1], hi[1], 129))
        shift = float(np.max(p.log_density_batch(np.column_stack([g0.ravel(), g1.ravel()]))))
        f = lambda y, x: math.exp(p.log_density_batch(np.array([[x, y]]))[0] - shift)
        val, err = integrate.dblquad(f, lo[0], hi[0], lo[1], hi[1], epsabs=0.0, epsrel=1e-10)
    else:
        rng = rng if rng is not None else np.random.default_rng(12345)
        pts = lo + (hi - lo) * rng.random((n_mc, domain.K))
        lp = p.log_density_batch(pts)
        shift = float(np.max(lp))
        val = float(np.mean(np.exp(lp - shift))) * domain.volume()
    if not (np.isfinite(val) and val > 0 and np.isfinite(shift)):
        raise NormalizationError(f"non-finite normalization integral for {prior.name}")
    return math.log(val) + shift


def normalize(prior: Prior, domain: Optional[TruncationDomain] = None):
    """Return (proper prior restricted to ``domain``, log N_Theta)."""
    domain = domain or prior.domain or default_domain(prior.family, prior.K)
    if domain.K != prior.K:
        raise ValueError("domain dimension does not match the prior")
    domain.check_within(prior.family)
    log_n = log_integral(prior, domain)
    out = replace(prior, domain=domain, scale_log=prior.scale_log - log_n, is_proper=True,
                  name=prior.name if prior.name.startswith("norm:") else f"norm:{prior.name}")
    return out, log_n


def perturbed_prior(prior: Prior, amplitude: float, seed: int, n_modes: int = 3) -> Prior:
    """Multiply a proper truncated prior by ``1 + amplitude * s`` and renormalize.

    Amplitude 0 records the perturbation but leaves the density, and every
    evaluation path, identical to the unperturbed prior.
    """
    if prior.domain is None:
        raise NormalizationError("perturbation needs a truncation domain")
    pert = Perturbation.random(prior.domain, amplitude, np.random.default_rng(seed), n_modes)
    out = replace(prior, perturbation=pert, name=f"{prior.name}~{amplitude:g}#{seed}")
    if amplitude == 0:
        return out
    return replace(out, scale_log=out.scale_log - log_integral(out, prior.domain))


_SPEC = re.compile(r"^\s*(?P<base>flat|jeffreys|wprior|gaussian\((?P<args>[^)]*)\))\s*(\*\s*(?P<c>[-+0-9.eE]+))?\s*$")


def parse_prior(spec: str, family: ModelFamily, K: Optional[int] = None, N: Optional[int] = None) -> Prior:
    """Build a prior from a config string.

    Accepted: ``flat``, ``jeffreys``, ``wprior``, ``gaussian(m,s)`` and any of
    these followed by ``*<c>`` to scale the density by c > 0.
    """
    m = _SPEC.match(spec)
    if not m:
        raise ValueError(f"unrecognised prior spec {spec!r}")
    base = m.group("base")
    if base == "flat":
        p = flat_prior(family, K)
    elif base == "jeffreys":
        p = jeffreys_prior(family, K)
    elif base == "wprior":
        if N is None:
            raise ValueError("wprior needs the observation count N")
        p = w_prior_regular(family, K, N)
    else:
        args = [float(a) for a in m.group("args").split(",")]
        if len(args) != 2:
            raise ValueError("gaussian(m,s) takes two arguments")
        p = gaussian_prior(family, args[0], args[1], K)
    if m.group("c"):
        c = float(m.group("c"))
        if c <= 0:
            raise ValueError("prior scale must be positive")
        p = p.scaled(math.log(c))
    return p
