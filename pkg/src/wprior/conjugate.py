"""Closed-form partition functions and exact posterior samplers.

Each conjugate model takes sufficient statistics with arbitrary leading
batch dimensions, so a posterior predictive over a batch of candidate points
is just ``log_partition(stats + point_stats(x)) - log_partition(stats)``.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy import special

from .families import (LOG_2PI, Bernoulli, Exponential, GaussianMean, GaussianMeanVariance,
                       ModelFamily, Polynomial)
from .priors import Prior


def _log_diff_exp(la, lb):
    """log(exp(lb) - exp(la)) for lb >= la."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


def log_normal_mass(alpha, beta):
    """log(Phi(beta) - Phi(alpha)), accurate in both tails."""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float))
    upper = alpha > 0
    # mirror into the lower tail where log_ndtr is accurate
    la = np.where(upper, special.log_ndtr(-beta), special.log_ndtr(alpha))
    lb = np.where(upper, special.log_ndtr(-alpha), special.log_ndtr(beta))
    return _log_diff_exp(la, lb)


def _truncated_normal_ppf(u, m, sd, alpha, beta):
    """Inverse CDF of N(m, sd^2) restricted to [m + alpha sd, m + beta sd]."""
    if alpha > 0:
        lo, hi = special.ndtr(-beta), special.ndtr(-alpha)
        z = -special.ndtri(hi - u * (hi - lo))
    else:
        lo, hi = special.ndtr(alpha), special.ndtr(beta)
        z = special.ndtri(lo + u * (hi - lo))
    return m + sd * np.clip(z, alpha, beta)


class Conjugate:
    """Interface: ``log_partition(stats)`` and ``sample(stats, n, rng)``."""

    def __init__(self, family: ModelFamily, prior: Prior):
        self.family = family
        self.prior = prior
        self.offset = prior.const_log + prior.scale_log

    def log_partition(self, stats):
        raise NotImplementedError

    def sample(self, stats, n, rng):
        raise NotImplementedError

    def mean(self, stats):
        raise NotImplementedError


class _GaussMeanFlat(Conjugate):
    def _parts(self, stats):
        v = self.family.variance
        n, s1, s2 = stats[..., 0], stats[..., 1], stats[..., 2]
        m = s1 / n
        sd = np.sqrt(v / n)
        base = (-0.5 * n * (LOG_2PI + math.log(v)) - (s2 - s1 * m) / (2 * v)
                + 0.5 * (LOG_2PI + np.log(v / n)))
        return m, sd, base

    def _bounds(self):
        d = self.prior.domain
        return (-np.inf, np.inf) if d is None else d.intervals[0]

    def log_partition(self, stats):
        m, sd, base = self._parts(stats)
        lo, hi = self._bounds()
        off = self.offset - 0.5 * math.log(self.family.variance) * self.prior.jeffreys_power
        mass = 0.0 if self.prior.domain is None else log_normal_mass((lo - m) / sd, (hi - m) / sd)
        return base + off + mass

    def sample(self, stats, n, rng):
        m, sd, _ = self._parts(stats)
        lo, hi = self._bounds()
        return _truncated_normal_ppf(rng.random(n), m, sd, (lo - m) / sd, (hi - m) / sd)[:, None]

    def mean(self, stats):
        m, sd, _ = self._parts(stats)
        lo, hi = self._bounds()
        a, b = (lo - m) / sd, (hi - m) / sd
        if self.prior.domain is None:
            return np.array([m])
        # truncated-normal mean shift
        shift = (np.exp(-0.5 * a * a) - np.exp(-0.5 * b * b)) / math.sqrt(2 * math.pi)
        return np.array([m + sd * shift / np.exp(log_normal_mass(a, b))])


class _GaussMeanGauss(_GaussMeanFlat):
    def _parts(self, stats):
        v = self.family.variance
        (m0,), (s0,) = self.prior.params
        n, s1, s2 = stats[..., 0], stats[..., 1], stats[..., 2]
        prec = n / v + 1.0 / s0**2
        m = (s1 / v + m0 / s0**2) / prec
        sd = np.sqrt(1.0 / prec)
        base = (-0.5 * n * (LOG_2PI + math.log(v)) - s2 / (2 * v)
                - 0.5 * math.log(s0**2) - m0 * m0 / (2 * s0**2)
                - 0.5 * np.log(prec) + 0.5 * prec * m * m)
        return m, sd, base

    def log_partition(self, stats):
        m, sd, base = self._parts(stats)
        lo, hi = self._bounds()
        mass = 0.0 if self.prior.domain is None else log_normal_mass((lo - m) / sd, (hi - m) / sd)
        return base + self.offset + mass


class _BernoulliBeta(Conjugate):
    def _ab(self, stats):
        j = self.prior.jeffreys_power
        n, k = stats[..., 0], stats[..., 1]
        return k + 1.0 - 0.5 * j, n - k + 1.0 - 0.5 * j

    def _cdf_range(self, a, b):
        d = self.prior.domain
        if d is None:
            return 0.0, 1.0
        lo, hi = d.intervals[0]
        return special.betainc(a, b, lo), special.betainc(a, b, hi)

    def log_partition(self, stats):
        a, b = self._ab(stats)
        out = special.betaln(a, b) + self.offset
        if self.prior.domain is not None:
            lo, hi = self.prior.domain.intervals[0]
            # complementary form keeps precision when the mass sits near 1
            with np.errstate(divide="ignore"):
                out = out + np.log(special.betainc(a, b, hi) - special.betainc(a, b, lo))
        return out

    def sample(self, stats, n, rng):
        a, b = self._ab(stats)
        flo, fhi = self._cdf_range(a, b)
        u = flo + rng.random(n) * (fhi - flo)
        return special.betaincinv(a, b, u)[:, None]

    def mean(self, stats):
        a, b = self._ab(stats)
        if self.prior.domain is None:
            return np.array([a / (a + b)])
        lo, hi = self.prior.domain.intervals[0]
        num = special.betainc(a + 1, b, hi) - special.betainc(a + 1, b, lo)
        den = special.betainc(a, b, hi) - special.betainc(a, b, lo)
        return np.array([a / (a + b) * num / den])


class _ExponentialGamma(Conjugate):
    def _shape_rate(self, stats):
        return stats[..., 0] + 1.0 - self.prior.jeffreys_power, stats[..., 1]

    def log_partition(self, stats):
        a, s = self._shape_rate(stats)
        out = special.gammaln(a) - a * np.log(s) + self.offset
        if self.prior.domain is not None:
            lo, hi = self.prior.domain.intervals[0]
            with np.errstate(divide="ignore"):
                out = out + np.log(special.gammainc(a, s * hi) - special.gammainc(a, s * lo))
        return out

    def sample(self, stats, n, rng):
        a, s = self._shape_rate(stats)
        if self.prior.domain is None:
            flo, fhi = 0.0, 1.0
        else:
            lo, hi = self.prior.domain.intervals[0]
            flo, fhi = special.gammainc(a, s * lo), special.gammainc(a, s * hi)
        u = flo + rng.random(n) * (fhi - flo)
        return (special.gammaincinv(a, u) / s)[:, None]

    def mean(self, stats):
        a, s = self._shape_rate(stats)
        if self.prior.domain is None:
            return np.array([a / s])
        lo, hi = self.prior.domain.intervals[0]
        num = special.gammainc(a + 1, s * hi) - special.gammainc(a + 1, s * lo)
        den = special.gammainc(a, s * hi) - special.gammainc(a, s * lo)
        return np.array([a / s * num / den])


class _GaussMVInvGamma(Conjugate):
    """Prior proportional to v^(-a): a = 0 (flat) or 3/2 (Jeffreys)."""

    def _parts(self, stats):
        j = self.prior.jeffreys_power
        n, s1, s2 = stats[..., 0], stats[..., 1], stats[..., 2]
        m = s1 / n
        ss = np.maximum(s2 - s1 * m, 0.0)
        alpha = 0.5 * (n - 1) + 1.5 * j - 1.0
        return n, m, alpha, 0.5 * ss

    def log_partition(self, stats):
        n, m, alpha, beta = self._parts(stats)
        off = self.offset - 0.5 * math.log(2.0) * self.prior.jeffreys_power
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (off - 0.5 * n * LOG_2PI + 0.5 * (LOG_2PI - np.log(n))
                   + special.gammaln(alpha) - alpha * np.log(beta))
        return np.where((alpha > 0) & (beta > 0), out, np.inf)

    def sample(self, stats, n, rng):
        nn, m, alpha, beta = self._parts(stats)
        v = beta / rng.gamma(alpha, 1.0, n)
        mu = m + np.sqrt(v / nn) * rng.standard_normal(n)
        return np.column_stack([mu, v])

    def mean(self, stats):
        nn, m, alpha, beta = self._parts(stats)
        return np.array([m, beta / (alpha - 1.0)])


class _PolyFlat(Conjugate):
    def log_partition(self, stats):
        fam, K = self.family, self.prior.K
        s2 = fam.sigma**2
        n, yy, b, A = fam.unpack(stats, K)
        off = self.offset - K * math.log(fam.sigma) * self.prior.jeffreys_power
        const = n * (math.log(0.5) - 0.5 * (LOG_2PI + math.log(s2)))
        if K == 0:
            return off + const - yy / (2 * s2)
        sol = np.linalg.solve(A, b[..., None])[..., 0]
        _, logdet = np.linalg.slogdet(A)
        fit = np.einsum("...i,...i->...", b, sol)
        return off + const - (yy - fit) / (2 * s2) + 0.5 * K * (LOG_2PI + math.log(s2)) - 0.5 * logdet

    def sample(self, stats, n, rng):
        fam, K = self.family, self.prior.K
        _, _, b, A = fam.unpack(stats, K)
        cov = fam.sigma**2 * np.linalg.inv(A)
        L = np.linalg.cholesky(cov)
        return np.linalg.solve(A, b) + rng.standard_normal((n, K)) @ L.T

    def mean(self, stats):
        _, _, b, A = self.family.unpack(stats, self.prior.K)
        return np.linalg.solve(A, b)


def conjugate_for(family: ModelFamily, prior: Prior) -> Optional[Conjugate]:
    """Closed-form handler for the (family, prior) pair, or None."""
    if not prior.is_structured or type(family) not in _TABLE:
        return None
    handler = _TABLE[type(family)](prior)
    return None if handler is None else handler(family, prior)


def _gauss_mean(prior):
    return {"const": _GaussMeanFlat, "jeffreys": _GaussMeanFlat, "gaussian": _GaussMeanGauss}.get(prior.form)


def _no_domain(cls):
    return lambda prior: cls if prior.form in ("const", "jeffreys") and prior.domain is None else None


_TABLE = {
    GaussianMean: _gauss_mean,
    Bernoulli: lambda prior: _BernoulliBeta if prior.form in ("const", "jeffreys") else None,
    Exponential: lambda prior: _ExponentialGamma if prior.form in ("const", "jeffreys") else None,
    GaussianMeanVariance: _no_domain(_GaussMVInvGamma),
    Polynomial: _no_domain(_PolyFlat),
}
