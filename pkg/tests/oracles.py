"""Independent reference computations used by the tests.

Nothing here imports the package's numerical code: densities come from
scipy.stats and integrals from scipy.integrate or plain grids.
"""
import math

import numpy as np
from scipy import integrate, stats


def log_z_quad(loglik, log_prior, lo, hi):
    """log of the integral of exp(loglik + log_prior) over [lo, hi] (1-D)."""
    grid = np.linspace(lo, hi, 801)
    vals = [loglik(t) + log_prior(t) for t in grid]
    ref = max(vals)
    val, _ = integrate.quad(lambda t: math.exp(loglik(t) + log_prior(t) - ref), lo, hi,
                            points=[grid[int(np.argmax(vals))]], limit=400, epsabs=0, epsrel=1e-12)
    return ref + math.log(val)


def gauss_loglik(data, var=1.0):
    data = [float(v) for v in np.ravel(data)]
    c = -0.5 * math.log(2 * math.pi * var)
    return lambda t: sum(c - (v - t) ** 2 / (2 * var) for v in data)


def expected_log_z_gauss_flat(N, theta0=0.0, n_nodes=20):
    """E over X ~ N(theta0, 1)^N of log Z under a flat prior, by Gauss-Hermite for N <= 2."""
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    if N == 1:
        return sum(wi * log_z_quad(gauss_loglik([theta0 + xi]), lambda t: 0.0, -40, 40)
                   for xi, wi in zip(x, w))
    total = 0.0
    for xi, wi in zip(x, w):
        for xj, wj in zip(x, w):
            d = [theta0 + xi, theta0 + xj]
            total += wi * wj * log_z_quad(gauss_loglik(d), lambda t: 0.0, -40, 40)
    return total


def expected_log_pred_gauss_flat_n1(theta0=0.0, n_nodes=20):
    """E log p(x2 | x1) for one training point under a flat prior."""
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    total = 0.0
    for xi, wi in zip(x, w):
        a = theta0 + xi
        lz1 = log_z_quad(gauss_loglik([a]), lambda t: 0.0, -40, 40)
        for xj, wj in zip(x, w):
            lz2 = log_z_quad(gauss_loglik([a, theta0 + xj]), lambda t: 0.0, -40, 40)
            total += wi * wj * (lz2 - lz1)
    return total


def fisher_score_cov(logpdf, draw, theta, n=400_000, seed=0, h=1e-5):
    """Fisher information as the covariance of a finite-difference score."""
    rng = np.random.default_rng(seed)
    theta = np.asarray(theta, dtype=float)
    x = draw(theta, n, rng)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h * (1 + abs(theta[j]))
        cols.append((logpdf(x, theta + e) - logpdf(x, theta - e)) / (2 * e[j]))
    s = np.column_stack(cols)
    return np.cov(s, rowvar=False).reshape(theta.size, theta.size)


def kl_quad(logp, logq, lo, hi):
    val, _ = integrate.quad(lambda x: math.exp(logp(x)) * (logp(x) - logq(x)), lo, hi, limit=200)
    return val


def kl_ball_volume_bruteforce(kl, lo, hi, n=200_001):
    """1-D volume of {t : kl(t) <= 1} by counting grid cells."""
    t = np.linspace(lo, hi, n)
    inside = kl(t) <= 1.0
    return inside.sum() * (t[1] - t[0])
