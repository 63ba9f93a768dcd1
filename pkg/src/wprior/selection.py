"""Unknown complexity: per-K free energies, the summed partition function,
complexity weights, and the density of distinguishable models."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, SingularityError
from .families import Dataset, ModelFamily

TAIL_WARNING = 1e-6


class TruncationWarning(UserWarning):
    """The highest complexity still carries a noticeable share of the total."""


def _observations(data):
    return data.observations if isinstance(data, Dataset) else np.asarray(data, dtype=float)


def g_k(family: ModelFamily, data, K: int) -> float:
    """Free energy at complexity K: minus the maximized log-likelihood plus K.

    K = 0 (only for families with a null model) has no free parameters, so
    the value is just minus the log-likelihood of the reference density.
    """
    obs = _observations(data)
    K = int(K)
    if K == 0:
        if not family.allows_null:
            raise DomainError(f"{family.family_id} has no K=0 null model")
        ll = float(family.loglik_stats(np.zeros((1, 0)), family.suff_stats(obs))[0])
    else:
        ll = family.max_log_likelihood(obs, K)
    return -ll + K


# one implementation, two names
aic = g_k


@dataclass(frozen=True)
class ComplexityRow:
    K: int
    log_z: float
    g: float
    aic: float
    weight: Optional[float]


@dataclass(frozen=True)
class ComplexityReport:
    rows: tuple
    log_z: float
    k_max: int
    dataset: dict
    tail_share: float
    null_row: Optional[ComplexityRow] = None
    flags: tuple = ()

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.rows])

    @property
    def argmax_k(self) -> int:
        return self.rows[int(np.argmax(self.weights))].K

    def to_dict(self) -> dict:
        d = {"log_z": self.log_z, "k_max": self.k_max, "dataset": self.dataset,
             "tail_share": self.tail_share, "argmax_k": self.argmax_k,
             "rows": [asdict(r) for r in self.rows], "flags": list(self.flags)}
        d["null_row"] = None if self.null_row is None else asdict(self.null_row)
        return d


def _g_task(args):
    family, obs, K = args
    return g_k(family, obs, K)


def total_partition(family: ModelFamily, data, k_max: Optional[int] = None,
                    include_null: bool = False, jobs: int = 1) -> ComplexityReport:
    """Sum of exp(-G_K) over K = k_min..k_max.

    The K=0 row, when requested, is reported alongside but kept out of the
    total and the weights.
    """
    k_max = family.k_max if k_max is None else int(k_max)
    if k_max < max(1, family.k_min) or k_max > family.k_max:
        raise DomainError(f"k_max={k_max} outside [{max(1, family.k_min)}, {family.k_max}]")
    obs = _observations(data)
    ks = list(range(family.k_min, k_max + 1))
    tasks = [(family, obs, K) for K in ks]
    if jobs and jobs > 1 and len(ks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            gs = np.array(list(ex.map(_g_task, tasks)))
    else:
        gs = np.array([_g_task(t) for t in tasks])
    total = float(logsumexp(-gs))
    w = np.exp(-gs - total)
    w /= w.sum()
    rows = tuple(ComplexityRow(K, float(-g), float(g), float(g), float(wk)) for K, g, wk in zip(ks, gs, w))
    tail = float(w[-1])
    flags = ()
    if tail > TAIL_WARNING and k_max > family.k_min:
        warnings.warn(f"K_max={k_max} still carries weight {tail:.3g}; the truncated sum may be incomplete",
                      TruncationWarning, stacklevel=2)
        flags = ("truncation_tail",)
    null_row = None
    if include_null:
        g0 = g_k(family, obs, 0)
        null_row = ComplexityRow(0, -g0, g0, g0, None)
    origin = data.origin if isinstance(data, Dataset) else {}
    return ComplexityReport(rows, total, k_max, {"n": int(obs.shape[0]), "origin": origin}, tail, null_row, flags)


# ---------------------------------------------------------------------------
# density of distinguishable models
# ---------------------------------------------------------------------------

def log_density_of_models(family: ModelFamily, theta0, N: int, D: float) -> float:
    if D <= 0:
        raise ValueError("D must be positive")
    if N < 1:
        raise ValueError("N must be >= 1")
    th = family.check(theta0)
    K = th.size
    sign, logdet = np.linalg.slogdet(family.fisher_information(th))
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularityError(f"Fisher information not positive definite at {th.tolist()}")
    return 0.5 * logdet + 0.5 * K * (math.log(N) - math.log(2 * math.pi)) - 0.5 * K * math.log(D)


def density_of_models(family: ModelFamily, theta0, N: int, D: float) -> float:
    """sqrt(det I) (N / 2 pi)^(K/2) D^(-K/2), proportionality constant set to 1."""
    return math.exp(log_density_of_models(family, theta0, N, D))


@dataclass(frozen=True)
class GridSpec:
    points_per_dim: Optional[int] = None  # default depends on K
    initial_radius: float = 2.0  # in units of the local-quadratic half-width
    max_expansions: int = 30

    def points(self, K: int) -> int:
        if self.points_per_dim is not None:
            return int(self.points_per_dim)
        return {1: 20001, 2: 801}.get(K, 61)


@dataclass(frozen=True)
class BallVolume:
    volume: float
    partial: bool
    step: tuple
    expansions: int

    def __float__(self):
        return self.volume


def kl_ball_volume(family: ModelFamily, theta0, N: int, D: float,
                   grid_spec: Optional[GridSpec] = None) -> BallVolume:
    """Volume of {theta : N D(theta0 || theta) <= D} by brute-force grid counting.

    The box starts at a multiple of the quadratic-approximation half-width and
    doubles until no cell on an unclipped face lies inside the ball.  Cells
    inside the ball on a face clipped by the parameter domain set ``partial``.
    """
    if D <= 0 or N < 1:
        raise ValueError("need D > 0 and N >= 1")
    spec = grid_spec or GridSpec()
    th = family.check(theta0)
    K = th.size
    n = spec.points(K)
    diag = np.diag(family.fisher_information(th))
    r = spec.initial_radius * np.sqrt(2 * D / (N * diag))
    bounds = np.array(family.bounds(K), dtype=float)
    for expansion in range(spec.max_expansions + 1):
        lo = np.maximum(th - r, bounds[:, 0])
        hi = np.minimum(th + r, bounds[:, 1])
        clipped_lo, clipped_hi = lo > th - r, hi < th + r
        step = (hi - lo) / n
        axes = [lo[i] + step[i] * (np.arange(n) + 0.5) for i in range(K)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, K)
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = family.kl_batch(th, mesh)
        inside = (N * np.nan_to_num(kl, nan=np.inf) <= D).reshape((n,) * K)
        open_face = partial = False
        for i in range(K):
            first = np.take(inside, 0, axis=i).any()
            last = np.take(inside, n - 1, axis=i).any()
            open_face |= (first and not clipped_lo[i]) or (last and not clipped_hi[i])
            partial |= (first and clipped_lo[i]) or (last and clipped_hi[i])
        if not open_face:
            return BallVolume(float(inside.sum() * np.prod(step)), bool(partial), tuple(step.tolist()), expansion)
        r = 2 * r
    raise RuntimeError("KL ball did not fit the grid after the maximum number of expansions")
