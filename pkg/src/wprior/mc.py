"""Seeded random streams and Monte Carlo reductions.

Streams are derived counter-style: the (master_seed, path) pair is fed to
:class:`numpy.random.SeedSequence` as entropy plus spawn key, so any
replicate can be regenerated in isolation without replaying the others.
"""
from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import MCFailure

MAX_NONFINITE_FRACTION = 0.01

# purpose codes for stream paths
DATA, NEW_OBS, POSTERIOR, TRUTH, PROPOSAL, HELD_OUT = range(6)


def label_id(label: str) -> int:
    """Stable 32-bit id for a textual stream label."""
    return zlib.crc32(label.encode())


@dataclass(frozen=True)
class StreamSpec:
    master_seed: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "path", tuple(
            label_id(p) if isinstance(p, str) else int(p) for p in self.path))

    def child(self, *keys) -> "StreamSpec":
        return StreamSpec(self.master_seed, self.path + tuple(keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))

    def describe(self) -> dict:
        return {"master_seed": self.master_seed, "path": list(self.path)}


def as_stream(stream) -> StreamSpec:
    if isinstance(stream, StreamSpec):
        return stream
    if isinstance(stream, (int, np.integer)):
        return StreamSpec(int(stream))
    raise TypeError(f"expected StreamSpec or int seed, got {type(stream).__name__}")


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    n: int
    seed: Optional[dict] = None
    n_excluded: int = 0
    bias_note: Optional[str] = None
    flags: tuple = ()

    @classmethod
    def from_samples(cls, values, seed=None, bias_note=None, flags=()) -> "Estimate":
        values = np.asarray(values, dtype=float)
        finite = np.isfinite(values)
        n_bad = int((~finite).sum())
        if values.size and n_bad > MAX_NONFINITE_FRACTION * values.size:
            raise MCFailure(f"{n_bad}/{values.size} non-finite Monte Carlo samples")
        v = values[finite]
        if v.size < 2:
            raise MCFailure("need at least two finite samples for a standard error")
        se = float(np.std(v, ddof=1) / math.sqrt(v.size))
        return cls(float(np.mean(v)), se, int(v.size), seed, n_bad, bias_note, tuple(flags))

    def shifted(self, offset: float) -> "Estimate":
        return Estimate(self.mean + offset, self.std_error, self.n, self.seed,
                        self.n_excluded, self.bias_note, self.flags)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d

    def within(self, target: float, n_se: float = 3.0, slack: float = 0.0) -> bool:
        return abs(self.mean - target) <= n_se * self.std_error + slack

    def __format__(self, spec):
        spec = spec or ".4g"
        return f"{self.mean:{spec}} ± {self.std_error:{spec}}"


def _call(args):
    fn, stream = args
    return fn(stream.generator())


def replicate_values(fn: Callable[[np.random.Generator], object], n: int, stream,
                     jobs: int = 1) -> np.ndarray:
    """Evaluate ``fn`` on ``n`` independent child streams of ``stream``.

    Results are keyed by replicate index, so serial and parallel runs return
    bit-identical arrays.  ``fn`` may return a scalar or a fixed-length vector.
    """
    stream = as_stream(stream)
    tasks = [(fn, stream.child(i)) for i in range(n)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_call, tasks, chunksize=max(1, n // (4 * jobs))))
    else:
        out = [_call(t) for t in tasks]
    return np.asarray(out, dtype=float)


def mc_mean(sampler: Callable[[np.random.Generator], float], n: int, stream,
            jobs: int = 1) -> Estimate:
    if n < 2:
        raise ValueError("n must be >= 2")
    stream = as_stream(stream)
    return Estimate.from_samples(replicate_values(sampler, n, stream, jobs), stream.describe())


def nested_mc(outer_sampler: Callable[[np.random.Generator], Callable[[np.random.Generator], float]],
              n_outer: int, n_inner: int, stream, jobs: int = 1) -> Estimate:
    """Mean over outer draws of inner sample means.

    The standard error comes from the spread of the inner means, which
    already includes the inner Monte Carlo noise.
    """
    if n_outer < 2 or n_inner < 2:
        raise ValueError("budgets must be >= 2")
    stream = as_stream(stream)
    fn = _NestedReplicate(outer_sampler, n_inner)
    return Estimate.from_samples(replicate_values(fn, n_outer, stream, jobs), stream.describe())


@dataclass
class _NestedReplicate:
    outer_sampler: Callable
    n_inner: int

    def __call__(self, rng):
        inner = self.outer_sampler(rng)
        vals = np.array([inner(rng) for _ in range(self.n_inner)], dtype=float)
        vals = vals[np.isfinite(vals)]
        return float(vals.mean()) if vals.size else math.nan


@dataclass(frozen=True)
class Budgets:
    n_outer: int = 256
    n_inner: int = 512

    def __post_init__(self):
        if self.n_outer < 2 or self.n_inner < 2:
            raise ValueError("budgets must be >= 2")


def difference(values_a, values_b, seed=None) -> Estimate:
    """Estimate of E[a - b] from paired (common-random-number) samples."""
    return Estimate.from_samples(np.asarray(values_a) - np.asarray(values_b), seed)
