import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wprior.errors import MCFailure
from wprior.mc import (Budgets, Estimate, StreamSpec, difference, label_id, mc_mean, nested_mc,
                       replicate_values)


def _normal(rng):
    return float(rng.standard_normal())


class _Outer:
    """Outer draw mu ~ N(0,1); inner draws x ~ N(mu, 1)."""

    def __call__(self, rng):
        mu = rng.standard_normal()
        return lambda r: mu + r.standard_normal()


def test_streams_are_reproducible_and_distinct():
    a = StreamSpec(5, (1, 2)).generator().random(4)
    b = StreamSpec(5, (1, 2)).generator().random(4)
    c = StreamSpec(5, (1, 3)).generator().random(4)
    d = StreamSpec(6, (1, 2)).generator().random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    assert StreamSpec(1, ("data",)).path == (label_id("data"),)


def test_replicates_can_be_regenerated_individually():
    s = StreamSpec(9)
    vals = replicate_values(_normal, 10, s)
    assert vals[7] == _normal(s.child(7).generator())


def test_serial_and_parallel_runs_identical():
    s = StreamSpec(3)
    assert np.array_equal(replicate_values(_normal, 40, s, jobs=1), replicate_values(_normal, 40, s, jobs=2))


def test_mc_mean_covers_truth():
    est = mc_mean(_normal, 4000, 1)
    assert abs(est.mean) <= 4 * est.std_error
    assert est.std_error == pytest.approx(1 / math.sqrt(4000), rel=0.1)
    assert est.seed == {"master_seed": 1, "path": []}


def test_nested_mc_standard_error_includes_inner_noise():
    est = nested_mc(_Outer(), 400, 4, 2)
    # var of an inner mean = 1 (outer) + 1/4 (inner)
    assert est.std_error == pytest.approx(math.sqrt(1.25 / 400), rel=0.15)
    assert abs(est.mean) <= 4 * est.std_error


def test_nonfinite_samples_excluded_and_bounded():
    vals = np.r_[np.ones(199), np.nan]
    est = Estimate.from_samples(vals)
    assert est.n_excluded == 1 and est.n == 199
    with pytest.raises(MCFailure):
        Estimate.from_samples(np.r_[np.ones(97), [np.inf] * 3])


def test_budgets_validation():
    with pytest.raises(ValueError):
        Budgets(1, 10)
    with pytest.raises(ValueError):
        nested_mc(_Outer(), 10, 1, 0)


@settings(max_examples=40, deadline=None)
@given(shift=st.floats(-100, 100), seed=st.integers(0, 2**32))
def test_difference_with_common_random_numbers(shift, seed):
    x = np.random.default_rng(seed).normal(size=50)
    d = difference(x + shift, x)
    assert d.mean == pytest.approx(shift, abs=1e-9)
    assert d.std_error == pytest.approx(0.0, abs=1e-9)


def test_estimate_helpers():
    e = Estimate(1.0, 0.1, 10)
    assert e.within(1.25) and not e.within(1.5)
    assert e.shifted(2.0).mean == 3.0 and e.shifted(2.0).std_error == 0.1
    assert f"{e:.2f}" == "1.00 ± 0.10"
    assert e.to_dict()["flags"] == []


def test_child_streams_uncorrelated():
    s = StreamSpec(2024)
    a = s.child(0).generator().standard_normal(10_000)
    b = s.child(1).generator().standard_normal(10_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
