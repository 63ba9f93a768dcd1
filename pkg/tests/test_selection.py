import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from wprior import get_family
from wprior.errors import DomainError, SingularityError
from wprior.selection import (BallVolume, GridSpec, TruncationWarning, aic, density_of_models, g_k,
                              kl_ball_volume, log_density_of_models, total_partition)

from oracles import kl_ball_volume_bruteforce

# AIC weights rarely drop below the tail threshold; the warning is tested on its own
pytestmark = pytest.mark.filterwarnings("ignore::wprior.selection.TruncationWarning")


@pytest.fixture(scope="module")
def poly():
    return get_family("poly", k_max=6)


def _poly_data(fam, theta, n, seed):
    return fam.sample(theta, n, np.random.default_rng(seed))


def test_free_energy_hand_value():
    fam = get_family("gauss_mean")
    assert g_k(fam, np.array([0.0, 0.0]), 1) == pytest.approx(math.log(2 * math.pi) + 1, abs=1e-12)


def test_aic_is_free_energy(poly):
    assert aic is g_k
    for seed in range(100):
        data = _poly_data(poly, [0.2, -0.4], 30, seed)
        K = 1 + seed % poly.k_max
        assert aic(poly, data, K) == g_k(poly, data, K)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_adding_a_term_lowers_g_by_at_most_one(poly, seed, K):
    data = _poly_data(poly, [0.3, 0.1, -0.2], 40, seed)
    assert g_k(poly, data, K + 1) - g_k(poly, data, K) <= 1 + 1e-9


def test_increment_on_noise_matches_chi_square(poly):
    # one superfluous coefficient: 2 (1 - delta G) is chi-square with one degree of freedom
    draws = []
    for seed in range(500):
        data = _poly_data(poly, [0.5], 200, 10_000 + seed)
        draws.append(2 * (1 - (g_k(poly, data, 2) - g_k(poly, data, 1))))
    res = stats.kstest(draws, stats.chi2(1).cdf)
    assert res.statistic < 0.08


def test_report_structure(poly):
    data = _poly_data(poly, [0.5, -0.6, 0.4], 500, 1)
    rep = total_partition(poly, data, k_max=6, include_null=True)
    ks = [r.K for r in rep.rows]
    assert ks == list(range(1, 7))
    assert rep.weights.sum() == pytest.approx(1.0)
    gs = np.array([r.g for r in rep.rows])
    # log-sum-exp sits between the largest term and that plus log(#terms)
    assert -gs.min() <= rep.log_z <= -gs.min() + math.log(len(gs))
    assert rep.null_row.K == 0 and rep.null_row.weight is None
    assert rep.null_row.g == pytest.approx(g_k(poly, data, 0))
    d = rep.to_dict()
    assert d["argmax_k"] == rep.argmax_k and len(d["rows"]) == 6
    assert rep.argmax_k >= 3


def test_single_complexity(poly):
    data = _poly_data(poly, [0.5], 50, 2)
    rep = total_partition(poly, data, k_max=1)
    assert len(rep.rows) == 1 and rep.weights[0] == 1.0
    assert rep.log_z == pytest.approx(-g_k(poly, data, 1))


def test_weights_shift_invariant(poly):
    data = _poly_data(poly, [0.5, -0.3], 100, 3)
    gs = np.array([g_k(poly, data, K) for K in range(1, 7)])
    rep = total_partition(poly, data)
    shifted = np.exp(-(gs + 123.0) - np.logaddexp.reduce(-(gs + 123.0)))
    assert np.allclose(rep.weights, shifted, atol=1e-12)


def test_truncation_warning(poly):
    # a strong high-order signal leaves weight at K_max
    data = _poly_data(poly, [0.0, 0.0, 0.0, 0.0, 1.0], 300, 4)
    with pytest.warns(TruncationWarning):
        rep = total_partition(poly, data, k_max=5)
    assert "truncation_tail" in rep.flags


def test_null_row_needs_support():
    fam = get_family("bernoulli")
    with pytest.raises(DomainError):
        g_k(fam, np.array([0.0, 1.0]), 0)
    with pytest.raises(DomainError):
        total_partition(get_family("poly", k_max=4), np.zeros((3, 2)), k_max=9)


def test_parallel_report_identical(poly):
    data = _poly_data(poly, [0.5, -0.3], 100, 5)
    a = total_partition(poly, data)
    b = total_partition(poly, data, jobs=2)
    assert a.weights.tolist() == b.weights.tolist()


# --- density of distinguishable models ---------------------------------------

def test_gaussian_ball_volume_closed_form():
    fam = get_family("gauss_mean")
    for N, D in [(10, 0.5), (100, 1.0), (1000, 2.0)]:
        v = kl_ball_volume(fam, [0.3], N, D)
        assert isinstance(v, BallVolume) and not v.partial
        assert float(v) == pytest.approx(2 * math.sqrt(2 * D / N), rel=1e-3)


def test_ball_volume_against_bruteforce():
    fam = get_family("bernoulli")
    N, D, p = 100, 1.0, 0.3
    kl = lambda t: N * (p * np.log(p / t) + (1 - p) * np.log((1 - p) / (1 - t))) / D
    ref = kl_ball_volume_bruteforce(kl, 1e-6, 1 - 1e-6)
    assert float(kl_ball_volume(fam, [p], N, D)) == pytest.approx(ref, rel=2e-3)


def test_ball_volume_grid_refinement():
    fam = get_family("gauss_mv")
    coarse = kl_ball_volume(fam, [0.0, 1.0], 100, 1.0, GridSpec(points_per_dim=401))
    fine = kl_ball_volume(fam, [0.0, 1.0], 100, 1.0, GridSpec(points_per_dim=801))
    assert abs(fine.volume / coarse.volume - 1) < 0.005


def test_ball_volume_monotone_in_d_and_n():
    fam = get_family("gauss_mv")
    vols = np.array([[kl_ball_volume(fam, [0.0, 1.0], N, D, GridSpec(points_per_dim=201)).volume
                      for D in (0.5, 1.0, 2.0)] for N in (50, 100, 200)])
    assert np.all(np.diff(vols, axis=1) > 0)
    assert np.all(np.diff(vols, axis=0) < 0)


@pytest.mark.parametrize("fid,theta", [("gauss_mean", [0.0]), ("gauss_mv", [0.5, 2.0])])
def test_density_scaling_laws(fid, theta):
    fam = get_family(fid)
    K = len(theta)
    base = density_of_models(fam, theta, 100, 1.0)
    assert density_of_models(fam, theta, 200, 1.0) / base == pytest.approx(2 ** (K / 2))
    assert density_of_models(fam, theta, 100, 2.0) / base == pytest.approx(2 ** (-K / 2))
    # the ball volume follows the same law once the ball is small enough to be quadratic
    v = kl_ball_volume(fam, theta, 1000, 1.0).volume
    assert kl_ball_volume(fam, theta, 4000, 1.0).volume / v == pytest.approx(2.0 ** (-K), rel=0.01)


def test_density_times_volume_is_constant():
    fam = get_family("bernoulli")
    prods = [density_of_models(fam, [p], 100, D) * kl_ball_volume(fam, [p], 100, D).volume
             for p in (0.3, 0.5, 0.7) for D in (0.5, 1.0)]
    assert max(prods) / min(prods) - 1 < 0.01


def test_partial_flag_near_boundary():
    fam = get_family("bernoulli")
    assert kl_ball_volume(fam, [0.02], 5, 1.0).partial
    assert not kl_ball_volume(fam, [0.5], 100, 1.0).partial


def test_singular_fisher(monkeypatch):
    fam = get_family("gauss_mean")
    monkeypatch.setattr(fam, "fisher_information", lambda th, **kw: np.zeros((1, 1)))
    with pytest.raises(SingularityError):
        log_density_of_models(fam, [0.0], 10, 1.0)
    with pytest.raises(ValueError):
        density_of_models(get_family("gauss_mean"), [0.0], 10, 0.0)
