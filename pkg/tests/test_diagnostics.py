import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from chainimpute.chains import TraceSet
from chainimpute.data import BivariatePattern
from chainimpute.diagnostics import (binned_tv, ks_two_sample, loglog_slope, monitored_betas, predictive_pair,
                                     prior_sensitivity_curve, qq_points, rhat, write_qq_csv)
from chainimpute.errors import InvalidArgument, NumericDomainError
from chainimpute.randkit import RngStream


def test_monitored_betas_hand_example():
    pat = BivariatePattern(1, 2, 1)
    v = np.array([[9.0, 9.0], [1.0, 1.0], [2.0, 1.0], [3.0, 2.0]])
    bx, by = monitored_betas(v, pat)
    assert bx == 1.5
    assert by == 6.0 / 9.0


def test_monitored_betas_identity_and_zero():
    pat = BivariatePattern(2, 3, 3)
    v = np.repeat(np.arange(1.0, 9.0)[:, None], 2, axis=1)
    assert monitored_betas(v, pat) == (1.0, 1.0)
    v[2:5, 1] = 0.0
    with pytest.raises(NumericDomainError):
        monitored_betas(v, pat)


def test_ks_examples():
    assert ks_two_sample([1, 2, 3], [3, 1, 2]).statistic == 0.0
    assert ks_two_sample([0], [1]).statistic == 1.0
    assert ks_two_sample([1, 2], [1.5, 2.5]).statistic == 0.5
    with pytest.raises(InvalidArgument):
        ks_two_sample([], [1])


def test_ks_matches_scipy(np_rng):
    a, b = np_rng.standard_normal(500), np_rng.standard_normal(700) + 0.1
    assert abs(ks_two_sample(a, b).statistic - stats.ks_2samp(a, b).statistic) < 1e-15


samples = st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40)


@settings(max_examples=100, deadline=None)
@given(samples, samples)
def test_ks_symmetric_and_monotone_invariant(a, b):
    k = ks_two_sample(a, b).statistic
    assert 0.0 <= k <= 1.0
    assert k == ks_two_sample(b, a).statistic
    # doubling is exact in floating point, so it is strictly increasing without ties
    assert k == ks_two_sample(2 * np.array(a), 2 * np.array(b)).statistic


def test_qq_examples():
    a = np.arange(1.0, 101.0)
    pts = qq_points(a, a, 4)
    assert pts[:, 1].tolist() == [13.0, 38.0, 63.0, 88.0]
    assert np.array_equal(pts[:, 1], pts[:, 2])
    assert pts[:, 0].tolist() == [0.125, 0.375, 0.625, 0.875]
    shifted = qq_points(a, a + 1, 4)
    assert np.array_equal(shifted[:, 2], shifted[:, 1] + 1)
    with pytest.raises(InvalidArgument):
        qq_points([1, 2], [1, 2, 3], 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.integers(1, 50))
def test_qq_self_on_diagonal(a, k):
    k = min(k, len(a))
    pts = qq_points(a, a, k)
    assert np.array_equal(pts[:, 1], pts[:, 2])


def test_qq_csv(tmp_path):
    write_qq_csv(qq_points([1, 2, 3, 4], [2, 3, 4, 5], 2), tmp_path / "q.csv")
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "level,q_left,q_right" and len(lines) == 3


def test_tv_examples():
    a = np.arange(10.0)
    assert binned_tv(a, a).value == 0.0
    assert binned_tv([0, 0.1], [5, 5.1], 10).value == 1.0
    d = binned_tv([3, 3], [3], 10)
    assert d.value == 0.0 and d.degenerate
    with pytest.raises(InvalidArgument):
        binned_tv(a, a, 1)


def test_tv_gaussian_shift_oracle():
    g = np.random.default_rng(5)
    a = g.standard_normal(1_000_000)
    b = g.standard_normal(1_000_000) + 1
    exact = 2 * stats.norm.cdf(0.5) - 1
    assert abs(binned_tv(a, b, 100).value - exact) < 0.02


@settings(max_examples=50, deadline=None)
@given(samples, samples, st.integers(2, 60))
def test_tv_bounded(a, b, bins):
    assert 0.0 <= binned_tv(a, b, bins).value <= 1.0 + 1e-12


def test_rhat_identical_chains():
    x = np.random.default_rng(0).standard_normal(50)
    r = rhat(np.vstack([x, x]))
    assert abs(r.value - np.sqrt(49 / 50)) < 1e-12


def test_rhat_iid_chains():
    x = np.random.default_rng(1).standard_normal((4, 10_000))
    assert 0.99 <= rhat(x).value <= 1.02


def test_rhat_shifted_chains_flagged():
    x = np.random.default_rng(2).standard_normal((4, 1000))
    x[0] += 1.0
    assert rhat(x).value > 1.05


def test_rhat_degenerate_and_errors():
    r = rhat(np.ones((2, 20)))
    assert r.degenerate and np.isnan(r.value)
    with pytest.raises(InvalidArgument):
        rhat(np.ones((1, 20)))
    with pytest.raises(InvalidArgument):
        rhat(np.random.default_rng(0).standard_normal((3, 5)))


def test_rhat_label_symmetry_and_traceset():
    x = np.random.default_rng(3).standard_normal((3, 40))
    tr = TraceSet({str(i): {"s": x[i]} for i in range(3)})
    assert rhat(tr, "s").value == pytest.approx(rhat(x[::-1]).value, abs=1e-13)


def test_rhat_hand_formula():
    x = np.array([[1.0, 2, 3, 4, 5, 6, 7, 8, 9, 10], [2.0, 3, 4, 5, 6, 7, 8, 9, 10, 11]])
    m = 10
    W = np.var(x[0], ddof=1)
    B = m * np.var([5.5, 6.5], ddof=1)
    assert rhat(x).value == pytest.approx(np.sqrt((W * (m - 1) / m + B / m) / W), rel=1e-14)


def test_predictive_identical_priors_zero():
    a, b = predictive_pair(200, RngStream(1), priors=("jeffreys", "jeffreys"))
    assert binned_tv(a, b, 50).value < 0.01


def test_predictive_flat_wider_than_jeffreys():
    a, b = predictive_pair(30, RngStream(2))
    assert b.var() > a.var()


def test_predictive_errors():
    with pytest.raises(InvalidArgument):
        predictive_pair(3, RngStream(0))
    with pytest.raises(InvalidArgument):
        predictive_pair(50, RngStream(0), priors=("jeffreys", "normal"))


def test_prior_sensitivity_small_curve():
    rows = prior_sensitivity_curve([50, 800], RngStream(4), n_draws=50_000)
    assert [n for n, _ in rows] == [50, 800]
    assert rows[1][1].value < rows[0][1].value


def test_loglog_slope():
    ns = np.array([10, 100, 1000])
    assert loglog_slope(ns, 3 * ns**-0.25) == pytest.approx(-0.25)
