import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats

from chainimpute import condmodels as cm
from chainimpute.chains import init_state
from chainimpute.data import BivariatePattern, bivariate_pattern, from_array
from chainimpute.diagnostics import monitored_betas, rhat
from chainimpute.errors import EstimationError, InvalidArgument, NumericDomainError
from chainimpute.experiments import exp1_specs, gen_exp1, kernel_identity_check
from chainimpute.chains import ChainState, iterative_sweep
from chainimpute.jointgauss import (GaussParams, _missing_groups, bivariate_gibbs_sweep, conditional_spec,
                                    da_sweep, em_observed_mle, logit_compat_map, niw_posterior_draw,
                                    observed_loglik, redraw_missing, t1_bivariate, t2_bivariate, t2_inverse,
                                    t2_star)
from chainimpute.randkit import RngStream


def test_t2_examples():
    c = t2_bivariate(0, 1, 0, 1, 0)
    assert (c.intercept, c.coefficients[0], c.residual_var) == (0, 0, 1)
    c = t2_bivariate(0, 1, 0, 1, 0.5)
    assert (c.intercept, c.coefficients[0]) == (0, 0.5) and abs(c.residual_var - 0.75) < 1e-15
    with pytest.raises(InvalidArgument):
        t2_bivariate(0, 0, 0, 1, 0.1)


def test_t1_is_mirror_of_t2():
    a = t1_bivariate(1.0, 2.0, -1.0, 3.0, 0.3)
    b = t2_bivariate(-1.0, 3.0, 1.0, 2.0, 0.3)
    assert a.intercept == b.intercept and a.residual_var == b.residual_var


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.1, 10), st.floats(-0.99, 0.99))
def test_t2_round_trip(mx, sx2, my, sy2, rho):
    back = t2_inverse(t2_bivariate(mx, sx2, my, sy2, rho), t2_star(mx, sx2, my, sy2, rho))
    assert np.allclose(back, (mx, sx2, my, sy2, rho), rtol=1e-12, atol=1e-12)


def test_logit_map_examples():
    assert logit_compat_map(0.5, 0.0, 0.0, 1.0) == (0.0, 0.0)
    # slope is beta1 / sigma2 (see the distributional check below)
    assert logit_compat_map(0.5, 0.0, 1.0, 1.0) == (-0.5, 1.0)
    with pytest.raises(InvalidArgument):
        logit_compat_map(1.0, 0, 1, 1)


def test_logit_map_distributional_oracle():
    # x1 ~ B(p), x2 | x1 ~ N(b0 + b1 x1, s2); fit logistic x1 | x2 on 10^6 draws
    p, b0, b1, s2 = 0.3, 0.5, 1.0, 1.5
    g = np.random.default_rng(2024)
    x1 = (g.random(1_000_000) < p).astype(float)
    x2 = b0 + b1 * x1 + np.sqrt(s2) * g.standard_normal(x1.size)
    X = np.column_stack([np.ones_like(x2), x2])
    est, info = cm.logistic_mle(X, x1)
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    mapped = np.array(logit_compat_map(p, b0, b1, s2))
    assert np.all(np.abs(est - mapped) < 4 * se)
    # a slope of b1 / (2 s2) is far outside the sampling error
    assert abs(est[1] - b1 / (2 * s2)) > 50 * se[1]


def test_conditional_spec_identity():
    c = conditional_spec(GaussParams(np.array([1.0, 2.0, 3.0]), np.eye(3)), 1)
    assert c.intercept == 2.0 and np.all(c.coefficients == 0) and c.residual_var == 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(0.2, 5), st.floats(-3, 3), st.floats(0.2, 5), st.floats(-0.95, 0.95))
def test_conditional_spec_matches_t2(mx, sx2, my, sy2, rho):
    cov = rho * np.sqrt(sx2 * sy2)
    params = GaussParams(np.array([mx, my]), np.array([[sx2, cov], [cov, sy2]]))
    a = conditional_spec(params, 1)
    b = t2_bivariate(mx, sx2, my, sy2, rho)
    assert abs(a.intercept - b.intercept) < 1e-12 * max(1, abs(b.intercept))
    assert abs(a.coefficients[0] - b.coefficients[0]) < 1e-12 * max(1, abs(b.coefficients[0]))
    assert abs(a.residual_var - b.residual_var) < 1e-12 * max(1, b.residual_var)


def test_conditional_spec_p7_block_inverse():
    sigma = np.full((7, 7), 0.4) + 0.6 * np.eye(7)
    mu = np.arange(7.0)
    prec = np.linalg.inv(sigma)
    for j in range(7):
        c = conditional_spec(GaussParams(mu, sigma), j)
        assert abs(c.residual_var - 1 / prec[j, j]) < 1e-10
        rest = [k for k in range(7) if k != j]
        assert np.allclose(c.coefficients, -prec[j, rest] / prec[j, j], atol=1e-10)
        assert abs(c.intercept - (mu[j] - c.coefficients @ mu[rest])) < 1e-10


def test_conditional_spec_singular():
    with pytest.raises(NumericDomainError):
        conditional_spec(GaussParams(np.zeros(3), np.ones((3, 3))), 0)


def test_niw_p1_variance_mean(rng, np_rng):
    n = 20
    x = np_rng.standard_normal((n, 1)) * 1.7
    S = float(((x - x.mean()) ** 2).sum())
    draws = np.array([niw_posterior_draw(x, rng).sigma[0, 0] for _ in range(100_000)])
    nu = n - 1
    target = S / (nu - 2)  # (n - 1) s^2 / (n - 3)
    sd = S * np.sqrt(2 / ((nu - 2) ** 2 * (nu - 4)))
    assert abs(draws.mean() - target) < 3 * sd / np.sqrt(draws.size)


def test_niw_mean_draws_center_on_xbar(rng, np_rng):
    x = np_rng.standard_normal((40, 3)) + [1.0, -2.0, 0.5]
    mus = np.array([niw_posterior_draw(x, rng).mu for _ in range(20_000)])
    se = mus.std(axis=0) / np.sqrt(len(mus))
    assert np.all(np.abs(mus.mean(axis=0) - x.mean(axis=0)) < 4 * se)


def test_niw_errors(rng, np_rng):
    with pytest.raises(InvalidArgument):
        niw_posterior_draw(np_rng.standard_normal((4, 2)), rng)
    x = np_rng.standard_normal((30, 2))
    x[:, 1] = 3.0
    with pytest.raises(NumericDomainError):
        niw_posterior_draw(x, rng)


def _state(values, present):
    values = np.where(present, values, 0.0)
    return ChainState(values.copy(), present, tuple(f"v{j}" for j in range(values.shape[1])),
                      ("continuous",) * values.shape[1])


def test_da_sweep_without_missing(rng, np_rng):
    x = np_rng.standard_normal((30, 3))
    st_ = _state(x, np.ones_like(x, dtype=bool))
    da_sweep(st_, rng)
    first = st_.draws["joint"]
    da_sweep(st_, rng)
    assert np.array_equal(st_.values, x)
    assert not np.array_equal(first.sigma, st_.draws["joint"].sigma)


def test_redraw_fully_missing_row_is_unconditional(rng):
    mu = np.array([1.0, -1.0])
    sigma = np.array([[2.0, 0.8], [0.8, 1.0]])
    n = 100_000
    values = np.zeros((n, 2))
    present = np.zeros((n, 2), dtype=bool)
    redraw_missing(values, _missing_groups(present), GaussParams(mu, sigma), rng)
    assert np.all(np.abs(values.mean(axis=0) - mu) < 4 * np.sqrt(np.diag(sigma) / n))
    d = np.sqrt(np.diag(sigma))
    se = np.sqrt((np.outer(d, d) ** 2 + sigma**2) / n)
    assert np.all(np.abs(np.cov(values.T) - sigma) < 5 * se)


def test_redraw_independent_sigma_gives_marginal(rng, np_rng):
    # Sigma diagonal: missing x given observed y is N(mu_x, s_x^2)
    n = 100_000
    values = np.column_stack([np.zeros(n), np_rng.standard_normal(n) * 5])
    present = np.column_stack([np.zeros(n, dtype=bool), np.ones(n, dtype=bool)])
    redraw_missing(values, _missing_groups(present), GaussParams(np.array([0.5, 0.0]), np.diag([4.0, 25.0])), rng)
    assert stats.kstest(values[:, 0], stats.norm(0.5, 2.0).cdf).statistic < 0.01


def test_redraw_matches_conditional_spec(rng):
    sigma = np.full((4, 4), 0.4) + 0.6 * np.eye(4)
    mu = np.array([0.0, 1.0, 2.0, 3.0])
    params = GaussParams(mu, sigma)
    n = 50_000
    obs_row = np.array([0.0, 0.3, 2.5, 2.0])
    values = np.tile(obs_row, (n, 1))
    values[:, 0] = 99.0  # stale fill must not matter
    present = np.ones((n, 4), dtype=bool)
    present[:, 0] = False
    redraw_missing(values, _missing_groups(present), params, rng)
    c = conditional_spec(params, 0)
    mean = c.intercept + c.coefficients @ obs_row[1:]
    assert abs(values[:, 0].mean() - mean) < 4 * np.sqrt(c.residual_var / n)
    assert abs(values[:, 0].var() / c.residual_var - 1) < 0.03
    assert np.all(values[:, 1:] == obs_row[1:])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_da_preserves_observed(seed):
    g = np.random.default_rng(seed)
    x = g.standard_normal((40, 3))
    present = g.random((40, 3)) > 0.3
    present[:8] = True
    st_ = _state(x, present)
    before = st_.values[present].copy()
    r = RngStream(seed)
    for _ in range(20):
        da_sweep(st_, r)
    assert np.array_equal(st_.values[present], before)


def test_gibbs_equals_flat_iterative():
    pat = BivariatePattern(200, 80, 80)
    dm = gen_exp1(200, 80, 80, RngStream(3))
    assert kernel_identity_check(dm, pat, 1000, RngStream(4))


def test_gibbs_no_missing_y_refreshes_params(rng):
    pat = BivariatePattern(50, 0, 20)
    dm = gen_exp1(50, 0, 20, RngStream(6))
    st_ = init_state(dm, rng.child("i"))
    y_before = st_.values[:, 1].copy()
    bivariate_gibbs_sweep(st_, pat, rng)
    d1 = st_.draws[1]
    bivariate_gibbs_sweep(st_, pat, rng)
    assert np.array_equal(st_.values[:, 1], y_before)
    assert d1.sigma2 != st_.draws[1].sigma2


def test_gibbs_beta_rhat():
    pat = BivariatePattern(200, 80, 80)
    dm = gen_exp1(200, 80, 80, RngStream(8))
    chains = []
    for c in range(4):
        r = RngStream(8).child("chain", c)
        st_ = init_state(dm, r.child("init"))
        tr = []
        for t in range(2200):
            bivariate_gibbs_sweep(st_, pat, r)
            if t >= 200:
                tr.append(monitored_betas(st_.values, pat)[0])
        chains.append(tr)
    assert rhat(np.array(chains)).value < 1.01


def test_em_complete_data_closed_form(np_rng):
    x = np_rng.standard_normal((50, 3))
    est = em_observed_mle(from_array(x))
    assert np.allclose(est.mu, x.mean(axis=0), atol=1e-13)
    assert np.allclose(est.sigma, np.cov(x.T, bias=True), atol=1e-13)


def test_em_fig1_rho_near_zero():
    pat = BivariatePattern(200, 80, 80)
    dm = gen_exp1(200, 80, 80, RngStream(10))
    est = em_observed_mle(dm)
    rho = est.sigma[0, 1] / np.sqrt(est.sigma[0, 0] * est.sigma[1, 1])
    assert abs(rho) < 4 / np.sqrt(pat.n_a)


def test_em_matches_direct_optimization(np_rng):
    # maximize the observed-data likelihood numerically over (mu, Cholesky factor)
    x = np_rng.multivariate_normal([1, -1], [[1, 0.6], [0.6, 2]], size=120)
    present = np.ones_like(x, dtype=bool)
    present[60:90, 1] = False
    present[90:, 0] = False
    dm = from_array(x, present=present)
    em = em_observed_mle(dm)

    def unpack(t):
        L = np.array([[np.exp(t[2]), 0], [t[3], np.exp(t[4])]])
        return GaussParams(t[:2], L @ L.T)

    res = optimize.minimize(lambda t: -observed_loglik(dm.values, present, unpack(t)), np.zeros(5),
                            method="BFGS", options={"gtol": 1e-9})
    ref = unpack(res.x)
    assert np.allclose(em.mu, ref.mu, atol=1e-5)
    assert np.allclose(em.sigma, ref.sigma, atol=1e-5)


def test_em_monotone_trace(np_rng):
    x = np_rng.multivariate_normal(np.zeros(4), np.full((4, 4), 0.5) + 0.5 * np.eye(4), size=200)
    present = np_rng.random(x.shape) > 0.3
    present[:20] = True
    est, trace = em_observed_mle(from_array(x, present=present), return_trace=True)
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[1:]))
    assert len(trace) > 2


def test_em_non_identifiable(np_rng):
    x = np_rng.standard_normal((20, 2))
    present = np.ones_like(x, dtype=bool)
    present[:, 1] = False
    with pytest.raises(EstimationError):
        em_observed_mle(from_array(x, present=present))
    present = np.ones_like(x, dtype=bool)
    present[:10, 0] = False
    present[10:, 1] = False
    with pytest.raises(EstimationError):
        em_observed_mle(from_array(x, present=present))


def test_em_iteration_cap_warns(np_rng):
    x = np_rng.multivariate_normal([0, 0], [[1, 0.9], [0.9, 1]], size=100)
    present = np.ones_like(x, dtype=bool)
    present[30:60, 1] = False
    present[60:, 0] = False
    with pytest.warns(RuntimeWarning):
        em_observed_mle(from_array(x, present=present), max_iter=2)
