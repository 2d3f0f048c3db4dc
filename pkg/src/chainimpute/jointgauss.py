"""Joint multivariate-normal imputation model.

Includes the data-augmentation Gibbs sweep, the bivariate zero-mean
per-variable sweep, the maps from joint to conditional parameters and the
observed-data MLE by EM.
"""
from __future__ import annotations

import functools

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import condmodels as cm
from .data import BivariatePattern, DataMatrix
from .errors import EstimationError, InvalidArgument, NumericDomainError
from .randkit import draw_inv_wishart, draw_mvn


@dataclass(frozen=True)
class GaussParams:
    mu: np.ndarray
    sigma: np.ndarray

    def to_json(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    def vector(self) -> np.ndarray:
        """Means followed by the upper triangle (row-major) of the covariance."""
        iu = np.triu_indices(len(self.mu))
        return np.concatenate([self.mu, self.sigma[iu]])


@dataclass(frozen=True)
class CondGaussSpec:
    intercept: float
    coefficients: np.ndarray
    residual_var: float

    def __post_init__(self):
        if not self.residual_var > 0:
            raise InvalidArgument("residual variance must be positive")


@dataclass(frozen=True)
class BivariateZeroMeanParams:
    sigma_x2: float
    sigma_y2: float
    rho: float

    def __post_init__(self):
        if not (self.sigma_x2 > 0 and self.sigma_y2 > 0):
            raise InvalidArgument("variances must be positive")
        if abs(self.rho) > 1:
            raise InvalidArgument("correlation must lie in [-1, 1]")


def _check_bivariate(sx2, sy2, rho):
    if not (sx2 > 0 and sy2 > 0):
        raise InvalidArgument("variances must be positive")
    if abs(rho) > 1:
        raise InvalidArgument("correlation must lie in [-1, 1]")


def t2_bivariate(mu_x, sx2, mu_y, sy2, rho) -> CondGaussSpec:
    """Joint bivariate-normal parameters to the regression of y on x."""
    _check_bivariate(sx2, sy2, rho)
    slope = rho * math.sqrt(sy2) / math.sqrt(sx2)
    return CondGaussSpec(mu_y - slope * mu_x, np.array([slope]), (1.0 - rho**2) * sy2)


def t1_bivariate(mu_x, sx2, mu_y, sy2, rho) -> CondGaussSpec:
    """Joint bivariate-normal parameters to the regression of x on y."""
    return t2_bivariate(mu_y, sy2, mu_x, sx2, rho)


def t2_star(mu_x, sx2, mu_y, sy2, rho) -> tuple[float, float]:
    """Marginal (mean, variance) of x: the parameters the y-regression leaves out."""
    _check_bivariate(sx2, sy2, rho)
    return mu_x, sx2


def t2_inverse(cond: CondGaussSpec, star: tuple[float, float]) -> tuple[float, float, float, float, float]:
    """Invert (t2, t2_star) back to (mu_x, sx2, mu_y, sy2, rho)."""
    mu_x, sx2 = star
    slope = float(cond.coefficients[0])
    sy2 = cond.residual_var + slope**2 * sx2
    rho = slope * math.sqrt(sx2 / sy2)
    return mu_x, sx2, cond.intercept + slope * mu_x, sy2, rho


def logit_compat_map(p, beta0, beta1, sigma2) -> tuple[float, float]:
    """Logistic (intercept, slope) of x1 | x2 implied by the joint model
    x1 ~ Bernoulli(p), x2 | x1 ~ Normal(beta0 + beta1 x1, sigma2).

    From the ratio of the two normal densities the log-odds are
    ``logit(p) - (beta1^2 + 2 beta0 beta1) / (2 sigma2) + (beta1 / sigma2) x2``.
    """
    if not 0 < p < 1:
        raise InvalidArgument("p must lie strictly inside (0, 1)")
    if not sigma2 > 0:
        raise InvalidArgument("sigma2 must be positive")
    alpha = math.log(p / (1 - p)) - (beta1**2 + 2 * beta0 * beta1) / (2 * sigma2)
    return alpha, beta1 / sigma2


def conditional_spec(params: GaussParams, j: int) -> CondGaussSpec:
    """Exact normal regression of x_j on all other coordinates."""
    mu, sigma = np.asarray(params.mu), np.asarray(params.sigma)
    p = len(mu)
    rest = [k for k in range(p) if k != j]
    s_rr = sigma[np.ix_(rest, rest)]
    s_jr = sigma[j, rest]
    try:
        coef = np.linalg.solve(s_rr, s_jr) if rest else np.zeros(0)
    except np.linalg.LinAlgError:
        raise NumericDomainError(f"covariance of the conditioning block for column {j} is singular") from None
    intercept = float(mu[j] - coef @ mu[rest])
    resid = float(sigma[j, j] - s_jr @ coef)
    return CondGaussSpec(intercept, coef, resid)


def niw_posterior_draw(complete: np.ndarray, rng) -> GaussParams:
    """(mu, Sigma) from the posterior under the prior |Sigma|^{-(p+1)/2}."""
    complete = np.asarray(complete, dtype=float)
    n, p = complete.shape
    if n <= p + 2:
        raise InvalidArgument(f"need more than {p + 2} rows for a {p}-variate posterior, got {n}")
    xbar = complete.mean(axis=0)
    centered = complete - xbar
    scatter = centered.T @ centered
    if np.any(np.diag(scatter) <= 1e-12 * n * max(1.0, float(np.abs(xbar).max()) ** 2)):
        raise NumericDomainError("degenerate scatter matrix: a column is constant")
    sigma = draw_inv_wishart(n - 1, scatter, rng)
    mu = draw_mvn(xbar, sigma / n, rng)
    return GaussParams(mu, sigma)


def _missing_groups(present: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rows grouped by number of missing cells, with the missing column indices."""
    miss = ~present
    counts = miss.sum(axis=1)
    groups = []
    for k in np.unique(counts):
        if k == 0:
            continue
        rows = np.flatnonzero(counts == k)
        cols = np.nonzero(miss[rows])[1].reshape(len(rows), k)
        groups.append((rows, cols))
    return groups


def _conditional_parts(lam, resid, rows, cols):
    """Precision block and its solve against the residual, per row of a group."""
    lam_mm = lam[cols[:, :, None], cols[:, None, :]]
    r_m = np.take_along_axis(resid[rows], cols, axis=1)
    shift = np.linalg.solve(lam_mm, r_m[..., None])[..., 0]
    return lam_mm, shift


def redraw_missing(values: np.ndarray, groups, params: GaussParams, rng) -> None:
    """Replace every missing cell with a joint draw given its row's observed cells.

    Uses the precision matrix: for missing set M the conditional is
    Normal(x_M - Lam_MM^{-1} r_M, Lam_MM^{-1}) with r = Lam (x - mu) evaluated
    at the current fill, which avoids forming Sigma_OO^{-1} per pattern.
    """
    try:
        chol = np.linalg.cholesky(params.sigma)
    except np.linalg.LinAlgError:
        raise NumericDomainError("covariance draw is not positive definite") from None
    eye = np.eye(len(params.mu))
    chol_inv = np.linalg.solve(chol, eye)
    lam = chol_inv.T @ chol_inv
    resid = (values - params.mu) @ lam
    gen = rng.gen
    for rows, cols in groups:
        lam_mm, shift = _conditional_parts(lam, resid, rows, cols)
        c = np.linalg.cholesky(lam_mm)
        z = gen.standard_normal(cols.shape)
        noise = np.linalg.solve(np.swapaxes(c, 1, 2), z[..., None])[..., 0]
        old = np.take_along_axis(values[rows], cols, axis=1)
        values[rows[:, None], cols] = old - shift + noise


def da_sweep(state, rng):
    """One data-augmentation sweep: theta from the completed data, then all missing cells."""
    groups = state.cache.get("da_groups")
    if groups is None:
        groups = _missing_groups(state.present)
        state.cache["da_groups"] = groups
    params = niw_posterior_draw(state.values, rng)
    redraw_missing(state.values, groups, params, rng)
    state.draws["joint"] = params
    state.iter += 1
    return state


@functools.lru_cache(maxsize=8)
def _gibbs_steps(pattern: BivariatePattern):
    # x first (observed on a and b, missing on c), then y (observed on a and c, missing on b)
    a, b, c = pattern.n_a, pattern.n_b, pattern.n_c
    return (
        (0, slice(0, a + b), slice(a + b, a + b + c)),
        (1, np.concatenate([pattern.rows_a, pattern.rows_c]), slice(a, a + b)),
    )


def bivariate_gibbs_sweep(state, pattern: BivariatePattern, rng):
    """Per-variable Gibbs sweep of the zero-mean bivariate normal model.

    Under the joint prior proportional to sigma_x sigma_y on (sigma_x^2,
    sigma_y^2, rho), the prior induced on each conditional regression's
    (slope, residual variance) is constant. Each step therefore draws that
    pair from its posterior under a flat prior, using the rows where the
    target is observed, and then redraws the target's missing block.
    """
    if state.values.shape != (pattern.n_rows, 2):
        raise InvalidArgument("state does not match the bivariate pattern")
    v = state.values
    for target, fit_rows, mis_rows in _gibbs_steps(pattern):
        other = 1 - target
        X = v[fit_rows, other][:, None]
        draw = cm.linear_posterior_draw(X, v[fit_rows, target], cm.FLAT, rng)
        if v[mis_rows].size:
            v[mis_rows, target] = cm.linear_impute(v[mis_rows, other][:, None], draw, rng)
        state.draws[target] = draw
    state.iter += 1
    return state


def observed_loglik(values: np.ndarray, present: np.ndarray, params: GaussParams) -> float:
    patterns, inverse = np.unique(present, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    total = 0.0
    for k, pat in enumerate(patterns):
        obs = np.flatnonzero(pat)
        if obs.size == 0:
            continue
        x = values[np.ix_(inverse == k, obs)] - params.mu[obs]
        s = params.sigma[np.ix_(obs, obs)]
        c = np.linalg.cholesky(s)
        z = np.linalg.solve(c, x.T)
        logdet = 2.0 * np.log(np.diag(c)).sum()
        total += -0.5 * (np.sum(z**2) + x.shape[0] * (logdet + obs.size * math.log(2 * math.pi)))
    return float(total)


def _em_start(values, present):
    n, p = values.shape
    complete = present.all(axis=1)
    if complete.sum() > p + 1:
        x = values[complete]
        mu = x.mean(axis=0)
        sigma = np.cov(x, rowvar=False, bias=True).reshape(p, p)
    else:
        mu = np.array([values[present[:, j], j].mean() for j in range(p)])
        sigma = np.diag([values[present[:, j], j].var() for j in range(p)])
    if np.linalg.eigvalsh(sigma).min() <= 1e-12 * max(1.0, np.trace(sigma)):
        sigma = sigma + 1e-6 * np.eye(p)
    return mu, sigma


def em_observed_mle(dm: DataMatrix, tol: float = 1e-8, max_iter: int = 500,
                    return_trace: bool = False):
    """Observed-data normal MLE by EM.

    Stops when the largest absolute change in any mean or covariance entry
    falls below ``tol``. Raises if the observed-data log-likelihood ever
    decreases, since EM guarantees it cannot.
    """
    values, present = dm.values, dm.present
    n, p = values.shape
    seen = present.sum(axis=0)
    if np.any(seen == 0):
        raise EstimationError(f"columns {np.flatnonzero(seen == 0).tolist()} are never observed")
    joint = present.T.astype(int) @ present.astype(int)
    if np.any(joint == 0):
        a, b = np.argwhere(joint == 0)[0]
        raise EstimationError(f"columns {a} and {b} are never observed together")

    groups = _missing_groups(present)
    mu, sigma = _em_start(values, present)
    ll = observed_loglik(values, present, GaussParams(mu, sigma))
    trace = [ll]
    change = math.inf
    for _ in range(max_iter):
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise EstimationError("EM covariance iterate lost positive definiteness") from None
        chol_inv = np.linalg.solve(chol, np.eye(p))
        lam = chol_inv.T @ chol_inv
        xhat = np.where(present, values, mu)
        resid = (xhat - mu) @ lam
        extra = np.zeros((p, p))
        for rows, cols in groups:
            lam_mm, shift = _conditional_parts(lam, resid, rows, cols)
            mu_m = mu[cols]
            xhat[rows[:, None], cols] = mu_m - shift
            np.add.at(extra, (cols[:, :, None], cols[:, None, :]), np.linalg.inv(lam_mm))
        mu_new = xhat.mean(axis=0)
        sigma_new = (xhat.T @ xhat + extra) / n - np.outer(mu_new, mu_new)
        sigma_new = 0.5 * (sigma_new + sigma_new.T)
        change = max(np.abs(mu_new - mu).max(), np.abs(sigma_new - sigma).max())
        mu, sigma = mu_new, sigma_new
        ll_new = observed_loglik(values, present, GaussParams(mu, sigma))
        if ll_new < ll - 1e-9 * max(1.0, abs(ll)):
            raise EstimationError(f"EM log-likelihood decreased from {ll} to {ll_new}")
        ll = ll_new
        trace.append(ll)
        if change < tol:
            break
    else:
        warnings.warn(
            f"EM stopped after {max_iter} iterations; final max parameter change {change:.3g}",
            RuntimeWarning,
        )
    params = GaussParams(mu, sigma)
    return (params, trace) if return_trace else params
