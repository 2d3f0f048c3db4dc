"""Distribution comparison and convergence diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import BivariatePattern
from .errors import InvalidArgument, NumericDomainError


def monitored_betas(values: np.ndarray, pattern: BivariatePattern) -> tuple[float, float]:
    """Through-origin slopes on the incomplete blocks of the bivariate pattern.

    beta_x uses block b (y imputed): sum(x y) / sum(y^2); beta_y uses block c
    (x imputed): sum(x y) / sum(x^2).
    """
    values = getattr(values, "values", values)
    b = slice(pattern.n_a, pattern.n_a + pattern.n_b)
    c = slice(pattern.n_a + pattern.n_b, pattern.n_rows)
    x_b, y_b = values[b, 0], values[b, 1]
    x_c, y_c = values[c, 0], values[c, 1]
    den_x, den_y = float(y_b @ y_b), float(x_c @ x_c)
    if den_x == 0.0 or den_y == 0.0:
        raise NumericDomainError("monitored slope has a zero denominator")
    return float(x_b @ y_b) / den_x, float(x_c @ y_c) / den_y


@dataclass(frozen=True)
class KsResult:
    statistic: float
    n_a: int
    n_b: int


def _sample(a, name) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise InvalidArgument(f"sample {name} is empty")
    return a


def ks_two_sample(a, b) -> KsResult:
    """sup |F_a - F_b| over the pooled sample points."""
    a, b = np.sort(_sample(a, "a")), np.sort(_sample(b, "b"))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return KsResult(float(np.max(np.abs(fa - fb))), a.size, b.size)


def qq_points(a, b, k: int) -> np.ndarray:
    """Matched quantiles at levels (i - 0.5)/k, i = 1..k.

    Quantiles interpolate linearly between order statistics placed at
    plotting positions (j - 0.5)/n, so a sample evaluated at its own
    plotting positions returns its order statistics exactly.
    Returns a (k, 3) array of (level, q_a, q_b).
    """
    a, b = _sample(a, "a"), _sample(b, "b")
    if k < 1 or k > min(a.size, b.size):
        raise InvalidArgument(f"quantile count {k} must lie in [1, {min(a.size, b.size)}]")
    levels = (np.arange(1, k + 1) - 0.5) / k
    qa = np.quantile(a, levels, method="hazen")
    qb = np.quantile(b, levels, method="hazen")
    return np.column_stack([levels, qa, qb])


def write_qq_csv(points: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "q_left", "q_right"])
        for lv, qa, qb in points:
            w.writerow([repr(float(lv)), repr(float(qa)), repr(float(qb))])


@dataclass(frozen=True)
class TvEstimate:
    value: float
    n_bins: int
    n_a: int
    n_b: int
    degenerate: bool = False


def binned_tv(a, b, n_bins: int = 50) -> TvEstimate:
    """Half the L1 distance between histograms on common equal-width bins."""
    a, b = _sample(a, "a"), _sample(b, "b")
    if n_bins < 2:
        raise InvalidArgument("need at least two bins")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if lo == hi:
        return TvEstimate(0.0, n_bins, a.size, b.size, degenerate=True)
    edges = np.linspace(lo, hi, n_bins + 1)
    pa = np.histogram(a, edges)[0] / a.size
    pb = np.histogram(b, edges)[0] / b.size
    return TvEstimate(float(0.5 * np.abs(pa - pb).sum()), n_bins, a.size, b.size)


@dataclass(frozen=True)
class Rhat:
    value: float
    degenerate: bool = False

    def __float__(self):
        return self.value


def rhat(traces, statistic: str | None = None) -> Rhat:
    """Potential scale reduction sqrt((W (m-1)/m + B/m) / W).

    W is the mean within-chain variance, B is m times the variance of the
    chain means, m the number of points per chain. Accepts a TraceSet (with
    ``statistic``) or an (n_chains, m) array.
    """
    x = traces.matrix(statistic) if hasattr(traces, "matrix") else np.asarray(traces, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgument("R-hat needs at least two chains")
    n_chains, m = x.shape
    if m < 10:
        raise InvalidArgument(f"R-hat needs at least 10 points per chain, got {m}")
    W = float(x.var(axis=1, ddof=1).mean())
    B = m * float(x.mean(axis=1).var(ddof=1))
    if W == 0.0:
        return Rhat(float("nan"), degenerate=True)
    return Rhat(float(np.sqrt((W * (m - 1) / m + B / m) / W)))


def predictive_pair(n: int, rng, n_draws: int = 100_000, x_new: float = 1.0,
                    priors: tuple[str, str] = ("jeffreys", "flat")) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-predictive draws of y at ``x_new`` from a through-origin
    regression fitted to a fresh standard bivariate normal sample of size ``n``,
    under two priors on (slope, residual variance).

    Both samples share their uniforms and normals (common random numbers):
    residual variances come from the inverse chi-square CDF at the same
    uniforms, so the two samples differ only through the prior.
    """
    dfs = {"jeffreys": n - 1, "flat": n - 3}
    if any(p not in dfs for p in priors):
        raise InvalidArgument(f"priors must be drawn from {sorted(dfs)}")
    if n <= 3:
        raise InvalidArgument("need n > 3 for both posteriors to be proper")
    gen = rng.gen
    xy = gen.standard_normal((n, 2))
    x, y = xy[:, 0], xy[:, 1]
    sxx = float(x @ x)
    slope_hat = float(x @ y) / sxx
    rss = float(np.sum((y - slope_hat * x) ** 2))
    u = gen.random(n_draws)
    z_slope = gen.standard_normal(n_draws)
    z_new = gen.standard_normal(n_draws)
    out = []
    for prior in priors:
        tau2 = rss / stats.chi2.ppf(u, dfs[prior])
        slope = slope_hat + np.sqrt(tau2 / sxx) * z_slope
        out.append(slope * x_new + np.sqrt(tau2) * z_new)
    return out[0], out[1]


def prior_sensitivity_curve(ns, rng, n_draws: int = 100_000, n_bins: int = 50, x_new: float = 1.0,
                            priors: tuple[str, str] = ("jeffreys", "flat")) -> list[tuple[int, TvEstimate]]:
    """Binned TV between the two priors' predictive distributions for each sample size."""
    rows = []
    for n in ns:
        a, b = predictive_pair(int(n), rng.child("n", int(n)), n_draws, x_new, priors)
        rows.append((int(n), binned_tv(a, b, n_bins)))
    return rows


def loglog_slope(ns, values) -> float:
    """Least-squares slope of log(value) on log(n)."""
    ln, lv = np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(ln, lv, 1)[0])
