"""Post-imputation inference: combining rules and stacked estimation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import condmodels as cm
from .errors import InvalidArgument


@dataclass(frozen=True)
class CombinedEstimate:
    point: np.ndarray
    within_var: np.ndarray
    between_var: np.ndarray
    total_var: np.ndarray
    m: int

    def to_json(self) -> dict:
        return {
            "point": self.point.tolist(),
            "within": self.within_var.tolist(),
            "between": self.between_var.tolist(),
            "total": self.total_var.tolist(),
            "m": self.m,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def rubin_combine(estimates, variances) -> CombinedEstimate:
    q = np.atleast_2d(np.asarray(estimates, dtype=float))
    u = np.atleast_2d(np.asarray(variances, dtype=float))
    if q.shape != u.shape:
        raise InvalidArgument(f"estimates {q.shape} and variances {u.shape} differ in shape")
    m = q.shape[0]
    if m < 2:
        raise InvalidArgument("need at least two imputations for a between-imputation variance")
    if np.any(u < 0):
        raise InvalidArgument("variances must be non-negative")
    within = u.mean(axis=0)
    between = q.var(axis=0, ddof=1)
    return CombinedEstimate(q.mean(axis=0), within, between, within + (1 + 1 / m) * between, m)


@dataclass(frozen=True)
class AnalysisModel:
    """A complete-data analysis fitted by maximum likelihood.

    ``family`` is "linear" or "logistic" (``target`` on ``covariates``), or
    "gaussian" for the multivariate normal mean and ML covariance of
    ``covariates``.
    """

    family: str
    target: int | None = None
    covariates: tuple[int, ...] = ()
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(int(c) for c in self.covariates))
        if self.family not in ("linear", "logistic", "gaussian"):
            raise InvalidArgument(f"unknown analysis family {self.family!r}")
        if self.family != "gaussian" and self.target is None:
            raise InvalidArgument("regression analysis needs a target column")

    def design(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = values[:, self.covariates]
        if self.intercept:
            X = np.column_stack([np.ones(len(values)), X])
        return X, values[:, self.target]


def fit_analysis(values: np.ndarray, model: AnalysisModel) -> tuple[np.ndarray, np.ndarray]:
    """MLE and its estimated sampling variances (diagonal) on one complete dataset."""
    values = np.asarray(values, dtype=float)
    if model.family == "gaussian":
        cols = list(model.covariates) or list(range(values.shape[1]))
        x = values[:, cols]
        n, p = x.shape
        mu = x.mean(axis=0)
        sigma = (x - mu).T @ (x - mu) / n
        iu = np.triu_indices(p)
        est = np.concatenate([mu, sigma[iu]])
        # asymptotic variances: Sigma_jj / n for means, (S_ij^2 + S_ii S_jj) / n for covariances
        var_cov = (sigma[iu] ** 2 + np.diag(sigma)[iu[0]] * np.diag(sigma)[iu[1]]) / n
        return est, np.concatenate([np.diag(sigma) / n, var_cov])
    X, y = model.design(values)
    if model.family == "linear":
        beta, R, rss = cm.least_squares(X, y)
        n, k = X.shape
        r_inv = np.linalg.inv(R)
        return beta, rss / (n - k) * np.sum(r_inv**2, axis=1)
    beta, info = cm.logistic_mle(X, y)
    return beta, np.diag(np.linalg.inv(info))


def _stack_check(imputed) -> list[np.ndarray]:
    imputed = [np.asarray(getattr(d, "values", d), dtype=float) for d in imputed]
    if not imputed:
        raise InvalidArgument("no imputed datasets given")
    if any(d.shape != imputed[0].shape for d in imputed):
        raise InvalidArgument("imputed datasets differ in shape")
    return imputed


def stacked_mle(imputed: Sequence, model: AnalysisModel) -> np.ndarray:
    """MLE of the analysis model on all m completed datasets stacked row-wise."""
    imputed = _stack_check(imputed)
    return fit_analysis(np.vstack(imputed), model)[0]


def per_dataset_fits(imputed: Sequence, model: AnalysisModel) -> tuple[np.ndarray, np.ndarray]:
    fits = [fit_analysis(d, model) for d in _stack_check(imputed)]
    return np.array([f[0] for f in fits]), np.array([f[1] for f in fits])


def mean_of_estimates(imputed: Sequence, model: AnalysisModel) -> np.ndarray:
    """Average of the per-dataset MLEs. Any failed fit propagates."""
    return per_dataset_fits(imputed, model)[0].mean(axis=0)
