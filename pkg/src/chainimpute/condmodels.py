"""Per-variable conditional regressions used by the chained-equation sweep.

Each :class:`ConditionalModelSpec` names a target column, a family and a
term list. Main effects form the compatible part of a model; interaction
terms are the extra coefficients that make a set of conditionals
semi-compatible (they vanish under the compatible element).
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import lapack
from scipy.special import expit

from .errors import InvalidArgument, InvalidSpec, SeparationError, SingularDesignError

LINEAR = "linear"
LOGISTIC = "logistic"
JEFFREYS = "jeffreys"
FLAT = "flat"

MAX_CONDITION = 1e12
NEWTON_MAX_ITER = 50
NEWTON_GRAD_TOL = 1e-8
SEPARATION_NORM = 1e4
SATURATED_ETA = 30.0  # |linear predictor| beyond this is a fitted probability of 0 or 1


@dataclass(frozen=True)
class TermSpec:
    kind: str  # "intercept" | "main" | "interaction"
    cols: tuple[int, ...] = ()

    def __post_init__(self):
        expected = {"intercept": 0, "main": 1, "interaction": 2}
        if self.kind not in expected:
            raise InvalidSpec(f"unknown term kind {self.kind!r}")
        if len(self.cols) != expected[self.kind]:
            raise InvalidSpec(f"{self.kind} term needs {expected[self.kind]} column(s)")
        if self.kind == "interaction" and self.cols[0] == self.cols[1]:
            raise InvalidSpec("interaction columns must be distinct")

    @classmethod
    def intercept(cls) -> "TermSpec":
        return cls("intercept")

    @classmethod
    def main(cls, col: int) -> "TermSpec":
        return cls("main", (int(col),))

    @classmethod
    def interaction(cls, a: int, b: int) -> "TermSpec":
        return cls("interaction", (int(a), int(b)))

    def label(self, col_names: Sequence[str]) -> str:
        if self.kind == "intercept":
            return "intercept"
        return ":".join(col_names[c] for c in self.cols)


@dataclass(frozen=True)
class ConditionalModelSpec:
    target: int
    family: str = LINEAR
    terms: tuple[TermSpec, ...] = field(default_factory=tuple)
    prior: str = JEFFREYS

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.family not in (LINEAR, LOGISTIC):
            raise InvalidSpec(f"unknown family {self.family!r}")
        if self.prior not in (JEFFREYS, FLAT):
            raise InvalidSpec(f"unknown prior {self.prior!r}")
        for t in self.terms:
            if self.target in t.cols:
                raise InvalidSpec(f"target column {self.target} appears inside a term")

    def compatible_element(self) -> "ConditionalModelSpec":
        """The same model with every interaction term dropped."""
        return ConditionalModelSpec(
            self.target, self.family, tuple(t for t in self.terms if t.kind != "interaction"), self.prior
        )

    def validate_for(self, col_names: Sequence[str], col_kinds: Sequence[str]) -> None:
        p = len(col_names)
        if not 0 <= self.target < p:
            raise InvalidSpec(f"target index {self.target} out of range")
        for t in self.terms:
            if any(not 0 <= c < p for c in t.cols):
                raise InvalidSpec(f"term references a column outside 0..{p - 1}")
        if self.family == LOGISTIC and col_kinds[self.target] != "binary":
            raise InvalidSpec(f"logistic model for non-binary column {col_names[self.target]!r}")

    def to_json(self, col_names: Sequence[str]) -> dict:
        out = {
            "target": col_names[self.target],
            "family": self.family,
            "terms": [t.label(col_names) for t in self.terms],
        }
        if self.family == LINEAR:
            out["prior"] = self.prior
        return out

    @classmethod
    def from_json(cls, obj: dict, col_names: Sequence[str]) -> "ConditionalModelSpec":
        names = list(col_names)

        def idx(name):
            if name not in names:
                raise InvalidSpec(f"spec references unknown column {name!r}")
            return names.index(name)

        terms = []
        for label in obj.get("terms", []):
            if label == "intercept":
                terms.append(TermSpec.intercept())
            elif ":" in label:
                a, b = label.split(":")
                terms.append(TermSpec.interaction(idx(a), idx(b)))
            else:
                terms.append(TermSpec.main(idx(label)))
        return cls(idx(obj["target"]), obj.get("family", LINEAR), tuple(terms), obj.get("prior", JEFFREYS))


def main_effects_spec(target: int, p: int, family: str = LINEAR, prior: str = JEFFREYS,
                      intercept: bool = True) -> ConditionalModelSpec:
    """Target regressed on every other column."""
    terms = [TermSpec.intercept()] if intercept else []
    terms += [TermSpec.main(c) for c in range(p) if c != target]
    return ConditionalModelSpec(target, family, tuple(terms), prior)


def load_specs(path, col_names: Sequence[str]) -> list[ConditionalModelSpec]:
    with open(path) as fh:
        obj = json.load(fh)
    if isinstance(obj, dict):
        obj = obj.get("specs", [obj])
    return [ConditionalModelSpec.from_json(o, col_names) for o in obj]


def build_design(values: np.ndarray, spec: ConditionalModelSpec, rows=slice(None)) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix (one column per term, in spec order) and response over ``rows``."""
    for t in spec.terms:
        if spec.target in t.cols:
            raise InvalidSpec("target referenced inside a term")
    sub = values[rows]
    X = np.empty((sub.shape[0], len(spec.terms)))
    mains = [(k, t.cols[0]) for k, t in enumerate(spec.terms) if t.kind == "main"]
    if mains:
        pos, cols = zip(*mains)
        X[:, list(pos)] = sub[:, list(cols)]
    for k, t in enumerate(spec.terms):
        if t.kind == "intercept":
            X[:, k] = 1.0
        elif t.kind == "interaction":
            X[:, k] = sub[:, t.cols[0]] * sub[:, t.cols[1]]
    return X, sub[:, spec.target].copy()


@dataclass(frozen=True)
class LinearDraw:
    beta: np.ndarray
    sigma2: float


@dataclass(frozen=True)
class LogisticDraw:
    beta: np.ndarray


def least_squares(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """QR least squares. Returns (beta_hat, R, RSS).

    A single Householder QR of the augmented matrix [X | y] yields R, Q'y and
    the residual norm together. Raises if a pivot of R vanishes or if the
    1-norm condition estimate of X'X (cond(R)^2) reaches ``MAX_CONDITION``.
    """
    n, k = X.shape
    A = np.empty((n, k + 1), order="F")
    A[:, :k] = X
    A[:, k] = y
    qrf = lapack.dgeqrf(A, overwrite_a=True)[0]
    R = np.where(_strict_lower(k), 0.0, qrf[:k, :k])
    d = np.abs(np.diagonal(R))
    dep = np.flatnonzero(d <= 1e-10 * max(d.max(initial=0.0), 1e-300))
    if dep.size:
        raise SingularDesignError(f"design columns {dep.tolist()} are linearly dependent", dep.tolist())
    rcond = lapack.dtrcon(R, norm="1", uplo="U")[0]
    if not rcond > 0 or 1.0 / rcond**2 >= MAX_CONDITION:
        raise SingularDesignError(f"X'X condition number exceeds {MAX_CONDITION:g}")
    beta = _upper_solve(R, qrf[:k, k])
    rss = float(qrf[k, k] ** 2) if n > k else 0.0
    return beta, R, rss


@functools.lru_cache(maxsize=64)
def _strict_lower(k: int) -> np.ndarray:
    return np.tri(k, k, -1, dtype=bool)


def _upper_solve(R: np.ndarray, b: np.ndarray) -> np.ndarray:
    return lapack.dtrtrs(R, b, lower=0)[0]


def linear_posterior_draw(X: np.ndarray, y: np.ndarray, prior: str, rng) -> LinearDraw:
    """Draw (beta, sigma2) from the normal linear-model posterior.

    sigma2 is scaled-inverse-chi-square with ``rows - k`` degrees of freedom
    under the Jeffreys prior (proportional to 1/sigma2) and ``rows - k - 2``
    under a prior flat in (beta, sigma2); beta given sigma2 is then
    Normal(beta_hat, sigma2 (X'X)^-1).
    """
    n, k = X.shape
    if n <= k + 2:
        raise InvalidArgument(f"need more than {k + 2} rows to fit {k} coefficients, got {n}")
    if prior == JEFFREYS:
        df = n - k
    elif prior == FLAT:
        df = n - k - 2
    else:
        raise InvalidArgument(f"unknown prior {prior!r}")
    beta_hat, R, rss = least_squares(X, y)
    gen = rng.gen
    sigma2 = rss / gen.chisquare(df)
    z = gen.standard_normal(k)
    # R^{-1} z has covariance (X'X)^{-1}
    beta = beta_hat + np.sqrt(sigma2) * _upper_solve(R, z)
    return LinearDraw(beta, float(sigma2))


def linear_impute(X_mis: np.ndarray, draw: LinearDraw, rng) -> np.ndarray:
    X_mis = np.asarray(X_mis, dtype=float)
    if X_mis.size == 0:
        X_mis = X_mis.reshape(-1, len(draw.beta))
    if X_mis.shape[1] != len(draw.beta):
        raise InvalidArgument(f"design has {X_mis.shape[1]} columns, draw has {len(draw.beta)} coefficients")
    noise = rng.gen.standard_normal(X_mis.shape[0])
    return X_mis @ draw.beta + np.sqrt(draw.sigma2) * noise


def logistic_mle(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Newton-Raphson MLE. Returns (beta_hat, observed information at beta_hat).

    Raises SeparationError when the MLE does not exist: an iterate that
    strictly separates the two classes proves complete separation, and
    fitted probabilities of exactly 0 or 1 at convergence indicate
    quasi-complete separation.
    """
    n, k = X.shape
    if n == 0 or np.all(y == y[0]):
        raise InvalidArgument("logistic fit needs both response classes")
    sign = 2.0 * y - 1.0
    beta = np.zeros(k)
    for _ in range(NEWTON_MAX_ITER):
        eta = X @ beta
        if np.all(sign * eta > 0):
            raise SeparationError("the two response classes are linearly separable")
        mu = expit(eta)
        grad = X.T @ (y - mu)
        w = mu * (1.0 - mu)
        info = (X * w[:, None]).T @ X
        if np.max(np.abs(grad)) < NEWTON_GRAD_TOL:
            if np.max(np.abs(eta)) > SATURATED_ETA:
                raise SeparationError("fitted probabilities of 0 or 1: quasi-complete separation")
            return beta, info
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise SingularDesignError("logistic information matrix is singular") from None
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.linalg.norm(beta) > SEPARATION_NORM:
            raise SeparationError("logistic coefficients diverge: complete or quasi-complete separation")
    raise SeparationError(
        f"Newton-Raphson did not converge in {NEWTON_MAX_ITER} iterations (likely quasi-separation)"
    )


def logistic_posterior_draw(X: np.ndarray, y: np.ndarray, rng) -> LogisticDraw:
    """Asymptotic-posterior draw: MLE plus Normal(0, inverse observed information)."""
    beta_hat, info = logistic_mle(X, y)
    try:
        C = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise SingularDesignError("logistic information matrix is not positive definite") from None
    z = rng.gen.standard_normal(len(beta_hat))
    # C^{-T} z has covariance (C C')^{-1}
    return LogisticDraw(beta_hat + lapack.dtrtrs(C, z, lower=1, trans=1)[0])


def logistic_impute(X_mis: np.ndarray, draw: LogisticDraw, rng) -> np.ndarray:
    X_mis = np.asarray(X_mis, dtype=float)
    if X_mis.size == 0:
        X_mis = X_mis.reshape(-1, len(draw.beta))
    if X_mis.shape[1] != len(draw.beta):
        raise InvalidArgument(f"design has {X_mis.shape[1]} columns, draw has {len(draw.beta)} coefficients")
    u = rng.gen.random(X_mis.shape[0])
    return (u < expit(X_mis @ draw.beta)).astype(float)


def posterior_draw(spec: ConditionalModelSpec, X: np.ndarray, y: np.ndarray, rng):
    if spec.family == LINEAR:
        return linear_posterior_draw(X, y, spec.prior, rng)
    return logistic_posterior_draw(X, y, rng)


def impute(spec: ConditionalModelSpec, X_mis: np.ndarray, draw, rng) -> np.ndarray:
    if spec.family == LINEAR:
        return linear_impute(X_mis, draw, rng)
    return logistic_impute(X_mis, draw, rng)
