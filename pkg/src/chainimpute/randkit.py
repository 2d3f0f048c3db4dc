"""Seeded random streams and the samplers every chain needs."""
from __future__ import annotations

import hashlib

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgument, NumericDomainError

DEFAULT_SEED = 20240101
PSD_TOL = 1e-10

_MASK64 = (1 << 64) - 1


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")


class RngStream:
    """A reproducible random stream identified by ``(seed, path)``.

    Substreams are derived by appending labels to the path, so chains,
    replicates and variables can each own an independent stream without
    any coordination between them.
    """

    def __init__(self, seed: int = DEFAULT_SEED, path: tuple = ()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(str(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_label_key(p) for p in self.path))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *labels) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(str(x) for x in labels))

    def get_state(self) -> dict:
        return {"seed": self.seed, "path": list(self.path), "bit_generator": self.gen.bit_generator.state}

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        rng = cls(state["seed"], tuple(state["path"]))
        rng.gen.bit_generator.state = state["bit_generator"]
        return rng

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream()
    return RngStream(int(rng))


def psd_cholesky(cov, tol: float = PSD_TOL) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PSD matrix.

    Pivots whose magnitude is below ``tol`` relative to the largest diagonal
    entry are treated as exact zeros, which lets rank-deficient (including
    all-zero) covariances through. A pivot below ``-tol`` means the matrix is
    not PSD; the error names the first leading minor that fails.
    """
    a = np.asarray(cov, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgument("covariance must be square")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise NumericDomainError("covariance is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    p = a.shape[0]
    scale = max(np.abs(np.diag(a)).max(initial=0.0), np.finfo(float).tiny)
    thresh = tol * scale
    L = np.zeros_like(a)
    for j in range(p):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d < -thresh:
            raise NumericDomainError(f"covariance is not PSD: leading minor {j + 1} is negative")
        if d <= thresh:
            resid = a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]
            if np.any(np.abs(resid) > np.sqrt(thresh) * np.sqrt(scale)):
                raise NumericDomainError(
                    f"covariance is not PSD: leading minor {j + 2} is negative"
                )
            continue
        L[j, j] = np.sqrt(d)
        L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def draw_mvn(mean, cov, rng: RngStream, tol: float = PSD_TOL) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    L = psd_cholesky(cov, tol)
    if L.shape[0] != mean.shape[0]:
        raise InvalidArgument("mean and covariance dimensions differ")
    return mean + L @ rng.gen.standard_normal(mean.shape[0])


def draw_scaled_inv_chisq(df: float, scale: float, rng: RngStream) -> float:
    """One draw of ``df * scale / chi2_df``."""
    if not (df > 0 and scale > 0):
        raise InvalidArgument(f"df and scale must be positive, got df={df}, scale={scale}")
    return df * scale / rng.gen.chisquare(df)


def draw_inv_wishart(df: float, scale, rng: RngStream) -> np.ndarray:
    """Inverse-Wishart draw by the Bartlett decomposition.

    With ``scale = L L'`` and Bartlett factor ``A`` of a standard Wishart,
    the draw is ``(L A^{-T})(L A^{-T})'``.
    """
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if not df > p - 1:
        raise InvalidArgument(f"inverse-Wishart needs df > p - 1 = {p - 1}, got {df}")
    try:
        L = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        raise NumericDomainError("inverse-Wishart scale matrix is not positive definite") from None
    gen = rng.gen
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(gen.chisquare(df - np.arange(p)))
    rows, cols = np.tril_indices(p, -1)
    A[rows, cols] = gen.standard_normal(rows.size)
    A_inv = solve_triangular(A, np.eye(p), lower=True)
    F = L @ A_inv.T
    return F @ F.T


def draw_bernoulli(prob, rng: RngStream, size=None):
    prob = np.asarray(prob, dtype=float)
    if np.any((prob < 0) | (prob > 1)) or np.any(np.isnan(prob)):
        raise InvalidArgument("Bernoulli probability must lie in [0, 1]")
    shape = prob.shape if size is None else size
    u = rng.gen.random(shape)
    out = (u < prob).astype(float)
    return float(out) if out.ndim == 0 else out
