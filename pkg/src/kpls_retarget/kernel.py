"""Kernel PLS: kernels, centered Gram matrices, Gram deflation and prediction.

The dual NIPALS loop never touches feature-space coordinates.  Each
component's unit score ``d`` is the dominant eigenvector of ``K T T'``,
the Gram matrix is deflated as ``K - dd'K - Kdd' + dd'Kdd'`` and the target
block as ``T - dd'T``.  Predictions evaluate

    t* = T0' G (U' K0 G)^-1 U' k*

with ``K0`` the original centered Gram matrix and ``k*`` the centered
kernel column of the query.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist, pdist

from .errors import DegenerateInput, DimensionMismatch, NotUnitVector
from .pls_core import (
    as_sample_matrix,
    fix_sign,
    inner_factor,
    power_iteration,
)

logger = logging.getLogger(__name__)

KERNEL_KINDS = ("linear", "rbf", "polynomial")

# Relative thresholds of the dual early stop.  Gram entries carry round-off
# of order eps*||K||, so the dual cannot resolve residual source variance
# below ~1e-15 of trace(K0).
TRACE_RTOL = 1e-12
TARGET_RTOL = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and parameters.

    ``sigma=None`` on an rbf kernel defers the width to the median pairwise
    distance of the training inputs, resolved when the model is fitted.
    """

    kind: str = "rbf"
    sigma: Optional[float] = None
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if self.kind == "rbf" and self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"rbf sigma must be positive, got {self.sigma}")
        if self.kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError(f"polynomial degree must be a positive integer, got {self.degree}")

    def resolved(self, X) -> "KernelSpec":
        """Return a copy with a concrete rbf width (median heuristic)."""
        if self.kind != "rbf" or self.sigma is not None:
            return self
        return replace(self, sigma=median_heuristic(X))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "degree": self.degree, "offset": self.offset}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(
            kind=data.get("kind", "rbf"),
            sigma=None if data.get("sigma") is None else float(data["sigma"]),
            degree=int(data.get("degree", 2)),
            offset=float(data.get("offset", 1.0)),
        )


def median_heuristic(X) -> float:
    """Median of the pairwise Euclidean distances between rows of ``X``."""
    X = as_sample_matrix(X, "X")
    if X.shape[0] < 2:
        raise DegenerateInput("the median heuristic needs at least two inputs")
    dist = pdist(X)
    sigma = float(np.median(dist))
    if sigma == 0.0:
        sigma = float(dist.max())
    if sigma == 0.0:
        raise DegenerateInput("all training inputs coincide; rbf width undefined")
    return sigma


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Evaluate the kernel on a single pair of vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DimensionMismatch(f"vector lengths differ ({x.size} != {y.size})")
    if spec.kind == "linear":
        return float(np.dot(x, y))
    if spec.kind == "polynomial":
        return float((np.dot(x, y) + spec.offset) ** spec.degree)
    if spec.sigma is None:
        raise ValueError("rbf kernel needs a concrete sigma; call spec.resolved(X) first")
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / (2.0 * spec.sigma**2)))


def kernel_matrix(spec: KernelSpec, X, Y) -> np.ndarray:
    """Kernel values between every row of ``X`` and every row of ``Y``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"input dimensions differ ({X.shape[1]} != {Y.shape[1]})")
    if spec.kind == "linear":
        return X @ Y.T
    if spec.kind == "polynomial":
        return (X @ Y.T + spec.offset) ** spec.degree
    if spec.sigma is None:
        raise ValueError("rbf kernel needs a concrete sigma; call spec.resolved(X) first")
    return np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * spec.sigma**2))


def _shifted_kernel(spec: KernelSpec, X, Y) -> np.ndarray:
    """Kernel values minus a constant (1 for rbf, else 0).

    Double centering cancels any constant, and ``expm1`` keeps the rbf
    entries exact when the width dwarfs the data, where ``exp`` would round
    every entry to nearly 1.
    """
    if spec.kind != "rbf":
        return kernel_matrix(spec, X, Y)
    if spec.sigma is None:
        raise ValueError("rbf kernel needs a concrete sigma; call spec.resolved(X) first")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"input dimensions differ ({X.shape[1]} != {Y.shape[1]})")
    return np.expm1(-cdist(X, Y, "sqeuclidean") / (2.0 * spec.sigma**2))


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Double-centered Gram matrix with the statistics of the raw kernel.

    ``row_means`` holds the per-row means of the uncentered matrix and
    ``grand_mean`` its overall mean; both are needed to center the kernel
    column of a new query consistently.  The statistics may be taken on the
    kernel shifted by a constant as long as queries get the same shift.
    """

    values: np.ndarray
    row_means: np.ndarray
    grand_mean: float

    def center_query(self, k_star: np.ndarray) -> np.ndarray:
        """Center raw kernel rows ``k(x*, x_i)`` (shape m x n) against the training set."""
        k_star = np.atleast_2d(k_star)
        return k_star - k_star.mean(axis=1, keepdims=True) - self.row_means + self.grand_mean


def center_gram(K) -> GramMatrix:
    K = np.asarray(K, dtype=np.float64)
    row_means = K.mean(axis=1)
    col_means = K.mean(axis=0)
    grand_mean = float(K.mean())
    Kc = K - row_means[:, None] - col_means[None, :] + grand_mean
    Kc = 0.5 * (Kc + Kc.T)
    return GramMatrix(values=Kc, row_means=0.5 * (row_means + col_means), grand_mean=grand_mean)


def gram(spec: KernelSpec, X) -> GramMatrix:
    """Double-centered Gram matrix of the rows of ``X``; an rbf without width takes the median."""
    X = as_sample_matrix(X, "X")
    K = _shifted_kernel(spec.resolved(X), X, X)
    return center_gram(0.5 * (K + K.T))


def deflate_gram(K: Union[GramMatrix, np.ndarray], d) -> Union[GramMatrix, np.ndarray]:
    """Project the unit direction ``d`` out of both sides of ``K``.

    Accepts a bare array or a GramMatrix and returns the same type; the
    centering statistics of a GramMatrix are carried over unchanged.
    """
    values = K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64).ravel()
    if values.shape != (d.size, d.size):
        raise DimensionMismatch(f"direction of length {d.size} does not fit Gram {values.shape}")
    if abs(np.linalg.norm(d) - 1.0) > 1e-10:
        raise NotUnitVector(f"deflation direction has norm {np.linalg.norm(d):.12g}")
    Kd = values @ d
    dKd = float(d @ Kd)
    out = values - np.outer(d, Kd) - np.outer(Kd, d) + dKd * np.outer(d, d)
    if isinstance(K, GramMatrix):
        return replace(K, values=out)
    return out


@dataclass(frozen=True, eq=False)
class KplsModel:
    """Fitted kernel PLS regressor; every field needed by the prediction formula."""

    spec: KernelSpec
    training_inputs: np.ndarray
    T0: np.ndarray
    G: np.ndarray
    U: np.ndarray
    C: np.ndarray
    K0: GramMatrix
    y_mean: np.ndarray

    @property
    def n_components(self) -> int:
        return self.G.shape[1]

    @property
    def input_dim(self) -> int:
        return self.training_inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.T0.shape[1]

    def predict(self, X) -> np.ndarray:
        return predict_kpls(self, X)


def _dominant_score(Kk: np.ndarray, Tk: np.ndarray, scale: float) -> np.ndarray:
    g, converged = power_iteration(lambda v: Kk @ (Tk @ (Tk.T @ v)), Kk.shape[0], scale)
    if not converged:
        # same eigenvector through the small symmetric problem T'KT c = lambda c
        logger.debug("dual power iteration did not converge, using dense eigensolver")
        c = np.linalg.eigh(Tk.T @ Kk @ Tk)[1][:, -1]
        g = Kk @ (Tk @ c)
    return fix_sign(g / np.linalg.norm(g))


def fit_kpls(spec: KernelSpec, S, T, p: int) -> KplsModel:
    """Fit up to ``p`` kernel PLS components (dual NIPALS).

    The source rows enter only through their centered Gram matrix.  Fitting
    stops early when the residual Gram trace, the residual target block or
    the residual covariance ``trace(T'KT)`` becomes negligible.
    """
    S = as_sample_matrix(S, "S")
    T = as_sample_matrix(T, "T")
    if S.shape[0] != T.shape[0]:
        raise DimensionMismatch(f"source and target row counts differ ({S.shape[0]} != {T.shape[0]})")
    n = S.shape[0]
    if not 1 <= p <= n:
        raise ValueError(f"component count must lie in [1, {n}], got {p}")
    if n < 2:
        raise DegenerateInput("at least two training pairs are required")
    y_mean = T.mean(axis=0)
    T0 = T - y_mean
    t_norm2 = float(np.sum(T0 * T0))
    if t_norm2 == 0.0:
        raise DegenerateInput("target block is constant; no covariance to maximize")
    spec = spec.resolved(S)
    K0 = gram(spec, S)
    k_trace = float(np.trace(K0.values))
    if k_trace <= 0.0:
        raise DegenerateInput("centered Gram matrix is zero")

    Kk, Tk = K0.values, T0
    G, U, C = [], [], []
    for k in range(p):
        cov = float(np.trace(Tk.T @ Kk @ Tk))
        if (
            np.trace(Kk) <= TRACE_RTOL * k_trace
            or np.sum(Tk * Tk) <= TARGET_RTOL**2 * t_norm2
            or cov <= TRACE_RTOL * k_trace * t_norm2
        ):
            if k == 0:
                raise DegenerateInput("no cross-covariance between source and target")
            logger.debug("dual fit exhausted after %d components", k)
            break
        d = _dominant_score(Kk, Tk, cov)
        c = Tk.T @ d
        c = c / np.linalg.norm(c)
        u = Tk @ c
        G.append(d)
        U.append(u)
        C.append(c)
        Kk = deflate_gram(Kk, d)
        Tk = Tk - np.outer(d, d @ Tk)

    return KplsModel(
        spec=spec,
        training_inputs=S,
        T0=T0,
        G=np.column_stack(G),
        U=np.column_stack(U),
        C=np.column_stack(C),
        K0=K0,
        y_mean=y_mean,
    )


def predict_kpls(model: KplsModel, s_star) -> np.ndarray:
    """Predict targets for one input vector or a batch of row vectors."""
    X = np.asarray(s_star, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionMismatch(
            f"input dimension {X.shape[-1]} does not match training dimension {model.input_dim}"
        )
    k_star = model.K0.center_query(_shifted_kernel(model.spec, X, model.training_inputs))
    Gn, Un, lu = inner_factor(model.U, model.K0.values, model.G)
    coef = scipy.linalg.lu_solve(lu, (k_star @ Un).T).T
    Y = coef @ (Gn.T @ model.T0) + model.y_mean
    return Y[0] if single else Y
