"""Linear partial least squares regression by NIPALS.

Each component is extracted in three steps: the weight pair of maximal
squared covariance, the latent scores it induces, and a rank-one deflation
of both blocks along the normalized source score.  Prediction uses the
closed form ``t* = T0' G (U' S0 S0' G)^-1 U' S0 s*`` on the retained,
centered training blocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import DegenerateInput, DimensionMismatch, SingularSystem, ZeroLatentVector

logger = logging.getLogger(__name__)

POWER_TOL = 1e-12
POWER_MAX_ITER = 500
# ||g|| < SCORE_RTOL * ||S||_F ends the fit early
SCORE_RTOL = 1e-10
CONDITION_LIMIT = 1e12


def as_sample_matrix(X, name: str = "matrix") -> np.ndarray:
    """Validate ``X`` as a finite 2-D float array with at least one row and column."""
    A = np.asarray(X, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionMismatch(f"{name} must have at least one row and one column, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite values")
    return A


def _check_rows(S: np.ndarray, T: np.ndarray) -> None:
    if S.shape[0] != T.shape[0]:
        raise DimensionMismatch(
            f"source and target row counts differ ({S.shape[0]} != {T.shape[0]})"
        )


def fix_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so that its first non-negligible entry is positive."""
    v = np.asarray(v, dtype=np.float64)
    big = np.abs(v)
    top = big.max() if v.size else 0.0
    if top == 0.0:
        return v
    first = int(np.argmax(big > 1e-8 * top))
    return -v if v[first] < 0 else v


def power_iteration(
    apply: Callable[[np.ndarray], np.ndarray],
    dim: int,
    scale: float,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
) -> Tuple[Optional[np.ndarray], bool]:
    """Dominant eigenvector of a linear operator with non-negative spectrum.

    Starts from the normalized ones vector, or from the first canonical
    basis vector when the ones vector is annihilated by the operator.
    ``scale`` bounds the operator norm (a trace works) and sets the
    threshold below which an image counts as zero.

    Returns ``(vector, converged)``; ``vector`` is None when both start
    vectors lie in the null space.
    """
    null_tol = 1e-13 * scale
    x = np.full(dim, 1.0 / np.sqrt(dim))
    y = apply(x)
    if np.linalg.norm(y) <= null_tol:
        x = np.zeros(dim)
        x[0] = 1.0
        y = apply(x)
        if np.linalg.norm(y) <= null_tol:
            return None, False
    for _ in range(max_iter):
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return None, False
        x_new = y / ny
        diff = np.linalg.norm(x_new - x)
        x = x_new
        if diff < tol:
            return x, True
        y = apply(x)
    return x, False


def max_cov_weights(S, T) -> Tuple[np.ndarray, np.ndarray]:
    """Unit weights ``(w, c)`` maximizing ``cov(S w, T c)**2``.

    ``w`` is the dominant eigenvector of ``S'T T'S``, found by power
    iteration and sign-normalized; ``c`` is ``T'S w`` rescaled to unit norm.
    Covariance is the plain cross-product, so callers center first.
    """
    S = as_sample_matrix(S, "S")
    T = as_sample_matrix(T, "T")
    _check_rows(S, T)
    if S.shape[0] < 2:
        raise DimensionMismatch("at least two rows are needed to form a covariance")
    s_norm = np.linalg.norm(S)
    t_norm = np.linalg.norm(T)
    if s_norm == 0.0 or t_norm == 0.0:
        raise DegenerateInput("S or T is numerically zero")
    M = S.T @ T
    m_norm = np.linalg.norm(M)
    if m_norm <= 1e2 * np.finfo(float).eps * s_norm * t_norm:
        raise DegenerateInput("S and T have no cross-covariance")

    w, converged = power_iteration(lambda v: M @ (M.T @ v), S.shape[1], m_norm**2)
    if not converged:
        logger.debug("power iteration did not converge, using dense SVD")
        w = np.linalg.svd(M, full_matrices=False)[0][:, 0]
    w = fix_sign(w / np.linalg.norm(w))
    c = M.T @ w
    c = c / np.linalg.norm(c)
    return w, c


def latent_scores(S, T, w, c) -> Tuple[np.ndarray, np.ndarray]:
    """Scores ``g = S w`` and ``u = T c``."""
    S = np.asarray(S, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64).ravel()
    c = np.asarray(c, dtype=np.float64).ravel()
    if S.ndim != 2 or T.ndim != 2:
        raise DimensionMismatch("S and T must be 2-D")
    _check_rows(S, T)
    if S.shape[1] != w.size or T.shape[1] != c.size:
        raise DimensionMismatch(
            f"weights of length {w.size}/{c.size} do not fit blocks {S.shape}/{T.shape}"
        )
    return S @ w, T @ c


def deflate(S, T, g, tol: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Remove the rank-one part of ``S`` and ``T`` along ``d = g/||g||``."""
    S = np.asarray(S, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64).ravel()
    if S.shape[0] != g.size or T.shape[0] != g.size:
        raise DimensionMismatch("score length must equal the row count of S and T")
    g_norm = np.linalg.norm(g)
    if g_norm <= tol or g_norm == 0.0:
        raise ZeroLatentVector(f"latent vector norm {g_norm:.3e} is below tolerance {tol:.3e}")
    d = g / g_norm
    return S - np.outer(d, d @ S), T - np.outer(d, d @ T)


@dataclass(frozen=True, eq=False)
class PlsModel:
    """Fitted linear PLS regressor.

    ``G``/``U`` are the source/target score matrices (n x k), ``W``/``C``
    the unit weight vectors, ``S0``/``T0`` the centered (and optionally
    scaled) training blocks and ``d_list`` the unit deflation directions.
    """

    G: np.ndarray
    U: np.ndarray
    W: np.ndarray
    C: np.ndarray
    S0: np.ndarray
    T0: np.ndarray
    d_list: np.ndarray
    x_mean: np.ndarray
    y_mean: np.ndarray
    x_scale: np.ndarray
    y_scale: np.ndarray

    @property
    def n_components(self) -> int:
        return self.G.shape[1]

    @property
    def input_dim(self) -> int:
        return self.S0.shape[1]

    @property
    def output_dim(self) -> int:
        return self.T0.shape[1]

    def predict(self, X) -> np.ndarray:
        return predict_pls(self, X)


def center_scale(A: np.ndarray, scale: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = A.mean(axis=0)
    A = A - mean
    if scale:
        std = A.std(axis=0, ddof=1) if A.shape[0] > 1 else np.ones(A.shape[1])
        std = np.where(std > 0.0, std, 1.0)
    else:
        std = np.ones(A.shape[1])
    return A / std, mean, std


def fit_pls(S, T, p: int, scale: bool = False) -> PlsModel:
    """Fit up to ``p`` NIPALS components of ``T`` on ``S``.

    Both blocks are column-centered (and column-scaled when ``scale``).
    The loop stops early, keeping the components found so far, when the
    source score, the residual target or the residual cross-covariance
    vanishes.
    """
    S = as_sample_matrix(S, "S")
    T = as_sample_matrix(T, "T")
    _check_rows(S, T)
    n = S.shape[0]
    if not 1 <= p <= n:
        raise ValueError(f"component count must lie in [1, {n}], got {p}")
    S0, x_mean, x_scale = center_scale(S, scale)
    T0, y_mean, y_scale = center_scale(T, scale)
    s_norm = np.linalg.norm(S0)
    t_norm = np.linalg.norm(T0)
    if n < 2 or s_norm == 0.0 or t_norm == 0.0:
        raise DegenerateInput("centered S or T is zero; nothing to regress")

    Sk, Tk = S0, T0
    G, U, W, C, D = [], [], [], [], []
    for k in range(p):
        cov = np.linalg.norm(Sk.T @ Tk)
        if np.linalg.norm(Tk) <= SCORE_RTOL * t_norm or cov <= SCORE_RTOL * s_norm * t_norm:
            if k == 0:
                raise DegenerateInput("S and T have no cross-covariance")
            logger.debug("residual covariance exhausted after %d components", k)
            break
        w, c = max_cov_weights(Sk, Tk)
        g, u = latent_scores(Sk, Tk, w, c)
        try:
            Sk, Tk = deflate(Sk, Tk, g, tol=SCORE_RTOL * s_norm)
        except ZeroLatentVector:
            if k == 0:
                raise DegenerateInput("first latent component is degenerate") from None
            logger.debug("latent score vanished after %d components", k)
            break
        G.append(g)
        U.append(u)
        W.append(w)
        C.append(c)
        D.append(g / np.linalg.norm(g))

    return PlsModel(
        G=np.column_stack(G),
        U=np.column_stack(U),
        W=np.column_stack(W),
        C=np.column_stack(C),
        S0=S0,
        T0=T0,
        d_list=np.column_stack(D),
        x_mean=x_mean,
        y_mean=y_mean,
        x_scale=x_scale,
        y_scale=y_scale,
    )


def inner_factor(U: np.ndarray, K0: np.ndarray, G: np.ndarray):
    """LU-factor ``U' K0 G`` after normalizing the score columns.

    Column scaling of ``U`` and ``G`` cancels in the prediction, so the
    condition estimate is taken on unit-norm scores.  Returns the normalized
    scores and the factorization; raises SingularSystem above
    ``CONDITION_LIMIT``.
    """
    Gn = G / np.linalg.norm(G, axis=0)
    Un = U / np.linalg.norm(U, axis=0)
    M = Un.T @ K0 @ Gn
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularSystem(
            f"inner {M.shape[0]}x{M.shape[0]} system has condition {cond:.3e}; "
            "too many components for the data"
        )
    lu = scipy.linalg.lu_factor(M)
    return Gn, Un, lu


def predict_pls(model: PlsModel, s_star) -> np.ndarray:
    """Predict targets for one source vector or a batch of row vectors."""
    X = np.asarray(s_star, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionMismatch(
            f"input dimension {X.shape[-1]} does not match training dimension {model.input_dim}"
        )
    Xc = (X - model.x_mean) / model.x_scale
    S0 = model.S0
    Gn, Un, lu = inner_factor(model.U, S0 @ S0.T, model.G)
    proj = (Xc @ S0.T) @ Un
    coef = scipy.linalg.lu_solve(lu, proj.T).T
    Y = (coef @ (Gn.T @ model.T0)) * model.y_scale + model.y_mean
    return Y[0] if single else Y
