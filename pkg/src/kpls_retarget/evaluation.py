"""Cyclic retargeting evaluation, baselines and synthetic test worlds."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist, pdist

from .errors import DimensionMismatch, InvalidConfig, SingularSystem, TooFewPairs
from .kernel import KernelSpec, fit_kpls
from .pls_core import as_sample_matrix, fit_pls
from .retarget import (
    BlendshapeSolver,
    CorrespondenceSet,
    FaceRig,
    FeaturePointFrame,
    RetargetModel,
    apply_blendshapes,
    build_training_matrices,
    default_components,
    retarget_points,
    train_retargeter,
)
from .synthetic import SyntheticWorld, WorldConfig, gen_synthetic_world, reversed_correspondence

METHODS = ("kpls", "linear_pls", "rbf_baseline")

logger = logging.getLogger(__name__)


def _as_vertex_stack(seq) -> np.ndarray:
    A = np.stack([np.asarray(f, dtype=np.float64) for f in seq]) if len(seq) else np.zeros((0, 0, 3))
    if A.ndim != 3 or A.shape[2] != 3:
        raise DimensionMismatch(f"vertex frames must have shape (V, 3), got {A.shape[1:]}")
    return A


def per_frame_errors(seq_initial, seq_final) -> np.ndarray:
    """Root-mean-square vertex displacement of every frame."""
    A = _as_vertex_stack(seq_initial)
    B = _as_vertex_stack(seq_final)
    if A.shape != B.shape:
        raise DimensionMismatch(f"sequences differ in shape: {A.shape} vs {B.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionMismatch("need at least one frame and one vertex")
    return np.sqrt(np.sum((A - B) ** 2, axis=2).mean(axis=1))


def displacement_error(seq_initial, seq_final) -> float:
    """Average vertex displacement error between two vertex-animation sequences.

    ``sqrt(1/(T V) * sum_t sum_v ||p_v^initial(t) - p_v^final(t)||^2)``.
    """
    A = _as_vertex_stack(seq_initial)
    B = _as_vertex_stack(seq_final)
    if A.shape != B.shape:
        raise DimensionMismatch(f"sequences differ in shape: {A.shape} vs {B.shape}")
    n_frames, n_vertices = A.shape[:2]
    if n_frames < 1 or n_vertices < 1:
        raise DimensionMismatch("need at least one frame and one vertex")
    return float(np.sqrt(np.sum((A - B) ** 2) / (n_frames * n_vertices)))


def improvement_percent(e_base: float, e_ours: float) -> float:
    """Relative error reduction ``100 (e_base - e_ours) / e_base``."""
    if e_base == 0:
        raise ZeroDivisionError("baseline error is zero; improvement undefined")
    if e_base < 0 or e_ours < 0:
        raise ValueError("errors must be non-negative")
    return 100.0 * (e_base - e_ours) / e_base


@dataclass(frozen=True)
class CyclicReport:
    method: str
    e_d: float
    per_frame_errors: Tuple[float, ...]
    frame_count: int
    vertex_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def reconstruct_vertices(rig: FaceRig, P, solver: Optional[BlendshapeSolver] = None) -> np.ndarray:
    """Full-mesh frames from feature-point frames via the bounded blendshape solve."""
    solver = solver or BlendshapeSolver(rig)
    return apply_blendshapes(rig, solver.solve(P))


def cyclic_retarget(
    model_ab: RetargetModel,
    model_ba: RetargetModel,
    seq: Sequence[FeaturePointFrame],
    rig_a: FaceRig,
    method: str = "kpls_rbf",
    initial_vertices: Optional[np.ndarray] = None,
    solver: Optional[BlendshapeSolver] = None,
) -> CyclicReport:
    """Retarget ``seq`` A -> B -> A and score the round trip on rig A's mesh.

    Both the input and the round-tripped feature points are turned into
    full meshes through the blendshape solve before comparison.
    ``initial_vertices`` may pass a precomputed reconstruction of ``seq``.
    """
    if not seq:
        raise DimensionMismatch("cyclic evaluation needs at least one frame")
    solver = solver or BlendshapeSolver(rig_a)
    P0 = np.stack([f.points for f in seq])
    P1 = retarget_points(model_ba, retarget_points(model_ab, P0))
    if initial_vertices is None:
        initial_vertices = reconstruct_vertices(rig_a, P0, solver)
    final_vertices = reconstruct_vertices(rig_a, P1, solver)
    errors = per_frame_errors(initial_vertices, final_vertices)
    return CyclicReport(
        method=method,
        e_d=displacement_error(initial_vertices, final_vertices),
        per_frame_errors=tuple(float(e) for e in errors),
        frame_count=len(seq),
        vertex_count=rig_a.n_vertices,
    )


@dataclass(frozen=True, eq=False)
class RbfInterpolator:
    """Gaussian RBF interpolant of every output coordinate around the training inputs."""

    centers: np.ndarray
    weights: np.ndarray
    sigma: float
    y_mean: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[1]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input dimension {X.shape[1]} != {self.input_dim}")
        Phi = np.exp(-cdist(X, self.centers, "sqeuclidean") / (2.0 * self.sigma**2))
        Y = Phi @ self.weights + self.y_mean
        return Y[0] if single else Y


def nearest_neighbour_spacing(S: np.ndarray) -> float:
    """Mean distance from each training input to its nearest neighbour."""
    D = cdist(S, S)
    np.fill_diagonal(D, np.inf)
    return float(D.min(axis=1).mean())


def fit_rbf_interpolator(S, T, sigma: Optional[float] = None) -> RbfInterpolator:
    """Exact Gaussian interpolation of ``T`` (mean removed) at the rows of ``S``.

    The default width is the mean nearest-neighbour spacing of the inputs,
    which keeps the interpolation matrix well conditioned.
    """
    S = as_sample_matrix(S, "S")
    T = as_sample_matrix(T, "T")
    if S.shape[0] != T.shape[0]:
        raise DimensionMismatch("source and target row counts differ")
    n = S.shape[0]
    if n > 1 and pdist(S).min() <= 1e-12 * max(1.0, np.abs(S).max()):
        raise SingularSystem("duplicate training inputs make the interpolation system singular")
    if sigma is None:
        sigma = nearest_neighbour_spacing(S) if n > 1 else 1.0
    y_mean = T.mean(axis=0)
    Phi = np.exp(-cdist(S, S, "sqeuclidean") / (2.0 * sigma**2))
    try:
        weights = scipy.linalg.solve(Phi, T - y_mean, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystem(f"interpolation system is singular: {exc}") from None
    return RbfInterpolator(S, weights, float(sigma), y_mean)


def rbf_baseline_fit(
    corr: CorrespondenceSet, sigma: Optional[float] = None, rigid_alignment: bool = True
) -> RetargetModel:
    """Scattered-data interpolation baseline behind the same normalizers as KPLS."""
    S, T, src_norm, tgt_norm = build_training_matrices(corr, rigid_alignment)
    return RetargetModel(
        src_norm, tgt_norm, fit_rbf_interpolator(S, T, sigma), corr.n_source_points, corr.n_target_points
    )


def rbf_baseline_predict(model: RetargetModel, frame: FeaturePointFrame) -> FeaturePointFrame:
    return FeaturePointFrame(retarget_points(model, frame.points[None])[0], frame.time_index)


def train_pls_retargeter(
    corr: CorrespondenceSet, p: Optional[int] = None, rigid_alignment: bool = True
) -> RetargetModel:
    """Linear (primal) PLS retargeter, the comparison point for kernel PLS."""
    S, T, src_norm, tgt_norm = build_training_matrices(corr, rigid_alignment)
    if p is None:
        p = default_components(len(corr))
    return RetargetModel(src_norm, tgt_norm, fit_pls(S, T, p), corr.n_source_points, corr.n_target_points)


def loo_curve(S, T, spec: KernelSpec, p_max: int) -> np.ndarray:
    """Mean squared leave-one-out prediction error for p = 1..p_max (inf where unusable)."""
    S = as_sample_matrix(S, "S")
    T = as_sample_matrix(T, "T")
    n = S.shape[0]
    if n < 3:
        raise TooFewPairs(f"leave-one-out selection needs at least three pairs, got {n}")
    # fix the rbf width on the full set so every fold shares one kernel
    spec = spec.resolved(S)
    curve = np.full(p_max, np.inf)
    for p in range(1, p_max + 1):
        total = 0.0
        for i in range(n):
            keep = np.arange(n) != i
            try:
                model = fit_kpls(spec, S[keep], T[keep], min(p, n - 1))
                total += float(np.sum((model.predict(S[i]) - T[i]) ** 2))
            except (SingularSystem, ArithmeticError, ValueError) as exc:
                logger.debug("p=%d fold %d unusable: %s", p, i, exc)
                total = np.inf
                break
        curve[p - 1] = total / n
    return curve


def select_components_loo(
    corr, spec: KernelSpec = KernelSpec(), p_max: int = 10, rigid_alignment: bool = True
) -> int:
    """Component count with the lowest leave-one-out error; ties go to the smaller p.

    ``corr`` is a CorrespondenceSet or a pair of already-built ``(S, T)`` matrices.
    """
    if isinstance(corr, CorrespondenceSet):
        S, T = build_training_matrices(corr, rigid_alignment)[:2]
    else:
        S, T = corr
    curve = loo_curve(S, T, spec, p_max)
    if not np.any(np.isfinite(curve)):
        raise SingularSystem("no component count yields a usable leave-one-out fit")
    best = curve.min()
    return int(np.argmax(curve <= best + 1e-12)) + 1


def _trainer(method: str, spec: KernelSpec, p: Optional[int], rigid_alignment: bool):
    if method == "kpls":
        return lambda corr: train_retargeter(corr, spec, p, rigid_alignment)
    if method == "linear_pls":
        return lambda corr: train_pls_retargeter(corr, p, rigid_alignment)
    if method == "rbf_baseline":
        return lambda corr: rbf_baseline_fit(corr, None, rigid_alignment)
    raise InvalidConfig(f"unknown method {method!r}; expected one of {METHODS}")


def compare_methods(
    corr: CorrespondenceSet,
    heldout: Sequence[FeaturePointFrame],
    rig_a: FaceRig,
    methods: Sequence[str] = METHODS,
    spec: KernelSpec = KernelSpec(),
    p: Optional[int] = None,
    rigid_alignment: bool = False,
) -> Dict[str, CyclicReport]:
    """Cyclic A -> B -> A evaluation of several retargeters on a held-out sequence.

    Every method is trained on ``corr`` in both directions.  ``spec`` and
    ``p`` configure the kernel method; ``p`` also caps linear PLS.  Reports
    are keyed by label, the kernel method being labelled ``kpls_<kind>``.
    """
    if not heldout:
        raise DimensionMismatch("no held-out frames to evaluate")
    backward = reversed_correspondence(corr)
    solver = BlendshapeSolver(rig_a)
    initial = reconstruct_vertices(rig_a, np.stack([f.points for f in heldout]), solver)
    reports = {}
    for method in methods:
        train = _trainer(method, spec, p, rigid_alignment)
        label = f"kpls_{spec.kind}" if method == "kpls" else method
        reports[label] = cyclic_retarget(
            train(corr), train(backward), heldout, rig_a, label, initial, solver
        )
    return reports


def compare_on_world(world: SyntheticWorld, **kwargs) -> Dict[str, CyclicReport]:
    """:func:`compare_methods` on a synthetic world's held-out sequence.

    Synthetic worlds carry no head motion, so rigid alignment stays off
    unless requested.
    """
    return compare_methods(world.corr, world.heldout, world.rig_a, **kwargs)


__all__ = [
    "CyclicReport",
    "METHODS",
    "RbfInterpolator",
    "SyntheticWorld",
    "WorldConfig",
    "compare_methods",
    "compare_on_world",
    "cyclic_retarget",
    "displacement_error",
    "fit_rbf_interpolator",
    "gen_synthetic_world",
    "improvement_percent",
    "loo_curve",
    "nearest_neighbour_spacing",
    "per_frame_errors",
    "rbf_baseline_fit",
    "rbf_baseline_predict",
    "reconstruct_vertices",
    "select_components_loo",
    "train_pls_retargeter",
]
