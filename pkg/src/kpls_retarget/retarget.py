"""Face rigs, feature-point frames and frame-by-frame retargeting.

Source frames are made commensurate by subtracting their centroid,
dividing by the bounding-box diagonal of the neutral frame and (by
default) rotating them onto the neutral frame.  Target frames are only
shifted and scaled by the fixed neutral reference, so predictions come
back as absolute target positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import lsq_linear

from .errors import DegenerateFrame, DimensionMismatch, TooFewPairs
from .kernel import KernelSpec, fit_kpls

POLICIES = ("fixed", "centroid", "rigid")


@dataclass(frozen=True, eq=False)
class FeaturePointFrame:
    """Positions of L feature points at one time step."""

    points: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DimensionMismatch(f"feature points must have shape (L, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("feature points must be finite")
        if self.time_index < 0:
            raise ValueError(f"time index must be non-negative, got {self.time_index}")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class FaceRig:
    """Neutral mesh, named blendshape deltas and designated feature-point vertices."""

    neutral_vertices: np.ndarray
    blendshape_names: Tuple[str, ...]
    blendshape_deltas: np.ndarray
    feature_point_indices: np.ndarray

    def __post_init__(self):
        neutral = np.asarray(self.neutral_vertices, dtype=np.float64)
        if neutral.ndim != 2 or neutral.shape[1] != 3 or neutral.shape[0] < 1:
            raise DimensionMismatch(f"neutral vertices must have shape (V, 3), got {neutral.shape}")
        names = tuple(str(n) for n in self.blendshape_names)
        deltas = np.asarray(self.blendshape_deltas, dtype=np.float64)
        if deltas.size == 0:
            deltas = deltas.reshape(0, neutral.shape[0], 3)
        if deltas.ndim != 3 or deltas.shape[1:] != neutral.shape:
            raise DimensionMismatch(
                f"blendshape deltas must have shape (B, {neutral.shape[0]}, 3), got {deltas.shape}"
            )
        if len(names) != deltas.shape[0]:
            raise DimensionMismatch(f"{len(names)} names for {deltas.shape[0]} blendshapes")
        if len(set(names)) != len(names):
            raise ValueError("blendshape names must be unique")
        idx = np.asarray(self.feature_point_indices, dtype=np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= neutral.shape[0]):
            raise ValueError("feature point index out of range")
        if not (np.all(np.isfinite(neutral)) and np.all(np.isfinite(deltas))):
            raise ValueError("rig geometry must be finite")
        object.__setattr__(self, "neutral_vertices", neutral)
        object.__setattr__(self, "blendshape_names", names)
        object.__setattr__(self, "blendshape_deltas", deltas)
        object.__setattr__(self, "feature_point_indices", idx)

    @property
    def n_vertices(self) -> int:
        return self.neutral_vertices.shape[0]

    @property
    def n_blendshapes(self) -> int:
        return self.blendshape_deltas.shape[0]

    @property
    def n_feature_points(self) -> int:
        return self.feature_point_indices.size

    def feature_points(self, vertices=None, time_index: int = 0) -> FeaturePointFrame:
        verts = self.neutral_vertices if vertices is None else np.asarray(vertices)
        return FeaturePointFrame(verts[self.feature_point_indices], time_index)

    def feature_delta_matrix(self) -> np.ndarray:
        """3L x B matrix of blendshape deltas at the feature points (x,y,z interleaved)."""
        sub = self.blendshape_deltas[:, self.feature_point_indices, :]
        return sub.reshape(self.n_blendshapes, -1).T

    def bounding_box_diagonal(self) -> float:
        v = self.neutral_vertices
        return float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """N semantically paired source/target frames; one pair is the neutral."""

    source_frames: Tuple[FeaturePointFrame, ...]
    target_frames: Tuple[FeaturePointFrame, ...]
    neutral_index: int = 0

    def __post_init__(self):
        src = tuple(self.source_frames)
        tgt = tuple(self.target_frames)
        if len(src) != len(tgt):
            raise DimensionMismatch(f"{len(src)} source frames but {len(tgt)} target frames")
        if len(src) < 2:
            raise TooFewPairs(f"at least two correspondence pairs are required, got {len(src)}")
        for side, frames in (("source", src), ("target", tgt)):
            if len({f.n_points for f in frames}) != 1:
                raise DimensionMismatch(f"{side} frames disagree on the feature point count")
        if not 0 <= self.neutral_index < len(src):
            raise ValueError(f"neutral index {self.neutral_index} out of range")
        object.__setattr__(self, "source_frames", src)
        object.__setattr__(self, "target_frames", tgt)

    def __len__(self) -> int:
        return len(self.source_frames)

    @property
    def neutral_source(self) -> FeaturePointFrame:
        return self.source_frames[self.neutral_index]

    @property
    def neutral_target(self) -> FeaturePointFrame:
        return self.target_frames[self.neutral_index]

    @property
    def n_source_points(self) -> int:
        return self.source_frames[0].n_points

    @property
    def n_target_points(self) -> int:
        return self.target_frames[0].n_points


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Maps frames of one face into a dimensionless, comparable space.

    ``policy`` selects what is removed per frame: ``"fixed"`` subtracts the
    reference centroid only, ``"centroid"`` subtracts the frame's own
    centroid and ``"rigid"`` additionally rotates the frame onto the
    neutral reference (orthogonal Procrustes).
    """

    reference_centroid: np.ndarray
    reference_scale: float
    policy: str = "rigid"
    reference_points: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown normalization policy {self.policy!r}")
        if not self.reference_scale > 0:
            raise ValueError(f"reference scale must be positive, got {self.reference_scale}")
        if self.policy == "rigid" and self.reference_points is None:
            raise ValueError("rigid policy needs reference points")

    @classmethod
    def from_neutral(cls, neutral: FeaturePointFrame, policy: str = "rigid") -> "Normalizer":
        pts = neutral.points
        centroid = pts.mean(axis=0)
        scale = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        if scale == 0.0:
            raise DegenerateFrame("neutral frame has coincident points")
        return cls(centroid, scale, policy, (pts - centroid) / scale)

    @property
    def n_points(self) -> Optional[int]:
        return None if self.reference_points is None else self.reference_points.shape[0]


@dataclass(frozen=True)
class RemovedTransform:
    """What normalization took out of a frame: ``p = R' q * scale + centroid``."""

    centroid: np.ndarray
    rotation: np.ndarray


def _kabsch(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Proper rotations R (batched) minimizing ||X R - Y|| for centered point sets."""
    H = np.einsum("...li,lj->...ij", X, Y)
    Uh, _, Vt = np.linalg.svd(H)
    sign = np.sign(np.linalg.det(Uh @ Vt))
    sign[sign == 0] = 1.0
    Uh[..., :, 2] *= sign[..., None]
    return Uh @ Vt


def normalize_points(norm: Normalizer, P) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized normalization of a stack of frames ``P`` (m x L x 3).

    Returns the flattened vectors (m x 3L) with the per-frame centroids and
    rotations that were removed.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 3 or P.shape[2] != 3:
        raise DimensionMismatch(f"frames must have shape (m, L, 3), got {P.shape}")
    if norm.n_points is not None and P.shape[1] != norm.n_points:
        raise DimensionMismatch(f"frames have {P.shape[1]} points, normalizer expects {norm.n_points}")
    spread = np.ptp(P, axis=1).max(axis=1) if P.shape[0] else np.zeros(0)
    if np.any(spread == 0.0):
        raise DegenerateFrame("all points of a frame coincide")
    m = P.shape[0]
    if norm.policy == "fixed":
        centroids = np.broadcast_to(norm.reference_centroid, (m, 3)).copy()
    else:
        centroids = P.mean(axis=1)
    Q = (P - centroids[:, None, :]) / norm.reference_scale
    rotations = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
    if norm.policy == "rigid" and m:
        rotations = _kabsch(Q, norm.reference_points)
        Q = Q @ rotations
    return Q.reshape(m, -1), centroids, rotations


def normalize_frame(norm: Normalizer, frame: FeaturePointFrame) -> np.ndarray:
    """Flattened (x,y,z interleaved) normalized coordinates of one frame."""
    return normalize_points(norm, frame.points[None])[0][0]


def removed_transform(norm: Normalizer, frame: FeaturePointFrame) -> RemovedTransform:
    _, centroids, rotations = normalize_points(norm, frame.points[None])
    return RemovedTransform(centroids[0], rotations[0])


def denormalize_points(norm: Normalizer, V, centroids=None, rotations=None) -> np.ndarray:
    """Inverse of :func:`normalize_points`; defaults to the reference placement."""
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    m = V.shape[0]
    Q = V.reshape(m, -1, 3)
    if rotations is not None:
        Q = Q @ np.swapaxes(np.asarray(rotations), -1, -2)
    if centroids is None:
        centroids = np.broadcast_to(norm.reference_centroid, (m, 3))
    return Q * norm.reference_scale + np.asarray(centroids)[:, None, :]


def denormalize_frame(
    norm: Normalizer, vector, transform: Optional[RemovedTransform] = None, time_index: int = 0
) -> FeaturePointFrame:
    if transform is None:
        pts = denormalize_points(norm, vector)[0]
    else:
        pts = denormalize_points(norm, vector, transform.centroid[None], transform.rotation[None])[0]
    return FeaturePointFrame(pts, time_index)


@dataclass(frozen=True, eq=False)
class RetargetModel:
    """Normalizers of both faces around a fitted regressor.

    ``regressor`` is any fitted model with ``predict``, ``input_dim`` and
    ``output_dim`` (KplsModel in production; PlsModel and the RBF baseline
    for comparisons).
    """

    source_normalizer: Normalizer
    target_normalizer: Normalizer
    regressor: object
    n_source_points: int
    n_target_points: int

    def __post_init__(self):
        if self.regressor.input_dim != 3 * self.n_source_points:
            raise DimensionMismatch("regressor input dimension must equal 3 * L_s")
        if self.regressor.output_dim != 3 * self.n_target_points:
            raise DimensionMismatch("regressor output dimension must equal 3 * L_t")


def build_training_matrices(
    corr: CorrespondenceSet, rigid_alignment: bool = True
) -> Tuple[np.ndarray, np.ndarray, Normalizer, Normalizer]:
    """Normalize every pair and stack them into S (N x 3L_s) and T (N x 3L_t)."""
    src_norm = Normalizer.from_neutral(corr.neutral_source, "rigid" if rigid_alignment else "centroid")
    tgt_norm = Normalizer.from_neutral(corr.neutral_target, "fixed")
    S = normalize_points(src_norm, np.stack([f.points for f in corr.source_frames]))[0]
    T = normalize_points(tgt_norm, np.stack([f.points for f in corr.target_frames]))[0]
    return S, T, src_norm, tgt_norm


def default_components(n_pairs: int) -> int:
    return max(1, min(n_pairs - 1, 10))


def train_retargeter(
    corr: CorrespondenceSet,
    spec: KernelSpec = KernelSpec(),
    p: Optional[int] = None,
    rigid_alignment: bool = True,
) -> RetargetModel:
    """Fit a kernel PLS retargeter on a correspondence set."""
    if len(corr) < 2:
        raise TooFewPairs("at least two correspondence pairs are required")
    S, T, src_norm, tgt_norm = build_training_matrices(corr, rigid_alignment)
    if p is None:
        p = default_components(len(corr))
    regressor = fit_kpls(spec, S, T, p)
    return RetargetModel(src_norm, tgt_norm, regressor, corr.n_source_points, corr.n_target_points)


def retarget_points(model: RetargetModel, P) -> np.ndarray:
    """Retarget a stack of source frames (m x L_s x 3) to target positions (m x L_t x 3)."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 3 or P.shape[1:] != (model.n_source_points, 3):
        raise DimensionMismatch(
            f"expected frames with {model.n_source_points} points, got shape {P.shape}"
        )
    if P.shape[0] == 0:
        return np.zeros((0, model.n_target_points, 3))
    X = normalize_points(model.source_normalizer, P)[0]
    Y = model.regressor.predict(X)
    return denormalize_points(model.target_normalizer, Y)


def retarget_frame(model: RetargetModel, frame: FeaturePointFrame) -> FeaturePointFrame:
    if frame.n_points != model.n_source_points:
        raise DimensionMismatch(
            f"frame has {frame.n_points} points, model expects {model.n_source_points}"
        )
    return FeaturePointFrame(retarget_points(model, frame.points[None])[0], frame.time_index)


def retarget_sequence(
    model: RetargetModel, seq: Sequence[FeaturePointFrame]
) -> List[FeaturePointFrame]:
    """Retarget every frame; frames are independent, so the batch is predicted at once."""
    seq = list(seq)
    if not seq:
        return []
    bad = [f.time_index for f in seq if f.n_points != model.n_source_points]
    if bad:
        raise DimensionMismatch(
            f"frames {bad[:5]} do not have {model.n_source_points} feature points"
        )
    out = retarget_points(model, np.stack([f.points for f in seq]))
    return [FeaturePointFrame(pts, f.time_index) for pts, f in zip(out, seq)]


def apply_blendshapes(rig: FaceRig, w) -> np.ndarray:
    """Vertex positions ``neutral + sum_k w_k delta_k``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != rig.n_blendshapes:
        raise DimensionMismatch(f"{w.shape[-1]} weights for {rig.n_blendshapes} blendshapes")
    return rig.neutral_vertices + np.tensordot(w, rig.blendshape_deltas, axes=(-1, 0))


class BlendshapeSolver:
    """Bounded least-squares fits of blendshape weights to feature points.

    The unconstrained solution is computed from a cached pseudo-inverse and
    kept when it already lies in [0, 1]; otherwise the bounded problem is
    handed to BVLS.
    """

    def __init__(self, rig: FaceRig, tol: float = 1e-8):
        self.rig = rig
        self.tol = tol
        self.D = rig.feature_delta_matrix()
        self.neutral = rig.feature_points().points.ravel()
        self._pinv = np.linalg.pinv(self.D) if self.D.size else self.D.T
        self._full_rank = bool(self.D.size) and np.linalg.matrix_rank(self.D) == self.D.shape[1]

    def solve(self, target_points) -> np.ndarray:
        """Weights for one frame (L x 3) or a stack of frames (m x L x 3)."""
        P = np.asarray(target_points, dtype=np.float64)
        single = P.ndim == 2
        P = P.reshape((-1,) + P.shape[-2:])
        if P.shape[1:] != (self.rig.n_feature_points, 3):
            raise DimensionMismatch(
                f"expected {self.rig.n_feature_points} feature points, got shape {P.shape[1:]}"
            )
        B = P.reshape(P.shape[0], -1) - self.neutral
        W = np.zeros((P.shape[0], self.rig.n_blendshapes))
        for i, b in enumerate(B):
            w = self._pinv @ b if self._full_rank else None
            if w is None or np.any(w < 0.0) or np.any(w > 1.0):
                w = lsq_linear(self.D, b, bounds=(0.0, 1.0), method="bvls", tol=self.tol * 1e-2).x
            W[i] = np.clip(w, 0.0, 1.0)
        return W[0] if single else W


def solve_blendshape_weights(rig: FaceRig, target_points) -> np.ndarray:
    """Weights in [0, 1] whose blend best matches the target feature points."""
    pts = target_points.points if isinstance(target_points, FeaturePointFrame) else target_points
    return BlendshapeSolver(rig).solve(pts)
