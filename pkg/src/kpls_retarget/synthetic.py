"""Seeded synthetic face worlds standing in for captured data and production rigs.

A world holds two procedurally generated rigs, a correspondence set and
held-out source sequences.  Source expressions are blends of a few
"archetype" expressions (sparse blendshape weight vectors), so the
expression space is low-dimensional as in real performances.  Target
feature points follow from source feature points through a known map
that blends an affine map with a bounded sinusoidal warp; the blend
weight ``nonlinearity`` runs from 0 (exactly affine) to 1 (pure warp).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import List, Optional

import numpy as np

from .errors import InvalidConfig
from .retarget import CorrespondenceSet, FaceRig, FeaturePointFrame, apply_blendshapes


@dataclass(frozen=True)
class WorldConfig:
    """Shape of a synthetic world; the rig defaults follow the Man and Baby models."""

    vertices_a: int = 2904
    blendshapes_a: int = 48
    feature_points_a: int = 45
    vertices_b: int = 1969
    blendshapes_b: int = 44
    feature_points_b: int = 37
    n_pairs: int = 48
    n_archetypes: int = 6
    heldout_frames: int = 100
    nonlinearity: float = 0.5
    warp_frequency: float = 1.0
    identity: bool = False

    def __post_init__(self):
        for name in ("vertices_a", "blendshapes_a", "feature_points_a", "vertices_b",
                     "blendshapes_b", "feature_points_b", "n_archetypes"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be a positive integer")
        if self.feature_points_a > self.vertices_a or self.feature_points_b > self.vertices_b:
            raise InvalidConfig("a rig cannot have more feature points than vertices")
        if self.feature_points_a < 3 or self.feature_points_b < 3:
            raise InvalidConfig("at least three feature points are needed per rig")
        if self.n_pairs < 2:
            raise InvalidConfig("at least two correspondence pairs are needed")
        if self.heldout_frames < 0:
            raise InvalidConfig("heldout_frames must be non-negative")
        if not 0.0 <= self.nonlinearity <= 1.0:
            raise InvalidConfig("nonlinearity must lie in [0, 1]")
        if self.warp_frequency < 0:
            raise InvalidConfig("warp_frequency must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "WorldConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise InvalidConfig(f"unknown world settings: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            default = getattr(cls, key)
            try:
                kwargs[key] = type(default)(value)
            except (TypeError, ValueError):
                raise InvalidConfig(f"world setting {key!r} has invalid value {value!r}") from None
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    rig_a: FaceRig
    rig_b: FaceRig
    corr: CorrespondenceSet
    heldout: List[FeaturePointFrame]
    heldout_target: List[FeaturePointFrame]
    heldout_weights: np.ndarray
    ground_truth_map: dict
    seed: int
    config: WorldConfig


def _farthest_points(points: np.ndarray, count: int, start: int) -> np.ndarray:
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen, dtype=np.int64)


def make_rig(rng: np.random.Generator, n_vertices: int, n_blendshapes: int,
             n_feature_points: int, axes, prefix: str) -> FaceRig:
    """Half-ellipsoid face with mirrored Gaussian-falloff blendshapes."""
    axes = np.asarray(axes, dtype=np.float64)
    size = float(axes.max())
    dirs = rng.standard_normal((n_vertices, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs[:, 2] = np.abs(dirs[:, 2])
    neutral = dirs * axes
    mirror = np.array([-1.0, 1.0, 1.0])
    centers = neutral[rng.choice(n_vertices, size=n_blendshapes, replace=True)]
    radii = rng.uniform(0.2, 0.4, n_blendshapes) * size
    moves = rng.standard_normal((n_blendshapes, 3))
    moves /= np.linalg.norm(moves, axis=1, keepdims=True)
    amps = rng.uniform(0.05, 0.1, n_blendshapes) * size
    deltas = np.empty((n_blendshapes, n_vertices, 3))
    for k in range(n_blendshapes):
        near = np.exp(-np.sum((neutral - centers[k]) ** 2, axis=1) / (2 * radii[k] ** 2))
        far = np.exp(-np.sum((neutral - centers[k] * mirror) ** 2, axis=1) / (2 * radii[k] ** 2))
        deltas[k] = amps[k] * (near[:, None] * moves[k] + far[:, None] * moves[k] * mirror)
    fp = _farthest_points(neutral, n_feature_points, int(rng.integers(n_vertices)))
    names = tuple(f"{prefix}_{k:02d}" for k in range(n_blendshapes))
    return FaceRig(neutral, names, deltas, fp)


def _archetypes(rng, n_archetypes: int, n_blendshapes: int) -> np.ndarray:
    E = np.zeros((n_archetypes, n_blendshapes))
    active = max(1, min(n_blendshapes, 6))
    for j in range(n_archetypes):
        idx = rng.choice(n_blendshapes, size=active, replace=False)
        E[j, idx] = rng.uniform(0.3, 1.0, active)
    return E


def _mixtures(rng, count: int, n_archetypes: int) -> np.ndarray:
    A = np.zeros((count, n_archetypes))
    for i in range(count):
        k = int(rng.integers(1, min(3, n_archetypes) + 1))
        idx = rng.choice(n_archetypes, size=k, replace=False)
        A[i, idx] = rng.dirichlet(np.ones(k)) * rng.uniform(0.3, 1.0)
    return A


def _trajectories(rng, n_frames: int, n_archetypes: int) -> np.ndarray:
    """Smooth activation curves; each archetype fires in a few Gaussian bursts."""
    t = np.arange(n_frames, dtype=np.float64)
    A = np.zeros((n_frames, n_archetypes))
    if n_frames == 0:
        return A
    for j in range(n_archetypes):
        for _ in range(int(rng.integers(1, 4))):
            mid = rng.uniform(0, n_frames)
            width = rng.uniform(0.03, 0.12) * n_frames + 1.0
            A[:, j] += rng.uniform(0.3, 1.0) * np.exp(-0.5 * ((t - mid) / width) ** 2)
    total = A.sum(axis=1, keepdims=True)
    return A / np.maximum(total, 1.0)


class _WarpMap:
    """Source feature points -> target feature points.

    ``t = n_b + (1 - a) M d + a A (sin(Omega d + phi) - sin(phi))`` with
    ``d = s - n_a``.  Both terms have comparable magnitude, so ``a`` is the
    share of the map that is nonlinear.
    """

    def __init__(self, rng, rig_a: FaceRig, rig_b: FaceRig, delta_rms: float, config: WorldConfig):
        self.identity = config.identity
        self.n_a = rig_a.feature_points().points.ravel()
        self.n_b = rig_b.feature_points().points.ravel()
        da, db = self.n_a.size, self.n_b.size
        gain = (np.ptp(rig_b.neutral_vertices, axis=0).max()
                / np.ptp(rig_a.neutral_vertices, axis=0).max())
        self.M = rng.standard_normal((db, da)) * gain / np.sqrt(da)
        self.Omega = rng.standard_normal((db, da)) * config.warp_frequency / (np.sqrt(da) * delta_rms)
        self.phase = rng.uniform(0.0, 2 * np.pi, db)
        self.mix = float(config.nonlinearity)
        self.amplitude = gain * delta_rms

    def __call__(self, P: np.ndarray) -> np.ndarray:
        m = P.shape[0]
        if self.identity:
            return P.copy()
        delta = P.reshape(m, -1) - self.n_a
        out = self.n_b + (1.0 - self.mix) * (delta @ self.M.T)
        if self.mix:
            warp = np.sin(delta @ self.Omega.T + self.phase) - np.sin(self.phase)
            out = out + self.mix * self.amplitude * warp
        return out.reshape(m, -1, 3)

    def describe(self) -> dict:
        if self.identity:
            return {"type": "identity"}
        return {
            "type": "affine+sinusoid",
            "form": "t = n_b + (1-a) M (s - n_a) + a A (sin(Omega (s - n_a) + phi) - sin(phi))",
            "nonlinearity": self.mix,
            "warp_scale": float(self.amplitude),
            "exactly_affine": self.mix == 0.0,
        }


def gen_synthetic_world(config: Optional[WorldConfig] = None, seed: int = 0) -> SyntheticWorld:
    """Deterministically build a world from ``(config, seed)``."""
    config = config or WorldConfig()
    if not isinstance(seed, (int, np.integer)):
        raise InvalidConfig(f"seed must be an integer, got {seed!r}")
    rng = np.random.default_rng(int(seed))
    rig_a = make_rig(rng, config.vertices_a, config.blendshapes_a, config.feature_points_a,
                     (7.5, 10.0, 8.0), "a")
    if config.identity:
        rig_b = rig_a
    else:
        rig_b = make_rig(rng, config.vertices_b, config.blendshapes_b, config.feature_points_b,
                         (6.5, 6.5, 6.2), "b")

    E = _archetypes(rng, config.n_archetypes, config.blendshapes_a)
    n_pure = min(config.n_archetypes, config.n_pairs - 1)
    A_train = np.vstack([
        np.zeros((1, config.n_archetypes)),
        np.eye(config.n_archetypes)[:n_pure],
        _mixtures(rng, config.n_pairs - 1 - n_pure, config.n_archetypes),
    ])
    A_test = _trajectories(rng, config.heldout_frames, config.n_archetypes)
    W_train = A_train @ E
    W_test = A_test @ E

    fp_a = rig_a.feature_point_indices
    P_train = apply_blendshapes(rig_a, W_train)[:, fp_a]
    P_test = apply_blendshapes(rig_a, W_test)[:, fp_a] if len(W_test) else np.zeros((0, fp_a.size, 3))
    delta_rms = float(np.sqrt(np.mean((P_train - rig_a.neutral_vertices[fp_a]) ** 2)))
    warp = _WarpMap(rng, rig_a, rig_b, max(delta_rms, 1e-12), config)
    Q_train = warp(P_train)
    Q_test = warp(P_test) if len(P_test) else np.zeros((0, rig_b.n_feature_points, 3))

    corr = CorrespondenceSet(
        tuple(FeaturePointFrame(p, i) for i, p in enumerate(P_train)),
        tuple(FeaturePointFrame(q, i) for i, q in enumerate(Q_train)),
        neutral_index=0,
    )
    return SyntheticWorld(
        rig_a=rig_a,
        rig_b=rig_b,
        corr=corr,
        heldout=[FeaturePointFrame(p, i) for i, p in enumerate(P_test)],
        heldout_target=[FeaturePointFrame(q, i) for i, q in enumerate(Q_test)],
        heldout_weights=W_test,
        ground_truth_map=warp.describe(),
        seed=int(seed),
        config=config,
    )


def reversed_correspondence(corr: CorrespondenceSet) -> CorrespondenceSet:
    return CorrespondenceSet(corr.target_frames, corr.source_frames, corr.neutral_index)
