import numpy as np
import pytest

from kpls_retarget.retarget import CorrespondenceSet, FaceRig, FeaturePointFrame
from kpls_retarget.synthetic import WorldConfig, gen_synthetic_world

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda text: int(text.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_WORLD = WorldConfig(
    vertices_a=300, blendshapes_a=12, feature_points_a=15,
    vertices_b=250, blendshapes_b=10, feature_points_b=12,
    n_pairs=20, n_archetypes=4, heldout_frames=30,
)


@pytest.fixture(scope="session")
def small_world():
    return gen_synthetic_world(SMALL_WORLD, seed=7)


def random_corr(rng, n_pairs=8, n_source=5, n_target=4):
    """Correspondences between random point clouds (distinct, full-rank Gram)."""
    src = rng.standard_normal((n_pairs, n_source, 3))
    tgt = rng.standard_normal((n_pairs, n_target, 3))
    return CorrespondenceSet(
        tuple(FeaturePointFrame(p, i) for i, p in enumerate(src)),
        tuple(FeaturePointFrame(q, i) for i, q in enumerate(tgt)),
    )


def toy_rig(rng, n_vertices=6, n_blendshapes=3, features=(0, 2, 4, 5)):
    neutral = rng.standard_normal((n_vertices, 3))
    deltas = rng.standard_normal((n_blendshapes, n_vertices, 3))
    names = tuple(f"s{k}" for k in range(n_blendshapes))
    return FaceRig(neutral, names, deltas, np.array(features))
