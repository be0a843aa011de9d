import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SMALL_WORLD
from kpls_retarget import evaluation
from kpls_retarget.errors import DimensionMismatch, InvalidConfig, SingularSystem, TooFewPairs
from kpls_retarget.evaluation import (
    compare_on_world,
    cyclic_retarget,
    displacement_error,
    fit_rbf_interpolator,
    improvement_percent,
    loo_curve,
    per_frame_errors,
    rbf_baseline_fit,
    rbf_baseline_predict,
    select_components_loo,
    train_pls_retargeter,
)
from kpls_retarget.kernel import KernelSpec
from kpls_retarget.retarget import CorrespondenceSet, FeaturePointFrame, train_retargeter
from kpls_retarget.synthetic import WorldConfig, gen_synthetic_world, reversed_correspondence

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def vertex_sequences(rng, frames=3, vertices=5):
    return rng.standard_normal((frames, vertices, 3)), rng.standard_normal((frames, vertices, 3))


class TestDisplacementError:
    def test_identical(self, rng):
        A, _ = vertex_sequences(rng)
        assert displacement_error(A, A.copy()) == 0.0

    def test_single_vertex(self):
        assert displacement_error([[[0.0, 0.0, 0.0]]], [[[3.0, 4.0, 0.0]]]) == 5.0

    def test_constant_offset(self, rng):
        A, _ = vertex_sequences(rng, frames=4, vertices=7)
        c = np.array([0.3, -1.1, 2.0])
        assert displacement_error(A, A + c) == pytest.approx(np.linalg.norm(c), abs=1e-12)

    def test_shape_errors(self, rng):
        A, B = vertex_sequences(rng)
        with pytest.raises(DimensionMismatch):
            displacement_error(A, B[:2])
        with pytest.raises(DimensionMismatch):
            displacement_error(A, B[:, :4])
        with pytest.raises(DimensionMismatch):
            displacement_error([], [])

    def test_per_frame_recombine(self, rng):
        A, B = vertex_sequences(rng, frames=6)
        e = per_frame_errors(A, B)
        assert displacement_error(A, B) == pytest.approx(np.sqrt(np.mean(e**2)), rel=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, frames=st.integers(1, 6), vertices=st.integers(1, 10))
    def test_metric_properties(self, seed, frames, vertices):
        rng = np.random.default_rng(seed)
        A, B = vertex_sequences(rng, frames, vertices)
        e = displacement_error(A, B)
        assert e >= 0
        assert e == pytest.approx(displacement_error(B, A), rel=1e-15)
        assert displacement_error(A, A) == 0.0
        assert e > 1e-12
        perm = rng.permutation(vertices)
        assert displacement_error(A[:, perm], B[:, perm]) == pytest.approx(e, rel=1e-12)


class TestImprovement:
    def test_sixty_one_percent(self):
        assert improvement_percent(1.0, 0.39) == pytest.approx(61.0, abs=1e-12)

    def test_edges(self):
        assert improvement_percent(2.5, 2.5) == 0.0
        assert improvement_percent(2.5, 0.0) == 100.0
        with pytest.raises(ZeroDivisionError):
            improvement_percent(0.0, 1.0)
        with pytest.raises(ValueError):
            improvement_percent(1.0, -0.1)


class TestRbfBaseline:
    def test_interpolates_training_pairs(self, small_world):
        model = rbf_baseline_fit(small_world.corr)
        for s, t in zip(small_world.corr.source_frames, small_world.corr.target_frames):
            np.testing.assert_allclose(rbf_baseline_predict(model, s).points, t.points, atol=1e-8)

    def test_single_pair_is_constant(self, rng):
        S, T = rng.standard_normal((1, 4)), rng.standard_normal((1, 2))
        model = fit_rbf_interpolator(S, T)
        np.testing.assert_allclose(model.predict(rng.standard_normal((3, 4))), np.repeat(T, 3, axis=0))

    def test_duplicate_inputs(self, rng):
        S = rng.standard_normal((4, 3))
        S[2] = S[0]
        with pytest.raises(SingularSystem):
            fit_rbf_interpolator(S, rng.standard_normal((4, 2)))

    def test_preserves_time_index(self, small_world):
        model = rbf_baseline_fit(small_world.corr)
        frame = dataclasses.replace(small_world.heldout[3], time_index=42)
        assert rbf_baseline_predict(model, frame).time_index == 42

    def test_kernel_pls_beats_baseline_on_held_out_frames(self):
        wins = 0
        for seed in range(10):
            world = gen_synthetic_world(WorldConfig(), seed)
            reports = compare_on_world(world, methods=("kpls", "rbf_baseline"))
            wins += reports["kpls_rbf"].e_d <= reports["rbf_baseline"].e_d
        assert wins >= 8


class TestCyclic:
    def test_identity_models(self):
        world = gen_synthetic_world(dataclasses.replace(SMALL_WORLD, identity=True), seed=1)
        model = train_retargeter(world.corr, KernelSpec("linear"), len(world.corr) - 1,
                                 rigid_alignment=False)
        report = cyclic_retarget(model, model, world.heldout, world.rig_a)
        assert report.e_d <= 1e-6
        assert report.frame_count == len(world.heldout)
        assert report.vertex_count == world.rig_a.n_vertices

    def test_affine_world_linear_recovery(self):
        world = gen_synthetic_world(dataclasses.replace(SMALL_WORLD, nonlinearity=0.0), seed=2)
        assert world.ground_truth_map["exactly_affine"]
        p = len(world.corr) - 1
        reports = compare_on_world(world, methods=("kpls",), spec=KernelSpec("linear"), p=p)
        assert reports["kpls_linear"].e_d <= 1e-4 * world.rig_a.bounding_box_diagonal()

    def test_report_consistent(self, small_world):
        ab = train_retargeter(small_world.corr, rigid_alignment=False)
        ba = train_retargeter(reversed_correspondence(small_world.corr), rigid_alignment=False)
        report = cyclic_retarget(ab, ba, small_world.heldout, small_world.rig_a, "kpls_rbf")
        e = np.array(report.per_frame_errors)
        assert report.e_d == pytest.approx(np.sqrt(np.mean(e**2)), rel=1e-12)
        assert report.to_dict()["method"] == "kpls_rbf"

    def test_reproducible(self, small_world):
        a = compare_on_world(small_world)
        b = compare_on_world(gen_synthetic_world(SMALL_WORLD, seed=7))
        assert a == b

    def test_empty_sequence(self, small_world):
        model = train_retargeter(small_world.corr)
        with pytest.raises(DimensionMismatch):
            cyclic_retarget(model, model, [], small_world.rig_a)

    def test_unknown_method(self, small_world):
        with pytest.raises(InvalidConfig):
            compare_on_world(small_world, methods=("nearest",))

    def test_linear_pls_retargeter(self, small_world):
        model = train_pls_retargeter(small_world.corr)
        assert model.regressor.input_dim == 3 * SMALL_WORLD.feature_points_a


class TestComponentSelection:
    def test_one_dimensional_linear(self, rng):
        x = rng.standard_normal((10, 1))
        assert select_components_loo((x, 3 * x + 1), KernelSpec("linear"), 3) == 1

    def test_rank_two(self, rng):
        S = rng.standard_normal((12, 2)) @ rng.standard_normal((2, 5))
        T = S @ rng.standard_normal((5, 3))
        curve = loo_curve(S, T, KernelSpec("linear"), 5)
        assert curve[0] > 1e-6
        assert curve[1] < 1e-20
        assert int(np.argmin(curve)) == 1
        assert select_components_loo((S, T), KernelSpec("linear"), 5) == 2

    def test_tie_goes_to_smaller(self, monkeypatch):
        monkeypatch.setattr(evaluation, "loo_curve", lambda *a: np.array([0.9, 0.5, 0.5 + 1e-13, 0.7]))
        assert select_components_loo((np.zeros((4, 1)), np.zeros((4, 1))), KernelSpec(), 4) == 2

    def test_too_few_pairs(self, rng):
        with pytest.raises(TooFewPairs):
            select_components_loo((rng.standard_normal((2, 2)), rng.standard_normal((2, 2))))

    def test_on_correspondences(self, small_world):
        p = select_components_loo(small_world.corr, KernelSpec("rbf"), 4, rigid_alignment=False)
        assert 1 <= p <= 4


class TestSyntheticWorld:
    def test_default_rigs_follow_table_one(self):
        cfg = WorldConfig()
        assert (cfg.vertices_a, cfg.blendshapes_a, cfg.feature_points_a) == (2904, 48, 45)
        assert (cfg.vertices_b, cfg.blendshapes_b, cfg.feature_points_b) == (1969, 44, 37)
        world = gen_synthetic_world(dataclasses.replace(cfg, heldout_frames=2), seed=0)
        rig = world.rig_a
        assert (rig.n_vertices, rig.n_blendshapes, rig.n_feature_points) == (2904, 48, 45)
        rig = world.rig_b
        assert (rig.n_vertices, rig.n_blendshapes, rig.n_feature_points) == (1969, 44, 37)
        assert len(world.corr) == cfg.n_pairs

    def test_same_seed_bit_identical(self):
        a = gen_synthetic_world(SMALL_WORLD, 11)
        b = gen_synthetic_world(SMALL_WORLD, 11)
        assert np.array_equal(a.rig_a.blendshape_deltas, b.rig_a.blendshape_deltas)
        assert np.array_equal(a.rig_b.neutral_vertices, b.rig_b.neutral_vertices)
        for x, y in zip(a.corr.target_frames + tuple(a.heldout), b.corr.target_frames + tuple(b.heldout)):
            assert np.array_equal(x.points, y.points)
        c = gen_synthetic_world(SMALL_WORLD, 12)
        assert not np.array_equal(a.rig_a.neutral_vertices, c.rig_a.neutral_vertices)

    def test_zero_nonlinearity_is_affine(self):
        world = gen_synthetic_world(dataclasses.replace(SMALL_WORLD, nonlinearity=0.0), 3)
        S = np.stack([f.points.ravel() for f in world.corr.source_frames + tuple(world.heldout)])
        T = np.stack([f.points.ravel() for f in world.corr.target_frames + tuple(world.heldout_target)])
        A = np.column_stack([S, np.ones(len(S))])
        coef = np.linalg.lstsq(A, T, rcond=None)[0]
        assert np.max(np.abs(A @ coef - T)) < 1e-10

    def test_nonlinear_world_is_not_affine(self, small_world):
        S = np.stack([f.points.ravel() for f in small_world.corr.source_frames + tuple(small_world.heldout)])
        T = np.stack([f.points.ravel() for f in small_world.corr.target_frames
                      + tuple(small_world.heldout_target)])
        A = np.column_stack([S, np.ones(len(S))])
        coef = np.linalg.lstsq(A, T, rcond=None)[0]
        assert np.max(np.abs(A @ coef - T)) > 1e-3

    def test_identity_world(self):
        world = gen_synthetic_world(dataclasses.replace(SMALL_WORLD, identity=True), 0)
        assert world.rig_b is world.rig_a
        for s, t in zip(world.corr.source_frames, world.corr.target_frames):
            assert np.array_equal(s.points, t.points)

    @pytest.mark.parametrize("bad", [
        {"nonlinearity": 1.5},
        {"nonlinearity": -0.1},
        {"n_pairs": 1},
        {"feature_points_a": 2},
        {"vertices_b": 10, "feature_points_b": 20},
        {"heldout_frames": -1},
        {"blendshapes_a": 0},
    ])
    def test_invalid_config(self, bad):
        with pytest.raises(InvalidConfig):
            dataclasses.replace(SMALL_WORLD, **bad)

    def test_config_dict(self):
        cfg = WorldConfig.from_dict({"nonlinearity": 0.25, "identity": True})
        assert cfg.nonlinearity == 0.25 and cfg.identity
        assert WorldConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(InvalidConfig):
            WorldConfig.from_dict({"colour": 3})
        with pytest.raises(InvalidConfig):
            gen_synthetic_world(SMALL_WORLD, seed=1.5)

    def test_heldout_shapes(self, small_world):
        assert len(small_world.heldout) == SMALL_WORLD.heldout_frames
        assert small_world.heldout_weights.shape == (SMALL_WORLD.heldout_frames, SMALL_WORLD.blendshapes_a)
        assert all(f.n_points == SMALL_WORLD.feature_points_b for f in small_world.heldout_target)
