"""Evaluation protocol tests: median scaling, seven metrics, segment ATE."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthlab.evalmetrics import (
    Trajectory,
    ate_5frame,
    depth_metrics,
    evaluate_depth,
    median_scale,
)
from depthlab.geometry import PoseSE3, rotation_matrix

from oracles import ate_grid_search, depth_metrics_loops, lower_median_loops, median_scale_loops


def random_trajectory(rng, n=9, scale=1.0):
    poses = []
    for k in range(n):
        rot = rotation_matrix(rng.uniform(-0.1, 0.1, 3))
        poses.append(PoseSE3(rot, scale * rng.uniform(-2.0, 2.0, 3)))
    return Trajectory(tuple(range(n)), tuple(poses))


class TestMedianScale:
    def test_double_prediction_halves(self):
        rng = np.random.default_rng(1)
        gt = rng.uniform(1.0, 10.0, size=(8, 8))
        scaled, f = median_scale(2.0 * gt, gt)
        assert f == 0.5
        np.testing.assert_allclose(scaled, gt, atol=1e-12)

    def test_identity(self):
        rng = np.random.default_rng(2)
        gt = rng.uniform(1.0, 10.0, size=(8, 8))
        _, f = median_scale(gt, gt)
        assert f == 1.0

    def test_median_preserved_pre_cap(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            gt = rng.uniform(1.0, 20.0, size=(8, 8))
            pred = rng.uniform(0.1, 3.0, size=(8, 8))
            scaled, _ = median_scale(pred, gt, cap=np.inf)
            assert abs(lower_median_loops(scaled) - lower_median_loops(gt)) <= 1e-12

    def test_idempotent_when_no_cap(self):
        rng = np.random.default_rng(4)
        gt = rng.uniform(1.0, 10.0, size=(8, 8))
        pred = rng.uniform(0.5, 2.0, size=(8, 8))
        scaled, _ = median_scale(pred, gt, cap=np.inf)
        _, f2 = median_scale(scaled, gt, cap=np.inf)
        assert abs(f2 - 1.0) <= 1e-12

    def test_cap_applies_to_prediction(self):
        gt = np.full((4, 4), 100.0)
        pred = np.full((4, 4), 1.0)
        pred[0, 0] = 10.0  # scales to 1000, must cap at 150
        scaled, _ = median_scale(pred, gt, cap=150.0)
        assert scaled.max() == 150.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        pred = rng.uniform(0.2, 5.0, size=(8, 8))
        gt = rng.uniform(1.0, 160.0, size=(8, 8))
        scaled, f = median_scale(pred, gt)
        ref_scaled, ref_f = median_scale_loops(pred, gt)
        assert abs(f - ref_f) <= 1e-12
        np.testing.assert_allclose(scaled, ref_scaled, atol=1e-12)

    def test_empty_valid_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            median_scale(np.ones((2, 2)), np.zeros((2, 2)))

    def test_zero_median_rejected(self):
        gt = np.ones((2, 2))
        with pytest.raises(ValueError, match="median"):
            median_scale(np.zeros((2, 2)), gt)


class TestDepthMetrics:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(6)
        gt = rng.uniform(1.0, 10.0, size=(8, 8))
        rep = depth_metrics(gt, gt)
        assert (rep.abs_rel, rep.sq_rel, rep.rmse, rep.rmse_log) == (0.0, 0.0, 0.0, 0.0)
        assert (rep.delta1, rep.delta2, rep.delta3) == (1.0, 1.0, 1.0)

    def test_hand_case(self):
        pred = np.array([[2.0, 4.0]])
        gt = np.array([[1.0, 4.0]])
        rep = depth_metrics(pred, gt)
        assert rep.abs_rel == 0.5
        assert rep.sq_rel == 0.5
        assert rep.rmse == np.sqrt(0.5)
        assert (rep.delta1, rep.delta2, rep.delta3) == (0.5, 0.5, 0.5)

    def test_matches_loop_oracle_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            pred = rng.uniform(0.5, 12.0, size=(8, 8))
            gt = rng.uniform(1.0, 10.0, size=(8, 8))
            rep = depth_metrics(pred, gt)
            ref = depth_metrics_loops(pred, gt)
            for key, want in ref.items():
                assert abs(getattr(rep, key) - want) <= 1e-12, key

    def test_delta_symmetric_error_metrics_not(self):
        pred = np.array([[2.0, 6.0, 3.0]])
        gt = np.array([[1.0, 5.0, 4.0]])
        fwd = depth_metrics(pred, gt)
        rev = depth_metrics(gt, pred)
        assert (fwd.delta1, fwd.delta2, fwd.delta3) == (rev.delta1, rev.delta2, rev.delta3)
        assert fwd.abs_rel != rev.abs_rel
        assert fwd.sq_rel != rev.sq_rel

    def test_delta_comparison_is_strict(self):
        pred = np.array([[1.25]])
        gt = np.array([[1.0]])
        rep = depth_metrics(pred, gt)
        assert rep.delta1 == 0.0  # ratio exactly 1.25 fails the strict <

    def test_valid_mask_default_skips_holes(self):
        pred = np.full((2, 2), 2.0)
        gt = np.array([[2.0, 0.0], [np.nan, 2.0]])
        rep = depth_metrics(pred, gt)
        assert rep.n_pixels == 2
        assert rep.abs_rel == 0.0

    def test_evaluate_depth_two_x_ground_truth(self):
        rng = np.random.default_rng(8)
        gt = rng.uniform(1.0, 10.0, size=(8, 8))
        rep = evaluate_depth(2.0 * gt, gt)
        assert rep.abs_rel <= 1e-12
        assert rep.f_scale == 0.5
        assert rep.delta1 == 1.0


class TestATE:
    def test_identical_trajectories_score_zero(self):
        rng = np.random.default_rng(9)
        traj = random_trajectory(rng)
        mean, segments = ate_5frame(traj, traj)
        assert mean == 0.0
        assert all(s == 0.0 for s in segments)
        assert len(segments) == len(traj) - 4

    def test_uniform_scale_is_removed(self):
        rng = np.random.default_rng(10)
        gt = random_trajectory(rng)
        pred = Trajectory(gt.indices, tuple(PoseSE3(p.rotation, 3.0 * p.translation) for p in gt.poses))
        mean, _ = ate_5frame(pred, gt)
        assert mean <= 1e-12

    @given(st.floats(min_value=0.01, max_value=100.0))
    @settings(deadline=None, max_examples=25)
    def test_scale_invariance(self, c):
        rng = np.random.default_rng(11)
        gt = random_trajectory(rng)
        pred = random_trajectory(rng, scale=0.7)
        base, _ = ate_5frame(pred, gt)
        scaled_pred = Trajectory(pred.indices, tuple(PoseSE3(p.rotation, c * p.translation) for p in pred.poses))
        scaled, _ = ate_5frame(scaled_pred, gt)
        assert abs(scaled - base) <= 1e-9 * max(1.0, base)

    def test_matches_grid_search_oracle(self):
        rng = np.random.default_rng(12)
        gt = random_trajectory(rng, n=8)
        pred = Trajectory(
            gt.indices,
            tuple(
                PoseSE3(p.rotation, 1.8 * p.translation + rng.uniform(-0.05, 0.05, 3)) for p in gt.poses
            ),
        )
        mean, _ = ate_5frame(pred, gt)
        ref_mean, _ = ate_grid_search(pred.positions(), gt.positions())
        assert abs(mean - ref_mean) <= 1e-6

    def test_length_mismatch_rejected(self):
        rng = np.random.default_rng(13)
        a = random_trajectory(rng, n=6)
        b = random_trajectory(rng, n=7)
        with pytest.raises(ValueError, match="lengths"):
            ate_5frame(a, b)

    def test_short_trajectory_rejected(self):
        rng = np.random.default_rng(14)
        a = random_trajectory(rng, n=4)
        with pytest.raises(ValueError, match="at least 5"):
            ate_5frame(a, a)

    def test_indices_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            Trajectory((0, 0), (PoseSE3.identity(), PoseSE3.identity()))
