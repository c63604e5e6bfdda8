import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wjmixer.metrics import (
    MetricsReport, auc, evaluate_poses, hard_pose_mean, mpjpe, pa_mpjpe, pck,
    per_joint_errors, procrustes_align,
)
from wjmixer.tensor import Rng


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


class TestMpjpe:
    def test_zero_for_equal(self):
        y = Rng(0).normal(0, 1, (16, 3))
        assert mpjpe(y, y) == 0.0

    def test_three_four_five(self):
        gt = Rng(1).normal(0, 1, (16, 3))
        pred = gt + np.array([3.0, 0.0, 4.0])
        assert mpjpe(pred, gt) == pytest.approx(5.0, abs=1e-12)

    def test_matches_per_joint_loop_oracle(self):
        rng = Rng(2)
        pred, gt = rng.normal(0, 1, (16, 3)), rng.normal(0, 1, (16, 3))
        loop = sum(math.sqrt(sum((pred[i, k] - gt[i, k]) ** 2 for k in range(3)))
                   for i in range(16)) / 16
        assert mpjpe(pred, gt) == pytest.approx(loop, rel=1e-14)


class TestProcrustes:
    def test_exact_recovery_of_similarity_transform(self):
        rng = Rng(3)
        gt = rng.normal(0, 100, (16, 3))
        rot = rotation_matrix([1.0, 0.5, -0.3], 1.1)
        pred = 2.0 * gt @ rot.T + np.array([10.0, -5.0, 3.0])
        assert pa_mpjpe(pred, gt) <= 1e-9

    def test_reflection_not_recovered(self):
        rng = Rng(4)
        gt = rng.normal(0, 100, (16, 3))
        pred = gt.copy()
        pred[:, 2] *= -1.0
        aligned = procrustes_align(pred, gt)
        # only proper rotations allowed, so a reflected pose keeps residual
        assert mpjpe(aligned, gt) > 1.0

    def test_aligned_never_worse_than_unaligned(self):
        rng = Rng(5)
        for _ in range(20):
            gt = rng.normal(0, 100, (16, 3))
            pred = gt + rng.normal(0, 20, (16, 3))
            assert pa_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9

    def test_invariant_to_pretransform_of_pred(self):
        rng = Rng(6)
        gt = rng.normal(0, 100, (16, 3))
        pred = gt + rng.normal(0, 15, (16, 3))
        base = pa_mpjpe(pred, gt)
        rot = rotation_matrix([0.2, 1.0, 0.4], -0.7)
        moved = 3.0 * pred @ rot.T + np.array([5.0, 6.0, 7.0])
        assert pa_mpjpe(moved, gt) == pytest.approx(base, abs=1e-9)

    def test_degenerate_gt_rejected(self):
        pred = Rng(7).normal(0, 1, (5, 3))
        with pytest.raises(ValueError, match="coincident"):
            procrustes_align(pred, np.zeros((5, 3)))

    def test_too_few_joints_rejected(self):
        with pytest.raises(ValueError, match=">= 3"):
            procrustes_align(np.ones((2, 3)), np.ones((2, 3)))


class TestPck:
    def test_hand_case(self):
        assert pck([100.0, 200.0], 150.0) == 0.5

    def test_all_zero_errors(self):
        assert pck([0.0] * 7, 0.0) == 1.0
        assert pck([0.0] * 7, 150.0) == 1.0

    def test_boundary_is_closed(self):
        assert pck([150.0], 150.0) == 1.0

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(min_value=0, max_value=400), min_size=1, max_size=30),
           st.floats(min_value=0, max_value=150), st.floats(min_value=0, max_value=150))
    def test_monotone_in_threshold(self, errors, t1, t2):
        lo, hi = min(t1, t2), max(t1, t2)
        assert pck(errors, lo) <= pck(errors, hi)


class TestAuc:
    def test_all_zero(self):
        assert auc([0.0, 0.0]) == 1.0

    def test_all_beyond_range(self):
        assert auc([151.0, 400.0]) == 0.0

    def test_single_joint_75mm(self):
        # thresholds 75, 80, ..., 150 pass: 16 of the 31 grid points
        assert auc([75.0]) == pytest.approx(16.0 / 31.0, abs=1e-15)

    def test_bracketed_by_endpoint_pcks(self):
        errors = Rng(8).uniform(0.0, 300.0, 50)
        a = auc(errors)
        assert pck(errors, 0.0) <= a <= pck(errors, 150.0)


class TestHardPose:
    def test_equal_errors(self):
        assert hard_pose_mean([3.0] * 20) == 3.0

    def test_single_outlier_dominates(self):
        errs = [0.0] * 19 + [100.0]
        assert hard_pose_mean(errs) == 100.0  # ceil(0.05*20) = 1 sample

    def test_forty_samples_worst_two(self):
        rng = Rng(9)
        errs = list(rng.uniform(0, 50, 40))
        expected = float(np.mean(sorted(errs, reverse=True)[:2]))
        assert hard_pose_mean(errs) == pytest.approx(expected, rel=1e-14)

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match=">= 20"):
            hard_pose_mean([1.0] * 19)


class TestEvaluatePoses:
    def test_pa_never_exceeds_raw(self):
        rng = Rng(10)
        gts = rng.normal(0, 100, (30, 16, 3))
        preds = gts + rng.normal(0, 30, (30, 16, 3))
        report = evaluate_poses(preds, gts)
        assert report.pa_mpjpe_mm <= report.mpjpe_mm + 1e-9
        assert 0.0 <= report.pck_150 <= 1.0
        assert 0.0 <= report.auc <= 1.0
        assert report.hard5_mpjpe_mm is not None
        assert len(report.per_sample_errors) == 30

    def test_root_relative_resubtraction(self):
        rng = Rng(11)
        gts = rng.normal(0, 100, (5, 16, 3))
        preds = gts.copy()
        shifted = preds + np.array([50.0, 60.0, -70.0])  # constant offset
        report = evaluate_poses(shifted, gts)
        assert report.mpjpe_mm == pytest.approx(0.0, abs=1e-9)

    def test_hard5_none_when_few_samples(self):
        rng = Rng(12)
        gts = rng.normal(0, 100, (5, 16, 3))
        report = evaluate_poses(gts, gts)
        assert report.hard5_mpjpe_mm is None

    def test_report_json_fields(self):
        rng = Rng(13)
        gts = rng.normal(0, 100, (4, 16, 3))
        report = evaluate_poses(gts, gts)
        doc = report.to_dict()
        assert set(doc) == {"mpjpe_mm", "pa_mpjpe_mm", "pck_150", "auc",
                            "hard5_mpjpe_mm", "per_sample_errors", "pck_curve"}
        assert len(doc["pck_curve"]) == 31
