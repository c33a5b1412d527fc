import numpy as np
import pytest

from flownerf.camgeo.Camera import CameraIntrinsics
from flownerf.diffcore.Tensor import Graph, Tensor, backward
from flownerf.exceptions.Exceptions import ContractException
from flownerf.losses.losses import (
    LossReport,
    LossWeights,
    chamfer_distance,
    loss_depth,
    loss_flow,
    loss_pointcloud,
    loss_rgb,
    loss_warp,
    sample_bilinear,
    total_loss,
)

from conftest import tiny_train_config

RAMP_K = CameraIntrinsics(10.0, 10.0, 3.5, 2.5, 8, 6)


def ramp_image(slope=0.1):
    u = np.arange(RAMP_K.width, dtype=np.float64)
    return np.broadcast_to((slope * u)[None, :, None], (RAMP_K.height, RAMP_K.width, 3)).copy()


class TestPhotometricAndFlow:

    def test_rgb_identical_is_zero(self):
        c = np.random.default_rng(0).random((10, 3))
        assert loss_rgb(c, c).item() == 0.0

    def test_rgb_uniform_offset_sums_channels(self):
        c = np.random.default_rng(1).random((10, 3)) * 0.5
        assert loss_rgb(c + 0.1, c).item() == pytest.approx(0.3, abs=1e-12)

    def test_rgb_max_distance(self):
        assert loss_rgb(np.zeros((1, 3)), np.ones((1, 3))).item() == pytest.approx(3.0)

    def test_rgb_shape_mismatch(self):
        with pytest.raises(ContractException):
            loss_rgb(np.zeros((4, 3)), np.zeros((5, 3)))

    def test_flow_uniform_pixel_error(self):
        target = np.random.default_rng(2).normal(size=(8, 2))
        valid = np.ones(8, dtype=bool)
        assert loss_flow(target, target, valid).item() == 0.0
        assert loss_flow(target + [1.0, 0.0], target, valid).item() == pytest.approx(1.0)

    def test_flow_half_masked(self):
        target = np.zeros((6, 2))
        predicted = np.tile([2.0, 0.0], (6, 1))
        predicted[3:] = 50.0
        valid = np.array([True, True, True, False, False, False])
        assert loss_flow(predicted, target, valid).item() == pytest.approx(2.0)

    def test_flow_empty_mask_contributes_zero(self, caplog):
        assert loss_flow(np.ones((3, 2)), np.zeros((3, 2)), np.zeros(3, dtype=bool)).item() == 0.0
        assert "no valid pixels" in caplog.text

    def test_depth(self):
        d = np.random.default_rng(3).uniform(0.1, 5.0, 20)
        assert loss_depth(d, d).item() == 0.0
        assert loss_depth(d + 0.5, d).item() == pytest.approx(0.5)

    def test_depth_matches_hand_sum(self):
        rng = np.random.default_rng(4)
        a, b = rng.random(7), rng.random(7)
        expected = sum(abs(x - y) for x, y in zip(a, b)) / 7
        assert loss_depth(a, b).item() == pytest.approx(expected, rel=1e-12)


class TestChamfer:

    def test_identical_clouds(self):
        cloud = np.random.default_rng(0).normal(size=(30, 3))
        assert chamfer_distance(cloud, cloud).item() == 0.0

    def test_small_shift_is_two_epsilon_squared(self):
        cloud = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 2.0], [1.0, 1.0, 3.0]])
        eps = 1e-2
        value = chamfer_distance(cloud + [eps, 0.0, 0.0], cloud).item()
        assert value == pytest.approx(2 * eps ** 2, rel=1e-9)

    @pytest.mark.parametrize("moving,fixed", [(np.zeros((0, 3)), np.ones((2, 3))), (np.ones((2, 3)), np.zeros((0, 3)))])
    def test_empty_cloud(self, moving, fixed):
        with pytest.raises(ContractException):
            chamfer_distance(moving, fixed)

    def test_same_oracle_frame_with_its_pose(self, oracle_dataset):
        ds = oracle_dataset
        pose = ds.gt_poses[2]
        value = loss_pointcloud(ds.depths[2], ds.depths[2], pose, pose, ds.intrinsics).item()
        assert value < 1e-6

    def test_correct_relative_pose_beats_perturbed(self, oracle_dataset):
        ds = oracle_dataset
        correct = loss_pointcloud(ds.depths[1], ds.depths[2], ds.gt_poses[1], ds.gt_poses[2], ds.intrinsics).item()
        perturbed_pose = ds.gt_poses[2] + [0.0, 0.0, 0.0, 0.0, 0.0, 0.5]
        perturbed = loss_pointcloud(ds.depths[1], ds.depths[2], ds.gt_poses[1], perturbed_pose, ds.intrinsics).item()
        assert correct < perturbed

    def test_gradients_reach_poses(self, oracle_dataset):
        ds = oracle_dataset
        pose_i = Tensor(ds.gt_poses[0] + 0.01, requires_grad=True)
        pose_j = Tensor(ds.gt_poses[1], requires_grad=True)
        with Graph():
            backward(loss_pointcloud(ds.depths[0], ds.depths[1], pose_i, pose_j, ds.intrinsics,
                                     num_points=64, rng=np.random.default_rng(0)))
        assert np.abs(pose_i.grad).sum() > 0
        assert np.abs(pose_j.grad).sum() > 0


class TestWarp:

    def test_bilinear_on_ramp(self):
        values, inside = sample_bilinear(ramp_image(), np.array([[2.25, 1.0], [7.0, 5.0], [7.5, 0.0]]))
        np.testing.assert_allclose(values.values[:2, 0], [0.225, 0.7])
        np.testing.assert_array_equal(inside, [True, True, False])

    def test_identity_pose_same_image(self):
        image = np.random.default_rng(0).random((RAMP_K.height, RAMP_K.width, 3))
        depth = np.full((RAMP_K.height, RAMP_K.width), 2.0)
        assert loss_warp(image, image, depth, np.zeros(6), np.zeros(6), RAMP_K).item() == pytest.approx(0.0, abs=1e-12)

    def test_one_pixel_shift_on_ramp(self):
        # camera j sits 0.2 to the left of i; at depth 2 and fx = 10 every point moves one pixel right
        depth = np.full((RAMP_K.height, RAMP_K.width), 2.0)
        pose_j = np.array([0.0, 0.0, 0.0, -0.2, 0.0, 0.0])
        value = loss_warp(ramp_image(0.1), ramp_image(0.1), depth, np.zeros(6), pose_j, RAMP_K).item()
        assert value == pytest.approx(3 * 0.1, abs=1e-9)

    def test_all_warps_out_of_bounds(self, caplog):
        depth = np.full((RAMP_K.height, RAMP_K.width), 2.0)
        pose_j = np.array([0.0, 0.0, 0.0, -20.0, 0.0, 0.0])
        assert loss_warp(ramp_image(), ramp_image(), depth, np.zeros(6), pose_j, RAMP_K).item() == 0.0
        assert "left the target frame" in caplog.text

    def test_gradient_reaches_pose(self):
        depth = np.full((RAMP_K.height, RAMP_K.width), 2.0)
        pose_j = Tensor([0.0, 0.0, 0.0, -0.13, 0.0, 0.0], requires_grad=True)
        with Graph():
            backward(loss_warp(ramp_image(), ramp_image(), depth, np.zeros(6), pose_j, RAMP_K))
        assert pose_j.grad[3] != 0.0


class TestTotal:

    def test_all_zero(self):
        parts = dict(rgb=0.0, flow=0.0, depth=0.0, pc=0.0, rgb_s=0.0)
        assert total_loss(parts, LossWeights()).item() == 0.0

    def test_default_weights(self):
        parts = dict(rgb=1.0, flow=1.0, depth=1.0, pc=1.0, rgb_s=1.0)
        assert total_loss(parts, LossWeights()).item() == pytest.approx(3.09)

    def test_zero_weights_leave_rgb(self):
        parts = dict(rgb=0.7, flow=5.0, depth=5.0, pc=5.0, rgb_s=5.0)
        weights = LossWeights(flow=0.0, depth=0.0, pc=0.0, warp=0.0)
        assert total_loss(parts, weights).item() == pytest.approx(0.7)

    def test_aux_flow_colour_term(self):
        parts = dict(rgb=1.0, rgb_flow=0.5)
        assert total_loss(parts, LossWeights()).item() == pytest.approx(1.5)

    def test_aux_flow_colour_weight_from_config(self):
        weights = LossWeights.from_config(tiny_train_config(lambda_rgb_flow=0.2))
        assert total_loss(dict(rgb=1.0, rgb_flow=0.5), weights).item() == pytest.approx(1.1)

    def test_weights_from_config(self, tiny_config):
        weights = LossWeights.from_config(tiny_config)
        assert (weights.flow, weights.depth, weights.pc, weights.warp) == (
            tiny_config.lambda_flow, tiny_config.lambda_depth, tiny_config.lambda_pc, tiny_config.lambda_warp)

    def test_report(self):
        parts = dict(rgb=Tensor(1.0), flow=Tensor(2.0))
        report = LossReport.from_parts(parts, Tensor(3.0))
        assert report.as_dict()["flow"] == 2.0
        assert report.total == 3.0
        assert report.pc == 0.0
