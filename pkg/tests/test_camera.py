import numpy as np
import pytest
from scipy.linalg import expm

from flownerf.camgeo.Camera import (
    CameraIntrinsics,
    PoseMatrix,
    backproject_camera,
    backproject_world,
    pose_matrix_np,
    project,
    relative_pose,
    rodrigues,
)
from flownerf.camgeo.sampling import build_sample_batch, sample_pixels, stratified_distances
from flownerf.diffcore.Tensor import Tensor
from flownerf.diffcore.gradcheck import check_gradients
from flownerf.exceptions.Exceptions import ConfigException, SamplingException

from conftest import tiny_train_config

UNIT_K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 4, 4)


def skew(r):
    return np.array([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]])


class TestIntrinsics:

    def test_valid(self, small_intrinsics):
        np.testing.assert_array_equal(small_intrinsics.matrix[2], [0.0, 0.0, 1.0])

    @pytest.mark.parametrize("values", [
        (0.0, 1.0, 2.0, 2.0, 4, 4),
        (1.0, 1.0, 4.0, 2.0, 4, 4),
        (1.0, 1.0, 2.0, 0.0, 4, 4),
    ])
    def test_invalid(self, values):
        with pytest.raises(ConfigException):
            CameraIntrinsics(*values).validate()


class TestRodrigues:

    def test_zero_rotation_copies_translation(self):
        pose = rodrigues([0.0, 0.0, 0.0, 1.0, 2.0, 3.0])
        np.testing.assert_array_equal(pose.R.values, np.eye(3))
        np.testing.assert_array_equal(pose.t.values, [1.0, 2.0, 3.0])

    def test_half_turn_about_x(self):
        R, _ = pose_matrix_np([np.pi, 0.0, 0.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(R, np.diag([1.0, -1.0, -1.0]), atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_matrix_exponential(self, seed):
        r = np.random.default_rng(seed).normal(size=3)
        R, _ = pose_matrix_np(np.concatenate([r, np.zeros(3)]))
        np.testing.assert_allclose(R, expm(skew(r)), atol=1e-9)

    def test_orthonormal_for_random_and_edge_angles(self):
        rng = np.random.default_rng(0)
        axes = rng.normal(size=(1000, 3))
        axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
        angles = rng.uniform(0.0, 2 * np.pi, 1000)
        angles[:4] = [0.0, 1e-10, 1e-6, np.pi - 1e-6]
        for axis, angle in zip(axes, angles):
            R, _ = pose_matrix_np(np.concatenate([axis * angle, np.zeros(3)]))
            np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)

    def test_continuous_across_small_angle_branch(self):
        below, _ = pose_matrix_np([0.0, 0.0, 0.99e-8, 0.0, 0.0, 0.0])
        above, _ = pose_matrix_np([0.0, 0.0, 1.01e-8, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(below, above, atol=1e-9)

    def test_gradient_through_projection(self):
        v = Tensor([0.1, -0.2, 0.05, 0.3, -0.1, 0.2], requires_grad=True)
        points = np.array([[0.2, -0.1, 2.0], [-0.4, 0.3, 3.0]])
        K = CameraIntrinsics(50.0, 50.0, 20.0, 15.0, 40, 30)

        def loss():
            pixels, _ = project(rodrigues(v).inverse().apply(points), K)
            return (pixels * pixels).sum()

        assert check_gradients(loss, [v]) < 1e-4

    def test_relative_pose_maps_camera_i_into_camera_j(self):
        pose_i = rodrigues([0.1, 0.2, -0.1, 1.0, 0.0, 0.5])
        pose_j = rodrigues([-0.2, 0.1, 0.0, 0.0, 1.0, -0.5])
        x = np.array([[0.3, -0.2, 2.0]])
        direct = pose_j.inverse().apply(pose_i.apply(x)).values
        np.testing.assert_allclose(relative_pose(pose_i, pose_j).apply(x).values, direct, atol=1e-12)


class TestBackprojection:

    def test_principal_ray(self):
        identity = PoseMatrix(Tensor(np.eye(3)), Tensor(np.zeros(3)))
        points, dirs = backproject_world(np.array([[0.0, 0.0]]), UNIT_K, identity, np.array([[1.0]]))
        np.testing.assert_allclose(points.values[0, 0], [0.0, 0.0, 1.0])
        np.testing.assert_allclose(dirs.values[0], [0.0, 0.0, 1.0])

    def test_translated_origin(self):
        pose = PoseMatrix(Tensor(np.eye(3)), Tensor([0.0, 0.0, 5.0]))
        points, _ = backproject_world(np.array([[0.0, 0.0]]), UNIT_K, pose, np.array([[1.0]]))
        np.testing.assert_allclose(points.values[0, 0], [0.0, 0.0, 6.0])

    def test_distance_along_normalised_ray(self):
        identity = PoseMatrix(Tensor(np.eye(3)), Tensor(np.zeros(3)))
        z = np.sqrt(2.0)
        points, _ = backproject_world(np.array([[1.0, 0.0]]), UNIT_K, identity, np.array([[z]]))
        np.testing.assert_allclose(points.values[0, 0], [1.0, 0.0, 1.0], atol=1e-12)

    def test_camera_points_perspective(self):
        points = backproject_camera(np.array([[0.0, 0.0]]), UNIT_K, np.array([[0.5]]))
        np.testing.assert_allclose(points.values[0, 0], [0.0, 0.0, 0.5])

    def test_camera_points_orthogonal(self, small_intrinsics):
        K = small_intrinsics
        points = backproject_camera(np.array([[3.0, 10.0]]), K, np.array([[0.7]]), mode="orthogonal", ortho_scale=2.0)
        expected = [(3.0 - K.cx) / K.width * 2.0, (10.0 - K.cy) / K.height * 2.0, 0.7]
        np.testing.assert_allclose(points.values[0, 0], expected)

    def test_pixel_outside_image(self, small_intrinsics):
        with pytest.raises(SamplingException):
            backproject_camera(np.array([[24.0, 0.0]]), small_intrinsics, np.array([[1.0]]))


class TestProject:

    def test_principal_point(self):
        pixels, valid = project(Tensor([[0.0, 0.0, 1.0]]), UNIT_K)
        np.testing.assert_allclose(pixels.values, [[0.0, 0.0]])
        assert valid.all()

    def test_focal_offset(self):
        K = CameraIntrinsics(100.0, 100.0, 50.0, 40.0, 100, 80)
        pixels, _ = project(Tensor([[1.0, 0.0, 1.0]]), K)
        assert pixels.values[0, 0] == pytest.approx(150.0)

    def test_points_behind_camera_are_masked(self):
        pixels, valid = project(Tensor([[0.0, 0.0, 1.0], [0.1, 0.1, 0.0], [0.1, 0.1, -2.0]]), UNIT_K)
        np.testing.assert_array_equal(valid, [True, False, False])
        assert np.all(np.isfinite(pixels.values))

    @pytest.mark.parametrize("mode", ["perspective", "orthogonal"])
    def test_round_trip_with_backprojection(self, small_intrinsics, mode):
        pixels = sample_pixels(small_intrinsics.width, small_intrinsics.height, 50, np.random.default_rng(2))
        d = np.random.default_rng(3).uniform(0.1, 2.0, (50, 1))
        points = backproject_camera(pixels, small_intrinsics, d, mode=mode)
        projected, _ = project(points.reshape(50, 3), small_intrinsics, mode=mode)
        np.testing.assert_allclose(projected.values, pixels, atol=1e-10)


class TestSharedSampling:

    def test_distances_strictly_increasing_within_bounds(self):
        z = stratified_distances(64, 128, 0.01, 10.0, np.random.default_rng(0))
        assert np.all(np.diff(z, axis=-1) > 0)
        assert z.min() >= 0.01 and z.max() <= 10.0

    def test_midpoints_without_jitter_are_deterministic(self):
        np.testing.assert_array_equal(stratified_distances(3, 8, 0.01, 10.0), stratified_distances(3, 8, 0.01, 10.0))

    def test_branches_share_rays(self, small_intrinsics):
        config = tiny_train_config(samples_per_ray=16)
        pose = rodrigues([0.05, -0.1, 0.02, 0.2, 0.1, -0.3])
        pixels = sample_pixels(small_intrinsics.width, small_intrinsics.height, 20, np.random.default_rng(4))
        batch = build_sample_batch(pixels, 0, 1, small_intrinsics, pose, config, np.random.default_rng(5))

        np.testing.assert_allclose(batch.d_values, config.alpha * batch.z_values)
        cam_world = batch.camera_points.values @ pose.R.values.T + pose.t.values
        origin_offsets = batch.world_points.values - pose.t.values
        cam_offsets = cam_world - pose.t.values
        cross = np.cross(origin_offsets, cam_offsets)
        np.testing.assert_allclose(cross, 0.0, atol=1e-10)
        assert np.all((origin_offsets * cam_offsets).sum(axis=-1) > 0)
        assert batch.interval == 1

    def test_flow_branch_depth_range(self):
        config = tiny_train_config()
        assert config.alpha * config.near == pytest.approx(0.002)
        assert config.alpha * config.far == pytest.approx(2.0)
