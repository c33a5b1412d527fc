import numpy as np
import pytest

from flownerf.camgeo.Camera import CameraIntrinsics, rodrigues
from flownerf.camgeo.sampling import build_sample_batch, sample_pixels
from flownerf.diffcore.Tensor import Graph, Tensor, backward
from flownerf.diffcore.gradcheck import check_gradients
from flownerf.fields.CanonicalField import CanonicalField
from flownerf.flowbij.BijectiveNet import BijectiveNet
from flownerf.flowbij.PoseEmbedding import PoseEmbedding
from flownerf.flowbij.flow_composition import compose_flow, predict_correspondences, render_novel_flow
from flownerf.losses.losses import loss_flow

from conftest import tiny_train_config

UNIT_K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 4, 4)


@pytest.fixture
def flow_nets(tiny_config):
    rng = np.random.default_rng(21)
    return PoseEmbedding(tiny_config, rng), BijectiveNet(tiny_config, rng), CanonicalField(tiny_config, rng)


class TestComposeFlow:

    def test_single_opaque_sample(self):
        points = np.array([[[0.5, -0.25, 2.0]]])
        pixels, valid, weights = compose_flow(points, np.array([[1e3]]), UNIT_K)
        np.testing.assert_allclose(pixels.values, [[0.25, -0.125]])
        assert valid.all()
        np.testing.assert_array_equal(weights.values, [[1.0]])

    def test_empty_density_is_invalid(self):
        points = np.random.default_rng(0).normal(size=(3, 4, 3))
        pixels, valid, weights = compose_flow(points, np.zeros((3, 4)), UNIT_K)
        np.testing.assert_array_equal(weights.values, 0.0)
        assert not valid.any()
        assert np.all(np.isfinite(pixels.values))

    def test_two_sample_weights(self):
        points = np.array([[[0.0, 0.0, 1.0], [2.0, 0.0, 3.0]]])
        sigma = np.array([[np.log(2.0), 1e3]])
        _, _, weights = compose_flow(points, sigma, UNIT_K)
        np.testing.assert_allclose(weights.values, [[0.5, 0.5]], atol=1e-15)

    def test_weights_bounded(self):
        rng = np.random.default_rng(1)
        _, _, weights = compose_flow(rng.normal(size=(50, 8, 3)), rng.exponential(1.0, (50, 8)), UNIT_K)
        w = weights.values
        assert np.all((w >= 0) & (w <= 1))
        assert np.all(w.sum(axis=-1) <= 1.0 + 1e-12)


class TestPredictCorrespondences:

    def _batch(self, config, K):
        pixels = sample_pixels(K.width, K.height, 6, np.random.default_rng(2))
        return build_sample_batch(pixels, 0, 1, K, rodrigues(np.zeros(6)), config)

    def test_flow_loss_reaches_both_poses_and_networks(self, flow_nets, tiny_config, small_intrinsics):
        embedding, bijection, canonical = flow_nets
        batch = self._batch(tiny_config, small_intrinsics)
        pose_i = Tensor([0.01, 0.02, 0.0, 0.1, 0.0, 0.0], requires_grad=True)
        pose_j = Tensor([0.0, -0.02, 0.01, 0.0, 0.1, 0.0], requires_grad=True)
        for net in (embedding, bijection, canonical):
            net.zero_grad()
        with Graph():
            out = predict_correspondences(embedding, bijection, canonical, batch.camera_points,
                                          pose_i, pose_j, small_intrinsics, tiny_config)
            target = batch.pixels + 1.0
            backward(loss_flow(out["pixels_j"], target, out["valid"]))
        assert np.abs(pose_i.grad).sum() > 0
        assert np.abs(pose_j.grad).sum() > 0
        for net in (embedding, bijection, canonical):
            assert any(p.grad is not None and np.abs(p.grad).sum() > 0 for p in net.parameters())

    def test_flow_loss_gradient_matches_finite_differences(self, flow_nets, tiny_config, small_intrinsics):
        embedding, bijection, canonical = flow_nets
        batch = self._batch(tiny_config, small_intrinsics)
        pose_i = Tensor([0.01, 0.02, 0.0, 0.1, 0.0, 0.0], requires_grad=True)
        pose_j = Tensor([0.0, -0.02, 0.01, 0.0, 0.1, 0.0], requires_grad=True)
        target = batch.pixels + np.array([0.7, -0.3])

        def loss():
            out = predict_correspondences(embedding, bijection, canonical, batch.camera_points,
                                          pose_i, pose_j, small_intrinsics, tiny_config)
            diff = out["pixels_j"] - target
            return (diff * diff).mean()

        assert check_gradients(loss, [pose_i, pose_j]) < 1e-4

    def test_same_pose_maps_points_onto_their_own_pixels(self, flow_nets, tiny_config, small_intrinsics):
        embedding, bijection, canonical = flow_nets
        batch = self._batch(tiny_config, small_intrinsics)
        pose = np.array([0.05, 0.0, 0.0, 0.0, 0.2, 0.0])
        out = predict_correspondences(embedding, bijection, canonical, batch.camera_points,
                                      pose, pose, small_intrinsics, tiny_config)
        # all samples of a ray lie on that ray, so their composite does too
        valid = out["valid"]
        np.testing.assert_allclose(out["pixels_j"].values[valid], batch.pixels[valid], atol=1e-9)


class TestNovelFlow:

    def test_identical_poses_give_zero_flow(self, flow_nets, tiny_config, small_intrinsics):
        embedding, bijection, canonical = flow_nets
        pose = np.array([0.0, 0.1, 0.0, 0.3, 0.0, 0.0])
        flow, valid = render_novel_flow(embedding, bijection, canonical, pose, pose, small_intrinsics, tiny_config)
        assert flow.shape == (small_intrinsics.height, small_intrinsics.width, 2)
        assert np.abs(flow[valid]).max() < 1e-9

    def test_threads_and_chunking_do_not_change_the_result(self, flow_nets, small_intrinsics):
        embedding, bijection, canonical = flow_nets
        pose_a = np.array([0.0, 0.1, 0.0, 0.3, 0.0, 0.0])
        pose_b = np.array([0.02, 0.0, 0.0, 0.0, 0.1, 0.2])
        serial = render_novel_flow(embedding, bijection, canonical, pose_a, pose_b, small_intrinsics,
                                   tiny_train_config(chunk=384, threads=1))
        parallel = render_novel_flow(embedding, bijection, canonical, pose_a, pose_b, small_intrinsics,
                                     tiny_train_config(chunk=50, threads=3))
        np.testing.assert_array_equal(serial[1], parallel[1])
        np.testing.assert_allclose(serial[0], parallel[0], atol=1e-12)
