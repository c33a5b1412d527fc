import numpy as np
import pytest

from flownerf.camgeo.sampling import sample_pixels
from flownerf.diffcore.Tensor import Graph, Tensor, backward
from flownerf.diffcore.gradcheck import check_gradients
from flownerf.exceptions.Exceptions import ContractException, ShapeException
from flownerf.service.FlowNerfPipeline import FlowNerfPipeline

from conftest import tiny_train_config


@pytest.fixture
def pipeline(tiny_config, small_intrinsics):
    return FlowNerfPipeline(tiny_config, small_intrinsics, 3, np.random.default_rng(5))


class TestConstruction:

    def test_needs_two_frames(self, tiny_config, small_intrinsics):
        with pytest.raises(ContractException):
            FlowNerfPipeline(tiny_config, small_intrinsics, 1)

    def test_parameter_groups(self, pipeline):
        groups = pipeline.parameter_groups()
        assert [g["name"] for g in groups] == ["pose", "geometry", "canonical", "embedding", "bijection"]
        assert [name for name, _ in groups[0]["params"]] == ["pose.0", "pose.1", "pose.2"]
        grouped = sum(len(g["params"]) for g in groups)
        assert grouped == len(list(pipeline.named_parameters()))

    def test_same_seed_same_weights(self, tiny_config, small_intrinsics):
        a = FlowNerfPipeline(tiny_config, small_intrinsics, 3, np.random.default_rng(9)).state_arrays()
        b = FlowNerfPipeline(tiny_config, small_intrinsics, 3, np.random.default_rng(9)).state_arrays()
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestGradients:

    @pytest.mark.parametrize("seed", range(3))
    def test_colour_loss_gradient_through_whole_ray_pipeline(self, pipeline, small_intrinsics, seed):
        rng = np.random.default_rng(seed)
        pixels = sample_pixels(small_intrinsics.width, small_intrinsics.height, 5, rng)
        pose = Tensor(rng.normal(scale=0.05, size=6), requires_grad=True)
        target = rng.random((5, 3))

        def loss():
            out = pipeline.render_rays(pixels, pose)
            diff = out.rgb - target
            return (diff * diff).mean() + (out.depth * 0.01).mean()

        assert check_gradients(loss, [pose]) < 1e-4

    def test_pair_forward_reaches_every_component(self, pipeline, small_intrinsics):
        pixels = sample_pixels(small_intrinsics.width, small_intrinsics.height, 8, np.random.default_rng(0))
        with Graph():
            out = pipeline.forward_pair(pixels, 0, 2)
            backward(out.render.rgb.sum())
        assert out.pixels_j.shape == (8, 2)
        assert out.flow_valid.shape == (8,)
        for component in ("geometry", "canonical", "embedding", "bijection"):
            grads = [p.grad for _, p in getattr(pipeline, component).named_parameters()]
            assert any(g is not None and np.abs(g).sum() > 0 for g in grads), component
        assert pipeline.poses[1].grad is None


class TestRenderView:

    def test_threads_do_not_change_the_image(self, small_intrinsics):
        config = tiny_train_config(chunk=50)
        pipeline = FlowNerfPipeline(config, small_intrinsics, 2, np.random.default_rng(1))
        pose = np.array([0.0, 0.05, 0.0, 0.1, 0.0, 0.0])
        rgb_1, depth_1 = pipeline.render_view(pose, threads=1)
        rgb_4, depth_4 = pipeline.render_view(pose, threads=4)
        np.testing.assert_array_equal(rgb_1, rgb_4)
        np.testing.assert_array_equal(depth_1, depth_4)
        assert rgb_1.shape == (small_intrinsics.height, small_intrinsics.width, 3)

    def test_planar_depth_is_below_ray_distance_off_axis(self, pipeline, small_intrinsics):
        _, planar = pipeline.render_view(np.zeros(6))
        pixels = np.array([[0, 0]])
        distance = pipeline.render_rays(pixels, np.zeros(6)).depth.values[0]
        assert planar[0, 0] < distance
        assert planar[0, 0] == pytest.approx(distance / np.linalg.norm(
            [(0 - small_intrinsics.cx) / small_intrinsics.fx, (0 - small_intrinsics.cy) / small_intrinsics.fy, 1.0]))

    def test_render_leaves_no_gradients(self, pipeline):
        pipeline.render_view(np.zeros(6))
        assert all(p.grad is None for _, p in pipeline.named_parameters())


class TestStateArrays:

    def test_round_trip(self, pipeline, tiny_config, small_intrinsics):
        pipeline.set_pose_vectors(np.arange(18.0).reshape(3, 6) * 0.01)
        other = FlowNerfPipeline(tiny_config, small_intrinsics, 3, np.random.default_rng(77))
        other.load_state_arrays(pipeline.state_arrays())
        np.testing.assert_array_equal(other.pose_vectors(), pipeline.pose_vectors())
        pose = np.array([0.0, 0.0, 0.0, 0.1, 0.0, 0.0])
        np.testing.assert_array_equal(other.render_view(pose)[0], pipeline.render_view(pose)[0])

    def test_missing_parameter(self, pipeline):
        arrays = pipeline.state_arrays()
        del arrays["pose.1"]
        with pytest.raises(ShapeException):
            pipeline.load_state_arrays(arrays)

    def test_wrong_shape(self, pipeline):
        arrays = pipeline.state_arrays()
        arrays["pose.0"] = np.zeros(5)
        with pytest.raises(ShapeException):
            pipeline.load_state_arrays(arrays)

    def test_pose_vector_shape(self, pipeline):
        with pytest.raises(ShapeException):
            pipeline.set_pose_vectors(np.zeros((2, 6)))
