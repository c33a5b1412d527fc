"""
The joint model: geometry field, canonical field, pose embedding, bijective
network and one learnable 6-DoF pose vector per training frame.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from flownerf.camgeo.Camera import CameraIntrinsics, camera_rays, rodrigues
from flownerf.camgeo.sampling import build_sample_batch, full_frame_pixels
from flownerf.diffcore.Tensor import Tensor, as_tensor, exp, no_grad
from flownerf.exceptions.Exceptions import ContractException, ShapeException
from flownerf.fields.CanonicalField import CanonicalField
from flownerf.fields.GeometryField import GeometryField
from flownerf.fields.message_passing import message_pass
from flownerf.flowbij.BijectiveNet import BijectiveNet, map_to_canonical
from flownerf.flowbij.PoseEmbedding import PoseEmbedding
from flownerf.flowbij.flow_composition import predict_correspondences
from flownerf.volren.renderer import composite_weights, render

logger = logging.getLogger(__name__)

COMPONENTS = ("geometry", "canonical", "embedding", "bijection")


@dataclass
class PairOutput:
    render: object          # RenderOutput of the geometry branch
    pixels_j: Tensor        # (N, 2) predicted correspondences in frame j
    flow_valid: np.ndarray  # (N,) composite point in front of camera j
    flow_rgb: Tensor = None  # (N, 3) colour rendered from the canonical field


class FlowNerfPipeline:

    def __init__(self, config, K, num_frames, rng=None):
        config.validate()
        if num_frames < 2:
            raise ContractException(f"At least two training frames are required, got {num_frames}")
        self.config = config
        self.K = K
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.geometry = GeometryField(config, rng)
        self.canonical = CanonicalField(config, rng)
        self.embedding = PoseEmbedding(config, rng)
        self.bijection = BijectiveNet(config, rng)
        # identity initialisation for every frame
        self.poses = [Tensor(np.zeros(6), requires_grad=True, name=f"pose.{k}") for k in range(num_frames)]
        logger.info(
            f"Built pipeline: {num_frames} frames, {sum(p.size for _, p in self.named_parameters())} parameters"
        )

    @classmethod
    def from_state(cls, state):
        """Rebuild the model stored in a TrainingState"""
        if state.intrinsics is None:
            raise ContractException("Checkpoint carries no camera intrinsics")
        pipeline = cls(state.config, CameraIntrinsics.from_dict(state.intrinsics), state.num_frames)
        pipeline.load_state_arrays(state.params)
        return pipeline

    @property
    def num_frames(self):
        return len(self.poses)

    def named_parameters(self):
        for k, pose in enumerate(self.poses):
            yield f"pose.{k}", pose
        for component in COMPONENTS:
            yield from getattr(self, component).named_parameters(f"{component}.")

    def parameter_groups(self):
        """Adam groups with their configured learning rates"""
        c = self.config
        rates = {
            "pose": c.lr_pose,
            "geometry": c.lr_geometry,
            "canonical": c.lr_canonical,
            "embedding": c.lr_embedding,
            "bijection": c.lr_bijective,
        }
        groups = [{"name": "pose", "params": [(f"pose.{k}", p) for k, p in enumerate(self.poses)], "lr": rates["pose"]}]
        for component in COMPONENTS:
            params = list(getattr(self, component).named_parameters(f"{component}."))
            groups.append({"name": component, "params": params, "lr": rates[component]})
        return groups

    def pose_vectors(self):
        return np.stack([p.values for p in self.poses])

    def set_pose_vectors(self, vectors):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.shape != (self.num_frames, 6):
            raise ShapeException(f"Expected pose vectors {(self.num_frames, 6)}, got {vectors.shape}")
        for pose, v in zip(self.poses, vectors):
            pose.values[...] = v

    # --- forward passes ---------------------------------------------------

    def forward_pair(self, pixels, frame_i, frame_j, rng=None, pose_i=None, pose_j=None):
        """
        Geometry and flow branches for rays of frame i paired with frame j.

        ``pose_i``/``pose_j`` override the learned pose vectors (test-pose
        refinement passes a free vector here).
        """
        c = self.config
        pose_vec_i = self.poses[frame_i] if pose_i is None else as_tensor(pose_i)
        pose_vec_j = self.poses[frame_j] if pose_j is None else as_tensor(pose_j)
        batch = build_sample_batch(pixels, frame_i, frame_j, self.K, rodrigues(pose_vec_i), c, rng)

        flow = predict_correspondences(
            self.embedding, self.bijection, self.canonical, batch.camera_points,
            pose_vec_i, pose_vec_j, self.K, c,
        )
        message = message_pass(flow["features"], c.detach_message) if c.message_passing else None
        sigma, color = self.geometry(batch.world_points, batch.ray_dirs, message)
        rendered = render(sigma, color, batch.z_values, c.far)

        flow_rgb = None
        if flow["flow_rgb"] is not None:
            weights, _ = composite_weights(1.0 - exp(-flow["sigma2"]))
            flow_rgb = (weights.reshape(*weights.shape, 1) * flow["flow_rgb"]).sum(axis=-2)
        return PairOutput(rendered, flow["pixels_j"], flow["valid"], flow_rgb)

    def render_rays(self, pixels, pose_vector, rng=None):
        """Geometry branch only (with message passing) for one view"""
        c = self.config
        pose_vector = as_tensor(pose_vector)
        batch = build_sample_batch(pixels, 0, 0, self.K, rodrigues(pose_vector), c, rng)
        message = None
        if c.message_passing:
            psi = self.embedding(pose_vector)
            canonical_points = map_to_canonical(self.bijection, batch.camera_points, psi)
            features, _, _ = self.canonical(canonical_points)
            message = message_pass(features, c.detach_message)
        sigma, color = self.geometry(batch.world_points, batch.ray_dirs, message)
        return render(sigma, color, batch.z_values, c.far)

    def _render_chunk(self, pixels, pose_vector):
        with no_grad():
            out = self.render_rays(pixels, pose_vector)
            return out.rgb.values, out.depth.values

    def render_view(self, pose_vector, threads=None):
        """
        Deterministic full-frame rgb (H, W, 3) and planar depth (H, W) for a
        pose vector. Rendered depth is the expected ray distance; it is
        converted to planar z by dividing by ||K^-1 [u, v, 1]||.
        """
        K = self.K
        threads = self.config.threads if threads is None else threads
        pose_vector = np.array(as_tensor(pose_vector).values, dtype=np.float64)
        pixels = full_frame_pixels(K.width, K.height)
        chunks = [pixels[k:k + self.config.chunk] for k in range(0, len(pixels), self.config.chunk)]

        def run(chunk):
            return self._render_chunk(chunk, pose_vector)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(chunk) for chunk in chunks]

        rgb = np.concatenate([r[0] for r in results]).reshape(K.height, K.width, 3)
        distance = np.concatenate([r[1] for r in results])
        planar = distance / np.linalg.norm(camera_rays(pixels, K), axis=-1)
        return rgb, planar.reshape(K.height, K.width)

    # --- persistence ------------------------------------------------------

    def state_arrays(self):
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays):
        params = dict(self.named_parameters())
        missing = set(params) - set(arrays)
        if missing:
            raise ShapeException(f"Checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeException(f"Parameter '{name}' has shape {value.shape}, expected {p.shape}")
            p.values[...] = value
