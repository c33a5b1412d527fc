import logging
from dataclasses import dataclass

import numpy as np

from flownerf.camgeo.Camera import backproject_camera, backproject_world
from flownerf.diffcore.Tensor import Tensor
from flownerf.exceptions.Exceptions import ContractException, SamplingException

logger = logging.getLogger(__name__)


@dataclass
class SampleBatch:
    pixels: np.ndarray          # (N, 2)
    frame_i: int
    frame_j: int
    world_points: Tensor        # (N, m, 3), geometry branch
    camera_points: Tensor       # (N, m, 3), flow branch
    z_values: np.ndarray        # (N, m) distances along the unit ray
    d_values: np.ndarray        # (N, m) flow-branch depths, alpha * z
    ray_dirs: Tensor            # (N, 3) world space

    @property
    def interval(self):
        return self.frame_j - self.frame_i


def stratified_distances(num_rays, num_samples, near, far, rng=None):
    """
    One sample per uniform bin over [near, far]: jittered inside the bin when
    ``rng`` is given, bin midpoints otherwise. Strictly increasing per ray.
    """
    edges = np.linspace(near, far, num_samples + 1)
    lower, width = edges[:-1], np.diff(edges)
    if rng is None:
        offsets = np.full((num_rays, num_samples), 0.5)
    else:
        offsets = rng.random((num_rays, num_samples))
    return lower[None, :] + offsets * width[None, :]


def sample_pixels(width, height, count, rng):
    """Integer pixel centres, drawn without replacement while the image allows it"""
    total = width * height
    if count <= 0:
        raise SamplingException(f"Cannot sample {count} pixels")
    flat = rng.choice(total, size=count, replace=count > total)
    return np.stack([flat % width, flat // width], axis=-1).astype(np.float64)


def full_frame_pixels(width, height):
    v, u = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=-1).astype(np.float64)


def build_sample_batch(pixels, frame_i, frame_j, K, pose_i, config, rng=None):
    """
    Shared point sampling: the k-th geometry sample at distance z and the k-th
    flow sample at depth d = alpha * z lie on the same ray of frame i.
    """
    if config.samples_per_ray < 1:
        raise ContractException("At least one sample per ray is required")
    z_values = stratified_distances(len(pixels), config.samples_per_ray, config.near, config.far, rng)
    d_values = config.alpha * z_values
    world_points, ray_dirs = backproject_world(pixels, K, pose_i, z_values)
    camera_points = backproject_camera(pixels, K, d_values, config.projection, config.ortho_scale)
    return SampleBatch(
        pixels=np.asarray(pixels, dtype=np.float64),
        frame_i=frame_i,
        frame_j=frame_j,
        world_points=world_points,
        camera_points=camera_points,
        z_values=z_values,
        d_values=d_values,
        ray_dirs=ray_dirs,
    )
