"""
Alpha-composited correspondence prediction and dense novel-view flow.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from flownerf.camgeo.Camera import backproject_camera, project
from flownerf.camgeo.sampling import full_frame_pixels, stratified_distances
from flownerf.diffcore.Tensor import as_tensor, exp, no_grad
from flownerf.flowbij.BijectiveNet import map_from_canonical, map_to_canonical
from flownerf.volren.renderer import composite_weights

logger = logging.getLogger(__name__)


def compose_flow(points_j, sigma2, K, mode="perspective", ortho_scale=1.0):
    """
    Alpha-composite the frame-j sample points with alpha = 1 - exp(-sigma)
    (no spacing factor) and project the composite point.

    Returns (pixels_j (N, 2), valid (N,), weights (N, m)); rays whose composite
    point is not in front of the camera are invalid.
    """
    points_j = as_tensor(points_j)
    alpha = 1.0 - exp(-as_tensor(sigma2))
    weights, _ = composite_weights(alpha)
    composite = (weights.reshape(*weights.shape, 1) * points_j).sum(axis=-2)
    pixels, valid = project(composite, K, mode, ortho_scale)
    return pixels, valid, weights


def predict_correspondences(embedding, bijection, canonical, camera_points, pose_i, pose_j, K, config):
    """
    Full flow branch for one frame pair: both pose latents, the canonical
    points and their density, the points mapped into frame j and the
    composite projection. Also returns the canonical features and colour so
    the geometry branch can reuse them.
    """
    psi_i = embedding(pose_i)
    psi_j = embedding(pose_j)
    canonical_points = map_to_canonical(bijection, camera_points, psi_i)
    features, sigma2, flow_rgb = canonical(canonical_points)
    points_j = map_from_canonical(bijection, canonical_points, psi_j)
    pixels_j, valid, _ = compose_flow(points_j, sigma2, K, config.projection, config.ortho_scale)
    return {
        "pixels_j": pixels_j,
        "valid": valid,
        "features": features,
        "sigma2": sigma2,
        "flow_rgb": flow_rgb,
    }


def _flow_chunk(embedding, bijection, canonical, pixels, pose_a, pose_b, K, config):
    with no_grad():
        z = stratified_distances(len(pixels), config.samples_per_ray, config.near, config.far)
        camera_points = backproject_camera(pixels, K, config.alpha * z, config.projection, config.ortho_scale)
        out = predict_correspondences(embedding, bijection, canonical, camera_points, pose_a, pose_b, K, config)
        return out["pixels_j"].values - pixels, out["valid"]


def render_novel_flow(embedding, bijection, canonical, pose_a, pose_b, K, config):
    """
    Dense flow from view a to view b for two arbitrary pose vectors.

    Evaluated without jitter in chunks of ``config.chunk`` rays; chunks run on
    ``config.threads`` workers and are reassembled in order. Returns
    (flow (H, W, 2), valid (H, W)).
    """
    pixels = full_frame_pixels(K.width, K.height)
    pose_a = np.asarray(as_tensor(pose_a).values, dtype=np.float64)
    pose_b = np.asarray(as_tensor(pose_b).values, dtype=np.float64)
    chunks = [pixels[k:k + config.chunk] for k in range(0, len(pixels), config.chunk)]

    def run(chunk):
        return _flow_chunk(embedding, bijection, canonical, chunk, pose_a, pose_b, K, config)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunk) for chunk in chunks]

    flow = np.concatenate([r[0] for r in results], axis=0).reshape(K.height, K.width, 2)
    valid = np.concatenate([r[1] for r in results], axis=0).reshape(K.height, K.width)
    logger.info(f"Rendered novel-view flow {K.width}x{K.height}, {int(valid.sum())} valid pixels")
    return flow, valid
