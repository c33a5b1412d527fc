"""
Ground-truth flow construction: depth reprojection, multi-hop chaining and
the numpy bilinear sampler both rely on.
"""

import logging
from dataclasses import dataclass

import numpy as np

from flownerf.camgeo.Camera import MIN_PROJECTION_DEPTH, camera_rays, pose_matrix_np
from flownerf.exceptions.Exceptions import ContractException

logger = logging.getLogger(__name__)

# bilinear weights below this are treated as absent corners
_WEIGHT_EPS = 1e-12
# round-off slack on the image border
BOUNDS_EPS = 1e-9


@dataclass
class FlowField:
    flow: np.ndarray    # (H, W, 2) displacement in pixels
    valid: np.ndarray   # (H, W) True where the pixel is visible in the target frame

    @property
    def shape(self):
        return self.valid.shape

    def masked(self):
        """Flow with invalid pixels zeroed"""
        return np.where(self.valid[..., None], self.flow, 0.0)


def pixel_grid(width, height):
    u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    return np.stack([u, v], axis=-1)


def in_bounds(coords, width, height):
    """Coordinates that a bilinear lookup can serve: [0, W-1] x [0, H-1]"""
    u, v = coords[..., 0], coords[..., 1]
    return (
        (u >= -BOUNDS_EPS) & (u <= width - 1 + BOUNDS_EPS)
        & (v >= -BOUNDS_EPS) & (v <= height - 1 + BOUNDS_EPS)
    )


def bilinear_sample(grid, coords):
    """
    Sample an (H, W[, C]) grid at (..., 2) pixel coordinates.

    Returns (values, inside). Coordinates outside the grid are clamped for the
    lookup and reported in ``inside``.
    """
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape[:2]
    u = np.clip(coords[..., 0], 0, w - 1)
    v = np.clip(coords[..., 1], 0, h - 1)
    u0 = np.minimum(np.floor(u).astype(np.int64), max(w - 2, 0))
    v0 = np.minimum(np.floor(v).astype(np.int64), max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    if grid.ndim == 3:
        fu, fv = fu[..., None], fv[..., None]
    top = grid[v0, u0] * (1.0 - fu) + grid[v0, u1] * fu
    bottom = grid[v1, u0] * (1.0 - fu) + grid[v1, u1] * fu
    return top * (1.0 - fv) + bottom * fv, in_bounds(coords, w, h)


def sample_mask(mask, coords):
    """True where every bilinear corner with nonzero weight is set and the lookup is in bounds"""
    values, inside = bilinear_sample(np.asarray(mask, dtype=np.float64), coords)
    return inside & (values >= 1.0 - _WEIGHT_EPS)


def reproject_flow(depth_i, pose_i, pose_j, K, depth_j=None, threshold=1e-3):
    """
    flow(p) = π(K T_j^-1 T_i π^-1(p, D_i(p))) - p for planar depth D_i.

    Pixels are invalid when their depth is not positive, when they land behind
    camera j or outside frame j, or, given D_j, when the warped depth differs
    from D_j at the target by more than ``threshold`` (z-buffer test). D_j is
    interpolated in inverse depth, which is exact for planar surfaces.
    """
    depth_i = np.asarray(depth_i, dtype=np.float64)
    h, w = depth_i.shape
    R_i, t_i = pose_matrix_np(pose_i)
    R_j, t_j = pose_matrix_np(pose_j)

    pixels = pixel_grid(w, h).reshape(-1, 2)
    points = camera_rays(pixels, K) * depth_i.reshape(-1, 1)
    world = points @ R_i.T + t_i
    cam_j = (world - t_j) @ R_j
    z = cam_j[:, 2]
    front = z > MIN_PROJECTION_DEPTH
    z_safe = np.where(front, z, 1.0)
    target = np.stack([cam_j[:, 0] / z_safe * K.fx + K.cx, cam_j[:, 1] / z_safe * K.fy + K.cy], axis=-1)

    valid = (depth_i.reshape(-1) > 0) & front & in_bounds(target, w, h)
    if depth_j is not None:
        depth_j = np.asarray(depth_j, dtype=np.float64)
        inv_j = np.where(depth_j > 0, 1.0 / np.where(depth_j > 0, depth_j, 1.0), 0.0)
        inv_at, _ = bilinear_sample(inv_j, target)
        with np.errstate(divide="ignore"):
            depth_at = np.where(inv_at > 0, 1.0 / np.where(inv_at > 0, inv_at, 1.0), np.inf)
        valid &= np.abs(depth_at - z) <= threshold

    flow = np.where(valid[:, None], target - pixels, 0.0)
    return FlowField(flow.reshape(h, w, 2), valid.reshape(h, w))


def chain_flows(flows):
    """
    Compose consecutive flows a->a+1->...->b by bilinear lookup of each next
    hop at the current target position. A pixel stays valid only while every
    hop lands unoccluded and in bounds.
    """
    if not flows:
        raise ContractException("chain_flows needs at least one flow")
    h, w = flows[0].shape
    grid = pixel_grid(w, h)
    total = flows[0].flow.astype(np.float64).copy()
    valid = flows[0].valid.copy()
    for hop in flows[1:]:
        if hop.shape != (h, w):
            raise ContractException(f"chain_flows: flow sizes differ, {hop.shape} vs {(h, w)}")
        position = grid + total
        step, _ = bilinear_sample(hop.flow, position)
        valid &= sample_mask(hop.valid, position)
        total = total + step
    total = np.where(valid[..., None], total, 0.0)
    return FlowField(total, valid)
