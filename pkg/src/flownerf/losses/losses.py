"""
Optimization objectives of the joint model and their weighted total.

Colour and flow L1 terms sum over channels/coordinates and average over
pixels. Chamfer distances use squared Euclidean nearest-neighbour distances.
"""

import logging
from dataclasses import dataclass, asdict

import numpy as np

from flownerf.camgeo.Camera import PoseMatrix, camera_rays, project, relative_pose, rodrigues
from flownerf.diffcore.Tensor import Tensor, absolute, as_tensor
from flownerf.exceptions.Exceptions import ContractException

logger = logging.getLogger(__name__)

NN_CHUNK = 1024


@dataclass
class LossWeights:
    flow: float = 0.05
    depth: float = 0.04
    pc: float = 1.0
    warp: float = 1.0
    rgb_flow: float = 1.0

    @classmethod
    def from_config(cls, config):
        return cls(config.lambda_flow, config.lambda_depth, config.lambda_pc, config.lambda_warp, config.lambda_rgb_flow)


@dataclass
class LossReport:
    rgb: float = 0.0
    flow: float = 0.0
    depth: float = 0.0
    pc: float = 0.0
    rgb_s: float = 0.0
    total: float = 0.0
    rgb_flow: float = 0.0

    @classmethod
    def from_parts(cls, parts, total):
        values = {k: float(as_tensor(v).item()) for k, v in parts.items()}
        return cls(total=float(total.item()), **values)

    def as_dict(self):
        return asdict(self)


def _zero():
    return Tensor(0.0)


def loss_rgb(predicted, target):
    """Mean over pixels of the channel-summed L1 colour difference"""
    predicted = as_tensor(predicted)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ContractException(f"loss_rgb: shapes {predicted.shape} and {target.shape} differ")
    return absolute(predicted - target).sum(axis=-1).mean()


def loss_flow(predicted, target, valid):
    """Mean over valid pixels of |Δu| + |Δv|; an empty mask contributes 0"""
    predicted = as_tensor(predicted)
    target = np.asarray(target, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        logger.warning("Flow loss has no valid pixels; contributing 0")
        return _zero()
    return absolute(predicted[valid] - target[valid]).sum(axis=-1).mean()


def loss_depth(predicted, target):
    predicted = as_tensor(predicted)
    target = np.asarray(target, dtype=np.float64)
    return absolute(predicted - target).mean()


def depth_to_points(depth, K, num_points=None, rng=None):
    """Camera-space point cloud K^-1 [u, v, 1] · depth over pixels with positive depth"""
    depth = np.asarray(depth, dtype=np.float64)
    v, u = np.nonzero(depth > 0)
    if num_points is not None and rng is not None and len(u) > num_points:
        keep = np.sort(rng.choice(len(u), size=num_points, replace=False))
        u, v = u[keep], v[keep]
    pixels = np.stack([u, v], axis=-1).astype(np.float64)
    return camera_rays(pixels, K) * depth[v, u][:, None], pixels


def _nearest(source, target):
    """Index into ``target`` of the nearest neighbour of every ``source`` point (brute force)"""
    index = np.empty(len(source), dtype=np.int64)
    target_sq = (target ** 2).sum(axis=-1)
    for start in range(0, len(source), NN_CHUNK):
        block = source[start:start + NN_CHUNK]
        d2 = (block ** 2).sum(axis=-1)[:, None] - 2.0 * block @ target.T + target_sq[None, :]
        index[start:start + NN_CHUNK] = np.argmin(d2, axis=-1)
    return index


def chamfer_distance(moving, fixed):
    """
    Symmetric Chamfer distance: mean squared distance from each moving point to
    its nearest fixed point plus the reverse term. Gradients flow through
    ``moving`` only.
    """
    moving = as_tensor(moving)
    fixed = np.asarray(fixed, dtype=np.float64)
    if len(moving.values) == 0 or len(fixed) == 0:
        raise ContractException("Chamfer distance of an empty point cloud")
    forward = moving - fixed[_nearest(moving.values, fixed)]
    backward = moving[_nearest(fixed, moving.values)] - fixed
    return (forward * forward).sum(axis=-1).mean() + (backward * backward).sum(axis=-1).mean()


def _as_pose(pose):
    return pose if isinstance(pose, PoseMatrix) else rodrigues(pose)


def loss_pointcloud(depth_i, depth_j, pose_i, pose_j, K, num_points=2048, rng=None):
    """
    l_cd(P*_j, T_ji P*_i) with T_ji = T_j^-1 ∘ T_i. Poses may be 6-vectors or
    PoseMatrix; only they receive gradients, the depths are constants.
    """
    points_i, _ = depth_to_points(depth_i, K, num_points, rng)
    points_j, _ = depth_to_points(depth_j, K, num_points, rng)
    moved = relative_pose(_as_pose(pose_i), _as_pose(pose_j)).apply(points_i)
    return chamfer_distance(moved, points_j)


def sample_bilinear(image, coords):
    """
    Bilinear lookup of a constant (H, W, C) image at (P, 2) pixel coordinates,
    differentiable w.r.t. the coordinates. Returns (values (P, C), inside mask).
    """
    image = np.asarray(image, dtype=np.float64)
    coords = as_tensor(coords)
    h, w = image.shape[:2]
    u, v = coords.values[:, 0], coords.values[:, 1]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    u0 = np.clip(np.floor(u), 0, max(w - 2, 0)).astype(np.int64)
    v0 = np.clip(np.floor(v), 0, max(h - 2, 0)).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = coords[:, 0:1] - u0[:, None].astype(np.float64)
    fv = coords[:, 1:2] - v0[:, None].astype(np.float64)
    top = (1.0 - fu) * image[v0, u0] + fu * image[v0, u1]
    bottom = (1.0 - fu) * image[v1, u0] + fu * image[v1, u1]
    return (1.0 - fv) * top + fv * bottom, inside


def loss_warp(image_i, image_j, depth_i, pose_i, pose_j, K):
    """
    Photometric warping loss over the whole frame: colour of I_i at its own
    pixels against I_j bilinearly sampled where P*_i lands in frame j.
    Warps that leave frame j or fall behind it are masked out.
    """
    image_i = np.asarray(image_i, dtype=np.float64)
    points_i, pixels = depth_to_points(depth_i, K)
    if len(points_i) == 0:
        logger.warning("Warp loss has no valid source depth; contributing 0")
        return _zero()
    cols, rows = pixels[:, 0].astype(np.int64), pixels[:, 1].astype(np.int64)
    source_colors = image_i[rows, cols]
    moved = relative_pose(_as_pose(pose_i), _as_pose(pose_j)).apply(points_i)
    warped, in_front = project(moved, K)
    target_colors, inside = sample_bilinear(image_j, warped)
    valid = inside & in_front
    if not valid.any():
        logger.warning("All warped pixels left the target frame; warp loss contributes 0")
        return _zero()
    return absolute(target_colors[valid] - source_colors[valid]).sum(axis=-1).mean()


def total_loss(parts, weights):
    """rgb + weighted flow, depth, pc and warp terms (+ rgb_flow when present)"""
    total = as_tensor(parts["rgb"])
    total = total + as_tensor(parts.get("flow", 0.0)) * weights.flow
    total = total + as_tensor(parts.get("depth", 0.0)) * weights.depth
    total = total + as_tensor(parts.get("pc", 0.0)) * weights.pc
    total = total + as_tensor(parts.get("rgb_s", 0.0)) * weights.warp
    if "rgb_flow" in parts:
        total = total + as_tensor(parts["rgb_flow"]) * weights.rgb_flow
    return total
