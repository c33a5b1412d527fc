"""
Pinhole camera, pose parameterization and the projections shared by the
geometry and flow branches.

Conventions: poses are camera-to-world, right-handed, +z forward, +y down.
Pixel coordinates are continuous with (0, 0) at the centre of the top-left
pixel.
"""

import logging
from dataclasses import dataclass

import numpy as np

from flownerf.diffcore.Tensor import Tensor, as_tensor, concat, no_grad, sin, cos, sqrt
from flownerf.exceptions.Exceptions import ConfigException, SamplingException

logger = logging.getLogger(__name__)

SMALL_ANGLE = 1e-8
MIN_PROJECTION_DEPTH = 1e-8

# [r]x flattened row-major, one row per axis-angle component
_SKEW_BASIS = np.zeros((3, 9))
_SKEW_BASIS[0, 5], _SKEW_BASIS[0, 7] = -1.0, 1.0
_SKEW_BASIS[1, 2], _SKEW_BASIS[1, 6] = 1.0, -1.0
_SKEW_BASIS[2, 1], _SKEW_BASIS[2, 3] = -1.0, 1.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def validate(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigException(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ConfigException(
                f"Principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )
        return self

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, values):
        return cls(float(values["fx"]), float(values["fy"]), float(values["cx"]), float(values["cy"]),
                   int(values["width"]), int(values["height"]))


@dataclass
class PoseMatrix:
    """Camera-to-world rigid transform x_world = R x_cam + t"""
    R: Tensor
    t: Tensor

    def inverse(self):
        Rt = self.R.T
        return PoseMatrix(Rt, -(Rt @ self.t.reshape(3, 1)).reshape(3))

    def apply(self, points):
        """Map (..., 3) points through the transform"""
        return as_tensor(points) @ self.R.T + self.t

    def compose(self, other):
        """self ∘ other"""
        return PoseMatrix(self.R @ other.R, (self.R @ other.t.reshape(3, 1)).reshape(3) + self.t)

    def as_numpy(self):
        return self.R.values.copy(), self.t.values.copy()


def rodrigues(v):
    """
    Convert a 6-vector [r1, r2, r3, t1, t2, t3] to a PoseMatrix.

    R = I + A [r]x + B [r]x^2 with A = sin(θ)/θ, B = (1 - cos θ)/θ²; below
    θ = 1e-8 the second-order Taylor expansion of A and B is used so the map
    stays smooth and differentiable at the origin.
    """
    v = as_tensor(v)
    r = v[0:3].reshape(1, 3)
    t = v[3:6]
    K = (r @ Tensor(_SKEW_BASIS)).reshape(3, 3)
    K2 = K @ K
    theta2 = (r * r).sum()
    if theta2.item() < SMALL_ANGLE ** 2:
        A = 1.0 - theta2 * (1.0 / 6.0)
        B = 0.5 - theta2 * (1.0 / 24.0)
    else:
        theta = sqrt(theta2)
        A = sin(theta) / theta
        half = sin(theta * 0.5)
        B = half * half * 2.0 / theta2
    R = Tensor(np.eye(3)) + A * K + B * K2
    return PoseMatrix(R, t)


def pose_matrix_np(v):
    """Gradient-free rodrigues returning numpy (R, t)"""
    with no_grad():
        return rodrigues(np.asarray(v, dtype=np.float64)).as_numpy()


def relative_pose(pose_i, pose_j):
    """T_ji mapping camera-i coordinates into camera-j coordinates"""
    return pose_j.inverse().compose(pose_i)


def check_pixels(pixels, K):
    pixels = np.asarray(pixels, dtype=np.float64)
    inside = (
        (pixels[:, 0] >= -0.5) & (pixels[:, 0] <= K.width - 0.5)
        & (pixels[:, 1] >= -0.5) & (pixels[:, 1] <= K.height - 0.5)
    )
    if not np.all(inside):
        bad = pixels[~inside][0]
        raise SamplingException(f"Pixel ({bad[0]}, {bad[1]}) outside {K.width}x{K.height} image")
    return pixels


def camera_rays(pixels, K):
    """K^-1 [u, v, 1] for (N, 2) pixels"""
    pixels = np.asarray(pixels, dtype=np.float64)
    return np.stack(
        [(pixels[:, 0] - K.cx) / K.fx, (pixels[:, 1] - K.cy) / K.fy, np.ones(len(pixels))], axis=-1
    )


def backproject_world(pixels, K, T, z_values):
    """
    World-space samples p = origin + z * ray_dir for every pixel.

    Returns (world_points (N, m, 3), ray_dirs (N, 3)); both carry gradients to
    the pose through T.
    """
    pixels = check_pixels(pixels, K)
    d_cam = camera_rays(pixels, K)
    d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
    ray_dirs = Tensor(d_cam) @ T.R.T
    z = Tensor(np.asarray(z_values, dtype=np.float64)[..., None])
    n = len(pixels)
    world_points = T.t.reshape(1, 1, 3) + z * ray_dirs.reshape(n, 1, 3)
    return world_points, ray_dirs


def backproject_camera(pixels, K, d_values, mode="perspective", ortho_scale=1.0):
    """
    Flow-branch camera-space samples.

    perspective: K^-1 [u, v, 1] * d
    orthogonal:  ((u - cx) / W * s, (v - cy) / H * s, d)
    """
    pixels = check_pixels(pixels, K)
    d = np.asarray(d_values, dtype=np.float64)
    if mode == "perspective":
        points = camera_rays(pixels, K)[:, None, :] * d[..., None]
    elif mode == "orthogonal":
        plane = np.stack(
            [(pixels[:, 0] - K.cx) / K.width * ortho_scale, (pixels[:, 1] - K.cy) / K.height * ortho_scale],
            axis=-1,
        )
        points = np.concatenate([np.broadcast_to(plane[:, None, :], d.shape + (2,)), d[..., None]], axis=-1)
    else:
        raise ConfigException(f"Unknown projection mode: {mode}")
    return Tensor(points)


def project(points_cam, K, mode="perspective", ortho_scale=1.0):
    """
    Project (..., 3) camera-space points to pixels.

    Returns (pixels (..., 2) Tensor, valid bool array). Points with z <= 1e-8
    are reported invalid and carry no gradient instead of aborting.
    """
    points_cam = as_tensor(points_cam)
    z = points_cam[..., 2:3]
    valid = z.values[..., 0] > MIN_PROJECTION_DEPTH
    if mode == "perspective":
        keep = valid[..., None].astype(np.float64)
        z_safe = z * keep + (1.0 - keep)
        x = points_cam[..., 0:1] / z_safe
        y = points_cam[..., 1:2] / z_safe
        u = x * K.fx + K.cx
        v = y * K.fy + K.cy
    elif mode == "orthogonal":
        u = points_cam[..., 0:1] * (K.width / ortho_scale) + K.cx
        v = points_cam[..., 1:2] * (K.height / ortho_scale) + K.cy
    else:
        raise ConfigException(f"Unknown projection mode: {mode}")
    return concat([u, v], axis=-1), valid
