"""
Synthetic desk scene rendered by exact ray casting against analytic surfaces.

Every pixel's colour is the procedural albedo of the first surface its ray
hits (no lighting) and its depth is the planar z-depth of that hit, so
images, depths, poses and flows are exact and mutually consistent.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from flownerf.camgeo.Camera import CameraIntrinsics, MIN_PROJECTION_DEPTH, camera_rays, pose_matrix_np
from flownerf.camgeo.trajectory import Trajectory, write_tum
from flownerf.config.Config import GeneratorConfig
from flownerf.exceptions.Exceptions import StorageException
from flownerf.oracleio import formats
from flownerf.oracleio.flow_ops import FlowField, in_bounds, pixel_grid

logger = logging.getLogger(__name__)

HIT_EPS = 1e-9
NO_HIT = -1


@dataclass
class Plane:
    normal: np.ndarray
    offset: float   # points x with normal . x = offset

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.offset - origin @ self.normal) / denom
        return np.where((np.abs(denom) > HIT_EPS) & (t > HIT_EPS), t, np.inf)


@dataclass
class Box:
    center: np.ndarray
    half: np.ndarray

    def intersect(self, origin, dirs):
        lo = self.center - self.half
        hi = self.center + self.half
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origin) / dirs
            t2 = (hi - origin) / dirs
        t1 = np.nan_to_num(t1, nan=-np.inf)
        t2 = np.nan_to_num(t2, nan=np.inf)
        t_near = np.minimum(t1, t2).max(axis=-1)
        t_far = np.maximum(t1, t2).min(axis=-1)
        t = np.where(t_near > HIT_EPS, t_near, t_far)
        return np.where((t_far >= t_near) & (t > HIT_EPS), t, np.inf)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def intersect(self, origin, dirs):
        oc = origin - self.center
        a = (dirs * dirs).sum(axis=-1)
        b = 2.0 * dirs @ oc
        c = oc @ oc - self.radius ** 2
        disc = b * b - 4.0 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        t_near = (-b - root) / (2.0 * a)
        t_far = (-b + root) / (2.0 * a)
        t = np.where(t_near > HIT_EPS, t_near, t_far)
        return np.where((disc >= 0) & (t > HIT_EPS), t, np.inf)


@dataclass
class Surface:
    shape: object
    frequency: np.ndarray   # (3, 3) one spatial frequency vector per colour channel
    phase: np.ndarray       # (3,)

    def albedo(self, points):
        return 0.5 + 0.4 * np.sin(points @ self.frequency.T + self.phase)


@dataclass
class OracleScene:
    intrinsics: CameraIntrinsics
    surfaces: list
    train_poses: np.ndarray        # (F, 6)
    test_poses: np.ndarray         # (F - 1, 6) midway between training frames
    config: GeneratorConfig = field(default_factory=GeneratorConfig)

    @classmethod
    def build(cls, config=None):
        config = (config or GeneratorConfig()).validate()
        rng = np.random.default_rng(config.seed)
        K = CameraIntrinsics(config.focal, config.focal, (config.width - 1) / 2.0,
                             (config.height - 1) / 2.0, config.width, config.height).validate()

        def surface(shape):
            frequency = rng.uniform(-6.0, 6.0, size=(3, 3))
            return Surface(shape, frequency, rng.uniform(0.0, 2.0 * np.pi, size=3))

        surfaces = [surface(Plane(np.array([0.0, 0.0, 1.0]), 6.0))]
        if config.layout == "desk":
            jitter = rng.uniform(-0.05, 0.05, size=(2, 3))
            surfaces += [
                surface(Plane(np.array([0.0, 1.0, 0.0]), 1.0)),
                surface(Box(np.array([-0.6, 0.5, 3.5]) + jitter[0], np.full(3, 0.4))),
                surface(Sphere(np.array([0.7, 0.4, 3.0]) + jitter[1], 0.6)),
            ]
        train = camera_path(config, config.frames, offset=0.0)
        test = camera_path(config, config.frames, offset=0.5)[:-1]
        logger.info(f"Built {config.layout} scene with {len(surfaces)} surfaces, {config.frames} frames")
        return cls(K, surfaces, train, test, config)

    def cast(self, pose, pixels):
        """
        First hit along each pixel ray.

        Returns (planar depth (P,), world points (P, 3), surface index (P,));
        rays that hit nothing get depth 0 and index -1.
        """
        R, t = pose_matrix_np(pose)
        # camera z of K^-1 [u, v, 1] is 1, so the ray parameter is planar depth
        dirs = camera_rays(pixels, self.intrinsics) @ R.T
        hits = np.stack([s.shape.intersect(t, dirs) for s in self.surfaces], axis=-1)
        index = np.argmin(hits, axis=-1)
        depth = hits[np.arange(len(pixels)), index]
        missed = ~np.isfinite(depth)
        index = np.where(missed, NO_HIT, index)
        depth = np.where(missed, 0.0, depth)
        return depth, t + depth[:, None] * dirs, index

    def render(self, pose):
        """Exact (rgb (H, W, 3) in [0, 1], planar depth (H, W)) for a pose vector"""
        K = self.intrinsics
        pixels = pixel_grid(K.width, K.height).reshape(-1, 2)
        depth, points, index = self.cast(pose, pixels)
        rgb = np.zeros((len(pixels), 3))
        for k, s in enumerate(self.surfaces):
            hit = index == k
            rgb[hit] = s.albedo(points[hit])
        return rgb.reshape(K.height, K.width, 3), depth.reshape(K.height, K.width)

    def ground_truth_flow(self, pose_i, pose_j, threshold=None):
        """
        Flow from view i to view j by projecting each first-hit point into j.
        A pixel is valid when the point lands inside frame j in front of the
        camera and is the first hit of frame j's ray through that location.
        """
        K = self.intrinsics
        threshold = self.config.occlusion_threshold if threshold is None else threshold
        pixels = pixel_grid(K.width, K.height).reshape(-1, 2)
        depth_i, points, _ = self.cast(pose_i, pixels)
        R_j, t_j = pose_matrix_np(pose_j)
        cam_j = (points - t_j) @ R_j
        z = cam_j[:, 2]
        front = (depth_i > 0) & (z > MIN_PROJECTION_DEPTH)
        z_safe = np.where(front, z, 1.0)
        target = np.stack([cam_j[:, 0] / z_safe * K.fx + K.cx, cam_j[:, 1] / z_safe * K.fy + K.cy], axis=-1)
        valid = front & in_bounds(target, K.width, K.height)

        visible_depth = np.zeros(len(pixels))
        if valid.any():
            visible_depth[valid] = self.cast(pose_j, target[valid])[0]
        valid &= np.abs(visible_depth - z) <= threshold
        flow = np.where(valid[:, None], target - pixels, 0.0)
        return FlowField(flow.reshape(K.height, K.width, 2), valid.reshape(K.height, K.width))

    def max_visible_depth(self):
        depths = [self.render(pose)[1] for pose in self.train_poses]
        return float(max(d.max() for d in depths))


def camera_path(config, frames, offset=0.0):
    """
    Pose vectors along the camera path, sampled at (k + offset) / (frames - 1).

    arc: rotation about y by up to ``arc_degrees`` in total while orbiting the
    point (0, 0, radius) with a slight vertical bob.
    translate: sideways translation without rotation.
    """
    s = (np.arange(frames, dtype=np.float64) + offset) / (frames - 1)
    if config.motion == "translate":
        x = (s - 0.5) * 0.4
        return np.stack([np.zeros_like(s), np.zeros_like(s), np.zeros_like(s), x, np.zeros_like(s), np.zeros_like(s)], axis=-1)
    phi = np.deg2rad(config.arc_degrees) * (s - 0.5)
    r = config.radius
    y = -0.05 * np.sin(np.pi * s)
    return np.stack(
        [np.zeros_like(s), -phi, np.zeros_like(s), r * np.sin(phi), y, r - r * np.cos(phi)], axis=-1
    )


def _frame_outputs(scene, index, pose, next_pose):
    rgb, depth = scene.render(pose)
    flow = scene.ground_truth_flow(pose, next_pose) if next_pose is not None else None
    return index, rgb, depth, flow


def generate_scene(out_dir, config=None, threads=1):
    """
    Write a complete oracle dataset to ``out_dir``.

    Layout: scene.json, rgb/%04d.png (+ .ppm), depth/%04d.fndp,
    flow/%04d_%04d.flo, occ/%04d_%04d.pgm (255 = valid), gt_traj.tum and the
    held-out test views under test/ with test_traj.tum.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Cannot create dataset directory {out}: {e}")
        raise StorageException(f"Cannot create dataset directory {out}: {e}")

    scene = OracleScene.build(config)
    poses = scene.train_poses
    jobs = [(k, poses[k], poses[k + 1] if k + 1 < len(poses) else None) for k in range(len(poses))]

    def run(job):
        return _frame_outputs(scene, *job)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    for k, rgb, depth, flow in results:
        formats.write_png(out / "rgb" / f"{k:04d}.png", rgb)
        formats.write_ppm(out / "rgb" / f"{k:04d}.ppm", rgb)
        formats.write_depth(out / "depth" / f"{k:04d}.fndp", depth)
        if flow is not None:
            formats.write_flo(out / "flow" / f"{k:04d}_{k + 1:04d}.flo", flow.flow)
            formats.write_mask(out / "occ" / f"{k:04d}_{k + 1:04d}.pgm", flow.valid)
    write_tum(out / "gt_traj.tum", Trajectory.from_pose_vectors(poses))

    for k, pose in enumerate(scene.test_poses):
        rgb, depth = scene.render(pose)
        formats.write_png(out / "test" / "rgb" / f"{k:04d}.png", rgb)
        formats.write_depth(out / "test" / "depth" / f"{k:04d}.fndp", depth)
    write_tum(out / "test_traj.tum", Trajectory.from_pose_vectors(scene.test_poses))

    meta = {
        "intrinsics": scene.intrinsics.to_dict(),
        "frames": list(range(len(poses))),
        "test_frames": list(range(len(scene.test_poses))),
        "depth": "planar",
        "generator": asdict(scene.config),
    }
    try:
        (out / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write scene.json: {e}")
        raise StorageException(f"Failed to write scene.json: {e}")
    logger.info(f"Generated oracle dataset with {len(poses)} frames in {out}")
    return scene
