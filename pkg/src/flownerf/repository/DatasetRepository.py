import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from flownerf.camgeo.Camera import CameraIntrinsics
from flownerf.camgeo.trajectory import read_tum
from flownerf.exceptions.Exceptions import ConfigException, StorageException
from flownerf.oracleio import formats
from flownerf.oracleio.flow_ops import FlowField

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    root: Path
    intrinsics: CameraIntrinsics
    frame_ids: list
    images: np.ndarray                 # (F, H, W, 3) in [0, 1]
    depths: np.ndarray                 # (F, H, W) planar depth
    flows: dict                        # (i, i + 1) -> FlowField
    gt_poses: np.ndarray = None        # (F, 6) when gt_traj.tum is present
    test_images: np.ndarray = None
    test_depths: np.ndarray = None
    test_poses: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self):
        return len(self.frame_ids)

    def check_depth_range(self, near, far):
        """Every visible depth must lie inside the sampling bounds"""
        visible = self.depths[self.depths > 0]
        if visible.size and (visible.min() < near or visible.max() > far):
            raise ConfigException(
                f"Dataset depths span [{visible.min():.4f}, {visible.max():.4f}], outside [{near}, {far}]"
            )


class DatasetRepository:
    """Reads the dataset directory layout written by ``generate_scene``"""

    def __init__(self, root):
        self.root = Path(root)

    def _meta(self):
        path = self.root / "scene.json"
        if not path.is_file():
            raise StorageException(f"No scene.json in {self.root}")
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Failed to read {path}: {e}")
            raise StorageException(f"Failed to read {path}: {e}")

    def load_flow(self, i, j):
        """Supervisory flow i -> j with its validity mask; a missing mask means all valid"""
        flow_path = self.root / "flow" / f"{i:04d}_{j:04d}.flo"
        flow = formats.read_flo(flow_path).astype(np.float64)
        mask_path = self.root / "occ" / f"{i:04d}_{j:04d}.pgm"
        valid = formats.read_mask(mask_path) if mask_path.is_file() else np.ones(flow.shape[:2], dtype=bool)
        return FlowField(flow, valid & np.all(np.isfinite(flow), axis=-1))

    def load(self, with_test=True):
        meta = self._meta()
        K = CameraIntrinsics.from_dict(meta["intrinsics"]).validate()
        ids = list(meta["frames"])
        images = np.stack([formats.read_image(self.root / "rgb" / f"{k:04d}.png") for k in ids])
        depths = np.stack([formats.read_depth(self.root / "depth" / f"{k:04d}.fndp") for k in ids]).astype(np.float64)
        if images.shape[1:3] != (K.height, K.width):
            raise ConfigException(f"Images are {images.shape[2]}x{images.shape[1]}, intrinsics say {K.width}x{K.height}")

        flows = {}
        for a, b in zip(ids[:-1], ids[1:]):
            if (self.root / "flow" / f"{a:04d}_{b:04d}.flo").is_file():
                flows[(a, b)] = self.load_flow(a, b)
        gt_poses = self._poses("gt_traj.tum")

        dataset = Dataset(self.root, K, ids, images, depths, flows, gt_poses, meta=meta)
        test_ids = meta.get("test_frames", [])
        if with_test and test_ids:
            dataset.test_images = np.stack(
                [formats.read_image(self.root / "test" / "rgb" / f"{k:04d}.png") for k in test_ids]
            )
            dataset.test_depths = np.stack(
                [formats.read_depth(self.root / "test" / "depth" / f"{k:04d}.fndp") for k in test_ids]
            ).astype(np.float64)
            dataset.test_poses = self._poses("test_traj.tum")
        logger.info(f"Loaded dataset {self.root}: {len(ids)} frames, {len(flows)} flows, {K.width}x{K.height}")
        return dataset

    def _poses(self, name):
        path = self.root / name
        if not path.is_file():
            return None
        return read_tum(path).pose_vectors()
