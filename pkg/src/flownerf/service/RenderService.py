import logging
from pathlib import Path

import numpy as np

from flownerf.camgeo.trajectory import read_tum
from flownerf.converter.Visualization import depth_to_color, flow_to_color
from flownerf.exceptions.Exceptions import ConfigException, ContractException
from flownerf.flowbij.flow_composition import render_novel_flow
from flownerf.oracleio import formats
from flownerf.repository.CheckpointRepository import CheckpointRepository
from flownerf.service.FlowNerfPipeline import FlowNerfPipeline

logger = logging.getLogger(__name__)

RENDER_MODES = ("rgb", "depth", "flow")


class RenderService:
    """Full-frame rendering of images, depth maps and novel-view flow from a checkpoint"""

    def __init__(self, pipeline):
        self.pipeline = pipeline

    @classmethod
    def from_checkpoint(cls, path):
        return cls(FlowNerfPipeline.from_state(CheckpointRepository().load(path)))

    def resolve_pose(self, spec):
        """
        A pose given as a training frame index (int or digit string), a path to
        a TUM file (first line used) or a 6-vector.
        """
        if isinstance(spec, (list, tuple, np.ndarray)):
            pose = np.asarray(spec, dtype=np.float64)
            if pose.shape != (6,):
                raise ContractException(f"Pose vector must have 6 entries, got {pose.shape}")
            return pose
        if isinstance(spec, (int, np.integer)) or (isinstance(spec, str) and spec.isdigit()):
            index = int(spec)
            if not 0 <= index < self.pipeline.num_frames:
                raise ConfigException(f"Frame index {index} outside 0..{self.pipeline.num_frames - 1}")
            return self.pipeline.poses[index].values.copy()
        trajectory = read_tum(Path(spec))
        if len(trajectory) == 0:
            raise ConfigException(f"Trajectory file {spec} holds no poses")
        return trajectory.pose_vectors()[0]

    def render_rgb(self, pose):
        rgb, _ = self.pipeline.render_view(pose)
        return rgb

    def render_depth(self, pose):
        _, depth = self.pipeline.render_view(pose)
        return depth

    def render_flow(self, pose_a, pose_b):
        p = self.pipeline
        return render_novel_flow(p.embedding, p.bijection, p.canonical, pose_a, pose_b, p.K, p.config)

    def render_views(self, mode, out_path, pose_a, pose_b=None):
        """
        Write the rendering for ``mode`` to ``out_path``: rgb -> PNG,
        depth -> FNDP plus a colourised PNG, flow -> .flo plus a colour-wheel PNG.
        """
        if mode not in RENDER_MODES:
            raise ConfigException(f"Unknown render mode: {mode}")
        out_path = Path(out_path)
        pose_a = self.resolve_pose(pose_a)

        if mode == "rgb":
            formats.write_png(out_path, self.render_rgb(pose_a))
            written = [out_path]
        elif mode == "depth":
            depth = self.render_depth(pose_a)
            raw = out_path.with_suffix(".fndp")
            formats.write_depth(raw, depth)
            formats.write_png(out_path.with_suffix(".png"), depth_to_color(depth))
            written = [raw, out_path.with_suffix(".png")]
        else:
            if pose_b is None:
                raise ConfigException("Flow rendering needs --pose-b")
            flow, valid = self.render_flow(pose_a, self.resolve_pose(pose_b))
            raw = out_path.with_suffix(".flo")
            formats.write_flo(raw, flow)
            formats.write_png(out_path.with_suffix(".png"), flow_to_color(flow, valid))
            written = [raw, out_path.with_suffix(".png")]
        logger.info(f"Rendered {mode} to {', '.join(str(p) for p in written)}")
        return written
