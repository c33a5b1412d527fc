import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from flownerf.camgeo.Camera import camera_rays, rodrigues
from flownerf.camgeo.sampling import sample_pixels
from flownerf.diffcore.Adam import Adam
from flownerf.diffcore.Tensor import Graph, backward
from flownerf.exceptions.Exceptions import ConfigException, NumericException
from flownerf.losses.losses import (
    LossReport,
    LossWeights,
    loss_depth,
    loss_flow,
    loss_pointcloud,
    loss_rgb,
    loss_warp,
    total_loss,
)
from flownerf.oracleio.flow_ops import chain_flows
from flownerf.oracleio.metrics import psnr
from flownerf.repository.CheckpointRepository import CheckpointRepository, TrainingState
from flownerf.repository.LossLogRepository import LossLogRepository
from flownerf.service.FlowNerfPipeline import FlowNerfPipeline
from flownerf.service.scheduler import PlateauScheduler

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    pipeline: FlowNerfPipeline
    iteration: int
    reports: list = field(default_factory=list)
    psnrs: list = field(default_factory=list)
    checkpoint: Path = None


class TrainerService:
    """
    Joint optimization of geometry, flow branch and per-frame poses.

    Each iteration takes the next consecutive frame pair (round-robin),
    samples ``rays_per_iter`` pixels of frame i and minimises the colour loss
    plus the weighted flow, depth, point-cloud and warping losses.
    """

    def __init__(self, config, dataset, out_dir=None):
        self.config = config.validate()
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.checkpoints = CheckpointRepository(self.out_dir) if self.out_dir is not None else None
        self.weights = LossWeights.from_config(config)

        if dataset.num_frames <= config.frame_interval:
            raise ConfigException(
                f"frame_interval {config.frame_interval} needs more than {dataset.num_frames} frames"
            )
        dataset.check_depth_range(config.near, config.far)

        K = dataset.intrinsics
        self.pairs = [(k, k + config.frame_interval) for k in range(dataset.num_frames - config.frame_interval)]
        self.targets = {pair: self._target_flow(*pair) for pair in self.pairs}
        self.ray_norms = np.linalg.norm(
            camera_rays(np.stack(np.meshgrid(np.arange(K.width), np.arange(K.height)), -1).reshape(-1, 2), K), axis=-1
        ).reshape(K.height, K.width)

        self.pipeline = FlowNerfPipeline(config, K, dataset.num_frames, np.random.default_rng(config.seed))
        self.optimizer = Adam(self.pipeline.parameter_groups(), config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.scheduler = PlateauScheduler(self.optimizer, config.plateau_patience, config.lr_decay, config.lr_floor)
        self.rng = np.random.default_rng([config.seed, 1])
        self.iteration = 0

    def _target_flow(self, i, j):
        hops = [self.dataset.flows.get((k, k + 1)) for k in range(i, j)]
        if any(h is None for h in hops):
            logger.warning(f"No supervisory flow for frames {i}->{j}; flow loss disabled for this pair")
            return None
        return chain_flows(hops)

    # --- state ------------------------------------------------------------

    def state(self):
        return TrainingState(
            config=self.config,
            iteration=self.iteration,
            params=self.pipeline.state_arrays(),
            optimizer=self.optimizer.state_dict(),
            scheduler=self.scheduler.state_dict(),
            rng_state=self.rng.bit_generator.state,
            intrinsics=self.dataset.intrinsics.to_dict(),
            num_frames=self.dataset.num_frames,
        )

    def restore(self, state):
        if state.num_frames and state.num_frames != self.dataset.num_frames:
            raise ConfigException(
                f"Checkpoint has {state.num_frames} frames, dataset has {self.dataset.num_frames}"
            )
        self.pipeline.load_state_arrays(state.params)
        if state.optimizer:
            self.optimizer.load_state_dict(state.optimizer)
        if state.scheduler:
            self.scheduler.load_state_dict(state.scheduler)
        if state.rng_state is not None:
            self.rng.bit_generator.state = state.rng_state
        self.iteration = state.iteration
        logger.info(f"Resumed training at iteration {self.iteration}")

    def save_checkpoint(self, name="latest"):
        if self.checkpoints is None:
            return None
        return self.checkpoints.save(self.state(), self.checkpoints.path_for(name))

    # --- optimisation -----------------------------------------------------

    def compute_losses(self, frame_i, frame_j):
        """Loss parts for one iteration; returns (parts, rendered rgb, target rgb)"""
        c = self.config
        ds = self.dataset
        K = ds.intrinsics
        pixels = sample_pixels(K.width, K.height, c.rays_per_iter, self.rng)
        u, v = pixels[:, 0].astype(np.int64), pixels[:, 1].astype(np.int64)

        out = self.pipeline.forward_pair(pixels, frame_i, frame_j, self.rng)
        target_rgb = ds.images[frame_i][v, u]
        parts = {
            "rgb": loss_rgb(out.render.rgb, target_rgb),
            "depth": loss_depth(out.render.depth, ds.depths[frame_i][v, u] * self.ray_norms[v, u]),
        }

        target = self.targets[(frame_i, frame_j)]
        if target is not None:
            valid = target.valid[v, u] & out.flow_valid
            parts["flow"] = loss_flow(out.pixels_j, pixels + target.flow[v, u], valid)

        pose_i = rodrigues(self.pipeline.poses[frame_i])
        pose_j = rodrigues(self.pipeline.poses[frame_j])
        parts["pc"] = loss_pointcloud(ds.depths[frame_i], ds.depths[frame_j], pose_i, pose_j, K, c.pc_points, self.rng)
        parts["rgb_s"] = loss_warp(ds.images[frame_i], ds.images[frame_j], ds.depths[frame_i], pose_i, pose_j, K)
        if out.flow_rgb is not None:
            parts["rgb_flow"] = loss_rgb(out.flow_rgb, target_rgb)
        return parts, out.render.rgb.values, target_rgb

    def step(self):
        """One optimisation step; returns (LossReport, train PSNR)"""
        frame_i, frame_j = self.pairs[self.iteration % len(self.pairs)]
        with Graph():
            parts, rendered, target = self.compute_losses(frame_i, frame_j)
            total = total_loss(parts, self.weights)
            report = LossReport.from_parts(parts, total)
            self.optimizer.zero_grad()
            backward(total)
        self.optimizer.step()
        self.iteration += 1
        train_psnr = psnr(rendered, target)
        self.scheduler.step(train_psnr)
        return report, train_psnr

    def train(self, max_iters=None, resume=None, progress=False):
        """
        Run until ``max_iters`` total iterations. Checkpoints every
        ``checkpoint_every`` iterations and on exit; a non-finite value aborts
        the run and leaves the last good checkpoint in place.
        """
        max_iters = self.config.max_iters if max_iters is None else max_iters
        if resume is not None:
            self.restore(CheckpointRepository().load(resume))

        log = None
        if self.out_dir is not None:
            log = LossLogRepository(self.out_dir / "loss_log.csv", self.config.aux_rgb_from_flow, append=resume is not None)

        result = TrainResult(self.pipeline, self.iteration)
        bar = tqdm(total=max_iters, initial=self.iteration, disable=not progress, desc="train")
        try:
            while self.iteration < max_iters:
                report, train_psnr = self.step()
                result.reports.append(report)
                result.psnrs.append(train_psnr)
                if log is not None:
                    log.append(self.iteration, report, train_psnr)
                if self.iteration % self.config.log_every == 0:
                    logger.info(f"iter {self.iteration}: total {report.total:.5f}, rgb {report.rgb:.5f}, psnr {train_psnr:.2f}")
                if self.iteration % self.config.checkpoint_every == 0:
                    self.save_checkpoint()
                bar.update(1)
        except NumericException as e:
            logger.error(f"Numeric abort at iteration {self.iteration} in op '{e.op}'; last good checkpoint retained")
            raise
        finally:
            bar.close()

        result.iteration = self.iteration
        result.checkpoint = self.save_checkpoint()
        logger.info(f"Training finished at iteration {self.iteration}")
        return result
