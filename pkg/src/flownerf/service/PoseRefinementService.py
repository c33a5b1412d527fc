import logging
from dataclasses import dataclass, field

import numpy as np

from flownerf.camgeo.sampling import sample_pixels
from flownerf.diffcore.Adam import Adam
from flownerf.diffcore.Tensor import Graph, Tensor, backward
from flownerf.losses.losses import loss_rgb

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 3.0


@dataclass
class RefinementResult:
    pose: np.ndarray
    losses: list = field(default_factory=list)
    diverged: bool = False


def initial_test_pose(learned_poses, index):
    """Test view ``index`` sits between training frames index and index + 1"""
    learned_poses = np.asarray(learned_poses, dtype=np.float64)
    return 0.5 * (learned_poses[index] + learned_poses[index + 1])


class PoseRefinementService:
    """Photometric refinement of a single 6-DoF pose against a frozen model"""

    def __init__(self, pipeline, iterations=None, lr=None, rays=None, seed=None):
        c = pipeline.config
        self.pipeline = pipeline
        self.iterations = c.test_pose_iters if iterations is None else iterations
        self.lr = c.test_pose_lr if lr is None else lr
        self.rays = c.rays_per_iter if rays is None else rays
        self.seed = c.seed if seed is None else seed

    def optimize_test_pose(self, target_image, init_pose):
        """
        Adam on the colour loss over the pose vector only. If the loss ever climbs to
        three times its starting value the initial pose is returned instead.
        """
        init_pose = np.asarray(init_pose, dtype=np.float64).copy()
        pose = Tensor(init_pose.copy(), requires_grad=True, name="test_pose")
        optimizer = Adam([{"name": "pose", "params": [("test_pose", pose)], "lr": self.lr}])
        rng = np.random.default_rng([self.seed, 2])
        K = self.pipeline.K
        target_image = np.asarray(target_image, dtype=np.float64)
        result = RefinementResult(init_pose.copy())

        for _ in range(self.iterations):
            pixels = sample_pixels(K.width, K.height, self.rays, rng)
            u, v = pixels[:, 0].astype(np.int64), pixels[:, 1].astype(np.int64)
            with Graph():
                out = self.pipeline.render_rays(pixels, pose)
                loss = loss_rgb(out.rgb, target_image[v, u])
                pose.zero_grad()
                backward(loss)
            for _, p in self.pipeline.named_parameters():
                p.zero_grad()
            value = loss.item()
            result.losses.append(value)
            if value > DIVERGENCE_FACTOR * result.losses[0]:
                logger.warning(
                    f"Test-pose refinement diverged (loss {value:.5f} vs start {result.losses[0]:.5f}); keeping initial pose"
                )
                result.pose = init_pose
                result.diverged = True
                return result
            optimizer.step()

        result.pose = pose.values.copy()
        logger.info(
            f"Refined test pose over {self.iterations} steps"
            + (f": loss {result.losses[0]:.5f} -> {result.losses[-1]:.5f}" if result.losses else "")
        )
        return result
