import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from flownerf.camgeo.Camera import pose_matrix_np
from flownerf.camgeo.trajectory import pose_metrics
from flownerf.exceptions.Exceptions import AlignmentException, MetricException, StorageException
from flownerf.flowbij.flow_composition import render_novel_flow
from flownerf.oracleio.flow_ops import chain_flows, reproject_flow
from flownerf.oracleio.metrics import depth_metrics, flow_epe, psnr, ssim
from flownerf.service.PoseRefinementService import PoseRefinementService, initial_test_pose
from flownerf.service.TrainerService import TrainerService

logger = logging.getLogger(__name__)

EPE_INTERVALS = (1, 2, 4, 8, 16)
ABLATION_ARMS = {
    "full": {},
    "no_message_passing": {"message_passing": False},
    "orthogonal": {"projection": "orthogonal"},
}


@dataclass
class Predictions:
    """Everything the report compares against ground truth, independent of how it was produced"""
    pose_vectors: np.ndarray                          # (F, 6) learned training poses
    train_rgb: list = field(default_factory=list)     # per training frame (H, W, 3)
    train_depth: list = field(default_factory=list)   # per training frame (H, W) planar depth
    novel_rgb: list = field(default_factory=list)     # per test view
    novel_depth: list = field(default_factory=list)
    forward_flows: dict = field(default_factory=dict)   # (a, b) -> (H, W, 2), a < b
    backward_flows: dict = field(default_factory=dict)  # (b, a) -> (H, W, 2), b > a


def epe_pairs(num_frames, interval):
    """(a, a + interval) pairs; empty when the scene is too short"""
    return [(a, a + interval) for a in range(num_frames - interval)]


def ground_truth_flow(dataset, a, b):
    """
    Chained ground-truth flow a -> b. Forward hops come from the stored
    consecutive flows; backward hops are reprojected from ground-truth depth
    and poses.
    """
    step = 1 if b > a else -1
    hops = []
    for k in range(a, b, step):
        if step > 0:
            hop = dataset.flows.get((k, k + 1))
        elif dataset.gt_poses is not None:
            hop = reproject_flow(dataset.depths[k], dataset.gt_poses[k], dataset.gt_poses[k - 1],
                                 dataset.intrinsics, depth_j=dataset.depths[k - 1])
        else:
            hop = None
        if hop is None:
            return None
        hops.append(hop)
    return chain_flows(hops)


def _mean_records(records):
    keys = records[0].keys()
    return {k: float(np.mean([r[k] for r in records])) for k in keys}


def _image_block(rgbs, depths, gt_rgbs, gt_depths):
    if not rgbs:
        return None
    block = {"psnr": float(np.mean([psnr(p, g) for p, g in zip(rgbs, gt_rgbs)])),
             "ssim": float(np.mean([ssim(p, g) for p, g in zip(rgbs, gt_rgbs)]))}
    if depths and gt_depths is not None:
        try:
            block["depth"] = _mean_records([depth_metrics(p, g) for p, g in zip(depths, gt_depths)])
        except MetricException as e:
            logger.warning(f"Depth metrics unavailable: {e}")
            block["depth"] = None
    return block


def _epe_table(predicted, dataset, direction):
    table = {}
    for interval in EPE_INTERVALS:
        pairs = epe_pairs(dataset.num_frames, interval)
        if not pairs:
            continue
        diffs_l2, diffs_l1, count = [], [], 0
        for a, b in pairs:
            src, dst = (a, b) if direction == "forward" else (b, a)
            pred = predicted.get((src, dst))
            gt = ground_truth_flow(dataset, src, dst)
            if pred is None or gt is None or not gt.valid.any():
                continue
            record = flow_epe(pred, gt.flow, gt.valid)
            diffs_l2.append(record["epe_l2"] * record["pixels"])
            diffs_l1.append(record["epe_l1"] * record["pixels"])
            count += record["pixels"]
        if count:
            table[str(interval)] = {"epe_l2": sum(diffs_l2) / count, "epe_l1": sum(diffs_l1) / count, "pixels": count}
    return table


def build_report(predictions, dataset):
    """
    Compare predictions with the dataset's ground truth. Components whose
    ground truth is missing are listed under ``absent``.
    """
    report = {"absent": []}

    report["trajectory"] = None
    if dataset.gt_poses is not None:
        est = [pose_matrix_np(v) for v in predictions.pose_vectors]
        gt = [pose_matrix_np(v) for v in dataset.gt_poses]
        try:
            report["trajectory"] = pose_metrics(
                np.stack([r for r, _ in est]), np.stack([t for _, t in est]),
                np.stack([r for r, _ in gt]), np.stack([t for _, t in gt]),
            )
        except AlignmentException as e:
            logger.warning(f"Trajectory metrics unavailable: {e}")
    if report["trajectory"] is None:
        report["absent"].append("trajectory")

    report["train_views"] = _image_block(predictions.train_rgb, predictions.train_depth, dataset.images, dataset.depths)
    if report["train_views"] is None:
        report["absent"].append("train_views")
    report["novel_views"] = None
    if dataset.test_images is not None:
        report["novel_views"] = _image_block(
            predictions.novel_rgb, predictions.novel_depth, dataset.test_images, dataset.test_depths
        )
    if report["novel_views"] is None:
        report["absent"].append("novel_views")

    report["epe"] = {
        "forward": _epe_table(predictions.forward_flows, dataset, "forward"),
        "backward": _epe_table(predictions.backward_flows, dataset, "backward"),
    }
    for direction, table in report["epe"].items():
        if not table:
            report["absent"].append(f"epe_{direction}")
    return report


def write_report(report, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write report {path}: {e}")
        raise StorageException(f"Failed to write report {path}: {e}")
    return path


def read_report(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise StorageException(f"Failed to read report {path}: {e}")


class EvaluationService:
    """Renders a trained model against a dataset and writes the JSON report"""

    def __init__(self, pipeline, dataset):
        self.pipeline = pipeline
        self.dataset = dataset

    def _flow(self, pose_a, pose_b):
        p = self.pipeline
        flow, _ = render_novel_flow(p.embedding, p.bijection, p.canonical, pose_a, pose_b, p.K, p.config)
        return flow

    def predict(self, refine=True):
        p = self.pipeline
        ds = self.dataset
        poses = p.pose_vectors()
        predictions = Predictions(pose_vectors=poses)

        for k in range(ds.num_frames):
            rgb, depth = p.render_view(poses[k])
            predictions.train_rgb.append(rgb)
            predictions.train_depth.append(depth)

        if ds.test_images is not None:
            refiner = PoseRefinementService(p, iterations=None if refine else 0)
            for k, image in enumerate(ds.test_images):
                if k + 1 >= ds.num_frames:
                    break
                result = refiner.optimize_test_pose(image, initial_test_pose(poses, k))
                rgb, depth = p.render_view(result.pose)
                predictions.novel_rgb.append(rgb)
                predictions.novel_depth.append(depth)

        for interval in EPE_INTERVALS:
            for a, b in epe_pairs(ds.num_frames, interval):
                predictions.forward_flows[(a, b)] = self._flow(poses[a], poses[b])
                predictions.backward_flows[(b, a)] = self._flow(poses[b], poses[a])
        logger.info(f"Rendered predictions for {ds.num_frames} frames")
        return predictions

    def evaluate(self, report_path=None, refine=True):
        report = build_report(self.predict(refine), self.dataset)
        if report_path is not None:
            write_report(report, report_path)
            logger.info(f"Wrote evaluation report to {report_path}")
        return report


def run_ablation(config, dataset, out_dir, max_iters=None):
    """
    Train and evaluate the full model, the model without message passing and
    the orthogonal-projection model; returns the combined report with one
    depth row per arm.
    """
    out_dir = Path(out_dir)
    arms = {}
    for name, overrides in ABLATION_ARMS.items():
        arm_config = replace(config, **overrides).validate()
        logger.info(f"Ablation arm '{name}': {overrides or 'defaults'}")
        result = TrainerService(arm_config, dataset, out_dir / name).train(max_iters=max_iters)
        report = EvaluationService(result.pipeline, dataset).evaluate(out_dir / name / "report.json")
        views = report["novel_views"] or report["train_views"] or {}
        arms[name] = {"overrides": overrides, "depth": views.get("depth"), "report": report}
    combined = {"arms": arms, "depth_table": {name: arm["depth"] for name, arm in arms.items()}}
    write_report(combined, out_dir / "ablation.json")
    return combined
