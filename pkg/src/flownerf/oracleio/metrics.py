"""
Evaluation metrics: image quality, depth suite and flow end-point error.
"""

import logging

import numpy as np
from scipy.ndimage import gaussian_filter

from flownerf.exceptions.Exceptions import ContractException, MetricException

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
# radius int(3.5 * 1.5 + 0.5) = 5, an 11x11 window
SSIM_TRUNCATE = 3.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_shapes(pred, gt, kind):
    if pred.shape != gt.shape:
        raise ContractException(f"{kind}: prediction {pred.shape} and ground truth {gt.shape} differ")


def _valid_mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MetricException("Metric mask has no valid pixels")
    return mask


def psnr(pred, gt, data_range=1.0):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt, "psnr")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(data_range ** 2 / mse)))


def _blur(x):
    return gaussian_filter(x, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")


def ssim(pred, gt, data_range=1.0):
    """Gaussian-window SSIM averaged over pixels and channels"""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt, "ssim")
    if pred.ndim == 2:
        pred, gt = pred[..., None], gt[..., None]
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    scores = []
    for ch in range(pred.shape[-1]):
        x, y = pred[..., ch], gt[..., ch]
        mu_x, mu_y = _blur(x), _blur(y)
        var_x = _blur(x * x) - mu_x ** 2
        var_y = _blur(y * y) - mu_y ** 2
        cov = _blur(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def depth_metrics(pred, gt, mask=None):
    """
    Abs Rel, Sq Rel, RMSE, RMSE log and δ thresholds after median scaling
    s = median(gt) / median(pred) over pixels valid in both maps.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt, "depth")
    valid = _valid_mask(mask, gt.shape) & (gt > 0) & (pred > 0)
    if not valid.any():
        raise MetricException("No pixel has positive predicted and ground-truth depth")
    p, g = pred[valid], gt[valid]
    p = p * (np.median(g) / np.median(p))

    ratio = np.maximum(p / g, g / p)
    return {
        "abs_rel": float(np.mean(np.abs(p - g) / g)),
        "sq_rel": float(np.mean((p - g) ** 2 / g)),
        "rmse": float(np.sqrt(np.mean((p - g) ** 2))),
        "rmse_log": float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        "delta1": float(np.mean(ratio < 1.25)),
        "delta2": float(np.mean(ratio < 1.25 ** 2)),
        "delta3": float(np.mean(ratio < 1.25 ** 3)),
    }


def flow_epe(pred, gt, mask=None):
    """Average end-point error over non-occluded pixels; ``epe_l2`` is primary"""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt, "flow")
    valid = _valid_mask(mask, gt.shape[:-1])
    diff = (pred - gt)[valid]
    return {
        "epe_l2": float(np.mean(np.linalg.norm(diff, axis=-1))),
        "epe_l1": float(np.mean(np.abs(diff).sum(axis=-1))),
        "pixels": int(valid.sum()),
    }


def eval_metrics(pred, gt, kind, mask=None):
    """Dispatch on ``kind`` in {image, depth, flow}"""
    if kind == "image":
        return {"psnr": psnr(pred, gt), "ssim": ssim(pred, gt)}
    if kind == "depth":
        return depth_metrics(pred, gt, mask)
    if kind == "flow":
        return flow_epe(pred, gt, mask)
    raise ContractException(f"Unknown metric kind: {kind}")
