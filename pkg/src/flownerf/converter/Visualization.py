"""
Colour renderings of flow and depth for inspection.
"""

import numpy as np
import matplotlib

matplotlib.use("Agg")
from matplotlib import colormaps  # noqa: E402

DEPTH_COLORMAP = "turbo"


def make_colorwheel():
    """Middlebury colour wheel: RY, YG, GC, CB, BM, MR segments (55 x 3 table)"""
    segments = [(15, (255, 0, 0), (255, 255, 0)), (6, (255, 255, 0), (0, 255, 0)),
                (4, (0, 255, 0), (0, 255, 255)), (11, (0, 255, 255), (0, 0, 255)),
                (13, (0, 0, 255), (255, 0, 255)), (6, (255, 0, 255), (255, 0, 0))]
    rows = []
    for n, start, end in segments:
        ramp = np.arange(n)[:, None] / n
        rows.append(np.array(start)[None, :] * (1 - ramp) + np.array(end)[None, :] * ramp)
    return np.floor(np.concatenate(rows, axis=0))


def flow_to_color(flow, valid=None, max_radius=None):
    """(H, W, 2) flow -> (H, W, 3) uint8 using hue for direction and saturation for magnitude"""
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[..., 0], flow[..., 1]
    radius = np.sqrt(u ** 2 + v ** 2)
    if max_radius is None:
        max_radius = radius[valid].max() if valid is not None and valid.any() else radius.max()
    scale = max_radius if max_radius > 0 else 1.0
    u, v, radius = u / scale, v / scale, radius / scale

    wheel = make_colorwheel()
    n = len(wheel)
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1) / 2 * (n - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % n
    f = (fk - k0)[..., None]
    color = ((1 - f) * wheel[k0] + f * wheel[k1]) / 255.0
    r = np.minimum(radius, 1.0)[..., None]
    color = 1 - r * (1 - color)
    if valid is not None:
        color = np.where(np.asarray(valid, dtype=bool)[..., None], color, 0.0)
    return np.floor(255 * color).astype(np.uint8)


def depth_to_color(depth, vmin=None, vmax=None):
    """(H, W) depth -> (H, W, 3) uint8 through a matplotlib colormap; zero depth stays black"""
    depth = np.asarray(depth, dtype=np.float64)
    positive = depth > 0
    if not positive.any():
        return np.zeros(depth.shape + (3,), dtype=np.uint8)
    vmin = depth[positive].min() if vmin is None else vmin
    vmax = depth[positive].max() if vmax is None else vmax
    norm = np.clip((depth - vmin) / max(vmax - vmin, 1e-12), 0.0, 1.0)
    rgb = colormaps[DEPTH_COLORMAP](norm)[..., :3]
    rgb = np.where(positive[..., None], rgb, 0.0)
    return np.round(rgb * 255).astype(np.uint8)
