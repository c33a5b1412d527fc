"""
Readers and writers for the dataset files.

- ``.flo``  Middlebury optical flow: float32 magic 202021.25, int32 width,
  int32 height, then H×W interleaved (u, v) float32, all little-endian.
- ``.fndp`` depth: 16-byte header (b"FNDP", uint32 version, uint32 width,
  uint32 height) followed by H×W float32 little-endian planar depth.
- ``.pgm``  occlusion masks (255 = valid), ``.png``/``.ppm`` 8-bit images,
  both through Pillow.
"""

import logging
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from flownerf.exceptions.Exceptions import ContractException, FormatParseException, StorageException

logger = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
FNDP_MAGIC = b"FNDP"
FNDP_VERSION = 1


def _tmp_path(path):
    return path.with_name(path.name + ".tmp")


def _write_bytes(path, payload):
    """Write through a sibling temp file and rename it over ``path``"""
    path = Path(path)
    tmp = _tmp_path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as e:
        tmp.unlink(missing_ok=True)
        logger.error(f"Failed to write {path}: {e}")
        raise StorageException(f"Failed to write {path}: {e}")


def _read_bytes(path):
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as e:
        logger.error(f"Failed to read {path}: {e}")
        raise StorageException(f"Failed to read {path}: {e}")


def write_flo(path, flow):
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ContractException(f"Flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    header = struct.pack("<fii", FLO_MAGIC, w, h)
    _write_bytes(path, header + flow.astype("<f4").tobytes())


def read_flo(path):
    data = _read_bytes(path)
    if len(data) < 12:
        raise FormatParseException(path, len(data), "truncated .flo header")
    magic, w, h = struct.unpack_from("<fii", data, 0)
    if magic != FLO_MAGIC:
        raise FormatParseException(path, 0, f"bad .flo magic {magic}")
    if w <= 0 or h <= 0:
        raise FormatParseException(path, 4, f"invalid .flo size {w}x{h}")
    expected = 12 + 8 * w * h
    if len(data) < expected:
        raise FormatParseException(path, len(data), f"truncated .flo payload, expected {expected} bytes")
    return np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2).astype(np.float32)


def write_depth(path, depth):
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ContractException(f"Depth must be (H, W), got {depth.shape}")
    h, w = depth.shape
    header = FNDP_MAGIC + struct.pack("<III", FNDP_VERSION, w, h)
    _write_bytes(path, header + depth.astype("<f4").tobytes())


def read_depth(path):
    data = _read_bytes(path)
    if len(data) < 16:
        raise FormatParseException(path, len(data), "truncated depth header")
    if data[:4] != FNDP_MAGIC:
        raise FormatParseException(path, 0, f"bad depth magic {data[:4]!r}")
    version, w, h = struct.unpack_from("<III", data, 4)
    if version != FNDP_VERSION:
        raise FormatParseException(path, 4, f"unsupported depth version {version}")
    expected = 16 + 4 * w * h
    if len(data) < expected:
        raise FormatParseException(path, len(data), f"truncated depth payload, expected {expected} bytes")
    return np.frombuffer(data, dtype="<f4", count=w * h, offset=16).reshape(h, w).astype(np.float32)


def _save_image(path, array, fmt):
    path = Path(path)
    tmp = _tmp_path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.ascontiguousarray(array)).save(tmp, format=fmt)
        os.replace(tmp, path)
    except OSError as e:
        tmp.unlink(missing_ok=True)
        logger.error(f"Failed to write {path}: {e}")
        raise StorageException(f"Failed to write {path}: {e}")


def _load_image(path, mode):
    path = Path(path)
    if not path.is_file():
        raise StorageException(f"Image not found: {path}")
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert(mode))
    except OSError as e:
        raise FormatParseException(path, 0, f"unreadable image: {e}")


def to_uint8(image):
    """[0, 1] floats -> uint8 with rounding; uint8 input is returned unchanged"""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def write_png(path, image):
    image = to_uint8(image)
    _save_image(path, image, "PNG")


def write_ppm(path, image):
    _save_image(path, to_uint8(image), "PPM")


def read_image(path):
    """8-bit RGB image as float64 in [0, 1]"""
    return _load_image(path, "RGB").astype(np.float64) / 255.0


def write_mask(path, mask):
    mask = np.asarray(mask, dtype=bool)
    _save_image(path, np.where(mask, 255, 0).astype(np.uint8), "PPM")


def read_mask(path):
    return _load_image(path, "L") > 127
