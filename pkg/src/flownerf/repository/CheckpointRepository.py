import os
import json
import struct
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from flownerf.config.Config import TrainConfig
from flownerf.exceptions.Exceptions import FormatParseException, StorageException

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FNRF"
CHECKPOINT_VERSION = 1
# magic, uint32 version, uint64 header length
_PREAMBLE = struct.Struct("<4sIQ")


@dataclass
class TrainingState:
    config: TrainConfig
    iteration: int
    params: dict                                    # name -> ndarray
    optimizer: dict = field(default_factory=dict)   # Adam.state_dict()
    scheduler: dict = field(default_factory=dict)
    rng_state: dict = None                          # numpy bit generator state
    intrinsics: dict = None
    num_frames: int = 0


class CheckpointRepository:
    """
    Binary checkpoints: "FNRF" magic, version, a length-prefixed JSON header
    (config snapshot, tensor names and shapes, iteration, optimizer and
    scheduler state, RNG state), then every tensor as raw little-endian f64.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else None

    def path_for(self, name="latest"):
        if self.directory is None:
            raise StorageException("Checkpoint repository has no directory")
        return self.directory / f"{name}.fnrf"

    def save(self, state, path=None):
        """Write ``state``; the previous file at ``path`` is replaced only once the new one is complete"""
        path = Path(path) if path is not None else self.path_for()
        tensors = [(f"param/{k}", v) for k, v in state.params.items()]
        moments = state.optimizer.get("moments", {})
        for name, m in moments.items():
            tensors.append((f"adam_m/{name}", m["m"]))
            tensors.append((f"adam_v/{name}", m["v"]))

        header = {
            "config": state.config.snapshot(),
            "iteration": state.iteration,
            "num_frames": state.num_frames,
            "intrinsics": state.intrinsics,
            "optimizer": {k: v for k, v in state.optimizer.items() if k != "moments"},
            "scheduler": state.scheduler,
            "rng_state": state.rng_state,
            "tensors": [{"name": name, "shape": list(np.shape(value))} for name, value in tensors],
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        blobs = b"".join(np.ascontiguousarray(value, dtype="<f8").tobytes() for _, value in tensors)
        payload = _PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)) + header_bytes + blobs

        tmp = path.with_name(path.name + ".tmp")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp.write_bytes(payload)
            os.replace(tmp, path)
        except OSError as e:
            logger.error(f"Failed to write checkpoint {path}: {e}")
            raise StorageException(f"Failed to write checkpoint {path}: {e}")
        logger.info(f"Saved checkpoint at iteration {state.iteration} to {path}")
        return path

    def load(self, path=None):
        path = Path(path) if path is not None else self.path_for()
        try:
            data = path.read_bytes()
        except OSError as e:
            logger.error(f"Failed to read checkpoint {path}: {e}")
            raise StorageException(f"Failed to read checkpoint {path}: {e}")

        if len(data) < _PREAMBLE.size:
            raise FormatParseException(path, len(data), "truncated checkpoint preamble")
        magic, version, header_len = _PREAMBLE.unpack_from(data, 0)
        if magic != CHECKPOINT_MAGIC:
            raise FormatParseException(path, 0, f"bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise FormatParseException(path, 4, f"unsupported checkpoint version {version}")
        offset = _PREAMBLE.size
        if len(data) < offset + header_len:
            raise FormatParseException(path, len(data), "truncated checkpoint header")
        try:
            header = json.loads(data[offset:offset + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatParseException(path, offset, f"malformed checkpoint header: {e}")
        offset += header_len

        arrays = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            end = offset + 8 * count
            if end > len(data):
                raise FormatParseException(path, len(data), f"truncated tensor '{entry['name']}'")
            arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
            offset = end

        params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
        optimizer = dict(header["optimizer"])
        if optimizer:
            optimizer["moments"] = {
                k[len("adam_m/"):]: {"m": v, "v": arrays[f"adam_v/{k[len('adam_m/'):]}"]}
                for k, v in arrays.items() if k.startswith("adam_m/")
            }
        return TrainingState(
            config=TrainConfig.from_dict(header["config"]),
            iteration=int(header["iteration"]),
            params=params,
            optimizer=optimizer,
            scheduler=header["scheduler"],
            rng_state=header["rng_state"],
            intrinsics=header.get("intrinsics"),
            num_frames=int(header.get("num_frames", 0)),
        )

    def exists(self, path=None):
        path = Path(path) if path is not None else self.path_for()
        return path.is_file()
