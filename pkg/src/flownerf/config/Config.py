import os
import json
import logging
from dataclasses import dataclass, asdict, fields
from pathlib import Path

from dotenv import load_dotenv, dotenv_values

from flownerf.exceptions.Exceptions import ConfigException, StorageException

# Load environment variables
load_dotenv()

# Process configuration
LOG_LEVEL = os.getenv("FLOWNERF_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("FLOWNERF_LOG_FILE")
THREADS_OVERRIDE = os.getenv("FLOWNERF_THREADS")

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class TrainConfig:
    # sampling
    rays_per_iter: int = 1024
    samples_per_ray: int = 128
    near: float = 0.01
    far: float = 10.0
    alpha: float = 0.2
    # loss weights
    lambda_flow: float = 0.05
    lambda_depth: float = 0.04
    lambda_pc: float = 1.0
    lambda_warp: float = 1.0
    lambda_rgb_flow: float = 1.0
    # per-group learning rates
    lr_pose: float = 5e-4
    lr_geometry: float = 5e-4
    lr_bijective: float = 1e-4
    lr_canonical: float = 3e-4
    lr_embedding: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_patience: int = 1000
    lr_decay: float = 0.5
    lr_floor: float = 1e-6
    # pipeline switches
    frame_interval: int = 1
    message_passing: bool = True
    detach_message: bool = False
    projection: str = "perspective"
    ortho_scale: float = 1.0
    activation: str = "gabor"
    gabor_omega_std: float = 30.0
    aux_rgb_from_flow: bool = False
    # network sizes
    pos_freqs: int = 10
    dir_freqs: int = 4
    geometry_width: int = 256
    geometry_depth: int = 8
    geometry_skip: int = 5
    feature_dim: int = 128
    canonical_width: int = 256
    embed_width: int = 256
    coupling_width: int = 128
    coupling_layers: int = 4
    pc_points: int = 2048
    # run control
    seed: int = 0
    max_iters: int = 5000
    checkpoint_every: int = 500
    log_every: int = 50
    chunk: int = 4096
    threads: int = 1
    test_pose_iters: int = 300
    test_pose_lr: float = 1e-3

    def validate(self):
        positive = [
            "rays_per_iter", "samples_per_ray", "near", "far", "alpha", "lr_pose", "lr_geometry",
            "lr_bijective", "lr_canonical", "lr_embedding", "adam_eps", "plateau_patience",
            "lr_decay", "lr_floor", "frame_interval", "ortho_scale", "gabor_omega_std", "pos_freqs",
            "dir_freqs", "geometry_width", "geometry_depth", "geometry_skip", "feature_dim",
            "canonical_width", "embed_width", "coupling_width", "coupling_layers", "pc_points",
            "checkpoint_every", "log_every", "chunk", "threads", "test_pose_lr",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigException(f"Config value '{name}' must be positive, got {getattr(self, name)}")
        for name in ["lambda_flow", "lambda_depth", "lambda_pc", "lambda_warp", "lambda_rgb_flow", "max_iters", "test_pose_iters", "seed"]:
            if getattr(self, name) < 0:
                raise ConfigException(f"Config value '{name}' must be nonnegative, got {getattr(self, name)}")
        if self.far <= self.near:
            raise ConfigException(f"far ({self.far}) must exceed near ({self.near})")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ConfigException("Adam betas must lie in [0, 1)")
        if self.lr_decay >= 1.0:
            raise ConfigException(f"lr_decay must be below 1, got {self.lr_decay}")
        if self.projection not in ("perspective", "orthogonal"):
            raise ConfigException(f"Unknown projection mode: {self.projection}")
        if self.activation not in ("gabor", "sine"):
            raise ConfigException(f"Unknown activation: {self.activation}")
        if self.geometry_skip >= self.geometry_depth:
            raise ConfigException("geometry_skip must be smaller than geometry_depth")
        return self

    def snapshot(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.snapshot(), sort_keys=True)

    @classmethod
    def from_dict(cls, values):
        return cls(**{f.name: _coerce(f.name, f.type, values[f.name]) for f in fields(cls) if f.name in values}).validate()


@dataclass
class GeneratorConfig:
    frames: int = 7
    width: int = 64
    height: int = 48
    seed: int = 0
    focal: float = 60.0
    arc_degrees: float = 15.0
    radius: float = 4.0
    occlusion_threshold: float = 1e-3
    layout: str = "desk"
    motion: str = "arc"

    def validate(self):
        if self.frames < 3:
            raise ConfigException(f"Scene needs at least 3 frames, got {self.frames}")
        if self.width < 16 or self.height < 16:
            raise ConfigException(f"Scene size must be at least 16x16, got {self.width}x{self.height}")
        if self.focal <= 0 or self.occlusion_threshold <= 0:
            raise ConfigException("focal and occlusion_threshold must be positive")
        if self.layout not in ("desk", "plane"):
            raise ConfigException(f"Unknown scene layout: {self.layout}")
        if self.motion not in ("arc", "translate"):
            raise ConfigException(f"Unknown camera motion: {self.motion}")
        return self


def _coerce(key, kind, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind in (bool, "bool"):
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        return text
    except ValueError:
        raise ConfigException(f"Config key '{key}' has an invalid value: {raw!r}")


def parse_config_values(values, base=None):
    """Apply a mapping of raw key/value strings on top of ``base``"""
    config = base or TrainConfig()
    known = {f.name: f.type for f in fields(TrainConfig)}
    updated = config.snapshot()
    for key, raw in values.items():
        name = key.strip().lower()
        if name not in known:
            raise ConfigException(f"Unknown config key: {key}")
        if raw is None:
            raise ConfigException(f"Config key '{key}' has no value")
        updated[name] = _coerce(name, known[name], raw)
    return TrainConfig(**updated).validate()


def load_config(path=None, overrides=None):
    """
    Load a flat ``key = value`` run configuration.

    Unknown keys and invalid values raise ConfigException. FLOWNERF_THREADS in
    the environment overrides the ``threads`` key.
    """
    values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise StorageException(f"Config file not found: {path}")
        values = dict(dotenv_values(path, encoding="utf-8"))
    if overrides:
        values.update(overrides)
    if THREADS_OVERRIDE:
        values["threads"] = THREADS_OVERRIDE
    config = parse_config_values(values)
    logger.info(f"Loaded config from {path or 'defaults'}: {len(values)} keys set")
    return config
