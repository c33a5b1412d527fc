import os

import numpy as np
import pytest

from flownerf.camgeo.Camera import CameraIntrinsics
from flownerf.config.Config import GeneratorConfig, TrainConfig
from flownerf.oracleio.OracleScene import generate_scene
from flownerf.repository.DatasetRepository import DatasetRepository


def pytest_collection_modifyitems(config, items):
    if os.getenv("FLOWNERF_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="desk-scale run; set FLOWNERF_RUN_SLOW=1 to enable")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_train_config(**overrides):
    """Network widths small enough for finite-difference checks and few-step training"""
    values = dict(
        rays_per_iter=32,
        samples_per_ray=8,
        pos_freqs=2,
        dir_freqs=1,
        geometry_width=16,
        geometry_depth=4,
        geometry_skip=2,
        feature_dim=8,
        canonical_width=16,
        embed_width=16,
        coupling_width=16,
        pc_points=64,
        gabor_omega_std=1.0,
        chunk=128,
        max_iters=4,
        checkpoint_every=2,
        log_every=1,
        test_pose_iters=3,
    )
    values.update(overrides)
    return TrainConfig(**values).validate()


@pytest.fixture
def tiny_config():
    return tiny_train_config()


@pytest.fixture
def small_intrinsics():
    return CameraIntrinsics(20.0, 20.0, 11.5, 7.5, 24, 16).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def oracle_config():
    return GeneratorConfig(frames=5, width=24, height=16, focal=20.0, seed=0)


@pytest.fixture(scope="session")
def oracle_dir(tmp_path_factory, oracle_config):
    out = tmp_path_factory.mktemp("oracle")
    generate_scene(out, oracle_config)
    return out


@pytest.fixture(scope="session")
def oracle_dataset(oracle_dir):
    return DatasetRepository(oracle_dir).load()
