import numpy as np
import pytest

from flownerf.exceptions.Exceptions import FormatParseException, StorageException
from flownerf.losses.losses import LossReport
from flownerf.repository.CheckpointRepository import CheckpointRepository
from flownerf.repository.LossLogRepository import LossLogRepository
from flownerf.service.FlowNerfPipeline import FlowNerfPipeline
from flownerf.service.TrainerService import TrainerService


@pytest.fixture
def trained_state(oracle_dataset, tiny_config):
    trainer = TrainerService(tiny_config, oracle_dataset)
    trainer.train(max_iters=1)
    return trainer.state()


class TestCheckpointRepository:

    def test_round_trip(self, trained_state, tmp_path):
        repo = CheckpointRepository(tmp_path)
        path = repo.save(trained_state)
        assert path == tmp_path / "latest.fnrf"
        assert repo.exists()
        loaded = repo.load()
        assert loaded.iteration == 1
        assert loaded.config == trained_state.config
        assert loaded.num_frames == trained_state.num_frames
        assert loaded.intrinsics == trained_state.intrinsics
        assert loaded.rng_state == trained_state.rng_state
        assert loaded.scheduler == trained_state.scheduler
        assert set(loaded.params) == set(trained_state.params)
        for name, value in trained_state.params.items():
            np.testing.assert_array_equal(loaded.params[name], value)
        moments = trained_state.optimizer["moments"]
        assert set(loaded.optimizer["moments"]) == set(moments)
        for name, m in moments.items():
            np.testing.assert_array_equal(loaded.optimizer["moments"][name]["v"], m["v"])

    def test_pipeline_from_state(self, trained_state):
        pipeline = FlowNerfPipeline.from_state(trained_state)
        np.testing.assert_array_equal(pipeline.pose_vectors(), np.stack(
            [trained_state.params[f"pose.{k}"] for k in range(trained_state.num_frames)]))

    def test_no_temporary_file_left(self, trained_state, tmp_path):
        CheckpointRepository(tmp_path).save(trained_state)
        assert [p.name for p in tmp_path.iterdir()] == ["latest.fnrf"]

    def test_missing_file(self, tmp_path):
        repo = CheckpointRepository(tmp_path)
        assert not repo.exists()
        with pytest.raises(StorageException):
            repo.load()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fnrf"
        path.write_bytes(b"XXXX" + b"\0" * 40)
        with pytest.raises(FormatParseException) as err:
            CheckpointRepository().load(path)
        assert err.value.offset == 0

    def test_truncated_tensor_data(self, trained_state, tmp_path):
        path = CheckpointRepository(tmp_path).save(trained_state)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(FormatParseException):
            CheckpointRepository().load(path)

    def test_directory_required_for_default_path(self):
        with pytest.raises(StorageException):
            CheckpointRepository().path_for()


class TestLossLog:

    def test_append_and_read(self, tmp_path):
        log = LossLogRepository(tmp_path / "log.csv")
        log.append(1, LossReport(rgb=0.5, total=0.75), 12.5)
        log.append(2, LossReport(rgb=0.25, total=0.5), 13.0)
        rows = log.read()
        assert [r["iter"] for r in rows] == [1, 2]
        assert rows[1]["rgb"] == 0.25
        assert rows[0]["psnr_train"] == 12.5

    def test_append_mode_keeps_rows(self, tmp_path):
        LossLogRepository(tmp_path / "log.csv").append(1, LossReport(total=1.0), 10.0)
        LossLogRepository(tmp_path / "log.csv", append=True).append(2, LossReport(total=0.5), 11.0)
        assert len(LossLogRepository(tmp_path / "log.csv", append=True).read()) == 2
