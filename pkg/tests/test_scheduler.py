import pytest

from flownerf.diffcore.Adam import Adam
from flownerf.diffcore.Tensor import Tensor
from flownerf.service.scheduler import PlateauScheduler


def make_optimizer(lr=1e-3):
    groups = [
        {"name": "pose", "params": [("pose.0", Tensor([0.0], requires_grad=True))], "lr": lr},
        {"name": "geometry", "params": [("w", Tensor([0.0], requires_grad=True))], "lr": 2 * lr},
    ]
    return Adam(groups)


class TestPlateauScheduler:

    def test_improving_psnr_never_decays(self):
        optimizer = make_optimizer()
        scheduler = PlateauScheduler(optimizer, patience=3)
        assert not any(scheduler.step(10.0 + 0.01 * k) for k in range(50))
        assert optimizer.learning_rates() == {"pose": 1e-3, "geometry": 2e-3}

    def test_flat_psnr_decays_once_per_patience(self):
        optimizer = make_optimizer()
        scheduler = PlateauScheduler(optimizer, patience=1000)
        decays = [scheduler.step(20.0) for _ in range(1001)]
        assert decays.count(True) == 1
        assert decays[-1]
        assert optimizer.learning_rates() == pytest.approx({"pose": 5e-4, "geometry": 1e-3})

    def test_repeated_stalls_are_geometric_and_floored(self):
        optimizer = make_optimizer(lr=1e-3)
        scheduler = PlateauScheduler(optimizer, patience=1, floor=1e-6)
        scheduler.step(15.0)
        seen = []
        for _ in range(15):
            scheduler.step(15.0)
            seen.append(optimizer.learning_rates()["pose"])
        assert seen[:3] == pytest.approx([5e-4, 2.5e-4, 1.25e-4])
        assert seen[-1] == 1e-6
        assert min(seen) == 1e-6
        assert scheduler.decays == 15

    def test_state_round_trip(self):
        scheduler = PlateauScheduler(make_optimizer(), patience=5)
        for value in (1.0, 2.0, 2.0, 1.5):
            scheduler.step(value)
        restored = PlateauScheduler(make_optimizer(), patience=5)
        restored.load_state_dict(scheduler.state_dict())
        assert (restored.best, restored.stalled, restored.decays) == (2.0, 2, 0)
