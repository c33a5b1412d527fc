"""
Plateau learning-rate scheduler driven by the training PSNR
"""

import logging

logger = logging.getLogger(__name__)


class PlateauScheduler:
    """
    Halves every group's learning rate when the best training PSNR has not
    improved for ``patience`` consecutive iterations, then restarts the count.
    Rates never drop below ``floor``.
    """

    def __init__(self, optimizer, patience=1000, factor=0.5, floor=1e-6):
        self.optimizer = optimizer
        self.patience = patience
        self.factor = factor
        self.floor = floor
        self.best = None
        self.stalled = 0
        self.decays = 0

    def step(self, psnr):
        """Record one PSNR value; returns True when the rates were decayed"""
        if self.best is None or psnr > self.best:
            self.best = psnr
            self.stalled = 0
            return False
        self.stalled += 1
        if self.stalled < self.patience:
            return False

        rates = {name: max(self.floor, lr * self.factor) for name, lr in self.optimizer.learning_rates().items()}
        self.optimizer.set_learning_rates(rates)
        self.stalled = 0
        self.decays += 1
        logger.warning(f"PSNR stalled at {self.best:.3f} dB for {self.patience} iterations; learning rates now {rates}")
        return True

    def state_dict(self):
        return {"best": self.best, "stalled": self.stalled, "decays": self.decays}

    def load_state_dict(self, saved):
        self.best = saved["best"]
        self.stalled = int(saved["stalled"])
        self.decays = int(saved["decays"])
