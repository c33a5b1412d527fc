import csv
import logging
from pathlib import Path

from flownerf.exceptions.Exceptions import StorageException

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["iter", "rgb", "flow", "depth", "pc", "rgb_s", "total", "psnr_train"]


class LossLogRepository:
    """Per-iteration loss records appended to a CSV file"""

    def __init__(self, path, with_rgb_flow=False, append=False):
        self.path = Path(path)
        self.columns = LOG_COLUMNS + (["rgb_flow"] if with_rgb_flow else [])
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not (append and self.path.is_file()):
                with self.path.open("w", newline="", encoding="utf-8") as f:
                    csv.writer(f).writerow(self.columns)
        except OSError as e:
            logger.error(f"Cannot create loss log {self.path}: {e}")
            raise StorageException(f"Cannot create loss log {self.path}: {e}")

    def append(self, iteration, report, psnr_train):
        values = report.as_dict()
        values.update({"iter": iteration, "psnr_train": psnr_train})
        try:
            with self.path.open("a", newline="", encoding="utf-8") as f:
                csv.writer(f).writerow([repr(values[c]) if isinstance(values[c], float) else values[c] for c in self.columns])
        except OSError as e:
            logger.error(f"Cannot append to loss log {self.path}: {e}")
            raise StorageException(f"Cannot append to loss log {self.path}: {e}")

    def read(self):
        with self.path.open(newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        return [{k: (int(v) if k == "iter" else float(v)) for k, v in row.items()} for row in rows]
