"""Per-iteration loss records and their CSV export."""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

from training.losses import LossReport
from utils.errors import SpliceIOError

CSV_COLUMNS = ("iteration", "total", "app", "structure", "identity")


@dataclass
class LossHistory:
    entries: List[Tuple[int, LossReport]] = field(default_factory=list)

    def append(self, iteration: int, report: LossReport):
        self.entries.append((iteration, report.detached()))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def reports(self) -> List[LossReport]:
        return [report for _, report in self.entries]

    def series(self, term: str) -> List[float]:
        return [getattr(report, term) for _, report in self.entries]

    def rows(self):
        return [report.as_row(iteration) for iteration, report in self.entries]

    def to_csv(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as f:
                writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
                writer.writeheader()
                writer.writerows(self.rows())
        except OSError as exc:
            raise SpliceIOError(f"cannot write loss history {path}: {exc}") from exc
        return path
