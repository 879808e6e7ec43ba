import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from tabulate import tabulate

from distrack.utils import atomic_write_text, dump_json

LINK = "link"
DIVISION = "division"
FALSE_NEGATIVE = "false_negative"
FALSE_POSITIVE = "false_positive"

ERROR_KINDS = (LINK, DIVISION, FALSE_NEGATIVE, FALSE_POSITIVE)

COLUMN_NAMES = {
    LINK: "Tracking Links",
    DIVISION: "Division",
    FALSE_NEGATIVE: "False −",
    FALSE_POSITIVE: "False +",
}


@dataclass(frozen=True)
class ErrorRecord:
    kind: str
    frame: int
    gt_id: int | None = None
    pred_id: int | None = None
    detail: str = ""

    def row(self):
        return [
            self.kind,
            self.frame,
            "" if self.gt_id is None else self.gt_id,
            "" if self.pred_id is None else self.pred_id,
            self.detail,
        ]


@dataclass
class EvalReport:
    counts: dict[str, int]
    num_gt_observations: int
    num_pred_observations: int
    num_excluded_gt: int = 0
    errors: list[ErrorRecord] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def percentage(self, kind: str) -> float:
        if self.num_gt_observations == 0:
            return 0.0
        return 100.0 * self.counts[kind] / self.num_gt_observations

    @property
    def total(self) -> int:
        return sum(self.counts[kind] for kind in ERROR_KINDS)

    def total_percentage(self) -> float:
        # sum of the four rates, not a separate ratio
        return sum(self.percentage(kind) for kind in ERROR_KINDS)

    def is_zero(self) -> bool:
        return self.total == 0

    def to_dict(self):
        return {
            "counts": {**{kind: self.counts[kind] for kind in ERROR_KINDS}, "total": self.total},
            "percentages": {
                **{kind: self.percentage(kind) for kind in ERROR_KINDS},
                "total": self.total_percentage(),
            },
            "num_gt_observations": self.num_gt_observations,
            "num_pred_observations": self.num_pred_observations,
            "num_excluded_gt": self.num_excluded_gt,
            "settings": self.settings,
        }

    def to_json(self) -> str:
        return dump_json(self.to_dict())

    def table(self) -> str:
        headers = [""] + [COLUMN_NAMES[kind] for kind in ERROR_KINDS] + ["Total"]
        rows = [
            ["count"] + [self.counts[kind] for kind in ERROR_KINDS] + [self.total],
            ["%"]
            + [f"{self.percentage(kind):.4f}" for kind in ERROR_KINDS]
            + [f"{self.total_percentage():.4f}"],
        ]
        footer = f"\n{self.num_gt_observations} ground-truth observations after exclusion"
        return tabulate(rows, headers=headers, tablefmt="github") + footer

    def errors_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["kind", "frame", "gt_id", "pred_id", "detail"])
        for record in self.errors:
            writer.writerow(record.row())
        return buffer.getvalue()

    def write_errors_csv(self, path: Path | str):
        atomic_write_text(path, self.errors_csv())
