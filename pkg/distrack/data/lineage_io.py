import json
from pathlib import Path

from distrack.data.types import CellRecord, ImageShape, Lineage
from distrack.errors import CorruptFile
from distrack.utils import atomic_write_text


def lineage_to_dict(lineage: Lineage) -> dict:
    return {
        "shape": lineage.shape.to_dict(),
        "frames": [
            [cell.to_dict() for cell in sorted(cells, key=lambda c: c.id)]
            for cells in lineage.frames
        ],
    }


def lineage_from_dict(data: dict) -> Lineage:
    try:
        shape = ImageShape(int(data["shape"]["h"]), int(data["shape"]["w"]))
        frames = tuple(
            tuple(CellRecord.from_dict(cell) for cell in cells) for cells in data["frames"]
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptFile(f"malformed lineage document: {e!r}") from e

    lineage = Lineage(shape, frames)
    lineage.validate()
    return lineage


def save_lineage(path: Path | str, lineage: Lineage):
    atomic_write_text(path, json.dumps(lineage_to_dict(lineage), indent=1) + "\n")


def load_lineage(path: Path | str) -> Lineage:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorruptFile(f"{path} is not valid JSON: {e}") from e
    return lineage_from_dict(data)
