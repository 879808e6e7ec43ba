import math
from typing import Iterator, Mapping

import numpy as np
from scipy import ndimage

from distrack.data.types import CellRecord, LabelMap
from distrack.errors import EmptyMask, ShapeMismatch

# 4-connectivity for every labeling operation on cell masks
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def round_half_away(value: float) -> int:
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def centroid_y(mask: np.ndarray) -> float:
    ys = np.nonzero(mask)[0]
    if ys.size == 0:
        raise EmptyMask("centroid of an empty mask")
    return float(ys.mean())


def overlap_area(a: np.ndarray, b: np.ndarray) -> int:
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot overlap masks of shapes {a.shape} and {b.shape}")
    return int(np.count_nonzero(np.logical_and(a, b)))


def overlap_counts(
    labels: np.ndarray, ys: np.ndarray, xs: np.ndarray, minlength: int
) -> np.ndarray:
    """`overlap_area` of the pixels (ys, xs) with every label at once. Entry 0 is zero."""
    counts = np.bincount(labels[ys, xs].astype(np.int64), minlength=minlength)
    counts[0] = 0
    return counts


def shift_rows(ys: np.ndarray, dy: float, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices moved by round-half-away-from-zero(dy), and which stay inside [0, height)."""
    shifted = ys + round_half_away(dy)
    return shifted, (shifted >= 0) & (shifted < height)


def shift_mask_y(mask: np.ndarray, dy: float) -> np.ndarray:
    """
    Translate a mask by round-half-away-from-zero(dy) rows, positive toward
    the open end. Pixels leaving the image are dropped.
    """
    index = np.nonzero(mask)
    rows, inside = shift_rows(index[0], dy, mask.shape[0])
    kept = tuple(axis[inside] for axis in index)
    out = np.zeros_like(mask)
    out[(rows[inside],) + kept[1:]] = mask[kept]
    return out


def iter_cell_masks(labels: LabelMap) -> Iterator[tuple[int, tuple[slice, slice], np.ndarray]]:
    """(label, bounding-box slices, mask within the box) for each present label."""
    for index, box in enumerate(ndimage.find_objects(labels), start=1):
        if box is None:
            continue
        yield index, box, labels[box] == index


def cell_records(
    labels: LabelMap,
    frame: int,
    parents: Mapping[int, int | None] | None = None,
) -> list[CellRecord]:
    """
    CellRecords for every label of a frame, ordered by id. A cell touches the
    open end when its mask reaches the last row.
    """
    if parents is None:
        parents = {}

    height = labels.shape[0]
    flat = labels.ravel().astype(np.int64, copy=False)
    ys = np.repeat(np.arange(height, dtype=np.float64), labels.shape[1])
    counts = np.bincount(flat)
    y_sums = np.bincount(flat, weights=ys)

    records = []
    for index, box, _ in iter_cell_masks(labels):
        count = int(counts[index])
        records.append(
            CellRecord(
                id=index,
                frame=frame,
                pixel_count=count,
                center_y=float(y_sums[index] / count),
                y_min=box[0].start,
                y_max=box[0].stop - 1,
                parent_id=parents.get(index),
                touches_open_end=box[0].stop == height,
            )
        )
    return records
