from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from distrack.data.types import CellRecord, LabelMap, LabelStack, Lineage
from distrack.errors import BrokenLink, ShapeMismatch

BACKGROUND = 0
OTHER = 1
DIVIDED = 2
NO_PREVIOUS = 3
NUM_CATEGORIES = 4


@dataclass(frozen=True, eq=False)
class TruthMaps:
    edm: np.ndarray  # (frames, H, W) float64
    displacement: np.ndarray  # (frames, H, W) float64
    categories: np.ndarray  # (frames, H, W) uint8


def compute_edm(labels: LabelMap) -> np.ndarray:
    """
    Exact euclidean distance from each foreground pixel to the nearest pixel
    that does not carry its label. Pixels outside the image count as
    background, so every foreground pixel gets a value >= 1.
    """
    labels = np.asarray(labels)
    edm = np.zeros(labels.shape, dtype=np.float64)
    if not labels.any():
        return edm

    # one ring of virtual background around the image
    padded = np.pad(labels, 1, constant_values=0)
    for label, box in enumerate(ndimage.find_objects(padded), start=1):
        if box is None:
            continue
        # bounding box grown by one pixel always contains a non-label pixel,
        # and the nearest one lies within it (the box edge is no further)
        ys = slice(box[0].start - 1, box[0].stop + 1)
        xs = slice(box[1].start - 1, box[1].stop + 1)
        mask = padded[ys, xs] == label
        distances = ndimage.distance_transform_edt(mask)

        out = edm[ys.start : ys.stop - 2, xs.start : xs.stop - 2]
        inner = mask[1:-1, 1:-1]
        out[inner] = distances[1:-1, 1:-1][inner]

    return edm


def _centers(cells: tuple[CellRecord, ...] | list[CellRecord]) -> dict[int, CellRecord]:
    return {cell.id: cell for cell in cells}


def compute_displacement(
    labels: LabelMap,
    prev: list[CellRecord] | tuple[CellRecord, ...],
    curr: list[CellRecord] | tuple[CellRecord, ...],
) -> np.ndarray:
    """
    Inside each current cell with a parent: center_y(cell) - center_y(parent).
    Cells without a parent and the background get 0. Links are the
    `parent_id` fields of `curr`.
    """
    prev_by_id = _centers(prev)
    values = np.zeros(int(labels.max()) + 1, dtype=np.float64)

    for cell in curr:
        if cell.parent_id is None:
            continue
        parent = prev_by_id.get(cell.parent_id)
        if parent is None:
            raise BrokenLink(
                f"cell {cell.id} at frame {cell.frame} links to missing parent {cell.parent_id}"
            )
        if cell.id < len(values):
            values[cell.id] = cell.center_y - parent.center_y

    return values[labels]


def compute_categories(
    labels: LabelMap,
    prev: list[CellRecord] | tuple[CellRecord, ...],
    curr: list[CellRecord] | tuple[CellRecord, ...],
) -> np.ndarray:
    prev_ids = set(_centers(prev))
    num_children: dict[int, int] = {}
    for cell in curr:
        if cell.parent_id is not None:
            if cell.parent_id not in prev_ids:
                raise BrokenLink(
                    f"cell {cell.id} at frame {cell.frame} links to missing parent {cell.parent_id}"
                )
            num_children[cell.parent_id] = num_children.get(cell.parent_id, 0) + 1

    # labels without a record are treated as new cells
    lut = np.full(int(labels.max()) + 1, NO_PREVIOUS, dtype=np.uint8)
    lut[0] = BACKGROUND

    for cell in curr:
        if cell.id >= len(lut):
            continue
        if cell.parent_id is None:
            lut[cell.id] = NO_PREVIOUS
        elif num_children[cell.parent_id] >= 2:
            lut[cell.id] = DIVIDED
        else:
            lut[cell.id] = OTHER

    return lut[labels]


def compute_truth_maps(labels: LabelStack, lineage: Lineage) -> TruthMaps:
    labels = np.asarray(labels)
    if labels.ndim != 3 or labels.shape[0] != lineage.num_frames:
        raise ShapeMismatch(
            f"label stack {labels.shape} does not match a lineage of {lineage.num_frames} frames"
        )

    edm = np.zeros(labels.shape, dtype=np.float64)
    displacement = np.zeros(labels.shape, dtype=np.float64)
    categories = np.zeros(labels.shape, dtype=np.uint8)

    for frame in range(labels.shape[0]):
        edm[frame] = compute_edm(labels[frame])
        curr = lineage.frames[frame]
        if frame == 0:
            # no previous frame exists, every cell is "no previous"
            categories[frame] = np.where(labels[frame] > 0, NO_PREVIOUS, BACKGROUND)
            continue
        prev = lineage.frames[frame - 1]
        displacement[frame] = compute_displacement(labels[frame], prev, curr)
        categories[frame] = compute_categories(labels[frame], prev, curr)

    return TruthMaps(edm=edm, displacement=displacement, categories=categories)
