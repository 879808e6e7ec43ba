from dataclasses import asdict, dataclass, field

import numpy as np

from distrack.common_types import GeometricConfig
from distrack.data.geometry import iter_cell_masks


@dataclass
class SwimParams:
    cut_row: int  # first row that moves
    distance: int
    erased: list[int] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def background_level(image: np.ndarray, labels: np.ndarray) -> float:
    background = image[labels == 0]
    return float(np.median(background if background.size else image))


def cell_extents(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """(first row, one past last row, label) per cell, top to bottom."""
    return sorted(
        ((box[0].start, box[0].stop, index) for index, box, _ in iter_cell_masks(labels)),
        key=lambda c: (c[0], c[2]),
    )


def apply_swim(
    image: np.ndarray,
    labels: np.ndarray,
    gap: int,
    distance: int,
    erase_exit_below: int,
) -> tuple[np.ndarray, np.ndarray, SwimParams]:
    """
    Move every row below cell `gap` (0 = topmost cell) down by `distance`.
    Opened rows get the background level; cells pushed past the open end
    with fewer than `erase_exit_below` visible rows are erased.
    """
    cells = cell_extents(labels)
    cut = cells[gap][1]
    height = labels.shape[0]
    fill = background_level(image, labels)

    new_image = image.copy()
    new_labels = labels.copy()
    if distance > 0:
        # a distance past the open end pushes every row below the cut out
        if cut + distance < height:
            new_image[cut + distance :] = image[cut : height - distance]
            new_labels[cut + distance :] = labels[cut : height - distance]
        new_image[cut : min(cut + distance, height)] = fill
        new_labels[cut : min(cut + distance, height)] = 0

    erased = []
    for start, stop, index in cells[gap + 1 :]:
        if stop + distance <= height:
            continue
        visible = max(0, height - (start + distance))
        if visible < erase_exit_below:
            erased.append(index)
            mask = new_labels == index
            new_image[mask] = fill
            new_labels[mask] = 0

    return new_image, new_labels, SwimParams(cut_row=cut, distance=distance, erased=sorted(erased))


def simulate_swim(
    image: np.ndarray,
    labels: np.ndarray,
    config: GeometricConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, SwimParams | None]:
    """
    Swim event between two random successive cells, by a random distance in
    [1, swim_max_distance] toward the open end. Frames with fewer than two
    cells are returned unchanged with no parameters.
    """
    image = np.asarray(image)
    labels = np.asarray(labels)
    num_cells = len(cell_extents(labels))
    if num_cells < 2:
        return image.copy(), labels.copy(), None

    gap = int(rng.integers(0, num_cells - 1))
    distance = 0
    if config.swim_max_distance > 0:
        distance = int(rng.integers(1, config.swim_max_distance + 1))
    return apply_swim(image, labels, gap, distance, config.erase_exit_below)
