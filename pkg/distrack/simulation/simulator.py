"""
Synthetic mother-machine sequences.

Cells grow in single file from the closed end (y = 0) toward the open end
(y = H - 1). Each frame, every cell's length is multiplied by the growth
rate; a cell whose grown length reaches the division length splits into two
daughters with length fractions (r, 1 - r), r ~ Normal(0.5, sigma) clamped
to [0.3, 0.7]. Cells are then stacked again from the closed end, keeping
their order and the gap above each one, and rows past the open end are
truncated.

Randomness: numpy's PCG64 (`np.random.default_rng`), seeded from
`SeedSequence(seed)` spawned into two independent streams, one for the
biology (division ratios, then swim events, cell by cell, top to bottom)
and one for intensity rendering. The geometry and lineage therefore do not
depend on whether rendering is enabled.
"""

import math
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy import ndimage

from distrack.common_types import RenderConfig, SimConfig
from distrack.data.geometry import FOUR_CONNECTED, cell_records
from distrack.data.types import LabelMap, Lineage
from distrack.errors import ChannelOverfull

ASYMMETRY_CLAMP = (0.3, 0.7)


@dataclass
class SimCell:
    uid: int
    length: float
    # rows of empty space between this cell and the one above (or the closed end)
    gap_above: int


@dataclass(frozen=True, eq=False)
class SimSequence:
    labels: np.ndarray  # (frames, H, W) uint16
    lineage: Lineage
    intensity: np.ndarray | None = None  # (frames, H, W) float32 in [0, 1]


def initial_cells(config: SimConfig, rng: np.random.Generator) -> list[SimCell]:
    lengths = rng.uniform(
        config.division_length / 2, config.division_length, size=config.initial_cells
    )
    cells = [
        SimCell(uid=index + 1, length=float(length), gap_above=config.gap)
        for index, length in enumerate(lengths)
    ]

    extent = sum(cell.gap_above + cell.length for cell in cells)
    if extent > config.height:
        raise ChannelOverfull(
            f"{config.initial_cells} initial cells need {extent:.1f} rows, "
            f"the channel has {config.height}"
        )
    return cells


def grow_and_divide(
    cells: list[SimCell],
    config: SimConfig,
    rng: np.random.Generator,
    next_uid: int,
) -> tuple[list[SimCell], dict[int, int], int]:
    """
    One frame of growth. Returns the new cells, a map from each new cell's
    uid to its uid at the previous frame, and the next free uid.
    """
    out: list[SimCell] = []
    parent_uid: dict[int, int] = {}

    for cell in cells:
        length = cell.length * config.growth_rate
        if length >= config.division_length:
            ratio = float(
                np.clip(rng.normal(0.5, config.division_asymmetry_sigma), *ASYMMETRY_CLAMP)
            )
            top = SimCell(next_uid, length * ratio, cell.gap_above)
            bottom = SimCell(next_uid + 1, length * (1 - ratio), config.gap)
            next_uid += 2
            out.extend([top, bottom])
            parent_uid[top.uid] = cell.uid
            parent_uid[bottom.uid] = cell.uid
        else:
            out.append(SimCell(cell.uid, length, cell.gap_above))
            parent_uid[cell.uid] = cell.uid

    if config.swim_probability > 0 and config.swim_max_distance > 0:
        for cell in out:
            if rng.random() < config.swim_probability:
                cell.gap_above += int(rng.integers(1, config.swim_max_distance + 1))

    return out, parent_uid, next_uid


def cell_rows(cells: list[SimCell]) -> list[tuple[int, int]]:
    """Half-open [start, stop) row span of each cell, before truncation."""
    spans = []
    y = 0.0
    for cell in cells:
        y += cell.gap_above
        start = math.floor(y + 0.5)
        y += cell.length
        stop = max(math.floor(y + 0.5), start + 1)
        spans.append((start, stop))
    return spans


def rasterize(
    cells: list[SimCell], config: SimConfig
) -> tuple[LabelMap, list[SimCell]]:
    """
    Draw rod-shaped masks (rectangles with trimmed corners) labeled 1..K from
    the closed end. Returns the label map and the cells still in the image.
    """
    height, width = config.height, config.width
    labels = np.zeros((height, width), dtype=np.uint16)
    x0 = (width - config.cell_width) // 2
    x1 = x0 + config.cell_width

    visible = []
    for cell, (start, stop) in zip(cells, cell_rows(cells)):
        if start >= height:
            break
        label = len(visible) + 1
        visible.append(cell)
        labels[start : min(stop, height), x0:x1] = label

        if stop - start >= 3 and config.cell_width >= 3:
            labels[start, x0] = labels[start, x1 - 1] = 0
            if stop <= height:
                labels[stop - 1, x0] = labels[stop - 1, x1 - 1] = 0

    return labels, visible


def render_intensity(
    labels: LabelMap, config: RenderConfig, rng: np.random.Generator
) -> np.ndarray:
    """
    Phase-contrast-like rendering: dark cells, a bright 1-pixel halo just
    outside them, gaussian blur and additive gaussian noise.
    """
    foreground = labels > 0
    halo = ndimage.binary_dilation(foreground, structure=FOUR_CONNECTED) & ~foreground

    image = np.full(labels.shape, config.background, dtype=np.float64)
    image[foreground] = config.cell
    image[halo] = config.halo

    if config.blur_sigma > 0:
        image = ndimage.gaussian_filter(image, config.blur_sigma, mode="nearest")
    if config.noise_sigma > 0:
        image = image + rng.normal(0.0, config.noise_sigma, size=image.shape)

    return np.clip(image, 0.0, 1.0).astype(np.float32)


def normalize_intensity(image: np.ndarray) -> np.ndarray:
    """Min-max normalization to [0, 1], as done before prediction."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        return np.zeros(image.shape, dtype=np.float32)
    return ((image - lo) / (hi - lo)).astype(np.float32)


def simulate(config: SimConfig) -> SimSequence:
    bio_seq, render_seq = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(bio_seq)
    render_rng = np.random.default_rng(render_seq)

    shape = config.shape()
    labels = np.zeros((config.frames, shape.height, shape.width), dtype=np.uint16)
    intensity = (
        np.zeros(labels.shape, dtype=np.float32) if config.render.enabled else None
    )
    frames = []

    cells = initial_cells(config, rng)
    next_uid = len(cells) + 1
    prev_ids: dict[int, int] = {}  # uid -> label id at the previous frame

    for frame in range(config.frames):
        parent_uid: dict[int, int] = {}
        if frame > 0:
            cells, parent_uid, next_uid = grow_and_divide(cells, config, rng, next_uid)

        labels[frame], cells = rasterize(cells, config)

        parents = {
            index + 1: prev_ids.get(parent_uid[cell.uid]) if cell.uid in parent_uid else None
            for index, cell in enumerate(cells)
        }
        frames.append(cell_records(labels[frame], frame, parents))
        prev_ids = {cell.uid: index + 1 for index, cell in enumerate(cells)}

        if intensity is not None:
            intensity[frame] = render_intensity(labels[frame], config.render, render_rng)

    lineage = Lineage(shape, tuple(tuple(cells) for cells in frames))
    logger.debug(
        f"simulated {config.frames} frames, {lineage.num_cells()} cell observations, "
        f"{len(lineage.division_events())} divisions"
    )
    return SimSequence(labels=labels, lineage=lineage, intensity=intensity)
