import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from loguru import logger

from distrack.common_types import PipelineConfig
from distrack.data.geometry import cell_records, iter_cell_masks, overlap_counts, shift_rows
from distrack.data.types import ImageShape, LabelMap, LabelStack, Lineage
from distrack.errors import BrokenLink, EmptyMask, ShapeMismatch
from distrack.pipeline.segmenter import segment_stack
from distrack.pipeline.truth_maps import NO_PREVIOUS
from distrack.utils import atomic_write_text, parallelize, timer


@dataclass(frozen=True, eq=False)
class FramePairInput:
    prev_labels: LabelMap
    curr_labels: LabelMap
    displacement: np.ndarray
    categories: np.ndarray | None = None

    def __post_init__(self):
        shapes = {self.prev_labels.shape, self.curr_labels.shape, self.displacement.shape}
        if self.categories is not None:
            shapes.add(self.categories.shape)
        if len(shapes) != 1:
            raise ShapeMismatch(f"frame pair inputs have different shapes: {sorted(shapes)}")


@dataclass(frozen=True)
class Link:
    curr_id: int
    prev_id: int | None
    overlap: int
    dy: float
    category: int | None = None


@dataclass(frozen=True)
class LinkSet:
    """Links from the cells of frame `frame` to the cells of frame `frame - 1`."""

    frame: int
    links: tuple[Link, ...] = field(default_factory=tuple)

    def parents(self) -> dict[int, int | None]:
        return {link.curr_id: link.prev_id for link in self.links}


@dataclass(frozen=True, eq=False)
class PipelineResult:
    labels: LabelStack
    lineage: Lineage
    link_sets: tuple[LinkSet, ...]


CellMask = np.ndarray | tuple[np.ndarray, np.ndarray]  # boolean mask or (ys, xs) indices


def cell_displacement(mask: CellMask, displacement: np.ndarray) -> float:
    values = displacement[mask]
    if values.size == 0:
        raise EmptyMask("cannot reduce the displacement of an empty mask")
    return float(np.median(values))


def majority_category(mask: CellMask, categories: np.ndarray) -> int:
    # ties go to the smaller class index
    return int(np.argmax(np.bincount(categories[mask].astype(np.int64), minlength=4)))


def track_pair(pair: FramePairInput, frame: int = 1) -> LinkSet:
    """
    Move each current cell by the opposite of its displacement and link it to
    the previous-frame cell it overlaps most. Cells voted "no previous" are
    not linked. Overlap ties go to the smaller distance between the moved
    center and the candidate's center, then to the smaller id.
    """
    prev_labels = np.asarray(pair.prev_labels)
    height = prev_labels.shape[0]

    num_prev = int(prev_labels.max()) + 1
    prev_counts = np.bincount(prev_labels.ravel().astype(np.int64), minlength=num_prev)
    prev_y_sums = np.bincount(
        prev_labels.ravel().astype(np.int64),
        weights=np.repeat(np.arange(height, dtype=np.float64), prev_labels.shape[1]),
        minlength=num_prev,
    )

    links = []
    for curr_id, box, local_mask in iter_cell_masks(np.asarray(pair.curr_labels)):
        ys, xs = np.nonzero(local_mask)
        ys = ys + box[0].start
        xs = xs + box[1].start
        mask = (ys, xs)

        category = None
        if pair.categories is not None:
            category = majority_category(mask, pair.categories)

        dy = cell_displacement(mask, pair.displacement)
        if category == NO_PREVIOUS:
            links.append(Link(curr_id, None, 0, dy, category))
            continue

        shifted, inside = shift_rows(ys, -dy, height)
        overlaps = overlap_counts(prev_labels, shifted[inside], xs[inside], num_prev)

        best = int(overlaps.max())
        if best == 0:
            links.append(Link(curr_id, None, 0, dy, category))
            continue

        moved_center = float(ys.mean()) - dy
        candidates = np.flatnonzero(overlaps == best)
        prev_id = min(
            (int(c) for c in candidates),
            key=lambda c: (abs(prev_y_sums[c] / prev_counts[c] - moved_center), c),
        )
        links.append(Link(curr_id, prev_id, best, dy, category))

    return LinkSet(frame=frame, links=tuple(links))


def assemble_lineage(
    labels: LabelStack, link_sets: list[LinkSet] | tuple[LinkSet, ...]
) -> Lineage:
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ShapeMismatch(f"label stack must be (frames, H, W), got {labels.shape}")

    num_frames = labels.shape[0]
    if len(link_sets) != max(num_frames - 1, 0):
        raise ShapeMismatch(
            f"{num_frames} frames need {max(num_frames - 1, 0)} link sets, got {len(link_sets)}"
        )

    shape = ImageShape.of(labels)
    frames = []
    for frame in range(num_frames):
        parents: dict[int, int | None] = {}
        if frame > 0:
            link_set = link_sets[frame - 1]
            present_prev = {cell.id for cell in frames[frame - 1]}
            present_curr = set(np.unique(labels[frame]).tolist()) - {0}
            for link in link_set.links:
                if link.curr_id not in present_curr:
                    raise BrokenLink(f"link from absent cell {link.curr_id} at frame {frame}")
                if link.prev_id is not None and link.prev_id not in present_prev:
                    raise BrokenLink(
                        f"cell {link.curr_id} at frame {frame} links to absent cell "
                        f"{link.prev_id} at frame {frame - 1}"
                    )
            parents = link_set.parents()
        frames.append(cell_records(labels[frame], frame, parents))

    return Lineage(shape, tuple(tuple(cells) for cells in frames))


def track_stack(
    labels: LabelStack,
    displacement: np.ndarray,
    categories: np.ndarray | None = None,
    threads: int = 1,
) -> tuple[Lineage, list[LinkSet]]:
    """Link every frame of a segmented stack to its predecessor."""
    labels = np.asarray(labels)
    displacement = np.asarray(displacement)
    if labels.ndim != 3 or labels.shape != displacement.shape:
        raise ShapeMismatch(
            f"label {labels.shape} and displacement {displacement.shape} stacks must match"
        )
    if categories is not None and np.shape(categories) != labels.shape:
        raise ShapeMismatch(f"category stack {np.shape(categories)} does not match {labels.shape}")

    pairs = [
        FramePairInput(
            prev_labels=labels[frame - 1],
            curr_labels=labels[frame],
            displacement=displacement[frame],
            categories=None if categories is None else categories[frame],
        )
        for frame in range(1, labels.shape[0])
    ]

    with timer("track"):
        link_sets = parallelize(
            lambda index: track_pair(pairs[index], frame=index + 1),
            list(range(len(pairs))),
            num_workers=threads,
            desc="Tracking",
        )

    return assemble_lineage(labels, link_sets), link_sets


def run_pipeline(
    edm: np.ndarray,
    displacement: np.ndarray,
    categories: np.ndarray | None,
    config: PipelineConfig,
) -> PipelineResult:
    """Segment every EDM frame, link consecutive frames, build the lineage."""
    edm = np.asarray(edm)
    displacement = np.asarray(displacement)
    if edm.ndim != 3 or edm.shape != displacement.shape:
        raise ShapeMismatch(
            f"EDM {edm.shape} and displacement {displacement.shape} stacks must match"
        )
    if not config.use_categories:
        categories = None
    if categories is not None and np.shape(categories) != edm.shape:
        raise ShapeMismatch(f"category stack {np.shape(categories)} does not match {edm.shape}")

    with timer("segment"):
        labels = segment_stack(edm, config.watershed, threads=config.threads)

    lineage, link_sets = track_stack(labels, displacement, categories, threads=config.threads)

    logger.debug(
        f"pipeline: {labels.shape[0]} frames, {lineage.num_cells()} cells, "
        f"{len(lineage.division_events())} divisions"
    )
    return PipelineResult(labels=labels, lineage=lineage, link_sets=tuple(link_sets))


LINK_CSV_HEADER = ["frame", "curr_id", "prev_id", "dy", "overlap", "category"]


def links_to_csv(link_sets: list[LinkSet] | tuple[LinkSet, ...]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(LINK_CSV_HEADER)
    for link_set in link_sets:
        for link in link_set.links:
            writer.writerow(
                [
                    link_set.frame,
                    link.curr_id,
                    "" if link.prev_id is None else link.prev_id,
                    f"{link.dy:.6f}",
                    link.overlap,
                    "" if link.category is None else link.category,
                ]
            )
    return buffer.getvalue()


def write_links_csv(path: Path | str, link_sets: list[LinkSet] | tuple[LinkSet, ...]):
    atomic_write_text(path, links_to_csv(link_sets))
