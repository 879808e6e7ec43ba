"""
Evaluation of a predicted lineage against ground truth.

Cells are matched frame by frame with a mutual maximum-overlap (or IoU)
criterion. Errors fall in four classes: false negatives (unmatched ground
truth cells), false positives (unmatched predicted cells), division errors
(divisions found more than `division_tolerance` frames away from the ground
truth, missed or spurious) and tracking link errors (predicted links whose
ground-truth counterparts are not linked). Cells partially out of the image
at the open end and shorter than `min_exit_length` are excluded everywhere.
"""

from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from distrack.common_types import EvalConfig
from distrack.data.types import (
    CellKey,
    CellRecord,
    DivisionEvent,
    LabelMap,
    Lineage,
    TrackedStack,
)
from distrack.errors import ShapeMismatch
from distrack.evaluation.report import (
    DIVISION,
    ERROR_KINDS,
    FALSE_NEGATIVE,
    FALSE_POSITIVE,
    LINK,
    ErrorRecord,
    EvalReport,
)
from distrack.utils import parallelize


@dataclass(frozen=True)
class FrameMatching:
    frame: int
    gt_to_pred: dict[int, int]
    pred_to_gt: dict[int, int]
    unmatched_gt: tuple[int, ...]
    unmatched_pred: tuple[int, ...]


def overlap_table(gt: LabelMap, pred: LabelMap) -> np.ndarray:
    """table[g, p] = number of pixels labeled g in `gt` and p in `pred` (0 = background)."""
    num_pred = int(pred.max()) + 1
    num_gt = int(gt.max()) + 1
    index = gt.astype(np.int64).ravel() * num_pred + pred.astype(np.int64).ravel()
    return np.bincount(index, minlength=num_gt * num_pred).reshape(num_gt, num_pred)


def match_frames(
    gt: LabelMap, pred: LabelMap, method: str = "overlap", frame: int = 0
) -> FrameMatching:
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ShapeMismatch(f"cannot match label maps of shapes {gt.shape} and {pred.shape}")

    table = overlap_table(gt, pred)
    gt_ids = [int(g) for g in np.flatnonzero(table.sum(axis=1)) if g > 0]
    pred_ids = [int(p) for p in np.flatnonzero(table.sum(axis=0)) if p > 0]

    scores = table.astype(np.float64)
    if method == "iou":
        gt_area = table.sum(axis=1)
        pred_area = table.sum(axis=0)
        union = gt_area[:, None] + pred_area[None, :] - table
        scores = np.divide(scores, union, out=np.zeros_like(scores), where=union > 0)
    elif method != "overlap":
        raise ValueError(f"unknown matching method {method!r}")

    # background never takes part in a match
    scores[0, :] = 0
    scores[:, 0] = 0

    # argmax keeps the first (smallest id) maximum
    best_pred = scores.argmax(axis=1)
    best_gt = scores.argmax(axis=0)

    gt_to_pred = {}
    for g in gt_ids:
        p = int(best_pred[g])
        if scores[g, p] > 0 and best_gt[p] == g:
            gt_to_pred[g] = p

    pred_to_gt = {p: g for g, p in gt_to_pred.items()}
    return FrameMatching(
        frame=frame,
        gt_to_pred=gt_to_pred,
        pred_to_gt=pred_to_gt,
        unmatched_gt=tuple(g for g in gt_ids if g not in gt_to_pred),
        unmatched_pred=tuple(p for p in pred_ids if p not in pred_to_gt),
    )


def is_short_exit(cell: CellRecord, config: EvalConfig) -> bool:
    return cell.touches_open_end and cell.length() < config.min_exit_length


def exclusion_filter(cells, config: EvalConfig) -> list[CellRecord]:
    """Cells kept for evaluation: drops exiting cells shorter than `min_exit_length`."""
    return [cell for cell in cells if not is_short_exit(cell, config)]


def excluded_cells(
    gt: Lineage, pred: Lineage, matchings: list[FrameMatching], config: EvalConfig
) -> tuple[set[CellKey], set[CellKey]]:
    """
    Excluded ground-truth cells, and excluded predicted cells: those matched to
    an excluded ground-truth cell, plus unmatched predicted cells that are
    themselves short and exiting.
    """
    gt_out: set[CellKey] = set()
    pred_out: set[CellKey] = set()
    for matching, gt_cells, pred_cells in zip(matchings, gt.frames, pred.frames):
        frame = matching.frame
        kept = {cell.id for cell in exclusion_filter(gt_cells, config)}
        for cell in gt_cells:
            if cell.id not in kept:
                gt_out.add((frame, cell.id))
                if cell.id in matching.gt_to_pred:
                    pred_out.add((frame, matching.gt_to_pred[cell.id]))
        for cell in pred_cells:
            if cell.id not in matching.pred_to_gt and is_short_exit(cell, config):
                pred_out.add((frame, cell.id))
    return gt_out, pred_out


@dataclass
class Evaluation:
    """Working state shared by the error passes of `evaluate`."""

    gt: Lineage
    pred: Lineage
    matchings: list[FrameMatching]
    config: EvalConfig
    gt_excluded: set[CellKey] = field(default_factory=set)
    pred_excluded: set[CellKey] = field(default_factory=set)
    # unmatched cells explained by a division-timing offset
    excused_gt: set[CellKey] = field(default_factory=set)
    excused_pred: set[CellKey] = field(default_factory=set)
    # ground-truth division parent -> frames whose links may bridge its daughters
    offset_divisions: dict[CellKey, range] = field(default_factory=dict)

    def gt_match(self, frame: int, gt_id: int) -> int | None:
        if (frame, gt_id) in self.gt_excluded:
            return None
        return self.matchings[frame].gt_to_pred.get(gt_id)

    def pred_match(self, frame: int, pred_id: int) -> int | None:
        if (frame, pred_id) in self.pred_excluded:
            return None
        return self.matchings[frame].pred_to_gt.get(pred_id)


def _same_branch(lineage: Lineage, a: CellKey, b: CellKey) -> bool:
    """Whether the earlier of two observations is an ancestor of the later one."""
    (fa, ia), (fb, ib) = sorted([a, b])
    return lineage.ancestor(fb, ib, fa) == ia


def _gt_anchor(ev: Evaluation, event: DivisionEvent) -> CellKey | None:
    """Ground-truth counterpart of the parent of a predicted division."""
    parent_frame = event.frame - 1
    gt_id = ev.pred_match(parent_frame, event.parent_id)
    if gt_id is not None:
        return (parent_frame, gt_id)

    # parent unmatched: fall back to the ground-truth ancestors of its children
    for child_id in event.child_ids:
        child_gt = ev.pred_match(event.frame, child_id)
        if child_gt is not None:
            ancestor = ev.gt.ancestor(event.frame, child_gt, parent_frame)
            if ancestor is not None:
                return (parent_frame, ancestor)
    return None


def _descendants_in_window(lineage: Lineage, parent: CellKey, frames: range) -> list[CellKey]:
    out = []
    for frame in frames:
        for cell in lineage.frames[frame]:
            if lineage.ancestor(frame, cell.id, parent[0]) == parent[1]:
                out.append((frame, cell.id))
    return out


def division_errors(ev: Evaluation) -> list[ErrorRecord]:
    """
    Pair every ground-truth division with the nearest predicted division on
    the same branch, at most `division_tolerance + 1` frames away. A pair
    within tolerance is correct, a pair just outside costs one error, and
    unpaired divisions on either side cost one error each. Unmatched
    daughters inside the offset window of a pair are attributed to that
    division rather than counted as false negatives or positives.
    """
    tolerance = ev.config.division_tolerance
    window = tolerance + 1

    gt_events = [
        event
        for event in ev.gt.division_events()
        if (event.frame - 1, event.parent_id) not in ev.gt_excluded
    ]
    pred_events = [
        event
        for event in ev.pred.division_events()
        if (event.frame - 1, event.parent_id) not in ev.pred_excluded
    ]
    anchors = [_gt_anchor(ev, event) for event in pred_events]

    candidates = []
    for gi, gt_event in enumerate(gt_events):
        gt_parent = (gt_event.frame - 1, gt_event.parent_id)
        for pi, (pred_event, anchor) in enumerate(zip(pred_events, anchors)):
            offset = abs(pred_event.frame - gt_event.frame)
            if anchor is None or offset > window:
                continue
            if _same_branch(ev.gt, gt_parent, anchor):
                key = (gt_event.frame, gt_event.parent_id, pred_event.frame, pred_event.parent_id)
                candidates.append((offset, key, gi, pi))

    paired_gt: set[int] = set()
    paired_pred: set[int] = set()
    errors = []
    for offset, _, gi, pi in sorted(candidates):
        if gi in paired_gt or pi in paired_pred:
            continue
        paired_gt.add(gi)
        paired_pred.add(pi)
        gt_event, pred_event = gt_events[gi], pred_events[pi]

        if offset > tolerance:
            errors.append(
                ErrorRecord(
                    DIVISION,
                    gt_event.frame,
                    gt_event.parent_id,
                    pred_event.parent_id,
                    f"division found {pred_event.frame - gt_event.frame:+d} frames away",
                )
            )

        if pred_event.frame != gt_event.frame:
            first, last = sorted((gt_event.frame, pred_event.frame))
            ev.offset_divisions[(gt_event.frame - 1, gt_event.parent_id)] = range(first, last + 1)

        if pred_event.frame > gt_event.frame:
            # late prediction: ground-truth daughters before it may stay unmatched
            ev.excused_gt.update(
                _descendants_in_window(
                    ev.gt,
                    (gt_event.frame - 1, gt_event.parent_id),
                    range(gt_event.frame, pred_event.frame),
                )
            )
        elif pred_event.frame < gt_event.frame:
            ev.excused_pred.update(
                _descendants_in_window(
                    ev.pred,
                    (pred_event.frame - 1, pred_event.parent_id),
                    range(pred_event.frame, gt_event.frame),
                )
            )

    for gi, event in enumerate(gt_events):
        if gi not in paired_gt:
            errors.append(
                ErrorRecord(DIVISION, event.frame, event.parent_id, None, "missed division")
            )
    for pi, event in enumerate(pred_events):
        if pi not in paired_pred:
            errors.append(
                ErrorRecord(DIVISION, event.frame, None, event.parent_id, "spurious division")
            )
    return errors


def detection_errors(ev: Evaluation) -> list[ErrorRecord]:
    errors = []
    for matching in ev.matchings:
        frame = matching.frame
        for gt_id in matching.unmatched_gt:
            key = (frame, gt_id)
            if key not in ev.gt_excluded and key not in ev.excused_gt:
                errors.append(ErrorRecord(FALSE_NEGATIVE, frame, gt_id, None))
        for pred_id in matching.unmatched_pred:
            key = (frame, pred_id)
            if key not in ev.pred_excluded and key not in ev.excused_pred:
                errors.append(ErrorRecord(FALSE_POSITIVE, frame, None, pred_id))
    return errors


def link_errors(ev: Evaluation) -> list[ErrorRecord]:
    """
    A predicted link c -> p between two matched cells is correct when the
    ground-truth counterpart of p is the parent of the counterpart of c, or
    when their nearest common ancestor, at most `tolerance` frames before
    that, is the parent of a division paired with an offset whose window
    covers frame t. Sisters swapped after a correctly timed division are
    two errors. A matched
    predicted cell without a parent whose counterpart is linked to a matched
    cell is a missing link.
    """
    tolerance = ev.config.division_tolerance
    errors = []

    for frame in range(1, ev.pred.num_frames):
        for cell in ev.pred.frames[frame]:
            gt_child = ev.pred_match(frame, cell.id)
            if gt_child is None:
                continue

            if cell.parent_id is None:
                gt_cell = ev.gt.cell(frame, gt_child)
                if (
                    gt_cell.parent_id is not None
                    and ev.gt_match(frame - 1, gt_cell.parent_id) is not None
                ):
                    errors.append(
                        ErrorRecord(LINK, frame, gt_child, cell.id, "missing link")
                    )
                continue

            gt_parent = ev.pred_match(frame - 1, cell.parent_id)
            if gt_parent is None:
                continue

            ok = False
            for s in range(frame - 1, max(frame - 2 - tolerance, -1), -1):
                a = ev.gt.ancestor(frame, gt_child, s)
                if a is not None and a == ev.gt.ancestor(frame - 1, gt_parent, s):
                    ok = s == frame - 1 or frame in ev.offset_divisions.get((s, a), ())
                    break
            if not ok:
                detail = f"linked to predicted {cell.parent_id} (ground truth {gt_parent})"
                if ev.gt.root(frame, gt_child) != ev.gt.root(frame - 1, gt_parent):
                    detail += " across lineages"
                errors.append(ErrorRecord(LINK, frame, gt_child, cell.id, detail))

    return errors


def match_sequences(
    gt_labels: np.ndarray, pred_labels: np.ndarray, config: EvalConfig, threads: int = 1
) -> list[FrameMatching]:
    if np.shape(gt_labels) != np.shape(pred_labels):
        raise ShapeMismatch(
            f"ground truth {np.shape(gt_labels)} and prediction {np.shape(pred_labels)} differ"
        )
    return parallelize(
        lambda frame: match_frames(gt_labels[frame], pred_labels[frame], config.matching, frame),
        list(range(len(gt_labels))),
        num_workers=threads,
        desc="Matching",
    )


def evaluate(
    gt: TrackedStack, pred: TrackedStack, config: EvalConfig, threads: int = 1
) -> EvalReport:
    matchings = match_sequences(gt.labels, pred.labels, config, threads)
    gt_excluded, pred_excluded = excluded_cells(gt.lineage, pred.lineage, matchings, config)

    ev = Evaluation(
        gt=gt.lineage,
        pred=pred.lineage,
        matchings=matchings,
        config=config,
        gt_excluded=gt_excluded,
        pred_excluded=pred_excluded,
    )

    # division pairing decides which unmatched cells are excused, so it runs first
    errors = division_errors(ev)
    errors += detection_errors(ev)
    errors += link_errors(ev)
    errors.sort(key=lambda e: (e.frame, ERROR_KINDS.index(e.kind), e.gt_id or 0, e.pred_id or 0))

    counts = {kind: 0 for kind in ERROR_KINDS}
    for record in errors:
        counts[record.kind] += 1

    report = EvalReport(
        counts=counts,
        num_gt_observations=gt.lineage.num_cells() - len(gt_excluded),
        num_pred_observations=pred.lineage.num_cells() - len(pred_excluded),
        num_excluded_gt=len(gt_excluded),
        errors=errors,
        settings={
            "min_exit_length": config.min_exit_length,
            "division_tolerance": config.division_tolerance,
            "matching": config.matching,
        },
    )
    logger.debug(
        f"evaluation: {report.total} errors over {report.num_gt_observations} observations"
    )
    return report
