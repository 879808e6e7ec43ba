from dataclasses import dataclass

import numpy as np
from loguru import logger

from distrack.augmentation.geometric import geometric_pair
from distrack.augmentation.illumination import illuminate_pair
from distrack.augmentation.swim import simulate_swim
from distrack.common_types import AugConfig
from distrack.data.geometry import cell_records
from distrack.data.types import Lineage
from distrack.errors import ShapeMismatch
from distrack.utils import progress


@dataclass(frozen=True, eq=False)
class AugmentedSequence:
    images: np.ndarray  # (frames, H, W) float32
    labels: np.ndarray  # (frames, H, W)
    lineage: Lineage
    draws: list[dict]


def rebuild_lineage(labels: np.ndarray, lineage: Lineage) -> Lineage:
    """
    Fresh CellRecords for transformed labels. Ids are kept, so parent links
    carry over; links to cells that no longer exist are dropped.
    """
    frames = []
    for frame in range(labels.shape[0]):
        parents = {}
        if frame > 0:
            alive = {cell.id for cell in frames[frame - 1]}
            for cell in lineage.frames[frame]:
                if cell.parent_id in alive:
                    parents[cell.id] = cell.parent_id
        frames.append(cell_records(labels[frame], frame, parents))
    return Lineage(lineage.shape, tuple(tuple(cells) for cells in frames))


def augment_sequence(
    images: np.ndarray, labels: np.ndarray, lineage: Lineage, config: AugConfig
) -> AugmentedSequence:
    """
    Augment a sequence as consecutive frame pairs (0, 1), (2, 3), ...; a
    trailing unpaired frame is augmented alone. Within a pair, illumination
    parameters and geometric scale/shear are shared, and a swim event may
    move cells of the second frame.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.shape != labels.shape or labels.ndim != 3:
        raise ShapeMismatch(f"images {images.shape} and labels {labels.shape} must match")
    if labels.shape[0] != lineage.num_frames:
        raise ShapeMismatch(
            f"{labels.shape[0]} frames do not match a lineage of {lineage.num_frames} frames"
        )

    rng = np.random.default_rng(config.seed)
    out_images = np.zeros(images.shape, dtype=np.float32)
    out_labels = np.zeros_like(labels)
    draws = []

    num_frames = labels.shape[0]
    for first in progress(range(0, num_frames, 2), desc="Augmenting"):
        second = min(first + 1, num_frames - 1)

        prev_img, curr_img, prev_lab, curr_lab, geometric = geometric_pair(
            images[first], images[second], labels[first], labels[second], config.geometric, rng
        )

        swim = None
        if second != first and rng.random() < config.geometric.swim_probability:
            curr_img, curr_lab, swim = simulate_swim(curr_img, curr_lab, config.geometric, rng)

        prev_img, curr_img, illumination = illuminate_pair(
            np.clip(prev_img, 0.0, 1.0), np.clip(curr_img, 0.0, 1.0), config.illumination, rng
        )

        out_images[first], out_labels[first] = prev_img, prev_lab
        out_images[second], out_labels[second] = curr_img, curr_lab
        draws.append(
            {
                "frames": [first, second],
                "geometric": geometric.to_dict(),
                "swim": None if swim is None else swim.to_dict(),
                "illumination": illumination.to_dict(),
            }
        )

    new_lineage = rebuild_lineage(out_labels, lineage)
    logger.debug(f"augmented {num_frames} frames in {len(draws)} pairs")
    return AugmentedSequence(out_images, out_labels, new_lineage, draws)
