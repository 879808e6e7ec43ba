"""
Cell masks from a (predicted) EDM: watershed restricted to EDM >= threshold,
seeded by regional maxima, followed by merging of regions whose interface
is too "deep" to be a gap between two cells, then absorption of fragments
too small to be cells.
"""

from typing import Sequence

import numpy as np
from loguru import logger
from scipy import ndimage
from skimage.morphology import local_maxima
from skimage.segmentation import watershed

from distrack.common_types import WatershedConfig
from distrack.data.geometry import FOUR_CONNECTED
from distrack.data.types import LabelMap, LabelStack
from distrack.errors import NonFiniteInput, ShapeMismatch
from distrack.utils import parallelize

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def find_seeds(height: np.ndarray, foreground: np.ndarray, config: WatershedConfig) -> np.ndarray:
    """
    Markers for flooding: 4-connected regional maxima (a plateau is a single
    seed) inside the foreground, high enough to count. Foreground components
    left without a seed get their highest plateau instead, so flooding always
    covers the whole foreground.
    """
    maxima = local_maxima(height, connectivity=1, allow_borders=True).astype(bool)
    maxima &= foreground & (height >= config.seed_min_height)
    markers, num_markers = ndimage.label(maxima, structure=FOUR_CONNECTED)

    components, num_components = ndimage.label(foreground, structure=FOUR_CONNECTED)
    if num_components == 0:
        return markers

    seeded = np.zeros(num_components + 1, dtype=bool)
    seeded[components[markers > 0]] = True
    missing = np.flatnonzero(~seeded[1:]) + 1
    if missing.size > 0:
        peaks = ndimage.maximum(height, components, missing)
        for component, peak in zip(missing, np.atleast_1d(peaks)):
            plateau = (components == component) & (height == peak)
            plateau_labels, count = ndimage.label(plateau, structure=FOUR_CONNECTED)
            markers[plateau_labels > 0] = plateau_labels[plateau_labels > 0] + num_markers
            num_markers += count

    return markers


def interface_values(labels: np.ndarray, edm: np.ndarray) -> dict[tuple[int, int], float]:
    """
    For each pair of 4-adjacent regions (a < b): the maximum, over pixel pairs
    (p, q) straddling their boundary, of min(edm[p], edm[q]).
    """
    pairs = []
    values = []
    for a, b, ea, eb in (
        (labels[:-1, :], labels[1:, :], edm[:-1, :], edm[1:, :]),
        (labels[:, :-1], labels[:, 1:], edm[:, :-1], edm[:, 1:]),
    ):
        touching = (a != b) & (a > 0) & (b > 0)
        if not touching.any():
            continue
        la, lb = a[touching].astype(np.int64), b[touching].astype(np.int64)
        pairs.append(np.stack([np.minimum(la, lb), np.maximum(la, lb)], axis=1))
        values.append(np.minimum(ea[touching], eb[touching]))

    if not pairs:
        return {}

    all_pairs = np.concatenate(pairs)
    all_values = np.concatenate(values)
    unique, inverse = np.unique(all_pairs, axis=0, return_inverse=True)
    best = np.full(len(unique), -np.inf)
    np.maximum.at(best, inverse.ravel(), all_values)
    return {(int(a), int(b)): float(v) for (a, b), v in zip(unique, best)}


def merge_regions(labels: np.ndarray, edm: np.ndarray, merge_threshold: float) -> np.ndarray:
    """
    Merge touching regions whose interface value exceeds the threshold,
    to a fixed point. Since the interface of a merged region with a third
    one is the max of its parts' interfaces, the fixed point is given by the
    connected components of the "interface > threshold" graph.
    """
    num_labels = int(labels.max())
    parent = np.arange(num_labels + 1)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (a, b), value in sorted(interface_values(labels, edm).items()):
        if value > merge_threshold:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    roots = np.array([find(x) for x in range(num_labels + 1)])
    return roots[labels]


def absorb_small_regions(labels: np.ndarray, min_area: int) -> np.ndarray:
    """
    Relabel every region smaller than `min_area` pixels to the 8-adjacent
    region sharing the most pixels with its one-pixel ring (smaller id on
    ties), smallest region first, until none is left. Regions with no
    labeled neighbor are kept, so the foreground is never shrunk, but a
    grown region need not stay 4-connected.
    """
    labels = np.asarray(labels).astype(np.int64)
    if min_area <= 1:
        return labels

    while True:
        areas = np.bincount(labels.ravel())
        ids = np.flatnonzero((areas > 0) & (areas < min_area))
        ids = ids[ids > 0]
        absorbed = False
        for region in ids[np.argsort(areas[ids], kind="stable")]:
            mask = labels == region
            ring = ndimage.binary_dilation(mask, structure=EIGHT_CONNECTED) & ~mask
            neighbors = labels[ring]
            neighbors = neighbors[neighbors > 0]
            if neighbors.size == 0:
                continue
            labels[mask] = int(np.argmax(np.bincount(neighbors)))
            absorbed = True
            break
        if not absorbed:
            return labels


def relabel_top_to_bottom(labels: np.ndarray) -> np.ndarray:
    """Renumber regions 1..K in increasing centroid_y order."""
    ids = np.unique(labels)
    ids = ids[ids > 0]
    if ids.size == 0:
        return np.zeros(labels.shape, dtype=np.uint16)

    centers = np.asarray(ndimage.center_of_mass(np.ones(labels.shape), labels, ids))
    first_pixel = np.asarray(
        ndimage.minimum(np.arange(labels.size).reshape(labels.shape), labels, ids)
    )
    # ties in centroid_y (side-by-side regions) go to the region seen first in row-major order
    order = np.lexsort((first_pixel, centers[:, 0]))

    lut = np.zeros(int(ids.max()) + 1, dtype=np.uint16)
    lut[ids[order]] = np.arange(1, ids.size + 1)
    return lut[labels]


def watershed_segment(edm: np.ndarray, config: WatershedConfig) -> LabelMap:
    edm = np.asarray(edm, dtype=np.float64)
    if not np.isfinite(edm).all():
        raise NonFiniteInput("EDM contains NaN or infinite values")

    foreground = edm >= config.foreground_threshold
    if not foreground.any():
        return np.zeros(edm.shape, dtype=np.uint16)

    height = edm
    if config.smoothing_radius > 0:
        height = ndimage.gaussian_filter(edm, config.smoothing_radius, mode="nearest")

    markers = find_seeds(height, foreground, config)
    # flooding in decreasing height; skimage breaks ties by insertion order
    regions = watershed(-height, markers, mask=foreground, connectivity=1)

    merged = merge_regions(regions, edm, config.merge_threshold)
    merged = absorb_small_regions(merged, config.min_region_area)
    return relabel_top_to_bottom(merged)


def segment_stack(
    edms: np.ndarray | Sequence[np.ndarray],
    config: WatershedConfig,
    threads: int = 1,
) -> LabelStack:
    frames = list(edms)
    if not frames:
        shape = getattr(edms, "shape", (0, 1, 1))
        return np.zeros(shape, dtype=np.uint16)

    shapes = {np.shape(frame) for frame in frames}
    if len(shapes) != 1 or len(next(iter(shapes))) != 2:
        raise ShapeMismatch(f"EDM frames must share one 2D shape, got {sorted(shapes)}")

    labels = parallelize(
        lambda frame: watershed_segment(frame, config),
        frames,
        num_workers=threads,
        desc="Segmenting",
    )
    logger.debug(f"segmented {len(frames)} frames")
    return np.stack(labels)
