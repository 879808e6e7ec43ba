import numpy as np
import pytest
from conftest import division_sequence, stack_from_spans, tracked_stack

from distrack.data.geometry import cell_records
from distrack.errors import BrokenLink, ShapeMismatch
from distrack.pipeline.truth_maps import (
    BACKGROUND,
    DIVIDED,
    NO_PREVIOUS,
    OTHER,
    compute_categories,
    compute_displacement,
    compute_edm,
    compute_truth_maps,
)


def test_edm_square():
    labels = np.ones((5, 5), dtype=np.uint16)
    edm = compute_edm(labels)
    assert edm[2, 2] == 3.0
    assert edm[0, 0] == 1.0
    assert edm.min() == 1.0


def test_edm_background_is_zero():
    labels = np.zeros((6, 6), dtype=np.uint16)
    labels[1:5, 1:5] = 1
    edm = compute_edm(labels)
    assert (edm[labels == 0] == 0).all()
    assert edm[2, 2] == 2.0
    assert not compute_edm(np.zeros((3, 3), dtype=np.uint16)).any()


def test_edm_touching_cells():
    labels = np.zeros((10, 3), dtype=np.uint16)
    labels[0:5] = 1
    labels[5:10] = 2
    edm = compute_edm(labels)
    # rows on both sides of the interface are one pixel from the other cell
    assert edm[4, 1] == 1.0
    assert edm[5, 1] == 1.0
    assert edm[2, 1] == 2.0


def test_edm_matches_brute_force():
    rng = np.random.default_rng(3)
    labels = np.zeros((12, 9), dtype=np.uint16)
    labels[1:6, 2:8] = 1
    labels[7:11, 0:5] = 2
    labels[rng.random(labels.shape) < 0.05] = 0

    edm = compute_edm(labels)
    padded = np.pad(labels, 1)
    ys, xs = np.indices(padded.shape)
    for y, x in zip(*np.nonzero(labels)):
        other = padded != labels[y, x]
        d = np.sqrt((ys[other] - (y + 1)) ** 2 + (xs[other] - (x + 1)) ** 2).min()
        assert edm[y, x] == pytest.approx(d)


@pytest.mark.parametrize("seed", range(20))
def test_edm_matches_brute_force_on_random_maps(seed):
    rng = np.random.default_rng(seed)
    height, width = rng.integers(1, 33, size=2)
    labels = rng.integers(0, 1 + seed % 5, size=(height, width)).astype(np.uint16)

    edm = compute_edm(labels)
    padded = np.pad(labels, 1)
    ys, xs = np.indices(padded.shape)
    for y, x in zip(*np.nonzero(labels)):
        other = padded != labels[y, x]
        d = np.sqrt((ys[other] - (y + 1)) ** 2 + (xs[other] - (x + 1)) ** 2).min()
        assert edm[y, x] == pytest.approx(d)
    assert (edm[labels == 0] == 0).all()


def test_displacement_and_categories():
    labels = stack_from_spans(40, 4, [[(2, 11)], [(3, 12), (14, 20)]])
    stack = tracked_stack(labels, [{}, {1: 1}])
    prev, curr = stack.lineage.frames

    displacement = compute_displacement(labels[1], prev, curr)
    assert displacement[5, 0] == pytest.approx(1.0)
    assert displacement[16, 0] == 0.0
    assert displacement[0, 0] == 0.0

    categories = compute_categories(labels[1], prev, curr)
    assert categories[5, 0] == OTHER
    assert categories[16, 0] == NO_PREVIOUS
    assert categories[30, 0] == BACKGROUND


def test_division_categories():
    stack = division_sequence(division_frame=2, num_frames=3)
    maps = compute_truth_maps(stack.labels, stack.lineage)

    assert (maps.categories[0][stack.labels[0] > 0] == NO_PREVIOUS).all()
    assert (maps.displacement[0] == 0).all()

    assert maps.categories[1, 20, 0] == OTHER
    assert maps.categories[2, 20, 0] == DIVIDED
    assert maps.categories[2, 40, 0] == DIVIDED

    # daughter centers measured against the mother center
    mother = (10 + 49) / 2
    assert maps.displacement[2, 20, 0] == pytest.approx((10 + 29) / 2 - mother)
    assert maps.displacement[2, 40, 0] == pytest.approx((31 + 49) / 2 - mother)


def test_broken_links():
    labels = stack_from_spans(20, 2, [[(1, 5)], [(2, 6)]])
    prev = cell_records(labels[0], 0)
    curr = cell_records(labels[1], 1, {1: 4})
    with pytest.raises(BrokenLink):
        compute_displacement(labels[1], prev, curr)
    with pytest.raises(BrokenLink):
        compute_categories(labels[1], prev, curr)


def test_truth_maps_shapes(sim_sequence):
    maps = compute_truth_maps(sim_sequence.labels, sim_sequence.lineage)
    assert maps.edm.shape == sim_sequence.labels.shape
    assert ((maps.edm >= 1) == (sim_sequence.labels > 0)).all()
    assert maps.categories.max() <= 3

    with pytest.raises(ShapeMismatch):
        compute_truth_maps(sim_sequence.labels[:-1], sim_sequence.lineage)
