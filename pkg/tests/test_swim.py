import numpy as np
import pytest
from conftest import stack_from_spans

from distrack.augmentation.swim import apply_swim, cell_extents, simulate_swim
from distrack.common_types import GeometricConfig
from distrack.utils import load_config


def column(spans) -> tuple[np.ndarray, np.ndarray]:
    labels = stack_from_spans(100, 1, [spans])[0]
    image = np.where(labels > 0, 0.2, 0.8).astype(np.float32)
    return image, labels


def test_cell_extents():
    _, labels = column([(10, 29), (40, 59)])
    assert cell_extents(labels) == [(10, 30, 1), (40, 60, 2)]


def test_rows_below_gap_move_down():
    image, labels = column([(10, 29), (40, 59), (65, 80)])
    new_image, new_labels, params = apply_swim(
        image, labels, gap=0, distance=5, erase_exit_below=20
    )
    assert params.cut_row == 30
    assert params.erased == []
    np.testing.assert_array_equal(new_labels[:30], labels[:30])
    np.testing.assert_array_equal(new_labels[35:], labels[30:95])
    assert (new_labels[30:35] == 0).all()
    # opened rows take the background level
    assert np.allclose(new_image[30:35], 0.8)


def test_cell_with_few_visible_rows_is_erased():
    image, labels = column([(10, 29), (40, 59), (70, 89)])
    # cell 3 ends up on rows 85..99: 15 visible pixels
    new_image, new_labels, params = apply_swim(
        image, labels, gap=1, distance=15, erase_exit_below=20
    )
    assert params.erased == [3]
    assert 3 not in np.unique(new_labels)
    assert np.allclose(new_image[85:], 0.8)


def test_cell_with_enough_visible_rows_is_truncated():
    image, labels = column([(10, 29), (40, 59), (70, 99)])
    _, new_labels, params = apply_swim(
        image, labels, gap=1, distance=5, erase_exit_below=20
    )
    assert params.erased == []
    assert np.count_nonzero(new_labels == 3) == 25


def test_distance_past_open_end_empties_channel_below_cut():
    labels = stack_from_spans(40, 1, [[(5, 14), (20, 29)]])[0]
    image = np.where(labels > 0, 0.2, 0.8).astype(np.float32)
    new_image, new_labels, params = apply_swim(
        image, labels, gap=0, distance=60, erase_exit_below=20
    )
    assert params.cut_row == 15
    assert params.erased == [2]
    np.testing.assert_array_equal(new_labels[:15], labels[:15])
    assert not new_labels[15:].any()
    assert np.allclose(new_image[15:], 0.8)


def test_zero_distance_changes_nothing():
    image, labels = column([(10, 29), (40, 59)])
    new_image, new_labels, _ = apply_swim(
        image, labels, gap=0, distance=0, erase_exit_below=20
    )
    np.testing.assert_array_equal(new_labels, labels)
    np.testing.assert_array_equal(new_image, image)


def test_single_cell_has_no_swim():
    image, labels = column([(10, 29)])
    new_image, new_labels, params = simulate_swim(
        image, labels, load_config(GeometricConfig), np.random.default_rng(0)
    )
    assert params is None
    np.testing.assert_array_equal(new_labels, labels)


@pytest.mark.parametrize("seed", range(5))
def test_random_swim_bounds(seed):
    image, labels = column([(5, 20), (25, 40), (45, 60), (65, 80)])
    config = load_config(GeometricConfig, overrides={"swim_max_distance": 10})
    _, _, params = simulate_swim(image, labels, config, np.random.default_rng(seed))
    assert 1 <= params.distance <= 10
    assert params.cut_row in (21, 41, 61)
