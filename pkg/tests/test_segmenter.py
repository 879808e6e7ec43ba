import numpy as np
import pytest
from conftest import stack_from_spans
from scipy import ndimage

from distrack.common_types import WatershedConfig
from distrack.errors import ConfigError, NonFiniteInput, ShapeMismatch
from distrack.pipeline.segmenter import (
    absorb_small_regions,
    interface_values,
    merge_regions,
    relabel_top_to_bottom,
    segment_stack,
    watershed_segment,
)
from distrack.pipeline.truth_maps import compute_edm
from distrack.utils import load_config


def watershed_config(**overrides) -> WatershedConfig:
    return load_config(WatershedConfig, overrides=overrides)


def two_lobes() -> np.ndarray:
    """Two 9x9 squares of EDM height 5 joined by a short 3-wide neck."""
    labels = np.zeros((24, 11), dtype=np.uint16)
    labels[1:10, 1:10] = 1
    labels[10:13, 4:7] = 1
    labels[13:22, 1:10] = 1
    return compute_edm(labels)


def test_separated_cells_recovered():
    labels = stack_from_spans(60, 6, [[(2, 15), (17, 30), (32, 50)]])[0]
    segmented = watershed_segment(compute_edm(labels), watershed_config())
    np.testing.assert_array_equal(segmented, labels)


def test_touching_cells_split():
    labels = np.zeros((40, 8), dtype=np.uint16)
    labels[2:18, 1:7] = 1
    labels[18:36, 1:7] = 2
    segmented = watershed_segment(compute_edm(labels), watershed_config())
    np.testing.assert_array_equal(segmented, labels)


def test_merge_threshold_controls_necks():
    edm = two_lobes()
    merged = watershed_segment(edm, watershed_config(merge_threshold=1.5))
    assert merged.max() == 1

    split = watershed_segment(edm, watershed_config(merge_threshold=4.0))
    assert split.max() == 2
    assert split[5, 5] == 1 and split[17, 5] == 2


def test_regions_non_decreasing_in_threshold():
    edm = two_lobes()
    counts = [
        watershed_segment(edm, watershed_config(merge_threshold=theta)).max()
        for theta in (1.0, 1.5, 2.0, 3.0, 4.0, 6.0)
    ]
    assert counts == sorted(counts)


def random_spans(rng: np.random.Generator, height: int) -> list[tuple[int, int]]:
    spans, y = [], int(rng.integers(0, 3))
    while True:
        length = int(rng.integers(3, 20))
        if y + length > height:
            return spans
        spans.append((y, y + length - 1))
        y += length + int(rng.integers(1, 4))


@pytest.mark.parametrize("seed", range(20))
def test_separated_cells_recovered_random(seed):
    rng = np.random.default_rng(seed)
    width = int(rng.integers(3, 11))
    labels = stack_from_spans(80, width, [random_spans(rng, 80)])[0]
    segmented = watershed_segment(compute_edm(labels), watershed_config())
    np.testing.assert_array_equal(segmented, labels)


@pytest.mark.parametrize("seed", range(20))
def test_regions_non_decreasing_in_threshold_random(seed):
    rng = np.random.default_rng(seed)
    edm = np.abs(ndimage.gaussian_filter(rng.normal(size=(32, 16)), 2.0))
    edm *= 6.0 / edm.max()
    counts = [
        watershed_segment(edm, watershed_config(merge_threshold=theta, min_region_area=1)).max()
        for theta in (1.0, 1.5, 2.0, 3.0, 4.0, 6.0)
    ]
    assert counts == sorted(counts)


def test_foreground_restricted():
    edm = two_lobes()
    segmented = watershed_segment(edm, watershed_config())
    assert ((segmented > 0) == (edm >= 1.0)).all()

    assert not watershed_segment(np.zeros((5, 5)), watershed_config()).any()


def test_seedless_components_keep_foreground():
    labels = np.zeros((20, 5), dtype=np.uint16)
    labels[2:4, 1:4] = 1
    labels[8:18, 0:5] = 2
    edm = compute_edm(labels)
    segmented = watershed_segment(edm, watershed_config(seed_min_height=2.5, merge_threshold=3.0))
    assert ((segmented > 0) == (edm >= 1.0)).all()
    assert segmented.max() == 2


def test_non_finite_input():
    edm = np.ones((4, 4))
    edm[1, 1] = np.nan
    with pytest.raises(NonFiniteInput):
        watershed_segment(edm, watershed_config())


def test_interface_values():
    labels = np.array([[1, 1, 2], [1, 1, 2], [3, 3, 3]])
    edm = np.array([[1.0, 2.0, 3.0], [1.0, 4.0, 1.0], [5.0, 5.0, 5.0]])
    values = interface_values(labels, edm)
    assert values == {(1, 2): 2.0, (1, 3): 4.0, (2, 3): 1.0}

    merged = merge_regions(labels, edm, merge_threshold=1.5)
    assert len(np.unique(merged)) == 1


def test_relabel_top_to_bottom():
    labels = np.zeros((10, 2), dtype=np.int64)
    labels[6:9] = 5
    labels[0:3] = 9
    relabeled = relabel_top_to_bottom(labels)
    assert relabeled.dtype == np.uint16
    assert relabeled[1, 0] == 1
    assert relabeled[7, 0] == 2


def test_segment_stack(sim_sequence):
    from distrack.pipeline.truth_maps import compute_truth_maps

    maps = compute_truth_maps(sim_sequence.labels, sim_sequence.lineage)
    config = watershed_config()
    single = segment_stack(maps.edm, config, threads=1)
    threaded = segment_stack(maps.edm, config, threads=3)
    np.testing.assert_array_equal(single, threaded)
    np.testing.assert_array_equal(single, sim_sequence.labels)

    with pytest.raises(ShapeMismatch):
        segment_stack([np.zeros((4, 4)), np.zeros((5, 4))], config)


def test_small_regions_absorbed():
    labels = np.zeros((20, 8), dtype=np.int64)
    labels[2:12, 1:7] = 1
    labels[12, 3] = 2  # 4-adjacent
    labels[12, 7] = 3  # diagonal only
    labels[17:19, 2:4] = 4  # no neighbor

    absorbed = absorb_small_regions(labels, min_area=10)
    assert set(np.unique(absorbed)) == {0, 1, 4}
    assert absorbed[12, 3] == 1 and absorbed[12, 7] == 1
    np.testing.assert_array_equal(absorbed > 0, labels > 0)

    np.testing.assert_array_equal(absorb_small_regions(labels, min_area=1), labels)


def test_fragment_joins_largest_contact():
    labels = np.zeros((9, 4), dtype=np.int64)
    labels[0:4] = 1
    labels[5:9] = 2
    labels[4, 0:3] = 2
    labels[4, 3] = 3
    absorbed = absorb_small_regions(labels, min_area=2)
    # touches two pixels of 1 and three of 2
    assert absorbed[4, 3] == 2


def test_noisy_corner_does_not_fragment():
    labels = np.zeros((24, 8), dtype=np.uint16)
    labels[2:20, 1:7] = 1
    edm = compute_edm(labels)
    edm[2, 1] += 0.05

    fragmented = watershed_segment(edm, watershed_config(min_region_area=1))
    assert fragmented.max() == 2

    segmented = watershed_segment(edm, watershed_config())
    np.testing.assert_array_equal(segmented, labels)


def test_config_validation():
    with pytest.raises(ConfigError):
        watershed_config(foreground_threshold=2.0, merge_threshold=1.0)
    with pytest.raises(ConfigError):
        watershed_config(min_region_area=0)
