import numpy as np
import pytest
from conftest import small_sim_config

from distrack.common_types import SimConfig
from distrack.errors import ChannelOverfull, ConfigError
from distrack.simulation.simulator import (
    SimCell,
    cell_rows,
    grow_and_divide,
    normalize_intensity,
    rasterize,
    simulate,
)
from distrack.utils import load_config


def test_deterministic():
    a = simulate(small_sim_config(seed=3))
    b = simulate(small_sim_config(seed=3))
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.intensity, b.intensity)
    assert a.lineage == b.lineage

    c = simulate(small_sim_config(seed=4))
    assert not np.array_equal(a.labels, c.labels)


def test_rendering_does_not_change_geometry():
    with_render = simulate(small_sim_config(seed=5))
    without = simulate(small_sim_config(seed=5, render={"enabled": False}))
    assert without.intensity is None
    np.testing.assert_array_equal(with_render.labels, without.labels)
    assert with_render.lineage == without.lineage


def test_zero_frames():
    sim = simulate(small_sim_config(frames=0))
    assert sim.labels.shape == (0, 128, 24)
    assert sim.lineage.num_frames == 0


def test_constant_size_without_growth():
    sim = simulate(small_sim_config(frames=10, growth_rate=1.0, initial_cells=2))
    counts = [[cell.pixel_count for cell in frame] for frame in sim.lineage.frames]
    assert all(c == counts[0] for c in counts)
    assert not sim.lineage.division_events()
    for frame in sim.lineage.frames[1:]:
        assert all(cell.parent_id == cell.id for cell in frame)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lineage_invariants(seed):
    sim = simulate(small_sim_config(seed=seed, frames=30))
    lineage = sim.lineage
    lineage.validate()

    for frame, cells in enumerate(lineage.frames):
        labels = sim.labels[frame]
        ids = sorted(np.unique(labels[labels > 0]).tolist())
        assert ids == list(range(1, len(cells) + 1))
        # ids increase from the closed end
        centers = [cell.center_y for cell in sorted(cells, key=lambda c: c.id)]
        assert centers == sorted(centers)
        if frame > 0:
            assert all(cell.parent_id is not None for cell in cells)

    for event in lineage.division_events():
        assert len(event.child_ids) == 2


def test_division_happens():
    sim = simulate(small_sim_config(frames=40))
    assert len(sim.lineage.division_events()) > 0
    # cells get pushed out through the open end
    assert any(cell.touches_open_end for frame in sim.lineage.frames for cell in frame)


def test_division_ratio_clamped():
    config = small_sim_config(division_asymmetry_sigma=0.4)
    rng = np.random.default_rng(0)
    for _ in range(50):
        cells, parents, _ = grow_and_divide([SimCell(1, 39.0, 1)], config, rng, next_uid=2)
        assert len(cells) == 2
        length = 39.0 * config.growth_rate
        assert 0.3 * length - 1e-9 <= cells[0].length <= 0.7 * length + 1e-9
        assert parents == {2: 1, 3: 1}
        assert cells[0].gap_above == 1


def test_swim_opens_gap():
    config = small_sim_config(swim_probability=1.0, swim_max_distance=3, growth_rate=1.0)
    rng = np.random.default_rng(0)
    cells, _, _ = grow_and_divide([SimCell(1, 10.0, 1), SimCell(2, 10.0, 1)], config, rng, 3)
    assert all(2 <= cell.gap_above <= 4 for cell in cells)


def test_rasterize_truncates_at_open_end():
    config = small_sim_config()
    cells = [SimCell(1, 100.0, 0), SimCell(2, 40.0, 1), SimCell(3, 10.0, 1)]
    assert cell_rows(cells)[:2] == [(0, 100), (101, 141)]

    labels, visible = rasterize(cells, config)
    assert [cell.uid for cell in visible] == [1, 2]
    assert labels[127].max() == 2
    # corners of closed cell ends are trimmed
    x0 = (config.width - config.cell_width) // 2
    assert labels[0, x0] == 0
    assert labels[0, x0 + 1] == 1


def test_overfull_channel():
    with pytest.raises(ChannelOverfull):
        simulate(small_sim_config(initial_cells=10))


def test_config_validation():
    with pytest.raises(ConfigError):
        load_config(SimConfig, overrides={"division_length": 4.0})
    with pytest.raises(ConfigError):
        load_config(SimConfig, overrides={"height": 64, "division_length": 64.0})


def test_intensity():
    sim = simulate(small_sim_config(frames=3))
    assert sim.intensity.dtype == np.float32
    assert sim.intensity.min() >= 0 and sim.intensity.max() <= 1
    frame = sim.intensity[0]
    labels = sim.labels[0]
    # cells render darker than the background
    assert frame[labels > 0].mean() < frame[labels == 0].mean()

    normalized = normalize_intensity(frame * 0.5 + 0.2)
    assert normalized.min() == 0.0 and normalized.max() == pytest.approx(1.0)
