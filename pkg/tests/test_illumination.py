import numpy as np
import pytest

from distrack.augmentation.illumination import (
    IlluminationParams,
    apply_illumination,
    draw_histogram_map,
    illuminate_pair,
    y_profile,
)
from distrack.common_types import IlluminationConfig
from distrack.errors import ConfigError, InputRange
from distrack.utils import load_config


def plain_params(**overrides) -> IlluminationParams:
    values = dict(
        gauss_add_sigma=0.0,
        gauss_mul_sigma=0.0,
        poisson_scale=0.0,
        histogram_x=[0.0, 1.0],
        histogram_y=[0.0, 1.0],
        y_gradient_amplitude=0.0,
        y_profile_knots=[0.0, 0.0, 0.0],
        range_lo=0.0,
        range_hi=1.0,
    )
    values.update(overrides)
    return IlluminationParams(**values)


def ramp(height: int = 16, width: int = 4) -> np.ndarray:
    return np.tile(np.linspace(0.0, 1.0, height)[:, None], (1, width))


@pytest.mark.parametrize("seed", range(5))
def test_histogram_map_is_increasing(seed):
    xs, ys = draw_histogram_map(5, np.random.default_rng(seed))
    assert len(xs) == len(ys) == 7
    assert ys[0] == 0.0 and ys[-1] == 1.0
    slopes = np.diff(ys) / np.diff(xs)
    assert (slopes >= 0.25).all() and (slopes <= 4.0).all()


def test_histogram_map_without_points_is_identity():
    xs, ys = draw_histogram_map(0, np.random.default_rng(0))
    np.testing.assert_array_equal(xs, ys)


def test_plain_params_leave_image_unchanged():
    image = ramp()
    out = apply_illumination(image, plain_params(), np.random.default_rng(0))
    assert out.dtype == np.float32
    np.testing.assert_allclose(out, image, atol=1e-6)


def test_range_remap():
    image = ramp()
    params = plain_params(range_lo=0.2, range_hi=0.5)
    out = apply_illumination(image, params, np.random.default_rng(0))
    np.testing.assert_allclose(out, 0.2 + 0.3 * image, atol=1e-6)


def test_y_profile():
    profile = y_profile(21, [1.0, -1.0, 0.5])
    assert profile[0] == pytest.approx(1.0)
    assert profile[10] == pytest.approx(-1.0)
    assert profile[20] == pytest.approx(0.5)
    assert (np.abs(profile) <= 1.0).all()
    assert y_profile(1, [0.3, 0.0, 0.0]).tolist() == [0.3]


def test_out_of_range_input():
    with pytest.raises(InputRange):
        apply_illumination(np.full((2, 2), 1.5), plain_params(), np.random.default_rng(0))
    image = np.zeros((2, 2))
    image[0, 0] = np.nan
    config = load_config(IlluminationConfig)
    with pytest.raises(InputRange):
        illuminate_pair(image, np.zeros((2, 2)), config, np.random.default_rng(0))


def test_pair_output_bounds_and_determinism():
    config = load_config(IlluminationConfig)
    image = ramp(32, 8)

    prev, curr, params = illuminate_pair(image, image, config, np.random.default_rng(3))
    for out in (prev, curr):
        assert out.shape == image.shape
        assert out.min() >= params.range_lo - 1e-6
        assert out.max() <= params.range_hi + 1e-6
    assert params.range_hi - params.range_lo >= config.min_intensity_span

    again = illuminate_pair(image, image, config, np.random.default_rng(3))
    np.testing.assert_array_equal(prev, again[0])
    np.testing.assert_array_equal(curr, again[1])
    assert params == again[2]


def test_config_validation():
    with pytest.raises(ConfigError):
        load_config(IlluminationConfig, overrides={"gauss_add_sigma_range": [0.1, 0.0]})
    with pytest.raises(ConfigError):
        load_config(IlluminationConfig, overrides={"min_intensity_span": 0.0})
