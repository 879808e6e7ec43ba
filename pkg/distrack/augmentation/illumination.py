from dataclasses import asdict, dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from distrack.common_types import IlluminationConfig
from distrack.errors import InputRange

# raw segment slopes are log-uniform in this range before normalization,
# which keeps normalized slopes within [0.25, 4]
RAW_SLOPE_RANGE = (0.5, 2.0)


@dataclass
class IlluminationParams:
    gauss_add_sigma: float
    gauss_mul_sigma: float
    poisson_scale: float  # 0 = no shot noise
    histogram_x: list[float]
    histogram_y: list[float]
    y_gradient_amplitude: float
    y_profile_knots: list[float]
    range_lo: float
    range_hi: float

    def to_dict(self):
        return asdict(self)


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    if hi <= lo:
        return float(lo)
    return float(rng.uniform(lo, hi))


def draw_histogram_map(num_points: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """
    Random increasing piecewise-linear map of [0, 1] onto itself with
    `num_points` interior control points at evenly spaced inputs.
    """
    xs = np.linspace(0.0, 1.0, num_points + 2)
    if num_points == 0:
        return xs, xs.copy()

    log_lo, log_hi = np.log(RAW_SLOPE_RANGE[0]), np.log(RAW_SLOPE_RANGE[1])
    slopes = np.exp(rng.uniform(log_lo, log_hi, size=num_points + 1))
    rises = slopes * np.diff(xs)
    ys = np.concatenate([[0.0], np.cumsum(rises) / rises.sum()])
    ys[-1] = 1.0
    return xs, ys


def apply_histogram_map(image: np.ndarray, xs, ys) -> np.ndarray:
    return np.interp(image, xs, ys)


def y_profile(height: int, knots) -> np.ndarray:
    """Smooth profile in [-1, 1] along Y, a cubic through knots at the top, middle and bottom."""
    if height == 1:
        return np.full(1, float(knots[0]))
    positions = np.array([0.0, (height - 1) / 2, height - 1.0])
    spline = CubicSpline(positions, np.asarray(knots, dtype=np.float64), bc_type="natural")
    return np.clip(spline(np.arange(height, dtype=np.float64)), -1.0, 1.0)


def draw_illumination(config: IlluminationConfig, rng: np.random.Generator) -> IlluminationParams:
    xs, ys = draw_histogram_map(config.histogram_elastic_points, rng)

    amplitude = _uniform(rng, config.y_gradient_amplitude_range) * (1 if rng.random() < 0.5 else -1)
    knots = rng.uniform(-1.0, 1.0, size=3)

    span = float(rng.uniform(config.min_intensity_span, 1.0))
    lo = float(rng.uniform(0.0, 1.0 - span))

    return IlluminationParams(
        gauss_add_sigma=_uniform(rng, config.gauss_add_sigma_range),
        gauss_mul_sigma=_uniform(rng, config.gauss_mul_sigma_range),
        poisson_scale=_uniform(rng, config.poisson_scale_range),
        histogram_x=xs.tolist(),
        histogram_y=ys.tolist(),
        y_gradient_amplitude=amplitude,
        y_profile_knots=knots.tolist(),
        range_lo=lo,
        range_hi=lo + span,
    )


def check_unit_range(image: np.ndarray):
    if not np.isfinite(image).all():
        raise InputRange("image contains NaN or infinite values")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise InputRange(
            f"image values must lie in [0, 1], got [{image.min():.4g}, {image.max():.4g}]"
        )


def apply_illumination(
    image: np.ndarray, params: IlluminationParams, rng: np.random.Generator
) -> np.ndarray:
    """
    Noise, histogram deformation, Y modulation, then a linear remap of
    [0, 1] onto [range_lo, range_hi]. The noise realization comes from `rng`;
    its levels come from `params`.
    """
    image = np.asarray(image, dtype=np.float64)
    check_unit_range(image)
    out = image.copy()

    if params.gauss_add_sigma > 0:
        out = out + rng.normal(0.0, params.gauss_add_sigma, size=out.shape)
    if params.gauss_mul_sigma > 0:
        out = out * (1.0 + rng.normal(0.0, params.gauss_mul_sigma, size=out.shape))
    if params.poisson_scale > 0:
        lam = params.poisson_scale
        out = rng.poisson(np.clip(out, 0.0, None) * lam) / lam
    out = np.clip(out, 0.0, 1.0)

    out = apply_histogram_map(out, params.histogram_x, params.histogram_y)

    if params.y_gradient_amplitude != 0:
        profile = y_profile(out.shape[0], params.y_profile_knots)
        out = np.clip(out * (1.0 + params.y_gradient_amplitude * profile)[:, None], 0.0, 1.0)

    out = params.range_lo + out * (params.range_hi - params.range_lo)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def illuminate_pair(
    prev: np.ndarray,
    curr: np.ndarray,
    config: IlluminationConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, IlluminationParams]:
    """Both images of a pair get the same illumination parameters."""
    check_unit_range(np.asarray(prev))
    check_unit_range(np.asarray(curr))
    params = draw_illumination(config, rng)
    return apply_illumination(prev, params, rng), apply_illumination(curr, params, rng), params
