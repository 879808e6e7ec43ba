import math
from dataclasses import asdict, dataclass

import numpy as np
from loguru import logger
from scipy import ndimage

from distrack.common_types import GeometricConfig
from distrack.data.geometry import FOUR_CONNECTED
from distrack.errors import ConstraintUnsatisfiable, ShapeMismatch


@dataclass
class ImageTransform:
    """Per-image part of a geometric draw."""

    rotation: float  # degrees
    shift_y: float
    shift_x: float
    hflip: bool


@dataclass
class GeometricParams:
    # shared by both images of a pair
    scale_y: float
    scale_x: float
    shear: float
    prev: ImageTransform
    curr: ImageTransform
    draws: int = 1

    def to_dict(self):
        return asdict(self)


def translate2d(ty: float, tx: float) -> np.ndarray:
    return np.array([[1.0, 0.0, ty], [0.0, 1.0, tx], [0.0, 0.0, 1.0]])


def scale2d(sy: float, sx: float) -> np.ndarray:
    return np.diag([sy, sx, 1.0])


def shear2d(shear: float) -> np.ndarray:
    # x' = x + shear * y
    return np.array([[1.0, 0.0, 0.0], [shear, 1.0, 0.0], [0.0, 0.0, 1.0]])


def rotate2d(degrees: float) -> np.ndarray:
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def forward_matrix(
    shape: tuple[int, int], scale_y: float, scale_x: float, shear: float, image: ImageTransform
) -> np.ndarray:
    """Homogeneous (y, x) transform from input to output pixel coordinates, about the center."""
    cy, cx = (shape[0] - 1) / 2, (shape[1] - 1) / 2
    flip = scale2d(1.0, -1.0 if image.hflip else 1.0)
    return (
        translate2d(cy + image.shift_y, cx + image.shift_x)
        @ rotate2d(image.rotation)
        @ shear2d(shear)
        @ scale2d(scale_y, scale_x)
        @ flip
        @ translate2d(-cy, -cx)
    )


def warp(array: np.ndarray, forward: np.ndarray, order: int, cval: float = 0.0) -> np.ndarray:
    if np.allclose(forward, np.eye(3), rtol=0, atol=1e-12):
        return array.copy()
    inverse = np.linalg.inv(forward)
    mode = "nearest" if order > 0 else "constant"
    return ndimage.affine_transform(
        array,
        inverse[:2, :2],
        offset=inverse[:2, 2],
        output_shape=array.shape,
        order=order,
        mode=mode,
        cval=cval,
    )


def keep_largest_components(labels: np.ndarray) -> np.ndarray:
    """Nearest-neighbor warps can split a mask; keep its largest 4-connected part."""
    out = labels.copy()
    for index, box in enumerate(ndimage.find_objects(labels), start=1):
        if box is None:
            continue
        mask = labels[box] == index
        parts, count = ndimage.label(mask, structure=FOUR_CONNECTED)
        if count > 1:
            sizes = np.bincount(parts.ravel())
            sizes[0] = 0
            region = out[box]
            region[mask & (parts != sizes.argmax())] = 0
    return out


def border_contacts(labels: np.ndarray) -> set[int]:
    edge = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    return set(np.unique(edge).tolist()) - {0}


def present_labels(labels: np.ndarray) -> set[int]:
    return set(np.unique(labels).tolist()) - {0}


def transform_pair_member(
    image: np.ndarray,
    labels: np.ndarray,
    scale_y: float,
    scale_x: float,
    shear: float,
    transform: ImageTransform,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Warped (image, labels), or None when a cell is lost or newly touches the border."""
    forward = forward_matrix(labels.shape, scale_y, scale_x, shear, transform)
    new_labels = keep_largest_components(warp(labels, forward, order=0))

    if present_labels(new_labels) != present_labels(labels):
        return None
    if not border_contacts(new_labels) <= border_contacts(labels):
        return None

    new_image = warp(np.asarray(image, dtype=np.float64), forward, order=1)
    return new_image.astype(np.float32), new_labels.astype(labels.dtype)


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    if hi <= lo:
        return float(lo)
    return float(rng.uniform(lo, hi))


def draw_image_transform(config: GeometricConfig, rng: np.random.Generator) -> ImageTransform:
    return ImageTransform(
        rotation=_uniform(rng, config.rotation_range),
        shift_y=_uniform(rng, config.shift_range),
        shift_x=_uniform(rng, config.shift_range),
        hflip=bool(rng.random() < config.hflip_probability),
    )


def draw_scales(config: GeometricConfig, rng: np.random.Generator) -> tuple[float, float]:
    """Scale factors whose aspect ratio stays within the configured bound."""
    for _ in range(config.max_draws):
        sy = _uniform(rng, config.scale_range_y)
        sx = _uniform(rng, config.scale_range_x)
        if abs(sy / sx - 1.0) <= config.max_aspect_ratio_change:
            return sy, sx
    raise ConstraintUnsatisfiable(
        f"no scale draw met the aspect-ratio bound after {config.max_draws} tries"
    )


def geometric_pair(
    prev_image: np.ndarray,
    curr_image: np.ndarray,
    prev_labels: np.ndarray,
    curr_labels: np.ndarray,
    config: GeometricConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, GeometricParams]:
    """
    Shift, scale, shear, rotate and flip a frame pair. Scale and shear are
    shared by both frames, the rest is drawn per frame. Draws where a cell
    leaves the image or a cell not touching the border comes to touch it are
    rejected.
    """
    shapes = {np.shape(a) for a in (prev_image, curr_image, prev_labels, curr_labels)}
    if len(shapes) != 1:
        raise ShapeMismatch(f"pair images and labels differ in shape: {sorted(shapes)}")

    for draw in range(1, config.max_draws + 1):
        scale_y, scale_x = draw_scales(config, rng)
        shear = _uniform(rng, config.shear_range)
        prev_t = draw_image_transform(config, rng)
        curr_t = draw_image_transform(config, rng)

        prev_out = transform_pair_member(prev_image, prev_labels, scale_y, scale_x, shear, prev_t)
        if prev_out is None:
            continue
        curr_out = transform_pair_member(curr_image, curr_labels, scale_y, scale_x, shear, curr_t)
        if curr_out is None:
            continue

        params = GeometricParams(scale_y, scale_x, shear, prev_t, curr_t, draws=draw)
        if draw > 1:
            logger.debug(f"geometric draw accepted after {draw} tries")
        return prev_out[0], curr_out[0], prev_out[1], curr_out[1], params

    raise ConstraintUnsatisfiable(
        f"no geometric draw kept every cell inside the image after {config.max_draws} tries"
    )
