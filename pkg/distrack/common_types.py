from dataclasses import asdict, dataclass, field

import pydra

from distrack.data.types import ImageShape
from distrack.errors import ConfigError


def check(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def check_range(name: str, value: tuple[float, float], lo: float | None = None):
    check(len(value) == 2, f"{name} must be a (low, high) pair, got {value}")
    check(value[0] <= value[1], f"{name} must satisfy low <= high, got {value}")
    if lo is not None:
        check(value[0] >= lo, f"{name} must be >= {lo}, got {value}")


class RenderConfig(pydra.Config):
    enabled: bool = True

    # gray levels of the phase-contrast-like rendering
    background: float = 0.6
    cell: float = 0.3
    halo: float = 0.85

    blur_sigma: float = 1.0
    noise_sigma: float = 0.02

    def finalize(self):
        super().finalize()
        check(self.cell < self.background < self.halo, "need cell < background < halo")
        check(self.blur_sigma >= 0, "blur_sigma must be non-negative")
        check(self.noise_sigma >= 0, "noise_sigma must be non-negative")


class SimConfig(pydra.Config):
    height: int = 256
    width: int = 32
    cell_width: int = 10

    initial_cells: int = 3
    growth_rate: float = 1.05
    division_length: float = 60.0
    division_asymmetry_sigma: float = 0.05
    gap: int = 1

    frames: int = 100
    seed: int = 0

    # per-cell, per-frame probability of a swim event, which opens an extra
    # gap above the cell and pushes it (and everything below) toward the open end
    swim_probability: float = 0.0
    swim_max_distance: int = 10

    def __init__(self):
        super().__init__()
        self.render = RenderConfig()

    def shape(self) -> ImageShape:
        return ImageShape(self.height, self.width)

    def finalize(self):
        super().finalize()
        self.render.finalize()
        check(self.height >= 1 and self.width >= 1, "image shape must be positive")
        check(
            1 <= self.cell_width <= self.width,
            f"cell_width must be in [1, {self.width}], got {self.cell_width}",
        )
        check(self.initial_cells >= 0, "initial_cells must be non-negative")
        check(self.growth_rate >= 1.0, "growth_rate must be >= 1")
        check(
            8 <= self.division_length < self.height,
            f"division_length must be in [8, {self.height}), got {self.division_length}",
        )
        check(
            0 <= self.division_asymmetry_sigma < 0.5,
            "division_asymmetry_sigma must be in [0, 0.5)",
        )
        check(self.gap >= 0, "gap must be non-negative")
        check(self.frames >= 0, "frames must be non-negative")
        check(0 <= self.swim_probability <= 1, "swim_probability must be in [0, 1]")
        check(self.swim_max_distance >= 0, "swim_max_distance must be non-negative")


class WatershedConfig(pydra.Config):
    foreground_threshold: float = 1.0
    merge_threshold: float = 1.5
    seed_min_height: float = 1.0
    smoothing_radius: float = 0.0
    # regions smaller than this join the 8-adjacent region they touch most; 1 disables
    min_region_area: int = 10

    def finalize(self):
        super().finalize()
        check(self.foreground_threshold >= 0, "foreground_threshold must be >= 0")
        check(
            self.merge_threshold >= self.foreground_threshold,
            "merge_threshold must be >= foreground_threshold",
        )
        check(self.smoothing_radius >= 0, "smoothing_radius must be >= 0")
        check(self.min_region_area >= 1, "min_region_area must be >= 1")


class PipelineConfig(pydra.Config):
    # when false, category maps are ignored and no cell is vetoed as "no previous"
    use_categories: bool = True
    threads: int = 1

    def __init__(self):
        super().__init__()
        self.watershed = WatershedConfig()

    def finalize(self):
        super().finalize()
        self.watershed.finalize()
        check(self.threads >= 0, "threads must be >= 0 (0 = auto)")


class EvalConfig(pydra.Config):
    min_exit_length: int = 40
    division_tolerance: int = 1
    matching: str = "overlap"

    def finalize(self):
        super().finalize()
        check(self.min_exit_length >= 0, "min_exit_length must be >= 0")
        check(self.division_tolerance >= 0, "division_tolerance must be >= 0")
        check(
            self.matching in ("overlap", "iou"),
            f"matching must be 'overlap' or 'iou', got {self.matching!r}",
        )


class IlluminationConfig(pydra.Config):
    gauss_add_sigma_range: tuple[float, float] = (0.0, 0.05)
    gauss_mul_sigma_range: tuple[float, float] = (0.0, 0.05)
    # lambda of value <- Poisson(value * lambda) / lambda, 0 disables
    poisson_scale_range: tuple[float, float] = (100.0, 1000.0)
    histogram_elastic_points: int = 5
    y_gradient_amplitude_range: tuple[float, float] = (0.0, 0.2)
    min_intensity_span: float = 0.1

    def finalize(self):
        super().finalize()
        check_range("gauss_add_sigma_range", self.gauss_add_sigma_range, lo=0.0)
        check_range("gauss_mul_sigma_range", self.gauss_mul_sigma_range, lo=0.0)
        check_range("poisson_scale_range", self.poisson_scale_range, lo=0.0)
        check_range("y_gradient_amplitude_range", self.y_gradient_amplitude_range, lo=0.0)
        check(self.histogram_elastic_points >= 0, "histogram_elastic_points must be >= 0")
        check(
            0 < self.min_intensity_span <= 1,
            "min_intensity_span must be in (0, 1]",
        )


class GeometricConfig(pydra.Config):
    scale_range_x: tuple[float, float] = (0.9, 1.1)
    scale_range_y: tuple[float, float] = (0.9, 1.1)
    max_aspect_ratio_change: float = 0.15
    shear_range: tuple[float, float] = (-0.05, 0.05)
    rotation_range: tuple[float, float] = (-4.0, 4.0)  # degrees
    shift_range: tuple[float, float] = (-2.0, 2.0)  # pixels, both axes
    hflip_probability: float = 0.5

    swim_probability: float = 0.1
    swim_max_distance: int = 20
    erase_exit_below: int = 20

    max_draws: int = 100

    def finalize(self):
        super().finalize()
        check_range("scale_range_x", self.scale_range_x, lo=1e-3)
        check_range("scale_range_y", self.scale_range_y, lo=1e-3)
        check_range("shear_range", self.shear_range)
        check_range("rotation_range", self.rotation_range)
        check_range("shift_range", self.shift_range)
        check(self.max_aspect_ratio_change >= 0, "max_aspect_ratio_change must be >= 0")
        check(0 <= self.hflip_probability <= 1, "hflip_probability must be in [0, 1]")
        check(0 <= self.swim_probability <= 1, "swim_probability must be in [0, 1]")
        check(self.swim_max_distance >= 0, "swim_max_distance must be >= 0")
        check(self.erase_exit_below >= 0, "erase_exit_below must be >= 0")
        check(self.max_draws >= 1, "max_draws must be >= 1")


class AugConfig(pydra.Config):
    seed: int = 0

    def __init__(self):
        super().__init__()
        self.illumination = IlluminationConfig()
        self.geometric = GeometricConfig()

    def finalize(self):
        super().finalize()
        self.illumination.finalize()
        self.geometric.finalize()


class BenchConfig(pydra.Config):
    frames: int = 1000
    height: int = 256
    width: int = 32
    repetitions: int = 3
    threads: int = 1
    seed: int = 0

    def finalize(self):
        super().finalize()
        check(self.repetitions >= 3, "repetitions must be >= 3")
        check(self.frames >= 2, "frames must be >= 2")
        check(self.threads >= 0, "threads must be >= 0 (0 = auto)")

    def sim_config(self) -> SimConfig:
        config = SimConfig()
        config.height = self.height
        config.width = self.width
        config.frames = self.frames
        config.seed = self.seed
        config.division_length = min(60.0, self.height / 2)
        config.render.enabled = False
        config.finalize()
        return config


@dataclass
class RunManifest:
    """
    Written next to the outputs of every CLI command. Re-running the command
    with the recorded config, seed and inputs reproduces the outputs.
    """

    command: str
    config_hash: str | None
    seed: int | None
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    version: str = ""
    duration_s: float = 0.0
    config: dict | None = None

    def to_dict(self):
        return asdict(self)
