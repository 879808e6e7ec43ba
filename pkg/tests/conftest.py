import numpy as np
import pytest
import torch

from distrack.common_types import SimConfig
from distrack.data.geometry import cell_records
from distrack.data.types import ImageShape, Lineage, TrackedStack
from distrack.simulation.simulator import simulate
from distrack.utils import load_config


def small_sim_config(seed: int = 7, frames: int = 24, **overrides) -> SimConfig:
    return load_config(
        SimConfig,
        overrides={
            "height": 128,
            "width": 24,
            "cell_width": 8,
            "division_length": 40.0,
            "frames": frames,
            "seed": seed,
            **overrides,
        },
    )


@pytest.fixture
def sim_config() -> SimConfig:
    return small_sim_config()


@pytest.fixture
def sim_sequence(sim_config):
    return simulate(sim_config)


def stack_from_spans(
    height: int, width: int, frames: list[list[tuple[int, int]]]
) -> np.ndarray:
    """Label stack where frame f holds cells labeled 1..K over the given [y0, y1] row spans."""
    labels = np.zeros((len(frames), height, width), dtype=np.uint16)
    for index, spans in enumerate(frames):
        for label, (y0, y1) in enumerate(spans, start=1):
            labels[index, y0 : y1 + 1, :] = label
    return labels


def tracked_stack(labels: np.ndarray, parents: list[dict[int, int | None]]) -> TrackedStack:
    """`parents[f]` maps a cell id at frame f to its parent id at frame f - 1."""
    frames = tuple(
        tuple(cell_records(labels[f], f, parents[f] if f < len(parents) else {}))
        for f in range(labels.shape[0])
    )
    lineage = Lineage(ImageShape.of(labels), frames)
    lineage.validate()
    return TrackedStack(labels, lineage)


MOTHER = (10, 49)
TOP_DAUGHTER = (10, 29)
BOTTOM_DAUGHTER = (31, 49)


def division_sequence(division_frame: int, num_frames: int = 9) -> TrackedStack:
    """One cell that divides at `division_frame` and nothing else moving."""
    frames, parents = [], []
    for frame in range(num_frames):
        if frame < division_frame:
            frames.append([MOTHER])
            parents.append({1: 1} if frame > 0 else {})
        else:
            frames.append([TOP_DAUGHTER, BOTTOM_DAUGHTER])
            if frame == division_frame:
                parents.append({1: 1, 2: 1})
            else:
                parents.append({1: 1, 2: 2})
    return tracked_stack(stack_from_spans(100, 8, frames), parents)


def finite_difference(fn, tensor: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central differences of scalar `fn()` with respect to every entry of `tensor`, in place."""
    grad = torch.zeros_like(tensor)
    flat, grad_flat = tensor.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + eps
        plus = fn()
        flat[i] = original - eps
        minus = fn()
        flat[i] = original
        grad_flat[i] = (plus - minus) / (2 * eps)
    return grad
