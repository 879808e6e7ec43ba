"""
Post-processing throughput in seconds per 1000 frames.

The workload (a simulated sequence and its truth maps) is generated once,
outside the timed regions. Each repetition then times the EDM computation,
watershed segmentation, tracking/lineage assembly and evaluation stages, plus
the chained maps -> lineage -> evaluation run. DNN inference is not part of
the measurement.
"""

import platform
from dataclasses import dataclass

import numpy as np
import psutil
import pydra
from loguru import logger
from tabulate import tabulate

from distrack.common_types import BenchConfig, EvalConfig, PipelineConfig
from distrack.data.types import TrackedStack
from distrack.evaluation.metrics import evaluate
from distrack.pipeline.segmenter import segment_stack
from distrack.pipeline.tracker import track_stack
from distrack.pipeline.truth_maps import compute_edm, compute_truth_maps
from distrack.simulation.simulator import simulate
from distrack.utils import TimeResult, dump_json, parallelize, timed

STAGES = ("edm", "watershed", "tracking", "evaluate")


@dataclass
class BenchReport:
    frames: int
    shape: tuple[int, int]
    threads: int
    stages: dict[str, TimeResult]
    end_to_end: TimeResult
    machine: str

    def per_1000_frames(self, seconds: float) -> float:
        return seconds * 1000.0 / self.frames

    def stage_medians(self) -> dict[str, float]:
        return {name: self.per_1000_frames(self.stages[name].median()) for name in STAGES}

    def to_dict(self):
        def summary(result: TimeResult):
            return {
                "median": self.per_1000_frames(result.median()),
                "mean": self.per_1000_frames(result.mean()),
                "std": self.per_1000_frames(result.std()),
                "min": self.per_1000_frames(min(result.times)),
                "max": self.per_1000_frames(max(result.times)),
            }

        return {
            "unit": "seconds per 1000 frames",
            "frames": self.frames,
            "shape": {"h": self.shape[0], "w": self.shape[1]},
            "threads": self.threads,
            "stages": {name: summary(self.stages[name]) for name in STAGES},
            "end_to_end": summary(self.end_to_end),
            "machine": self.machine,
        }

    def to_json(self) -> str:
        return dump_json(self.to_dict())

    def table(self) -> str:
        rows = []
        for name, result in [*self.stages.items(), ("end_to_end", self.end_to_end)]:
            row = result.row(name)
            rows.append([row[0], *(self.per_1000_frames(v) for v in row[1:])])
        return (
            tabulate(
                rows,
                headers=["Stage", "Mean", "Std", "Median", "Min", "Max"],
                tablefmt="github",
                floatfmt=".4f",
            )
            + f"\nseconds per 1000 frames of {self.shape[0]}x{self.shape[1]}, {self.machine}"
        )


def machine_descriptor() -> str:
    memory_gb = psutil.virtual_memory().total / 2**30
    return (
        f"{platform.system()} {platform.machine()}, "
        f"{psutil.cpu_count(logical=False) or '?'} cores / {psutil.cpu_count() or '?'} threads, "
        f"{memory_gb:.1f} GiB, python {platform.python_version()}"
    )


def run_bench(config: BenchConfig) -> BenchReport:
    sim = simulate(config.sim_config())
    gt = TrackedStack(sim.labels, sim.lineage)
    maps = compute_truth_maps(sim.labels, sim.lineage)

    pipeline_config = PipelineConfig()
    pipeline_config.threads = config.threads
    pipeline_config.finalize()
    eval_config = EvalConfig()
    eval_config.finalize()

    frames = list(sim.labels)
    state = {}

    def run_edm():
        state["edm"] = np.stack(parallelize(compute_edm, frames, num_workers=config.threads))

    def run_watershed():
        state["labels"] = segment_stack(maps.edm, pipeline_config.watershed, threads=config.threads)

    def run_tracking():
        state["lineage"], _ = track_stack(
            state["labels"], maps.displacement, maps.categories, threads=config.threads
        )

    def run_evaluate():
        evaluate(gt, TrackedStack(state["labels"], state["lineage"]), eval_config, config.threads)

    def run_end_to_end():
        run_watershed()
        run_tracking()
        run_evaluate()

    # the stages depend on each other, so prime the state once
    run_watershed()
    run_tracking()

    stages = {
        "edm": timed(run_edm, num_iters=config.repetitions, num_warmup=1),
        "watershed": timed(run_watershed, num_iters=config.repetitions, num_warmup=1),
        "tracking": timed(run_tracking, num_iters=config.repetitions, num_warmup=1),
        "evaluate": timed(run_evaluate, num_iters=config.repetitions, num_warmup=1),
    }
    end_to_end = timed(run_end_to_end, num_iters=config.repetitions)

    report = BenchReport(
        frames=config.frames,
        shape=(config.height, config.width),
        threads=config.threads,
        stages=stages,
        end_to_end=end_to_end,
        machine=machine_descriptor(),
    )
    logger.info(
        "bench: "
        + ", ".join(f"{name} {value:.3f}s" for name, value in report.stage_medians().items())
        + " per 1000 frames"
    )
    return report


def main(config: BenchConfig):
    report = run_bench(config)
    print(report.table())


if __name__ == "__main__":
    pydra.run(main)
