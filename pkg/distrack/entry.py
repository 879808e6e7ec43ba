import json
import time
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Annotated, Optional

import numpy as np
import pydra
import torch
import typer
from loguru import logger
from tabulate import tabulate

from distrack import version
from distrack.augmentation.sequence import augment_sequence
from distrack.benchmarks.bench_pipeline import run_bench
from distrack.common_types import (
    AugConfig,
    BenchConfig,
    EvalConfig,
    PipelineConfig,
    RunManifest,
    SimConfig,
)
from distrack.data.lineage_io import load_lineage, save_lineage
from distrack.data.tensor_io import (
    label_palette,
    read_stack,
    read_tensor,
    render_kymograph,
    to_gray8,
    write_pgm,
    write_stack,
    write_tensor,
)
from distrack.data.types import TrackedStack
from distrack.errors import DistrackError, ShapeMismatch
from distrack.evaluation.metrics import evaluate
from distrack.model.attention import (
    AttentionParams,
    as_feature_set,
    attention_matrix_sum_x,
    load_params,
    save_params,
    self_attention_forward,
)
from distrack.pipeline.segmenter import segment_stack
from distrack.pipeline.tracker import run_pipeline, track_stack, write_links_csv
from distrack.pipeline.truth_maps import compute_truth_maps
from distrack.simulation.simulator import simulate
from distrack.utils import (
    atomic_write_text,
    config_hash,
    config_to_dict,
    dump_json,
    load_config,
    set_progress,
    setup_logging,
)

LABELS_FILE = "labels.mmt"
INTENSITY_FILE = "intensity.mmt"
LINEAGE_FILE = "lineage.json"
EDM_FILE = "edm.mmt"
DISPLACEMENT_FILE = "displacement.mmt"
CATEGORIES_FILE = "categories.mmt"
LINKS_FILE = "links.csv"
REPORT_FILE = "report.json"
ERRORS_FILE = "errors.csv"
DRAWS_FILE = "draws.json"
BENCH_FILE = "bench.json"
WEIGHTS_FILE = "weights.mmt"
WEIGHTS_SUM_X_FILE = "weights_sum_x.mmt"
PARAMS_DIR = "params"
MANIFEST_FILE = "manifest.json"

# process-wide options set by the top-level callback
STATE = {"log_level": "INFO"}


class OutputFormat(str, Enum):
    json = "json"
    table = "table"


class RenderKind(str, Enum):
    auto = "auto"
    labels = "labels"
    map = "map"


app = typer.Typer(
    name="distrack",
    help="Segmentation and lineage tracking post-processing for mother-machine time-lapses.",
    add_completion=False,
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)

ConfigOpt = Annotated[
    Optional[Path],
    typer.Option("--config", help="JSON config whose keys mirror the config fields."),
]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", min=0, help="Random seed.")]
OutOpt = Annotated[Path, typer.Option("--out", help="Output directory.")]
OptionalOutOpt = Annotated[Optional[Path], typer.Option("--out", help="Output directory.")]
ThreadsOpt = Annotated[
    Optional[int], typer.Option("--threads", min=0, help="Worker threads, 0 = one per core.")
]
FormatOpt = Annotated[
    OutputFormat, typer.Option("--format", help="Report format printed to stdout.")
]


class CommandRun:
    """Bookkeeping for one command: inputs, outputs and the manifest."""

    def __init__(self, command: str):
        self.command = command
        self.start = time.perf_counter()
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.config: pydra.Config | None = None
        self.seed: int | None = None

    def input(self, path: Path) -> Path:
        self.inputs.append(path)
        return path

    def output(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def manifest(self) -> RunManifest:
        return RunManifest(
            command=self.command,
            config_hash=None if self.config is None else config_hash(self.config),
            seed=self.seed,
            inputs=[str(p) for p in self.inputs],
            outputs=[str(p) for p in self.outputs],
            version=version,
            duration_s=time.perf_counter() - self.start,
            config=None if self.config is None else config_to_dict(self.config),
        )

    def write_manifest(self, out: Path):
        atomic_write_text(out / MANIFEST_FILE, dump_json(self.manifest().to_dict()))


def fail(error: str, message: str, exit_code: int):
    typer.echo(json.dumps({"error": error, "message": message}), err=True)
    raise typer.Exit(code=exit_code)


@contextmanager
def command(name: str):
    """Runs a command body; library errors become a JSON line on stderr and an exit code."""
    setup_logging(STATE["log_level"], name)
    run = CommandRun(name)
    try:
        yield run
    except DistrackError as e:
        logger.debug(f"{name} failed: {e!r}")
        fail(e.error_type, str(e), e.exit_code)
    except OSError as e:
        logger.debug(f"{name} failed: {e!r}")
        fail(type(e).__name__, str(e), 1)


@app.callback()
def main_options(
    log_level: Annotated[
        str, typer.Option("--log-level", help="TRACE, DEBUG, INFO, WARNING or ERROR.")
    ] = "INFO",
    quiet: Annotated[bool, typer.Option("--quiet", help="Disable progress bars.")] = False,
):
    STATE["log_level"] = log_level.upper()
    set_progress(not quiet)


@app.command("simulate")
def cmd_simulate(
    out: OutOpt,
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    frames: Annotated[Optional[int], typer.Option("--frames", min=0)] = None,
):
    """Generate a synthetic sequence: labels, intensity, lineage."""
    with command("simulate") as run:
        run.config = load_config(SimConfig, config, {"seed": seed, "frames": frames})
        run.seed = run.config.seed
        sim = simulate(run.config)

        write_stack(run.output(out / LABELS_FILE), sim.labels, dtype="<u2")
        if sim.intensity is not None:
            write_stack(run.output(out / INTENSITY_FILE), sim.intensity, dtype="<f4")
        save_lineage(run.output(out / LINEAGE_FILE), sim.lineage)
        run.write_manifest(out)

        logger.info(
            f"{sim.labels.shape[0]} frames, {sim.lineage.num_cells()} cells, "
            f"{len(sim.lineage.tracks())} tracks, "
            f"{len(sim.lineage.division_events())} divisions -> {out}"
        )


@app.command("maps")
def cmd_maps(
    input_dir: Annotated[Path, typer.Argument(help="Directory with labels.mmt and lineage.json.")],
    out: OutOpt,
):
    """Compute EDM, displacement and category maps from labels and a lineage."""
    with command("maps") as run:
        labels = read_stack(run.input(input_dir / LABELS_FILE))
        lineage = load_lineage(run.input(input_dir / LINEAGE_FILE))
        maps = compute_truth_maps(labels, lineage)

        write_stack(run.output(out / EDM_FILE), maps.edm, dtype="<f4")
        write_stack(run.output(out / DISPLACEMENT_FILE), maps.displacement, dtype="<f4")
        write_stack(run.output(out / CATEGORIES_FILE), maps.categories, dtype="u1")
        run.write_manifest(out)

        logger.info(f"maps for {labels.shape[0]} frames -> {out}")


def read_categories(maps_dir: Path, config: PipelineConfig, run: CommandRun):
    path = maps_dir / CATEGORIES_FILE
    if not config.use_categories or not path.exists():
        return None
    return read_stack(run.input(path))


@app.command("segment")
def cmd_segment(
    input_dir: Annotated[Path, typer.Argument(help="Directory with edm.mmt.")],
    out: OutOpt,
    config: ConfigOpt = None,
    threads: ThreadsOpt = None,
):
    """Watershed segmentation of an EDM stack."""
    with command("segment") as run:
        run.config = load_config(PipelineConfig, config, {"threads": threads})
        edm = read_stack(run.input(input_dir / EDM_FILE))
        labels = segment_stack(edm, run.config.watershed, threads=run.config.threads)

        write_stack(run.output(out / LABELS_FILE), labels, dtype="<u2")
        run.write_manifest(out)

        logger.info(f"segmented {labels.shape[0]} frames -> {out}")


@app.command("track")
def cmd_track(
    input_dir: Annotated[
        Path, typer.Argument(help="Directory with displacement.mmt (and categories.mmt).")
    ],
    out: OutOpt,
    labels: Annotated[
        Optional[Path],
        typer.Option("--labels", help="Segmented label stack, default <input_dir>/labels.mmt."),
    ] = None,
    config: ConfigOpt = None,
    threads: ThreadsOpt = None,
):
    """Link segmented cells across frames and build the lineage."""
    with command("track") as run:
        run.config = load_config(PipelineConfig, config, {"threads": threads})
        label_stack = read_stack(run.input(labels or input_dir / LABELS_FILE))
        displacement = read_stack(run.input(input_dir / DISPLACEMENT_FILE))
        categories = read_categories(input_dir, run.config, run)

        lineage, link_sets = track_stack(
            label_stack, displacement, categories, threads=run.config.threads
        )

        save_lineage(run.output(out / LINEAGE_FILE), lineage)
        write_links_csv(run.output(out / LINKS_FILE), link_sets)
        run.write_manifest(out)

        logger.info(
            f"{lineage.num_cells()} cells, {len(lineage.tracks())} tracks, "
            f"{len(lineage.division_events())} divisions -> {out}"
        )


@app.command("pipeline")
def cmd_pipeline(
    input_dir: Annotated[Path, typer.Argument(help="Directory with predicted or oracle maps.")],
    out: OutOpt,
    config: ConfigOpt = None,
    threads: ThreadsOpt = None,
):
    """Maps -> segmentation -> tracking -> lineage."""
    with command("pipeline") as run:
        run.config = load_config(PipelineConfig, config, {"threads": threads})
        edm = read_stack(run.input(input_dir / EDM_FILE))
        displacement = read_stack(run.input(input_dir / DISPLACEMENT_FILE))
        categories = read_categories(input_dir, run.config, run)

        result = run_pipeline(edm, displacement, categories, run.config)

        write_stack(run.output(out / LABELS_FILE), result.labels, dtype="<u2")
        save_lineage(run.output(out / LINEAGE_FILE), result.lineage)
        write_links_csv(run.output(out / LINKS_FILE), result.link_sets)
        run.write_manifest(out)

        logger.info(
            f"{result.lineage.num_cells()} cells, "
            f"{len(result.lineage.tracks())} tracks, "
            f"{len(result.lineage.division_events())} divisions -> {out}"
        )


def read_tracked(directory: Path, run: CommandRun) -> TrackedStack:
    labels = read_stack(run.input(directory / LABELS_FILE))
    lineage = load_lineage(run.input(directory / LINEAGE_FILE))
    return TrackedStack(labels, lineage)


def producing_config(directory: Path) -> dict | None:
    """The config recorded by the command that produced `directory`, if any."""
    path = directory / MANIFEST_FILE
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text()).get("config")
    except (json.JSONDecodeError, AttributeError):
        logger.warning(f"ignoring unreadable manifest {path}")
        return None


@app.command("evaluate")
def cmd_evaluate(
    gt_dir: Annotated[Path, typer.Argument(help="Ground-truth labels.mmt and lineage.json.")],
    pred_dir: Annotated[Path, typer.Argument(help="Predicted labels.mmt and lineage.json.")],
    out: OptionalOutOpt = None,
    config: ConfigOpt = None,
    threads: ThreadsOpt = None,
    format: FormatOpt = OutputFormat.table,
):
    """Count link, division, false negative and false positive errors."""
    with command("evaluate") as run:
        run.config = load_config(EvalConfig, config)
        gt = read_tracked(gt_dir, run)
        pred = read_tracked(pred_dir, run)

        report = evaluate(gt, pred, run.config, threads=1 if threads is None else threads)
        pipeline_config = producing_config(pred_dir)
        if pipeline_config is not None:
            report.settings["pipeline"] = pipeline_config

        typer.echo(report.to_json() if format == OutputFormat.json else report.table())

        if out is not None:
            atomic_write_text(run.output(out / REPORT_FILE), report.to_json())
            report.write_errors_csv(run.output(out / ERRORS_FILE))
            run.write_manifest(out)

        logger.info(
            f"{report.total} errors over {report.num_gt_observations} observations "
            f"({report.total_percentage():.4f}%)"
        )


@app.command("augment")
def cmd_augment(
    input_dir: Annotated[
        Path, typer.Argument(help="Directory with intensity.mmt, labels.mmt and lineage.json.")
    ],
    out: OutOpt,
    config: ConfigOpt = None,
    seed: SeedOpt = None,
):
    """Pair-wise illumination, geometric and swim augmentation of a sequence."""
    with command("augment") as run:
        run.config = load_config(AugConfig, config, {"seed": seed})
        run.seed = run.config.seed
        images = read_stack(run.input(input_dir / INTENSITY_FILE))
        labels = read_stack(run.input(input_dir / LABELS_FILE))
        lineage = load_lineage(run.input(input_dir / LINEAGE_FILE))

        augmented = augment_sequence(images, labels, lineage, run.config)

        write_stack(run.output(out / INTENSITY_FILE), augmented.images, dtype="<f4")
        write_stack(run.output(out / LABELS_FILE), augmented.labels, dtype="<u2")
        save_lineage(run.output(out / LINEAGE_FILE), augmented.lineage)
        atomic_write_text(run.output(out / DRAWS_FILE), dump_json(augmented.draws))
        run.write_manifest(out)

        logger.info(f"augmented {labels.shape[0]} frames in {len(augmented.draws)} pairs -> {out}")


def matrix_table(matrix: np.ndarray, title: str) -> str:
    headers = [str(j) for j in range(matrix.shape[1])]
    body = tabulate(
        matrix.tolist(), headers=headers, showindex=True, tablefmt="github", floatfmt=".3f"
    )
    return f"{title}\n{body}"


@app.command("attn-demo")
def cmd_attn_demo(
    out: OptionalOutOpt = None,
    seed: SeedOpt = None,
    size_y: Annotated[int, typer.Option("--size-y", min=1)] = 16,
    size_x: Annotated[int, typer.Option("--size-x", min=1)] = 2,
    d_in: Annotated[int, typer.Option("--d-in", min=1)] = 8,
    d_k: Annotated[int, typer.Option("--d-k", min=1)] = 8,
    d_out: Annotated[int, typer.Option("--d-out", min=1)] = 8,
    features: Annotated[
        Optional[Path],
        typer.Option("--features", help="Tensor file of (N, d) or (S_y, S_x, d) features."),
    ] = None,
    params: Annotated[
        Optional[Path], typer.Option("--params", help="Directory written by a previous run.")
    ] = None,
    format: FormatOpt = OutputFormat.table,
):
    """Print the attention matrix of a feature map and its sum over X."""
    with command("attn-demo") as run:
        run.seed = seed or 0
        if features is not None:
            raw = read_tensor(run.input(features))
            if raw.ndim == 3:
                size_y, size_x = raw.shape[0], raw.shape[1]
            feature_set = as_feature_set(raw)
            if feature_set.shape[0] != size_y * size_x:
                raise ShapeMismatch(
                    f"{feature_set.shape[0]} feature vectors do not fill a {size_y}x{size_x} map"
                )
        else:
            generator = torch.Generator().manual_seed(run.seed)
            feature_set = torch.randn(
                size_y * size_x, d_in, generator=generator, dtype=torch.float64
            )

        if params is not None:
            attention_params = load_params(run.input(params))
        else:
            attention_params = AttentionParams.random(
                size_y * size_x, feature_set.shape[1], d_k, d_out, seed=run.seed
            )

        weights = self_attention_forward(feature_set, attention_params).weights
        summed = attention_matrix_sum_x(weights, size_y, size_x)

        if format == OutputFormat.json:
            typer.echo(
                dump_json(
                    {
                        "size_y": size_y,
                        "size_x": size_x,
                        "weights": weights.tolist(),
                        "weights_sum_x": summed.tolist(),
                    }
                )
            )
        else:
            typer.echo(matrix_table(weights.numpy(), f"attention ({size_y * size_x} positions)"))
            typer.echo(matrix_table(summed.numpy(), f"summed over X ({size_y} rows)"))

        if out is not None:
            write_tensor(run.output(out / WEIGHTS_FILE), weights.numpy(), dtype="<f4")
            write_tensor(run.output(out / WEIGHTS_SUM_X_FILE), summed.numpy(), dtype="<f4")
            save_params(run.output(out / PARAMS_DIR), attention_params)
            run.write_manifest(out)


def render_image(data: np.ndarray, kind: RenderKind, frame: int | None) -> np.ndarray:
    if kind == RenderKind.auto:
        kind = RenderKind.labels if data.dtype.kind in "ui" else RenderKind.map

    if frame is not None:
        if not 0 <= frame < data.shape[0]:
            raise ShapeMismatch(f"frame {frame} is outside a stack of {data.shape[0]} frames")
        data = data[frame : frame + 1]

    # maps share one gray scale across frames
    gray = label_palette(data) if kind == RenderKind.labels else to_gray8(data)
    if gray.shape[0] == 1:
        return gray[0]
    return render_kymograph(gray)


@app.command("render")
def cmd_render(
    input_file: Annotated[Path, typer.Argument(help="Label or map tensor file.")],
    out: OutOpt,
    kind: Annotated[RenderKind, typer.Option("--kind")] = RenderKind.auto,
    frame: Annotated[
        Optional[int],
        typer.Option("--frame", min=0, help="Single frame, default all as kymograph."),
    ] = None,
):
    """Render a label map or real-valued map to a binary PGM."""
    with command("render") as run:
        data = read_stack(run.input(input_file))
        image = render_image(data, kind, frame)

        name = input_file.stem if frame is None else f"{input_file.stem}_{frame}"
        write_pgm(run.output(out / f"{name}.pgm"), image)
        run.write_manifest(out)

        logger.info(f"{image.shape[1]}x{image.shape[0]} preview -> {out / f'{name}.pgm'}")


@app.command("bench")
def cmd_bench(
    out: OptionalOutOpt = None,
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    threads: ThreadsOpt = None,
    frames: Annotated[Optional[int], typer.Option("--frames", min=2)] = None,
    repetitions: Annotated[Optional[int], typer.Option("--repetitions", min=3)] = None,
    format: FormatOpt = OutputFormat.table,
):
    """Time the post-processing stages in seconds per 1000 frames."""
    with command("bench") as run:
        run.config = load_config(
            BenchConfig,
            config,
            {"seed": seed, "threads": threads, "frames": frames, "repetitions": repetitions},
        )
        run.seed = run.config.seed
        report = run_bench(run.config)

        typer.echo(report.to_json() if format == OutputFormat.json else report.table())

        if out is not None:
            atomic_write_text(run.output(out / BENCH_FILE), report.to_json())
            run.write_manifest(out)


def main():
    app()


if __name__ == "__main__":
    main()
