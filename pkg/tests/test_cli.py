import json

import numpy as np
import pytest
from loguru import logger
from typer.testing import CliRunner

from distrack.data.lineage_io import load_lineage
from distrack.data.tensor_io import read_stack
from distrack.entry import app

runner = CliRunner()

SMALL_SIM = {"height": 128, "width": 24, "cell_width": 8, "division_length": 40.0, "frames": 12}


@pytest.fixture(autouse=True)
def drop_log_sinks():
    yield
    # sinks point at the runner's captured stderr, which is closed after each invoke
    logger.remove()


def invoke(*args: str):
    return runner.invoke(app, ["--log-level", "ERROR", *map(str, args)])


@pytest.fixture
def sim_json(tmp_path):
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(SMALL_SIM))
    return path


@pytest.fixture
def sim_dir(tmp_path, sim_json):
    out = tmp_path / "sim"
    result = invoke("simulate", "--config", sim_json, "--seed", 7, "--out", out)
    assert result.exit_code == 0, result.output
    return out


def test_help():
    result = runner.invoke(app, ["--help"])
    assert result.exit_code == 0
    for name in ("simulate", "maps", "segment", "track", "pipeline", "evaluate", "bench"):
        assert name in result.output


def test_unknown_flag():
    assert runner.invoke(app, ["simulate", "--bogus"]).exit_code == 2


def test_simulate_outputs(sim_dir):
    labels = read_stack(sim_dir / "labels.mmt")
    intensity = read_stack(sim_dir / "intensity.mmt")
    assert labels.shape == (12, 128, 24)
    assert labels.dtype == np.dtype("<u2")
    assert intensity.dtype == np.dtype("<f4")
    assert load_lineage(sim_dir / "lineage.json").num_frames == 12

    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 7
    assert manifest["config"]["frames"] == 12
    assert len(manifest["outputs"]) == 3


def test_simulate_is_deterministic(tmp_path, sim_json, sim_dir):
    again = tmp_path / "again"
    assert invoke("simulate", "--config", sim_json, "--seed", 7, "--out", again).exit_code == 0
    for name in ("labels.mmt", "intensity.mmt", "lineage.json"):
        assert (sim_dir / name).read_bytes() == (again / name).read_bytes()

    first = json.loads((sim_dir / "manifest.json").read_text())
    second = json.loads((again / "manifest.json").read_text())
    assert first["config_hash"] == second["config_hash"]


def test_simulate_zero_frames(tmp_path, sim_json):
    out = tmp_path / "empty"
    result = invoke("simulate", "--config", sim_json, "--frames", 0, "--out", out)
    assert result.exit_code == 0, result.output
    assert read_stack(out / "labels.mmt").shape[0] == 0
    assert load_lineage(out / "lineage.json").num_frames == 0


def test_simulate_overfull_channel(tmp_path):
    config = tmp_path / "overfull.json"
    config.write_text(json.dumps({**SMALL_SIM, "initial_cells": 10}))
    result = invoke("simulate", "--config", config, "--out", tmp_path / "x")
    assert result.exit_code == 2
    assert "ChannelOverfull" in result.output


def test_oracle_round_trip_scores_zero(tmp_path, sim_dir):
    maps = tmp_path / "maps"
    pred = tmp_path / "pred"
    assert invoke("maps", sim_dir, "--out", maps).exit_code == 0
    assert read_stack(maps / "categories.mmt").dtype == np.uint8

    result = invoke("pipeline", maps, "--out", pred, "--threads", 2)
    assert result.exit_code == 0, result.output
    np.testing.assert_array_equal(
        read_stack(pred / "labels.mmt"), read_stack(sim_dir / "labels.mmt")
    )
    assert (pred / "links.csv").read_text().startswith("frame,curr_id,prev_id")

    report_dir = tmp_path / "report"
    result = invoke("evaluate", sim_dir, pred, "--format", "json", "--out", report_dir)
    assert result.exit_code == 0, result.output
    report = json.loads((report_dir / "report.json").read_text())
    assert report["counts"]["total"] == 0
    assert report["settings"]["pipeline"]["threads"] == 2
    assert (report_dir / "errors.csv").read_text().splitlines() == [
        "kind,frame,gt_id,pred_id,detail"
    ]


def test_segment_then_track(tmp_path, sim_dir):
    maps = tmp_path / "maps"
    seg = tmp_path / "seg"
    tracked = tmp_path / "tracked"
    assert invoke("maps", sim_dir, "--out", maps).exit_code == 0
    assert invoke("segment", maps, "--out", seg).exit_code == 0

    result = invoke("track", maps, "--labels", seg / "labels.mmt", "--out", tracked)
    assert result.exit_code == 0, result.output
    assert load_lineage(tracked / "lineage.json") == load_lineage(sim_dir / "lineage.json")


def test_evaluate_against_itself(sim_dir):
    result = invoke("evaluate", sim_dir, sim_dir)
    assert result.exit_code == 0
    assert "Tracking Links" in result.output


def test_missing_input(tmp_path, sim_dir):
    result = invoke("evaluate", sim_dir, tmp_path / "nowhere")
    assert result.exit_code == 1
    assert "FileNotFoundError" in result.output


def test_not_a_tensor_file(tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "labels.mmt").write_bytes(b"not a tensor")
    result = invoke("render", bad / "labels.mmt", "--out", tmp_path / "png")
    assert result.exit_code == 1
    assert "NotATensorFile" in result.output


def test_render(tmp_path, sim_dir):
    out = tmp_path / "render"
    assert invoke("render", sim_dir / "labels.mmt", "--out", out).exit_code == 0
    assert (out / "labels.pgm").read_bytes().startswith(b"P5")

    result = invoke("render", sim_dir / "intensity.mmt", "--frame", 3, "--out", out)
    assert result.exit_code == 0
    assert (out / "intensity_3.pgm").read_bytes().startswith(b"P5\n24 128\n255\n")

    result = invoke("render", sim_dir / "labels.mmt", "--frame", 50, "--out", out)
    assert result.exit_code == 2
    assert "ShapeMismatch" in result.output


def test_augment(tmp_path, sim_dir):
    out = tmp_path / "aug"
    result = invoke("augment", sim_dir, "--seed", 3, "--out", out)
    assert result.exit_code == 0, result.output
    assert read_stack(out / "intensity.mmt").shape == (12, 128, 24)
    assert len(json.loads((out / "draws.json").read_text())) == 6


def test_attn_demo(tmp_path):
    out = tmp_path / "attn"
    result = invoke("attn-demo", "--format", "json", "--out", out)
    assert result.exit_code == 0, result.output
    data = json.loads(result.stdout)
    summed = np.array(data["weights_sum_x"])
    assert summed.shape == (16, 16)
    np.testing.assert_allclose(summed.sum(axis=1), 1.0)
    assert (out / "params" / "params.json").exists()

    again = invoke("attn-demo", "--format", "json", "--params", out / "params")
    assert again.exit_code == 0, again.output


def snapshot(directory):
    """Every output file by relative path; manifests without their wall-clock duration."""
    files = {}
    for path in sorted(directory.rglob("*")):
        if not path.is_file():
            continue
        if path.name == "manifest.json":
            manifest = json.loads(path.read_text())
            manifest.pop("duration_s")
            files[str(path.relative_to(directory))] = manifest
        else:
            files[str(path.relative_to(directory))] = path.read_bytes()
    return files


def command_args(name, sim_json, sim_dir, maps, out):
    return {
        "simulate": ["simulate", "--config", sim_json, "--seed", 7, "--out", out],
        "maps": ["maps", sim_dir, "--out", out],
        "segment": ["segment", maps, "--out", out],
        "track": ["track", maps, "--labels", sim_dir / "labels.mmt", "--out", out],
        "pipeline": ["pipeline", maps, "--out", out, "--threads", 2],
        "evaluate": ["evaluate", sim_dir, sim_dir, "--out", out],
        "augment": ["augment", sim_dir, "--seed", 3, "--out", out],
        "attn-demo": ["attn-demo", "--out", out],
        "render": ["render", sim_dir / "labels.mmt", "--out", out],
    }[name]


@pytest.mark.parametrize(
    "name",
    [
        "simulate",
        "maps",
        "segment",
        "track",
        "pipeline",
        "evaluate",
        "augment",
        "attn-demo",
        "render",
    ],
)
def test_rerun_is_byte_identical(tmp_path, sim_json, sim_dir, name):
    maps = tmp_path / "maps"
    assert invoke("maps", sim_dir, "--out", maps).exit_code == 0

    out = tmp_path / "out"
    args = command_args(name, sim_json, sim_dir, maps, out)
    first = invoke(*args)
    assert first.exit_code == 0, first.output
    before = snapshot(out)
    assert before

    second = invoke(*args)
    assert second.exit_code == 0, second.output
    assert snapshot(out) == before
