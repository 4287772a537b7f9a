"""CLI subcommand integration and exit codes."""

import json

import numpy as np
import pytest

from eventhull import load_mesh, read_events
from eventhull.cli import main

from conftest import write_scene


@pytest.fixture()
def workdir(tmp_path, sphere_scene_file):
    return tmp_path, sphere_scene_file


def test_full_stage_chain(workdir, capsys):
    tmp, scene = workdir
    out = tmp / "sim"
    assert main(["simulate", "--scene", str(scene), "--output-dir", str(out),
                 "--masks", "2"]) == 0
    assert (out / "events.csv").exists()
    assert (out / "trajectory.txt").exists()
    assert (out / "scene.json").exists()
    assert (out / "mask_000.pgm").exists() and (out / "mask_001.pgm").exists()

    labeled = tmp / "labeled.csv"
    assert main(["label", "--events", str(out / "events.csv"),
                 "--trajectory", str(out / "trajectory.txt"),
                 "--scene", str(scene), "--output", str(labeled)]) == 0
    stream = read_events(labeled)
    assert np.all(stream.label == 1)  # noise-free contour events

    vol_path = tmp / "carved.evvol"
    assert main(["carve", "--events", str(labeled),
                 "--trajectory", str(out / "trajectory.txt"),
                 "--scene", str(scene), "--output", str(vol_path),
                 "--grid-dim", "48"]) == 0
    assert vol_path.exists()

    mesh_path = tmp / "mesh.ply"
    assert main(["extract", "--volume", str(vol_path),
                 "--output", str(mesh_path)]) == 0
    mesh = load_mesh(mesh_path)
    assert mesh.is_watertight()

    refined_path = tmp / "refined.ply"
    assert main(["refine", "--mesh", str(mesh_path), "--volume", str(vol_path),
                 "--output", str(refined_path), "--refine-iters", "10"]) == 0
    assert load_mesh(refined_path).vertices.shape == mesh.vertices.shape

    report_path = tmp / "eval.json"
    assert main(["evaluate", "--mesh", str(refined_path), "--scene", str(scene),
                 "--output", str(report_path), "--n-samples", "1500",
                 "--knn", "100"]) == 0
    with open(report_path) as f:
        result = json.load(f)
    assert result["chamfer_mm"] < 100.0
    assert result["normal_cos"] > 0.9
    capsys.readouterr()


def test_run_subcommand_with_config(workdir, capsys):
    tmp, scene = workdir
    cfg = tmp / "run.cfg"
    cfg.write_text(
        f"scene = {scene}\n"
        f"output_dir = {tmp / 'out'}\n"
        "grid_dim = 48\n"
        "refine_iters = 10\n"
        "n_samples = 1500\n"
        "knn = 100\n"
    )
    assert main(["run", "--config", str(cfg)]) == 0
    printed = json.loads(capsys.readouterr().out)
    with open(tmp / "out" / "report.json") as f:
        on_disk = json.load(f)
    for key in ("method", "ops", "chamfer_mm", "normal_cos"):
        assert printed[key] == on_disk[key]

    # flag overrides win over the config file
    assert main(["run", "--config", str(cfg), "--method", "mask-12",
                 "--output-dir", str(tmp / "out2")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["method"] == "mask-12"


def test_compare_subcommand(workdir, capsys):
    tmp, scene = workdir
    cfg = tmp / "run.cfg"
    cfg.write_text(
        "grid_dim = 48\nrefine_iters = 5\nn_samples = 1500\nknn = 100\n"
    )
    table_path = tmp / "table.csv"
    assert main(["compare", "--config", str(cfg), "--scene", str(scene),
                 "--methods", "evac3d,mask-12", "--table-format", "csv",
                 "--output", str(table_path)]) == 0
    lines = table_path.read_text().strip().splitlines()
    assert lines[0].startswith("method,")
    assert len(lines) == 3
    capsys.readouterr()


def test_exit_code_2_on_bad_input(workdir, capsys):
    tmp, scene = workdir
    assert main(["run", "--scene", str(tmp / "missing.json")]) == 2
    bad_cfg = tmp / "bad.cfg"
    bad_cfg.write_text("grid_dims = 64\n")
    assert main(["run", "--config", str(bad_cfg), "--scene", str(scene)]) == 2
    capsys.readouterr()


def test_exit_code_3_on_reconstruction_failure(tmp_path, capsys):
    scene = write_scene(
        tmp_path / "starved.json",
        shape={"kind": "sphere", "radius": 1.0},
        camera={"fx": 120.0, "fy": 120.0, "cx": 120.0, "cy": 90.0,
                "width": 240, "height": 180},
        orbit={"kind": "octahedral", "radius": 2.0, "duration": 2.0,
               "pose_rate": 200.0},
        n_events=50,
    )
    assert main(["run", "--scene", str(scene), "--grid-dim", "48",
                 "--output-dir", str(tmp_path / "out")]) == 3
    capsys.readouterr()
