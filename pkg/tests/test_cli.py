#!/usr/bin/env python3
import sys
import os
import json
import tempfile
import subprocess

import pandas as pd
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))
from ncl_layout.ncl_layout import main as ncl_main
from ncl_layout.camera import CameraModel
from ncl_layout.layout import BoundaryMap
from ncl_layout.synth import rectangle_room, project_layout

# =============================================================================


def read(file_name):
    with open(file_name, "rb") as fp:
        return fp.read()


def write_room(tempdir, name="room", width=5.0, depth=4.0, camera=(2.0, 1.7)):
    """
    Writes camera.json, layout.json and boundaries.csv of a rectangular room
    """
    cam = CameraModel.default()
    layout = rectangle_room(width, depth, camera=camera)
    layout.camera = cam

    os.makedirs(os.path.join(tempdir, name), exist_ok=True)
    cam_file = os.path.join(tempdir, "camera.json")
    layout_file = os.path.join(tempdir, name, "layout.json")
    boundary_file = os.path.join(tempdir, name, "boundaries.csv")

    cam.to_file(cam_file)
    layout.to_file(layout_file)
    project_layout(layout, cam).to_file(boundary_file)

    return cam_file, layout_file, boundary_file


def run(monkeypatch, *args):
    monkeypatch.setattr("sys.argv", ["ncl_layout.py"] + list(args))
    ncl_main()


def run_failing(monkeypatch, *args):
    monkeypatch.setattr("sys.argv", ["ncl_layout.py"] + list(args))
    with pytest.raises(SystemExit) as ex:
        ncl_main()
    return ex.value.code

# =============================================================================


def test_synth(monkeypatch):

    with tempfile.TemporaryDirectory() as tempdir:

        outputs = []
        for name in ["a", "b"]:
            output = os.path.join(tempdir, name)
            run(monkeypatch, "synth", "-o", output, "--rooms", "3", "--seed", "7",
                "--walls", "4..6", "--atlanta-prob", "0.5")
            outputs.append(output)

        with open(os.path.join(outputs[0], "manifest.json"), "r") as fp:
            manifest = json.load(fp)

        assert len(manifest["samples"]) == 3
        assert sum(manifest["splits"].values()) == 3
        for sample in manifest["samples"]:
            assert 4 <= sample["walls"] <= 6

        # Same seed, same corpus
        files = ["camera.json"]
        for sample in manifest["samples"]:
            files += [sample["layout"], sample["boundaries"]]

        for file_name in files:
            assert read(os.path.join(outputs[0], file_name)) == \
                read(os.path.join(outputs[1], file_name))

        # The corpus boundaries are the projection of the corpus layouts
        sample = manifest["samples"][0]
        boundary_file = os.path.join(tempdir, "projected.csv")
        run(monkeypatch, "project",
            "--layout", os.path.join(outputs[0], sample["layout"]),
            "--camera", os.path.join(outputs[0], "camera.json"),
            "-o", boundary_file)

        assert read(boundary_file) == read(os.path.join(outputs[0], sample["boundaries"]))


def test_project_solve_eval(monkeypatch):

    with tempfile.TemporaryDirectory() as tempdir:
        cam_file, layout_file, _ = write_room(tempdir)

        boundary_file = os.path.join(tempdir, "noisy.csv")
        run(monkeypatch, "project", "--layout", layout_file, "--camera", cam_file,
            "-o", boundary_file, "--sigma", "0.1", "--seed", "3")

        pred_file = os.path.join(tempdir, "pred.json")
        run(monkeypatch, "solve", "--boundaries", boundary_file, "--camera", cam_file,
            "--world", "manhattan", "-o", pred_file)

        assert os.path.isfile(os.path.join(tempdir, "pred.manifest.json"))

        eval_file = os.path.join(tempdir, "eval.json")
        run(monkeypatch, "eval", pred_file, layout_file, "-o", eval_file)

        with open(eval_file, "r") as fp:
            report = json.load(fp)

        assert report["iou3d_pct"] > 99.0
        assert report["ce_m"] < 0.05
        assert not report["count_mismatch"]


def test_solve_noiseless(monkeypatch):

    with tempfile.TemporaryDirectory() as tempdir:
        cam_file, layout_file, boundary_file = write_room(tempdir)

        pred_file = os.path.join(tempdir, "pred.json")
        run(monkeypatch, "solve", "--boundaries", boundary_file, "--camera", cam_file,
            "--world", "atlanta", "-o", pred_file)

        eval_file = os.path.join(tempdir, "eval.json")
        run(monkeypatch, "eval", pred_file, layout_file, "-o", eval_file)

        with open(eval_file, "r") as fp:
            report = json.load(fp)

        assert report["iou3d_pct"] > 99.9
        assert report["ce_m"] < 1e-4


def test_eval_table(monkeypatch):

    with tempfile.TemporaryDirectory() as tempdir:
        _, layout_file, _ = write_room(tempdir)

        table = os.path.join(tempdir, "table.csv")
        for _ in range(2):
            run(monkeypatch, "eval", layout_file, layout_file,
                "-o", os.path.join(tempdir, "eval.json"), "--table", table)

        df = pd.read_csv(table)
        assert len(df) == 2
        assert list(df["ce_m"]) == [0.0, 0.0]
        assert list(df["iou3d_pct"]) == [100.0, 100.0]


def test_eval_camera_mismatch(monkeypatch):

    with tempfile.TemporaryDirectory() as tempdir:
        _, layout_file, _ = write_room(tempdir)

        other = rectangle_room(5.0, 4.0, camera=(2.0, 1.7))
        other.camera = CameraModel(rc=0.5)
        other_file = os.path.join(tempdir, "other.json")
        other.to_file(other_file)

        eval_file = os.path.join(tempdir, "eval.json")
        run(monkeypatch, "eval", other_file, layout_file, "-o", eval_file)

        with open(eval_file, "r") as fp:
            report = json.load(fp)

        assert any(w.startswith("camera mismatch") for w in report["warnings"])


def test_input_errors(monkeypatch):

    with tempfile.TemporaryDirectory() as tempdir:
        cam_file, _, _ = write_room(tempdir)
        pred_file = os.path.join(tempdir, "pred.json")

        # Truncated boundary file
        boundary_file = os.path.join(tempdir, "truncated.csv")
        with open(boundary_file, "w") as fp:
            fp.write("col,ceiling_row,floor_row,corner_score\n")
            fp.write("0,300.0")

        code = run_failing(monkeypatch, "solve", "--boundaries", boundary_file,
                           "--camera", cam_file, "-o", pred_file)
        assert code == 2

        # Missing camera
        code = run_failing(monkeypatch, "solve", "--boundaries", boundary_file,
                           "--camera", os.path.join(tempdir, "nope.json"),
                           "-o", pred_file)
        assert code == 2

        assert not os.path.isfile(pred_file)


def test_pipeline_failure(monkeypatch):

    with tempfile.TemporaryDirectory() as tempdir:
        cam_file, _, _ = write_room(tempdir)

        # No corner peaks at all
        boundary_file = os.path.join(tempdir, "flat.csv")
        BoundaryMap([300.0] * 1024, [200.0] * 1024).to_file(boundary_file)

        code = run_failing(monkeypatch, "solve", "--boundaries", boundary_file,
                           "--camera", cam_file, "-o", os.path.join(tempdir, "pred.json"))
        assert code == 1


def test_sweep(monkeypatch):

    with tempfile.TemporaryDirectory() as tempdir:
        corpus = os.path.join(tempdir, "corpus")

        samples = []
        for name, width, depth, camera in [("room_0000", 5.0, 4.0, (2.0, 1.7)),
                                           ("room_0001", 4.5, 3.5, (2.2, 1.6))]:
            write_room(corpus, name, width, depth, camera)
            samples.append({"layout": os.path.join(name, "layout.json"),
                            "boundaries": os.path.join(name, "boundaries.csv")})

        with open(os.path.join(corpus, "manifest.json"), "w") as fp:
            json.dump({"samples": samples}, fp)

        outputs = []
        for threads in ["1", "2"]:
            output = os.path.join(tempdir, "sweep_{}.csv".format(threads))
            run(monkeypatch, "sweep", "--corpus", corpus, "--sigmas", "0,0.5",
                "--trials", "2", "--threads", threads, "-o", output)
            outputs.append(output)

        # Independent of the thread count
        assert read(outputs[0]) == read(outputs[1])

        df = pd.read_csv(outputs[0])
        assert len(df) == 2 * 2 * 2
        assert list(df["mode"].unique()) == ["pipeline"]

        summary = pd.read_csv(os.path.join(tempdir, "sweep_1_summary.csv"))
        noiseless = summary[summary["sigma"] == 0.0].iloc[0]
        assert noiseless["ce_m"] < 1e-4
        assert noiseless["dir_err_deg"] < 1e-4
        assert noiseless["depth_err_m"] < 1e-4
        assert noiseless["success_rate"] == 1.0

        assert os.path.isfile(os.path.join(tempdir, "sweep_1.manifest.json"))


def test_solve_modes(monkeypatch):

    with tempfile.TemporaryDirectory() as tempdir:
        cam_file, layout_file, boundary_file = write_room(tempdir)

        for mode in ["pipeline", "solvers"]:
            pred_file = os.path.join(tempdir, "pred_{}.json".format(mode))
            run(monkeypatch, "solve", "--boundaries", boundary_file, "--camera", cam_file,
                "--mode", mode, "-o", pred_file)

            with open(os.path.join(tempdir, "pred_{}.manifest.json".format(mode)), "r") as fp:
                manifest = json.load(fp)
            assert manifest["config"]["mode"] == mode

            eval_file = os.path.join(tempdir, "eval_{}.json".format(mode))
            run(monkeypatch, "eval", pred_file, layout_file, "-o", eval_file)

            with open(eval_file, "r") as fp:
                report = json.load(fp)
            assert report["ce_m"] < 1e-4

        # Stage timing tells the two modes apart
        with open(os.path.join(tempdir, "pred_solvers.manifest.json"), "r") as fp:
            timing = json.load(fp)["timing_ms"]
        assert "extract" in timing
        assert "ransac" not in timing
        assert "adjust" not in timing

        code = run_failing(monkeypatch, "solve", "--boundaries", boundary_file,
                           "--camera", cam_file, "--mode", "network",
                           "-o", os.path.join(tempdir, "x.json"))
        assert code == 2


def test_module_invocation():

    basedir = os.path.dirname(__file__)
    ncl_layout = "python3 -m ncl_layout"

    with tempfile.TemporaryDirectory() as tempdir:
        cam_file, layout_file, boundary_file = write_room(tempdir)

        output = os.path.join(tempdir, "projected.csv")
        args = "{} project --layout {} --camera {} -o {}".format(
            ncl_layout,
            layout_file,
            cam_file,
            output
        )
        code = subprocess.call(args, shell=True, cwd=os.path.join(basedir, ".."))

        assert code == 0
        assert read(output) == read(boundary_file)
