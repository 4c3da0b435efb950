#!/usr/bin/env python3
"""
Noise sensitivity sweep over a synthetic corpus. Every (sigma, room, trial)
task perturbs the room's boundary map, recovers the layout and evaluates it.
Tasks are independent and seeded, so the result does not depend on the
number of worker threads.
"""
import os
import json
import logging

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from .errors import NclLayoutException, InputError
from .camera import CameraModel
from .layout import BoundaryMap, Layout
from .metrics import evaluate, direction_error
from .pipeline import PipelineConfig, recover_layout
from .solvers import Wall
from .synth import NoiseSpec, add_noise

# =============================================================================

# Default sigma grid in pixels
DEFAULT_SIGMAS = [0.1, 0.25, 0.5, 1.0, 2.0]

# Per-task metric columns of sweep.csv
METRIC_COLUMNS = ["dir_err_deg", "single_dir_err_deg", "depth_err_m", "ce_m",
                  "iou3d_pct", "scale_err_pct"]

SWEEP_COLUMNS = ["sigma", "room", "trial", "world", "mode", "ok"] + METRIC_COLUMNS

# =============================================================================


class Corpus():
    """
    A synthetic dataset directory: camera.json, manifest.json and one
    layout.json / boundaries.csv pair per room.
    """

    def __init__(self, root, camera, samples):
        self.root = root
        self.camera = camera
        self.samples = samples

    @staticmethod
    def load(root):
        manifest_file = os.path.join(root, "manifest.json")
        if not os.path.isfile(manifest_file):
            raise InputError("No manifest in corpus '{}'".format(root))

        with open(manifest_file, "r") as fp:
            try:
                manifest = json.load(fp)
            except ValueError as ex:
                raise InputError("Malformed manifest '{}': {}".format(manifest_file, ex))

        camera = CameraModel.from_file(os.path.join(root, "camera.json"))

        try:
            samples = manifest["samples"]
        except KeyError:
            raise InputError("Manifest '{}' lists no samples".format(manifest_file))

        return Corpus(root, camera, samples)

    def __len__(self):
        return len(self.samples)

    def room(self, index):
        """
        Ground-truth layout and noiseless boundary map of a room
        """
        sample = self.samples[index]
        layout = Layout.from_file(os.path.join(self.root, sample["layout"]))
        bm = BoundaryMap.from_file(os.path.join(self.root, sample["boundaries"]))
        return layout, bm

# =============================================================================


def task_seed(seed, room, trial, sigma_index):
    return int(np.random.SeedSequence([seed, room, trial, sigma_index]).generate_state(1)[0])


def _single_wall_error(pred, gt):
    """
    Mean direction error of the per-wall RANSAC estimates against their
    nearest ground-truth wall direction
    """
    walls = pred.diagnostics.get("ransac_walls", [])
    if not walls:
        return float("nan")

    errors = []
    for item in walls:
        wall = Wall.from_angle(item["theta"], item["d"], gt.h_c, gt.h_f)
        errors.append(min(direction_error(wall.ceiling_line(), g.ceiling_line())
                          for g in gt.walls))
    return float(np.mean(errors))


def run_task(corpus, cfg, sigma, sigma_index, room, trial, seed, world=None):
    """
    One sweep task. Pipeline failures are recorded as rows with ok=False.
    """

    gt, bm = corpus.room(room)
    world = world or gt.world

    noise = NoiseSpec(gaussian_sigma=sigma, seed=task_seed(seed, room, trial, sigma_index))
    noisy = add_noise(bm, noise, corpus.camera)

    row = {"sigma": sigma, "room": room, "trial": trial, "world": world,
           "mode": cfg.mode, "ok": True}

    try:
        pred = recover_layout(noisy, corpus.camera, world, cfg)
        report = evaluate(pred, gt)
    except NclLayoutException as ex:
        logging.warning("Room {} trial {} sigma {}: {}".format(room, trial, sigma, ex))
        row["ok"] = False
        row.update({name: float("nan") for name in METRIC_COLUMNS})
        return row

    summary = report.to_row()
    row.update({
        "dir_err_deg": summary["dir_err_deg"],
        "single_dir_err_deg": _single_wall_error(pred, gt),
        "depth_err_m": summary["depth_err_m"],
        "ce_m": summary["ce_m"],
        "iou3d_pct": summary["iou3d_pct"],
        "scale_err_pct": summary["scale_err_pct"],
    })
    return row


def run_sweep(corpus, sigmas=None, trials=1, seed=0, cfg=None, world=None,
              threads=1, rooms=None):
    """
    Runs the sweep and returns the long-format table, one row per task in
    (sigma, room, trial) order
    """

    sigmas = list(DEFAULT_SIGMAS if sigmas is None else sigmas)
    cfg = cfg if cfg is not None else PipelineConfig()
    rooms = len(corpus) if rooms is None else min(rooms, len(corpus))

    tasks = [(sigma, k, room, trial)
             for k, sigma in enumerate(sigmas)
             for room in range(rooms)
             for trial in range(trials)]

    logging.info("Sweep: {} tasks on {} thread(s)".format(len(tasks), threads))

    def work(task):
        sigma, k, room, trial = task
        return run_task(corpus, cfg, sigma, k, room, trial, seed, world)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, tasks))
    else:
        rows = [work(task) for task in tasks]

    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def summarize(df):
    """
    Per-sigma medians of the successful tasks and their success rate
    """
    ok = df[df["ok"]]
    summary = ok.groupby("sigma")[METRIC_COLUMNS].median()
    summary["success_rate"] = df.groupby("sigma")["ok"].mean()
    return summary.reset_index()


def plot_summary(summary, file_name):
    """
    Static SVG chart of the median errors against sigma, log scaled
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for column, label in [("dir_err_deg", "direction error (deg)"),
                          ("depth_err_m", "depth error (m)"),
                          ("ce_m", "corner error (m)")]:
        values = summary[column].to_numpy()
        ax.plot(summary["sigma"], np.maximum(values, 1e-12), marker="o", label=label)

    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("noise sigma (px)")
    ax.set_ylabel("median error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()

    fig.tight_layout()
    fig.savefig(file_name, format="svg")
    plt.close(fig)


def default_threads():
    """
    Worker thread count from the NCL_THREADS environment variable
    """
    value = os.environ.get("NCL_THREADS", "1")
    try:
        threads = int(value)
    except ValueError:
        raise InputError("NCL_THREADS must be an integer ('{}')".format(value))
    return max(1, threads)
