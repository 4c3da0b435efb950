#!/usr/bin/env python3
"""
Room layout recovery from non-central circular panoramas. Generates synthetic
rooms and their boundary maps, recovers metric layouts from boundary maps,
evaluates them and runs noise sweeps.

Exit codes: 0 ok, 1 pipeline failure, 2 input error.
"""
import argparse
import os
import json
import logging
import math
import time

import numpy as np
import pandas as pd

from .errors import NclLayoutException, InputError
from .camera import CameraModel
from .layout import BoundaryMap, Layout
from .metrics import evaluate
from .pipeline import PipelineConfig, RansacConfig, recover_layout
from .synth import LayoutSpec, NoiseSpec, generate_layout, project_layout, \
    add_noise, RejectionOverflow
from .sweep import Corpus, run_sweep, summarize, plot_summary, default_threads

# =============================================================================

VERSION = "1.0.0"

# Exit codes
EXIT_PIPELINE = 1
EXIT_INPUT = 2

# Dataset split proportions (train / val / test)
SPLIT_RATIO = (1677, 399, 499)

# =============================================================================


class RunManifest():
    """
    Everything needed to reproduce a command: tool version, configuration
    snapshot, seeds, the files written and per-stage timing.
    """

    def __init__(self, command, config=None, seeds=None):
        self.command = command
        self.config = config or {}
        self.seeds = seeds or {}
        self.files = {}
        self.samples = []
        self.splits = {}
        self.timing = {}

    def add_file(self, key, path):
        self.files[key] = path

    def to_dict(self):
        data = {
            "version": VERSION,
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "files": self.files,
            "timing_ms": self.timing,
        }
        if self.samples:
            data["samples"] = self.samples
        if self.splits:
            data["splits"] = self.splits
        return data

    def to_file(self, file_name):
        """
        Writes the manifest. Every referenced file must exist.
        """
        root = os.path.dirname(os.path.abspath(file_name))

        referenced = list(self.files.values())
        for sample in self.samples:
            referenced += [sample["layout"], sample["boundaries"]]

        for path in referenced:
            full = path if os.path.isabs(path) else os.path.join(root, path)
            if not os.path.isfile(full):
                raise InputError("Manifest references a missing file '{}'".format(path))

        with open(file_name, "w") as fp:
            json.dump(self.to_dict(), fp, indent=2)
            fp.write("\n")

# =============================================================================


def parse_angle(text):
    """
    Angle argument: radians, or degrees with an explicit "deg" suffix
    """
    text = text.strip()
    try:
        if text.endswith("deg"):
            return math.radians(float(text[:-3]))
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("Invalid angle '{}'".format(text))


def parse_range(text, cast=float):
    """
    A "low..high" range argument
    """
    try:
        low, high = text.split("..")
        return cast(low), cast(high)
    except ValueError:
        raise argparse.ArgumentTypeError("Invalid range '{}', expected low..high".format(text))


def parse_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("Invalid list '{}'".format(text))


def split_counts(n, ratio=SPLIT_RATIO):
    """
    Sample counts of the train / val / test splits
    """
    total = float(sum(ratio))
    train = int(round(n * ratio[0] / total))
    val = int(round(n * (ratio[0] + ratio[1]) / total)) - train
    return train, val, n - train - val


def load_config(args):
    """
    Pipeline configuration from --config with command line overrides
    """
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()

    ransac = cfg.ransac.to_dict()
    if args.seed is not None:
        ransac["seed"] = args.seed
    if args.outlier_rate is not None:
        ransac["outlier_rate"] = args.outlier_rate
    if args.inlier_threshold is not None:
        ransac["inlier_threshold"] = args.inlier_threshold
    cfg.ransac = RansacConfig.from_dict(ransac)

    if args.no_adjust:
        cfg.adjust = False
    if args.mode is not None:
        cfg.mode = args.mode

    return cfg

# =============================================================================


def cmd_synth(args):
    """
    Generates a corpus of random rooms with their noiseless boundary maps
    """

    cam = CameraModel(args.rc, args.rows, args.cols)
    os.makedirs(args.output, exist_ok=True)
    cam.to_file(os.path.join(args.output, "camera.json"))

    base = dict(walls=args.walls, atlanta_clip_probability=args.atlanta_prob,
                extent=args.extent, rc=args.rc, yaw=args.yaw)
    manifest = RunManifest("synth", config=dict(base), seeds={"seed": args.seed})
    manifest.config["camera"] = cam.to_dict()
    manifest.add_file("camera", "camera.json")

    counts = split_counts(args.rooms)
    splits = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
    manifest.splits = dict(zip(["train", "val", "test"], counts))

    start = time.perf_counter()
    for k in range(args.rooms):

        for attempt in range(100):
            seed = int(np.random.SeedSequence([args.seed, k, attempt]).generate_state(1)[0])
            try:
                layout = generate_layout(LayoutSpec(seed=seed, **base))
                bm = project_layout(layout, cam)
                break
            except RejectionOverflow as ex:
                logging.warning("Room {} attempt {}: {}".format(k, attempt, ex))
        else:
            raise RejectionOverflow("Could not generate room {}".format(k))

        name = "room_{:04d}".format(k)
        os.makedirs(os.path.join(args.output, name), exist_ok=True)

        layout_file = os.path.join(name, "layout.json")
        boundary_file = os.path.join(name, "boundaries.csv")
        layout.camera = cam
        layout.to_file(os.path.join(args.output, layout_file))
        bm.to_file(os.path.join(args.output, boundary_file))

        logging.info("{}: {} {} walls".format(name, layout.world, len(layout)))

        manifest.samples.append({
            "name": name,
            "seed": seed,
            "world": layout.world,
            "walls": len(layout),
            "split": splits[k],
            "layout": layout_file,
            "boundaries": boundary_file,
        })

    manifest.timing["synth"] = 1000.0 * (time.perf_counter() - start)
    manifest.to_file(os.path.join(args.output, "manifest.json"))


def cmd_project(args):
    """
    Renders the boundary map of a layout, optionally with noise
    """

    cam = CameraModel.from_file(args.camera)
    layout = Layout.from_file(args.layout)

    bm = project_layout(layout, cam)
    if args.sigma > 0.0 or args.spike_rate > 0.0:
        noise = NoiseSpec(args.sigma, args.spike_rate, args.spike_magnitude, args.seed)
        bm = add_noise(bm, noise, cam)

    bm.to_file(args.output)


def cmd_solve(args):
    """
    Recovers a layout from a boundary map
    """

    cam = CameraModel.from_file(args.camera)
    bm = BoundaryMap.from_file(args.boundaries)
    cfg = load_config(args)

    start = time.perf_counter()
    layout = recover_layout(bm, cam, args.world, cfg)
    elapsed = 1000.0 * (time.perf_counter() - start)

    layout.to_file(args.output)

    manifest = RunManifest("solve", config=cfg.to_dict(),
                           seeds={"ransac": cfg.ransac.seed})
    manifest.config["world"] = args.world
    manifest.add_file("boundaries", os.path.abspath(args.boundaries))
    manifest.add_file("camera", os.path.abspath(args.camera))
    manifest.add_file("layout", os.path.abspath(args.output))
    manifest.timing = dict(layout.diagnostics.get("timing_ms", {}))
    manifest.timing["total"] = elapsed

    manifest.to_file(os.path.splitext(args.output)[0] + ".manifest.json")


def cmd_eval(args):
    """
    Compares a predicted layout against the ground truth
    """

    pred = Layout.from_file(args.pred)
    gt = Layout.from_file(args.gt)

    report = evaluate(pred, gt)

    data = report.to_dict()
    data["pred"] = args.pred
    data["gt"] = args.gt

    if args.output:
        with open(args.output, "w") as fp:
            json.dump(data, fp, indent=2)
            fp.write("\n")
    else:
        print(json.dumps(data, indent=2))

    if args.table:
        row = dict(report.to_row())
        row = dict(pred=args.pred, gt=args.gt, **row)
        exists = os.path.isfile(args.table)
        pd.DataFrame([row]).to_csv(args.table, mode="a", header=not exists,
                                   index=False, float_format="%.6f")


def cmd_sweep(args):
    """
    Noise sensitivity sweep over a corpus
    """

    corpus = Corpus.load(args.corpus)
    cfg = load_config(args)
    threads = args.threads if args.threads else default_threads()

    start = time.perf_counter()
    df = run_sweep(corpus, args.sigmas, args.trials, args.noise_seed, cfg,
                   args.world, threads, args.limit)
    elapsed = 1000.0 * (time.perf_counter() - start)

    df.to_csv(args.output, index=False, float_format="%.9g")

    summary = summarize(df)
    summary_file = os.path.splitext(args.output)[0] + "_summary.csv"
    summary.to_csv(summary_file, index=False, float_format="%.9g")

    manifest = RunManifest("sweep", config=cfg.to_dict(),
                           seeds={"noise": args.noise_seed, "ransac": cfg.ransac.seed})
    manifest.config.update({"sigmas": args.sigmas, "trials": args.trials,
                            "world": args.world, "corpus": os.path.abspath(args.corpus)})
    manifest.add_file("sweep", os.path.abspath(args.output))
    manifest.add_file("summary", os.path.abspath(summary_file))

    if args.svg:
        plot_summary(summary, args.svg)
        manifest.add_file("svg", os.path.abspath(args.svg))

    manifest.timing["sweep"] = elapsed
    manifest.to_file(os.path.splitext(args.output)[0] + ".manifest.json")

# =============================================================================


def add_common(parser):
    parser.add_argument(
        "--log-level",
        type=str,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default="WARNING",
        help="Log level (def. \"WARNING\")"
    )


def add_pipeline(parser):
    parser.add_argument(
        "--world",
        type=str,
        choices=Layout.WORLDS,
        default="manhattan",
        help="World assumption (def. 'manhattan')"
    )
    parser.add_argument(
        "--config",
        type=str,
        default=None,
        help="Pipeline configuration JSON file"
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="RANSAC seed (overrides the configuration)"
    )
    parser.add_argument(
        "--outlier-rate",
        type=float,
        default=None,
        help="Expected RANSAC outlier rate (overrides the configuration)"
    )
    parser.add_argument(
        "--inlier-threshold",
        type=float,
        default=None,
        help="RANSAC inlier threshold in pixels (overrides the configuration)"
    )
    parser.add_argument(
        "--no-adjust",
        action="store_true",
        help="Skip the final least-squares adjustment"
    )
    parser.add_argument(
        "--mode",
        type=str,
        choices=PipelineConfig.MODES,
        default=None,
        help="'pipeline' runs every stage, 'solvers' only the wall extractor and the "
             "layout solver (overrides the configuration)"
    )


def build_parser():

    parser = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument(
        "--version",
        action="version",
        version="%(prog)s " + VERSION
    )

    commands = parser.add_subparsers(dest="command")
    commands.required = True

    # synth
    p = commands.add_parser("synth", help="Generate a synthetic corpus")
    p.add_argument("--output", "-o", type=str, required=True, help="Output directory")
    p.add_argument("--rooms", type=int, default=10, help="Number of rooms (def. 10)")
    p.add_argument("--seed", type=int, default=0, help="Generator seed (def. 0)")
    p.add_argument("--walls", type=lambda s: parse_range(s, int), default=(4, 14),
                   help="Wall count range low..high (def. 4..14)")
    p.add_argument("--atlanta-prob", type=float, default=0.0,
                   help="Probability of clipping a convex corner (def. 0)")
    p.add_argument("--extent", type=parse_range, default=(3.0, 10.0),
                   help="Rectangle side range in meters (def. 3..10)")
    p.add_argument("--yaw", type=parse_angle, default=None,
                   help="Fixed room yaw, radians or e.g. '30deg' (def. random)")
    p.add_argument("--rc", type=float, default=1.0, help="Camera radius Rc in meters (def. 1)")
    p.add_argument("--rows", type=int, default=512, help="Image rows (def. 512)")
    p.add_argument("--cols", type=int, default=1024, help="Image columns (def. 1024)")
    add_common(p)
    p.set_defaults(function=cmd_synth)

    # project
    p = commands.add_parser("project", help="Render the boundary map of a layout")
    p.add_argument("--layout", type=str, required=True, help="Input layout.json")
    p.add_argument("--camera", type=str, required=True, help="Input camera.json")
    p.add_argument("--output", "-o", type=str, required=True, help="Output boundaries.csv")
    p.add_argument("--sigma", type=float, default=0.0, help="Gaussian noise in pixels (def. 0)")
    p.add_argument("--spike-rate", type=float, default=0.0, help="Fraction of spiked columns (def. 0)")
    p.add_argument("--spike-magnitude", type=float, default=20.0,
                   help="Spike offset in pixels (def. 20)")
    p.add_argument("--seed", type=int, default=0, help="Noise seed (def. 0)")
    add_common(p)
    p.set_defaults(function=cmd_project)

    # solve
    p = commands.add_parser("solve", help="Recover a layout from a boundary map")
    p.add_argument("--boundaries", type=str, required=True, help="Input boundaries.csv")
    p.add_argument("--camera", type=str, required=True, help="Input camera.json")
    p.add_argument("--output", "-o", type=str, required=True, help="Output layout.json")
    add_pipeline(p)
    add_common(p)
    p.set_defaults(function=cmd_solve)

    # eval
    p = commands.add_parser("eval", help="Evaluate a layout against the ground truth")
    p.add_argument("pred", type=str, help="Predicted layout.json")
    p.add_argument("gt", type=str, help="Ground-truth layout.json")
    p.add_argument("--output", "-o", type=str, default=None, help="Output eval.json")
    p.add_argument("--table", type=str, default=None, help="CSV table to append a row to")
    add_common(p)
    p.set_defaults(function=cmd_eval)

    # sweep
    p = commands.add_parser("sweep", help="Noise sensitivity sweep over a corpus")
    p.add_argument("--corpus", type=str, required=True, help="Corpus directory")
    p.add_argument("--sigmas", type=parse_list, default=[0.1, 0.25, 0.5, 1.0, 2.0],
                   help="Comma separated sigma grid in pixels")
    p.add_argument("--trials", type=int, default=1, help="Trials per room and sigma (def. 1)")
    p.add_argument("--noise-seed", type=int, default=0, help="Noise seed (def. 0)")
    p.add_argument("--limit", type=int, default=None, help="Use only the first N rooms")
    p.add_argument("--threads", type=int, default=None,
                   help="Worker threads (def. $NCL_THREADS or 1)")
    p.add_argument("--output", "-o", type=str, required=True, help="Output sweep.csv")
    p.add_argument("--svg", type=str, default=None, help="Optional SVG chart")
    add_pipeline(p)
    p.set_defaults(world=None)
    add_common(p)
    p.set_defaults(function=cmd_sweep)

    return parser


def main():

    parser = build_parser()
    args = parser.parse_args()

    # Setup logging
    logging.basicConfig(
        format="%(message)s",
        level=getattr(logging, args.log_level.upper()),
    )

    try:
        args.function(args)

    except InputError as ex:
        logging.critical("ERROR: " + str(ex))
        exit(EXIT_INPUT)

    except NclLayoutException as ex:
        logging.critical("ERROR: " + str(ex))
        exit(EXIT_PIPELINE)

    except OSError as ex:
        logging.critical("ERROR: " + str(ex))
        exit(EXIT_INPUT)


# =============================================================================

if __name__ == "__main__":
    main()
