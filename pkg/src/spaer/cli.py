"""Command-line entry point: simulate, track, train, evaluate, report.

Exit codes: 0 success, 2 invalid flags/schema, 3 I/O failure, 4 degenerate
geometry, 5 training divergence. A TOML config file may supply defaults;
explicit flags override it. `--threads` / SPAER_THREADS cap worker counts;
all computation is deterministic regardless of the setting.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import plots, tracker
from .errors import DegenerateGeometry, DivergenceDetected, SpaerError
from .estimator import build_training_pair
from .eqfeatures import default_bank
from .geometry import trajectory_from_csv, trajectory_to_csv
from .simulator import SimConfig, pairwise_from_trajectory, simulate
from .temporal import TrainConfig, load_model, save_model, train
from .tracker import MotionSequence, TrackOptions, report_to_csv, report_to_json
from .volume import load_sequence, save_sequence

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DEGENERATE = 4
EXIT_DIVERGED = 5


class UsageError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"bad config file: {exc}") from exc


def _merged(args: argparse.Namespace, config: dict, section: str,
            defaults: dict) -> dict:
    """flags > config-file section > hard defaults; unknown config keys rejected."""
    sec = config.get(section, {})
    unknown = set(sec) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys in [{section}]: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            out[key] = flag_val
        elif key in sec:
            out[key] = sec[key]
        else:
            out[key] = default
    return out


def _threads(args) -> int:
    n = getattr(args, "threads", None)
    if n is None:
        n = os.environ.get("SPAER_THREADS")
    return int(n) if n else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------

def cmd_simulate(args, config) -> int:
    opts = _merged(args, config, "simulate", {
        "seed": 0, "frames": 20, "size": 64, "spacing_mm": 3.0,
        "tmax_mm": 10.0, "rmax_deg": 5.0, "noise": 0.0, "contrast": 0.0,
        "distortion": 0.0, "out": None,
    })
    if opts["out"] is None:
        raise UsageError("--out is required")
    try:
        cfg = SimConfig(seed=opts["seed"], size=opts["size"],
                        spacing_mm=opts["spacing_mm"], frames=opts["frames"],
                        t_max_mm=opts["tmax_mm"], r_max_deg=opts["rmax_deg"],
                        noise_sigma=opts["noise"], contrast_drift=opts["contrast"],
                        distortion_mm=opts["distortion"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    frames, traj, _ = simulate(cfg)
    outdir = Path(opts["out"])
    save_sequence(frames, outdir)
    (outdir / "truth.csv").write_text(trajectory_to_csv(traj))
    (outdir / "simconfig.json").write_text(
        json.dumps({k: v for k, v in opts.items() if k != "out"}, indent=2) + "\n")
    print(f"wrote {len(frames)} frames to {outdir}")
    return EXIT_OK


def cmd_track(args, config) -> int:
    opts = _merged(args, config, "track", {
        "in_dir": None, "model": None, "diffeo": False, "aligned_out": None,
        "out": None,
    })
    if opts["in_dir"] is None or opts["out"] is None:
        raise UsageError("--in and --out are required")
    frames = load_sequence(opts["in_dir"])
    bank = default_bank()
    params = None
    if opts["model"]:
        params, raw_gains = load_model(opts["model"])
        bank = bank.with_raw_gains(raw_gains)
    motion, secs = tracker.track(frames, bank, params,
                                 TrackOptions(diffeo=bool(opts["diffeo"])))
    Path(opts["out"]).write_text(trajectory_to_csv(motion.accumulated))
    for t, s in enumerate(secs):
        print(f"pair {t}: {s:.3f}s", file=sys.stderr)
    print(f"sequence total: {float(np.sum(secs)):.3f}s", file=sys.stderr)
    if opts["aligned_out"]:
        save_sequence(tracker.align(frames, motion), opts["aligned_out"])
    return EXIT_OK


def cmd_train(args, config) -> int:
    opts = _merged(args, config, "train", {
        "data": None, "split": "0.7,0.15,0.15", "epochs": 20, "seed": 0,
        "lr": 1e-5, "batch_size": 4, "out": None,
    })
    if not opts["data"] or opts["out"] is None:
        raise UsageError("--data and --out are required")
    try:
        ratios = [float(x) for x in str(opts["split"]).split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --split: {opts['split']!r}") from exc
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise UsageError("--split must be three non-negative ratios summing to 1")

    bank = default_bank()
    dataset = []
    for d in opts["data"]:
        frames = load_sequence(d)
        traj = trajectory_from_csv((Path(d) / "truth.csv").read_text())
        dataset.append(build_training_pair(frames, traj, bank))
    n = len(dataset)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    train_set = dataset[:n_train] or dataset
    val_set = dataset[n_train:n_train + n_val]

    cfg = TrainConfig(learning_rate=opts["lr"], batch_size=opts["batch_size"],
                      epochs=opts["epochs"], seed=opts["seed"])
    result = train(train_set, val_set, bank, cfg)
    save_model(opts["out"], result.params, result.bank)
    loss_path = Path(opts["out"]).with_suffix(".loss.csv")
    with open(loss_path, "w") as fh:
        fh.write("# spaer-csv v1\n")
        fh.write("epoch,lr,train_loss,val_loss\n")
        for rec in result.history:
            fh.write(f"{rec['epoch']},{float(rec['lr'])!r},"
                     f"{float(rec['train_loss'])!r},{float(rec['val_loss'])!r}\n")
    print(f"best epoch {result.best_epoch}; model written to {opts['out']}")
    return EXIT_OK


def _read_motion_csv(path: str) -> MotionSequence:
    try:
        traj = trajectory_from_csv(Path(path).read_text())
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return MotionSequence(tuple(pairwise_from_trajectory(traj)))


def cmd_evaluate(args, config) -> int:
    opts = _merged(args, config, "evaluate", {
        "est": None, "truth": None, "seq": None, "out": None,
    })
    if not (opts["est"] and opts["truth"] and opts["out"]):
        raise UsageError("--est, --truth and --out are required")
    est = _read_motion_csv(opts["est"])
    truth = _read_motion_csv(opts["truth"])
    aligned = reference = unaligned = None
    if opts["seq"]:
        frames = load_sequence(opts["seq"])
        aligned = tracker.align(frames, est)
        reference = frames[0]
        unaligned = frames
    report = tracker.evaluate(est, truth, aligned, reference, unaligned)
    out = Path(opts["out"])
    csv_path = out if out.suffix == ".csv" else out.with_suffix(".csv")
    csv_path.write_text(report_to_csv(report))
    csv_path.with_suffix(".json").write_text(report_to_json(report))
    print(f"wrote {csv_path} and {csv_path.with_suffix('.json')}")
    return EXIT_OK


def _read_report_csv(path: str) -> dict[str, list[float]]:
    cols: dict[str, list[float]] = {}
    header = None
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = line.split(",")
            expected = ["pair", "trans_err_mm", "ang_err_deg", "dice",
                        "ssd_pre", "ssd_post", "secs"]
            if header != expected:
                raise UsageError(f"{path}: unexpected report schema {header}")
            cols = {h: [] for h in header}
            continue
        for h, v in zip(header, line.split(",")):
            cols[h].append(float(v))
    if header is None:
        raise UsageError(f"{path}: empty report")
    return cols


def cmd_report(args, config) -> int:
    opts = _merged(args, config, "report", {"reports": None, "out_dir": None})
    if not opts["reports"] or not opts["out_dir"]:
        raise UsageError("--reports and --out-dir are required")
    outdir = Path(opts["out_dir"])
    outdir.mkdir(parents=True, exist_ok=True)

    err_series = {}
    ang_series = {}
    dice_series = {}
    for path in opts["reports"]:
        name = Path(path).stem
        cols = _read_report_csv(path)
        err_series[name] = (cols["pair"], cols["trans_err_mm"])
        ang_series[name] = (cols["pair"], cols["ang_err_deg"])
        good = [(p, d) for p, d in zip(cols["pair"], cols["dice"])
                if np.isfinite(d)]
        if good:
            dice_series[name] = ([p for p, _ in good], [d for _, d in good])
    plots.write_plot(outdir / "translation_error.svg",
                     plots.line_plot(err_series, "Translation error per pair",
                                     "pair", "error (mm)"))
    plots.write_plot(outdir / "angular_error.svg",
                     plots.line_plot(ang_series, "Angular error per pair",
                                     "pair", "error (deg)"))
    if dice_series:
        plots.write_plot(outdir / "dice.svg",
                         plots.line_plot(dice_series, "Dice vs frame",
                                         "frame pair", "dice"))
    print(f"plots written to {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spaer",
                                     description="Rigid motion tracking for "
                                                 "3D volume sequences")
    parser.add_argument("--config", help="TOML config file; flags override it")
    parser.add_argument("--threads", type=int, help="worker cap (also "
                        "SPAER_THREADS); output is independent of it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic sequence")
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--spacing-mm", dest="spacing_mm", type=float)
    p.add_argument("--tmax-mm", dest="tmax_mm", type=float)
    p.add_argument("--rmax-deg", dest="rmax_deg", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--contrast", type=float)
    p.add_argument("--distortion", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="estimate motion for a sequence")
    p.add_argument("--in", dest="in_dir")
    p.add_argument("--model")
    p.add_argument("--diffeo", action="store_const", const=True)
    p.add_argument("--aligned-out", dest="aligned_out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("train", help="train the attention refiner")
    p.add_argument("--data", nargs="+")
    p.add_argument("--split")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compare estimated motion to truth")
    p.add_argument("--est")
    p.add_argument("--truth")
    p.add_argument("--seq")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render SVG plots from report CSVs")
    p.add_argument("--reports", nargs="+")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        _threads(args)  # validated for effect; computation is deterministic
        return args.func(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateGeometry as exc:
        print(f"error: degenerate geometry: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except DivergenceDetected as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, FileNotFoundError) as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except SpaerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
