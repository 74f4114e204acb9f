"""``demr pose|subspace|props --config <path>`` experiment drivers.

Exit codes: 0 success, 1 a proposition check failed, 2 bad config,
3 I/O or ingestion failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import errors, liegroups, net, props, tasks
from .rng import make_rng

EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

_NUMERICAL = (
    errors.NonConvergence,
    errors.RankDeficient,
    errors.SpectralTie,
    errors.NonFiniteLoss,
    errors.DegenerateInput,
    errors.DispersedSamples,
    errors.MartinUndefined,
)

_POS_INT = {"type": "integer", "minimum": 1}
_WIDTHS = {"type": "array", "items": _POS_INT, "minItems": 1}
_COMMON = {
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "output_dir": {"type": "string"},
    "log_every": _POS_INT,
}

SCHEMAS = {
    "pose": {
        "type": "object",
        "additionalProperties": False,
        "required": ["task", "seed"],
        "properties": {
            "task": {"const": "pose"},
            **_COMMON,
            "tag": {"enum": list(liegroups.ROTATION_TAGS)},
            "fraction": {"enum": list(tasks.POSE_FRACTIONS)},
            "mode": {"enum": ["euler", "axis", "so3"]},
            "n_points": _POS_INT,
            "n_train": _POS_INT,
            "n_test": _POS_INT,
            "iterations": _POS_INT,
            "batch": _POS_INT,
            "lr": {"type": "number", "exclusiveMinimum": 0},
            "encoder_widths": _WIDTHS,
            "head_widths": _WIDTHS,
            "cloud_path": {"type": "string"},
            "jitter": {"type": "number", "minimum": 0},
        },
    },
    "subspace": {
        "type": "object",
        "additionalProperties": False,
        "required": ["task", "seed"],
        "properties": {
            "task": {"const": "subspace"},
            **_COMMON,
            "n": _POS_INT,
            "m": _POS_INT,
            "identities": _POS_INT,
            "images_per_identity": _POS_INT,
            "sigma": {"type": "number", "minimum": 0},
            "split": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "hidden": _WIDTHS,
            "epochs": _POS_INT,
            "batch": _POS_INT,
            "lr": {"type": "number", "exclusiveMinimum": 0},
            "eval_images": _POS_INT,
            "images_path": {"type": "string"},
            "dimr": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "n": _POS_INT,
                    "m": _POS_INT,
                    "identities": _POS_INT,
                    "images_per_identity": _POS_INT,
                    "sigma": {"type": "number", "minimum": 0},
                    "hidden": _WIDTHS,
                    "epochs": _POS_INT,
                    "batch": _POS_INT,
                    "lr": {"type": "number", "exclusiveMinimum": 0},
                    "h": {"type": "number", "minimum": 1e-6, "maximum": 1e-3},
                },
            },
        },
    },
    "props": {
        "type": "object",
        "additionalProperties": False,
        "required": ["task", "seed"],
        "properties": {
            "task": {"const": "props"},
            **_COMMON,
            "checks": {"type": "array", "items": {"enum": list(props.CHECKS)}, "uniqueItems": True},
            "nearest_matrices": _POS_INT,
            "nearest_candidates": _POS_INT,
            "roundtrip_trials": _POS_INT,
            "grassmann_trials": _POS_INT,
            "chordal_pairs": _POS_INT,
            "mle_sigma": {"type": "number", "exclusiveMinimum": 0},
            "mle_samples": _POS_INT,
            "mle_means": _POS_INT,
            "grassmann_sigma": {"type": "number", "minimum": 0},
            "grassmann_samples": _POS_INT,
            "grassmann_candidates": _POS_INT,
            "grad_seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
    },
}

POSE_DEFAULTS = {
    "tag": "nine9",
    "fraction": 1.0,
    "mode": "so3",
    "n_points": 256,
    "n_train": 2048,
    "n_test": 256,
    "iterations": 2000,
    "batch": 32,
    "lr": 1e-3,
    "encoder_widths": [64, 128],
    "head_widths": [128],
    "jitter": 0.0,
    "log_every": 50,
    "output_dir": "demr_out",
}

DIMR_DEFAULTS = {
    "n": 6,
    "m": 2,
    "identities": 40,
    "images_per_identity": 2,
    "sigma": 0.05,
    "hidden": [8, 8],
    "epochs": 50,
    "batch": 8,
    "lr": 1e-2,
    "h": 1e-4,
}

SUBSPACE_DEFAULTS = {
    "n": 64,
    "m": 5,
    "identities": 40,
    "images_per_identity": 64,
    "sigma": 0.05,
    "split": 0.8,
    "hidden": [256, 256],
    "epochs": 40,
    "batch": 32,
    "lr": 1e-3,
    "eval_images": 8,
    "log_every": 16,
    "output_dir": "demr_out",
}


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package (``pose.json`` etc.)."""
    return Path(str(resources.files("demr") / "configs" / name))


def validate_config(raw: dict) -> dict:
    """Schema-check ``raw`` and return it merged over the task defaults."""
    if not isinstance(raw, dict) or raw.get("task") not in SCHEMAS:
        raise errors.BadConfig("config must be an object with task in {pose, subspace, props}")
    try:
        jsonschema.validate(raw, SCHEMAS[raw["task"]])
    except jsonschema.ValidationError as exc:
        raise errors.BadConfig(f"invalid config: {exc.message}") from None
    if raw["task"] == "pose":
        return {**POSE_DEFAULTS, **raw}
    if raw["task"] == "subspace":
        cfg = {**SUBSPACE_DEFAULTS, **raw}
        cfg["dimr"] = {**DIMR_DEFAULTS, **raw.get("dimr", {})}
        return cfg
    return {"output_dir": "demr_out", **raw}


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise errors.BadConfig(f"{path}: not valid JSON ({exc})") from None
    return validate_config(raw)


# --- output helpers ----------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def output_dir(cfg: dict) -> Path:
    out = Path(os.environ.get("DEMR_OUT") or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def loss_curve(losses, every: int):
    """``(iteration, mean loss over the interval)`` pairs, one per full interval."""
    n = len(losses) // every
    arr = np.asarray(losses[: n * every]).reshape(n, every).mean(axis=1)
    return [[(i + 1) * every, float(v)] for i, v in enumerate(arr)]


def _stats_dict(s: tasks.ErrorStats):
    return {"avg": s.avg, "median": s.median, "std": s.std}


# --- commands ------------------------------------------------------------------


def cmd_pose(cfg: dict, stub_gt: bool = False) -> dict:
    """Train one rotation head on synthetic cloud pairs and evaluate it."""
    t0 = time.perf_counter()
    seed, tag = cfg["seed"], cfg["tag"]
    data_cfg = tasks.PoseDataConfig(
        n_points=cfg["n_points"],
        n_train=cfg["n_train"],
        n_test=cfg["n_test"],
        mode=cfg["mode"],
        fraction=cfg["fraction"],
        cloud_path=cfg.get("cloud_path"),
        jitter=cfg["jitter"],
    )
    train_set, test_set = tasks.gen_pose_dataset(data_cfg, make_rng(seed, "pose_data"))
    params = net.build_pose_params(
        tag, make_rng(seed, "pose_init", tag), tuple(cfg["encoder_widths"]), tuple(cfg["head_widths"])
    )
    log = tasks.TrainLog(iters_per_epoch=1)
    if not stub_gt:
        params, log = tasks.train(
            params, train_set.batch, len(train_set), cfg["iterations"], cfg["batch"],
            make_rng(seed, "pose_train", tag), lr=cfg["lr"],
        )
    ev = tasks.evaluate_pose(params, test_set, tag, stub_gt=stub_gt)
    out = output_dir(cfg)
    write_csv(
        out / "stats.csv",
        ["tag", "fraction", "avg_deg", "median_deg", "std_deg"],
        [[tag, cfg["fraction"], ev.rotation.avg, ev.rotation.median, ev.rotation.std]],
    )
    err, frac = tasks.cumulative_curve(ev.rotation)
    write_csv(out / "percentile.csv", ["error_deg", "cumulative_fraction"], zip(err, frac))
    net.save_checkpoint(out / "checkpoint.demr", params)
    epochs = log.epoch_losses()
    report = {
        "config": cfg,
        "stub_gt": stub_gt,
        "stats": {
            "rotation_deg": _stats_dict(ev.rotation),
            "combined_deg": _stats_dict(ev.combined),
            "translation": _stats_dict(ev.translation),
        },
        "loss_curve": loss_curve(log.losses, cfg["log_every"]),
        "epochs": int(epochs.size),
        "epoch_losses": [float(v) for v in epochs],
        "convergence_epoch": tasks.convergence_epoch(epochs) if epochs.size else 0,
        "wall_clock_s": time.perf_counter() - t0,
    }
    write_json(out / "report.json", report)
    return report


def _subspace_train(cfg, train_set, seed, key, mode="demr_extrinsic", h=1e-4):
    x, frames = train_set.flat()
    params = net.build_subspace_params(x.shape[1], frames.shape[1], make_rng(seed, key, "init"), hidden=tuple(cfg["hidden"]))
    batch = min(cfg["batch"], x.shape[0])
    iters = cfg["epochs"] * (x.shape[0] // batch)
    init = params
    params, log = tasks.train(
        params, lambda idx: net.SubspaceBatch(x[idx], frames[idx]), x.shape[0], iters, batch,
        make_rng(seed, key, "train"), mode=mode, lr=cfg["lr"], h=h,
    )
    return init, params, log


def run_dimr_comparison(cfg: dict, seed: int) -> dict:
    """DEMR and finite-difference DIMR on the same reduced problem."""
    d = cfg["dimr"]
    data_cfg = tasks.SubspaceDataConfig(
        n=d["n"], m=d["m"], identities=d["identities"], images_per_identity=d["images_per_identity"], sigma=d["sigma"]
    )
    train_set, test_set = tasks.gen_subspace_dataset(data_cfg, make_rng(seed, "dimr_data"))
    result = {}
    for name, mode in (("demr_reduced", "demr_extrinsic"), ("dimr_fd", "dimr_geodesic_fd")):
        # both variants share data, initialization and batch order
        _, params, log = _subspace_train(d, train_set, seed, "reduced", mode=mode, h=d["h"])
        epochs = log.epoch_losses()
        result[name] = {
            "avg_dg": tasks.evaluate_subspace(params, test_set),
            "convergence_epoch": tasks.convergence_epoch(epochs),
            "epochs": int(epochs.size),
            "epoch_losses": [float(v) for v in epochs],
        }
    return result


def cmd_subspace(cfg: dict, stub_gt: bool = False, dimr_fd: bool = False) -> dict:
    """Train the SymVec regressor; optionally compare against DIMR-fd."""
    t0 = time.perf_counter()
    seed = cfg["seed"]
    data_cfg = tasks.SubspaceDataConfig(
        n=cfg["n"],
        m=cfg["m"],
        identities=cfg["identities"],
        images_per_identity=cfg["images_per_identity"],
        sigma=cfg["sigma"],
        split=cfg["split"],
        images_path=cfg.get("images_path"),
    )
    train_set, test_set = tasks.gen_subspace_dataset(data_cfg, make_rng(seed, "subspace_data"))
    ev_images = cfg["eval_images"]
    variants = {}
    if stub_gt:
        init = params = net.build_subspace_params(cfg["n"], cfg["n"], make_rng(seed, "full", "init"), hidden=tuple(cfg["hidden"]))
        log = tasks.TrainLog()
        variants["demr"] = {"avg_dg": tasks.evaluate_subspace(None, test_set, ev_images, stub_gt=True)}
    else:
        init, params, log = _subspace_train(cfg, train_set, seed, "full")
        epochs = log.epoch_losses()
        variants["demr"] = {
            "avg_dg": tasks.evaluate_subspace(params, test_set, ev_images),
            "convergence_epoch": tasks.convergence_epoch(epochs),
            "epochs": int(epochs.size),
            "epoch_losses": [float(v) for v in epochs],
        }
        variants["untrained"] = {"avg_dg": tasks.evaluate_subspace(init, test_set, ev_images)}
        variants["mean_projector"] = {
            "avg_dg": tasks.evaluate_subspace(None, test_set, ev_images, fixed_output=tasks.mean_projector_output(train_set))
        }
        if dimr_fd:
            variants.update(run_dimr_comparison(cfg, seed))
    out = output_dir(cfg)
    write_csv(
        out / "subspace.csv",
        ["variant", "avg_dg", "convergence_epoch"],
        [[k, v["avg_dg"], v.get("convergence_epoch", "")] for k, v in variants.items()],
    )
    net.save_checkpoint(out / "checkpoint.demr", params)
    report = {
        "config": cfg,
        "stub_gt": stub_gt,
        "variants": variants,
        "loss_curve": loss_curve(log.losses, cfg["log_every"]),
        "wall_clock_s": time.perf_counter() - t0,
    }
    write_json(out / "report.json", report)
    return report


def props_config(cfg: dict) -> props.PropsConfig:
    keys = set(props.PropsConfig.__dataclass_fields__) - {"grad_seeds"}
    kw = {k: v for k, v in cfg.items() if k in keys}
    if "grad_seeds" in cfg:
        kw["grad_seeds"] = tuple(cfg["grad_seeds"])
    return props.PropsConfig(**kw)


def cmd_props(cfg: dict) -> list[props.PropRow]:
    t0 = time.perf_counter()
    pcfg = props_config(cfg)
    rows = props.run_suite(pcfg, cfg.get("checks"))
    out = output_dir(cfg)
    write_csv(out / "props.csv", ["check", "statistic", "threshold", "pass"], [[r.check, r.statistic, r.threshold, r.passed] for r in rows])
    write_json(
        out / "report.json",
        {"config": cfg, "props_config": {**asdict(pcfg), "grad_seeds": list(pcfg.grad_seeds)},
         "rows": [asdict(r) for r in rows], "wall_clock_s": time.perf_counter() - t0},
    )
    return rows


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="demr", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["pose", "subspace", "props"])
    p.add_argument("--config", required=True, help="JSON config path")
    p.add_argument("--seed", type=int)
    p.add_argument("--tag", choices=list(liegroups.ROTATION_TAGS))
    p.add_argument("--fraction", type=float)
    p.add_argument("--sigma", type=float, help="props: MLE noise level")
    p.add_argument("--stub-gt", action="store_true", help="evaluate an oracle that emits the ground truth")
    p.add_argument("--dimr-fd", action="store_true", help="subspace: also train the finite-difference competitor")
    return p


def _apply_overrides(raw: dict, args) -> dict:
    raw = dict(raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.tag is not None:
        raw["tag"] = args.tag
    if args.fraction is not None:
        raw["fraction"] = args.fraction
    if args.sigma is not None:
        raw["mle_sigma"] = args.sigma
    return raw


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise errors.BadConfig(f"{args.config}: not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise errors.BadConfig("config must be a JSON object")
        cfg = validate_config(_apply_overrides(raw, args))
        if cfg["task"] != args.command:
            raise errors.BadConfig(f"config task {cfg['task']!r} does not match command {args.command!r}")
        if args.command == "pose":
            report = cmd_pose(cfg, stub_gt=args.stub_gt)
            s = report["stats"]["rotation_deg"]
            print(f"{cfg['tag']} {s['avg']:.2f} {s['median']:.2f} {s['std']:.2f}")
        elif args.command == "subspace":
            report = cmd_subspace(cfg, stub_gt=args.stub_gt, dimr_fd=args.dimr_fd)
            for name, v in report["variants"].items():
                print(f"{name} avg_DG={v['avg_dg']:.4f} convergence_epoch={v.get('convergence_epoch', '-')}")
        else:
            rows = cmd_props(cfg)
            for r in rows:
                print(f"{'PASS' if r.passed else 'FAIL'} {r.check} {r.statistic:.3e} (threshold {r.threshold:g})")
            if not all(r.passed for r in rows):
                return EXIT_CHECK_FAILED
    except errors.BadConfig as exc:
        print(f"demr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, errors.IngestError) as exc:
        print(f"demr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _NUMERICAL as exc:
        print(f"demr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def main() -> None:
    sys.exit(run())
