"""Command-line entry point: batch, file-in/file-out runs.

Every command takes ``--config`` (JSON with ``"version": 1``), ``--seed`` and
``--out``; inputs come from ``--input``, ``--fields``, ``--skeleton`` and
``--reference``. Errors go to stderr as one JSON object and a nonzero exit code.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields as dc_fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import read_corpus, synth_corpus, toy_spec, write_corpus
from .dynamics import Fields, IntegratorConfig, ProjectorConfig, integrate, project_acceleration, project_pose, project_velocity
from .fields import TrainConfig, load_field, save_field
from .kinematics import MotionSequence, Skeleton, forward_kinematics, read_motion, toy_chain, write_motion
from .metrics import motion_metrics, mpjpe
from .optim import (DivergenceError, EnergyWeights, FitSchedule, Observation, fit_sequence, geodesic_infill, inbetween,
                    read_observation)
from .presets import TOY_MINING, TOY_SAMPLES, TOY_TRAIN, train_one

log = logging.getLogger("motionfields")

CONFIG_VERSION = 1
EXIT_INPUT = 2
EXIT_DIVERGED = 3

# per-command config keys and their defaults
DEFAULTS = {
    "gen-data": {"k": 5, "n_sequences": 20, "spec": {}},
    "train": {"kinds": ["pose", "vel", "acc"], "n_samples": TOY_SAMPLES,
              "train": {}, "mining": dict(TOY_MINING)},
    "project": {"projector": {}, "orders": ["pose", "vel", "acc"]},
    "rollout": {"integrator": {}, "noise": 0.0, "project": True},
    "denoise": {"weights": {}, "schedule": {}, "noise": 0.0, "stages": ["I", "II"]},
    "fit": {"weights": {}, "schedule": {}, "stages": ["I", "II"]},
    "inbetween": {"weights": {}, "schedule": {}, "keyframes": None, "every": 0, "stages": ["I", "II"]},
    "metrics": {},
}


class CliError(Exception):
    pass


# ------------------------------------------------------------------ plumbing


def load_config(cmd: str, path):
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS[cmd].items()}
    if path is None:
        return cfg
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise CliError("config must be a JSON object")
    if raw.get("version") != CONFIG_VERSION:
        raise CliError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    bad = set(raw) - set(cfg) - {"version", "seed"}
    if bad:
        raise CliError(f"unknown config keys for {cmd}: {sorted(bad)}")
    cfg.update({k: v for k, v in raw.items() if k != "version"})
    return cfg


def _dataclass_from(cls, d, what):
    known = {f.name for f in dc_fields(cls)}
    bad = set(d) - known
    if bad:
        raise CliError(f"unknown {what} keys: {sorted(bad)}")
    return cls(**d)


def _schedule(d) -> FitSchedule:
    try:
        return FitSchedule.from_dict(dict(d, **({"smooth_metric": tuple(d["smooth_metric"])} if "smooth_metric" in d else {})))
    except TypeError as exc:
        raise CliError(str(exc)) from exc


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1))


def _need(path, flag):
    if path is None:
        raise CliError(f"{flag} is required for this command")
    return path


def _skeleton(args, embedded=None, k=None) -> Skeleton:
    if args.skeleton:
        try:
            return Skeleton.from_dict(json.loads(Path(args.skeleton).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise CliError(f"cannot read skeleton {args.skeleton}: {exc}") from exc
    if embedded is not None:
        return embedded
    if k is None:
        raise CliError("--skeleton is required")
    return toy_chain(k)


def _fields(path) -> Fields:
    if path is None:
        return Fields()
    d = Path(path)
    if not d.is_dir():
        raise CliError(f"fields directory {d} does not exist")
    out = {}
    for kind in ("pose", "vel", "acc"):
        f = d / f"{kind}.json"
        out[kind] = load_field(f) if f.exists() else None
    return Fields(out["pose"], out["vel"], out["acc"])


def _reference(args):
    if args.reference is None:
        return None
    return read_motion(args.reference)[0]


def field_stats(seq: MotionSequence, fields: Fields) -> dict:
    out = {}
    seq = seq if seq.vel is not None and len(seq) >= 3 else seq.with_dynamics()
    if fields.pose is not None:
        out["pose"] = float(np.mean(fields.pose(seq.poses)))
    if fields.vel is not None:
        out["vel"] = float(np.mean(fields.vel(seq.vel, [seq.poses])))
    if fields.acc is not None:
        out["acc"] = float(np.mean(fields.acc(seq.acc, [seq.poses, seq.vel])))
    return out


class _Clock:
    """Wall-clock per stage; logged only, so output files stay byte-reproducible."""

    def __init__(self):
        self.t = time.perf_counter()

    def lap(self, name):
        now = time.perf_counter()
        log.info("%s took %.2f s", name, now - self.t)
        self.t = now


# ------------------------------------------------------------------ commands


def cmd_gen_data(args, cfg, out: Path):
    spec_over = dict(cfg["spec"])
    spec_over.setdefault("seed", args.seed)
    for key in ("axes", "amplitudes", "frequencies", "phases", "limits"):
        if key in spec_over:
            spec_over[key] = tuple(tuple(v) if isinstance(v, list) else v for v in spec_over[key])
    try:
        spec = toy_spec(int(cfg["k"]), **spec_over)
    except TypeError as exc:
        raise CliError(f"bad spec: {exc}") from exc
    train, held = synth_corpus(spec, int(cfg["n_sequences"]))
    skel = toy_chain(spec.k)
    write_corpus(out, train, held, skel)
    _write_json(out / "skeleton.json", skel.to_dict())
    log.info("wrote %d train / %d held-out frames", len(train), len(held) if held else 0)


def cmd_train(args, cfg, out: Path):
    train, _, _ = read_corpus(_need(args.input, "--input"))
    tcfg = replace(TOY_TRAIN, **{k: (tuple(v) if k == "widths" else v) for k, v in cfg["train"].items()}) \
        if set(cfg["train"]) <= {f.name for f in dc_fields(TrainConfig)} else None
    if tcfg is None:
        raise CliError(f"unknown train keys: {sorted(set(cfg['train']) - {f.name for f in dc_fields(TrainConfig)})}")
    mining = dict(TOY_MINING, **cfg["mining"])
    if set(mining) - set(TOY_MINING):
        raise CliError(f"unknown mining keys: {sorted(set(mining) - set(TOY_MINING))}")
    report = {}
    clock = _Clock()
    for i, kind in enumerate(cfg["kinds"]):
        if kind not in ("pose", "vel", "acc"):
            raise CliError(f"unknown field kind {kind!r}")
        fld, reps = train_one(train, kind, int(cfg["n_samples"]), args.seed + 101 * (i + 1), tcfg,
                              int(mining["rounds"]), int(mining["samples"]), int(mining["epochs"]))
        save_field(out / f"{kind}.json", fld)
        report[kind] = [r.to_dict() for r in reps]
        clock.lap(f"training {kind}")
    _write_json(out / "train_report.json", report)


def cmd_project(args, cfg, out: Path):
    seq, skel = read_motion(_need(args.input, "--input"))
    fields = _fields(_need(args.fields, "--fields"))
    pcfg = _dataclass_from(ProjectorConfig, cfg["projector"], "projector")
    seq = seq if seq.vel is not None and seq.acc is not None else seq.with_dynamics()
    poses, vel, acc = seq.poses, seq.vel, seq.acc
    traces = {}
    orders = cfg["orders"]
    if "pose" in orders and fields.pose is not None:
        poses, tr = project_pose(poses, fields.pose, pcfg)
        traces["pose"] = [t.values for t in tr]
    if "vel" in orders and fields.vel is not None:
        vel, tr = project_velocity(vel, fields.vel, poses, pcfg)
        traces["vel"] = [t.values for t in tr]
    if "acc" in orders and fields.acc is not None:
        acc, tr = project_acceleration(acc, fields.acc, poses, vel, pcfg)
        traces["acc"] = [t.values for t in tr]
    write_motion(out / "motion.json", MotionSequence(poses, seq.fps, t_r=seq.t_r, vel=vel, acc=acc), skel)
    _write_json(out / "trace.json", traces)


def cmd_rollout(args, cfg, out: Path):
    seq, skel = read_motion(_need(args.input, "--input"))
    if len(seq) < 2:
        raise CliError("rollout needs at least 2 frames")
    seq = seq if seq.vel is not None and seq.acc is not None else seq.with_dynamics()
    icfg = dict(cfg["integrator"])
    for key in ("pose", "vel", "acc"):
        if key in icfg:
            icfg[key] = _dataclass_from(ProjectorConfig, icfg[key], f"{key} projector")
    icfg.setdefault("fps", seq.fps)
    icfg = _dataclass_from(IntegratorConfig, icfg, "integrator")
    rng = np.random.default_rng(args.seed)
    accs = seq.acc[:-1] + float(cfg["noise"]) * rng.normal(size=seq.acc[:-1].shape)
    fields = _fields(args.fields) if cfg["project"] else Fields()
    rolled = integrate(seq.poses[0], seq.vel[0], accs, fields, icfg)
    rolled = MotionSequence(rolled.poses, rolled.fps, t_r=np.broadcast_to(seq.t_r[0], (len(rolled), 3)).copy(),
                            vel=rolled.vel, acc=rolled.acc)
    write_motion(out / "motion.json", rolled, skel)


def _fit_outputs(out: Path, fitted, rep, skel, fields, ref, obs=None, extra=None):
    write_motion(out / "motion.json", fitted, skel)
    report = {"fit": rep.to_dict(), "field_values": field_stats(fitted, fields)}
    beta = np.asarray(rep.beta) if rep.beta is not None else None
    if obs is not None and obs.kind == "joints3d":
        pos = forward_kinematics(skel, fitted.t_r, fitted.poses, beta)
        report["observation_mpjpe_mm"] = mpjpe(pos, obs.points, obs.mask)
    if ref is not None:
        report["metrics"] = motion_metrics(fitted, ref, skel, beta=beta,
                                           mask=obs.mask if obs is not None and obs.kind == "joints3d" and not obs.mask.all() else None)
        if rep.stage1 is not None:
            report["metrics_stage1"] = motion_metrics(rep.stage1, ref, skel, beta=beta)
    report.update(extra or {})
    _write_json(out / "report.json", report)


def _run_fit(obs, skel, cfg, fields, init=None):
    weights = EnergyWeights.from_dict(cfg["weights"])
    return fit_sequence(obs, skel, weights, fields, _schedule(cfg["schedule"]), init=init, stages=tuple(cfg["stages"]))


def cmd_denoise(args, cfg, out: Path):
    seq, embedded = read_motion(_need(args.input, "--input"))
    skel = _skeleton(args, embedded, seq.k)
    fields = _fields(args.fields)
    rng = np.random.default_rng(args.seed)
    clean = forward_kinematics(skel, seq.t_r, seq.poses)
    obs = Observation("joints3d", clean + float(cfg["noise"]) * rng.normal(size=clean.shape), fps=seq.fps)
    clock = _Clock()
    fitted, rep = _run_fit(obs, skel, cfg, fields)
    clock.lap("denoise")
    ref = _reference(args) or seq
    _fit_outputs(out, fitted, rep, skel, fields, ref, obs)


def cmd_fit(args, cfg, out: Path):
    obs = read_observation(_need(args.input, "--input"))
    ref = _reference(args)
    k = ref.k if ref is not None else (obs.points.shape[1] if obs.kind != "pointcloud" else None)
    skel = _skeleton(args, None, k)
    fields = _fields(args.fields)
    clock = _Clock()
    fitted, rep = _run_fit(obs, skel, cfg, fields)
    clock.lap("fit")
    _fit_outputs(out, fitted, rep, skel, fields, ref, obs)


def cmd_inbetween(args, cfg, out: Path):
    seq, embedded = read_motion(_need(args.input, "--input"))
    skel = _skeleton(args, embedded, seq.k)
    fields = _fields(args.fields)
    observed = np.zeros(len(seq), dtype=bool)
    if cfg["keyframes"] is not None:
        idx = np.asarray(cfg["keyframes"], dtype=int)
        if np.any(idx < 0) or np.any(idx >= len(seq)):
            raise CliError("keyframe index out of range")
        observed[idx] = True
    elif int(cfg["every"]) > 0:
        observed[:: int(cfg["every"])] = True
        observed[-1] = True
    else:
        observed[[0, -1]] = True
    weights = EnergyWeights.from_dict(cfg["weights"])
    clock = _Clock()
    fitted, rep = inbetween(seq, observed, skel, weights, fields, _schedule(cfg["schedule"]), stages=tuple(cfg["stages"]))
    clock.lap("inbetween")
    ref = _reference(args) or seq
    base = MotionSequence(geodesic_infill(seq.poses, observed), seq.fps, t_r=fitted.t_r)
    extra = {"observed": np.nonzero(observed)[0].tolist(), "baseline_metrics": motion_metrics(base, ref, skel)}
    _fit_outputs(out, fitted, rep, skel, fields, ref, extra=extra)


def cmd_metrics(args, cfg, out: Path):
    pred, embedded = read_motion(_need(args.input, "--input"))
    ref = _reference(args)
    if ref is None:
        raise CliError("--reference is required for metrics")
    skel = _skeleton(args, embedded, pred.k)
    report = motion_metrics(pred, ref, skel)
    report["field_values"] = field_stats(pred, _fields(args.fields))
    _write_json(out / "metrics.json", report)
    print(json.dumps(report, sort_keys=True))


COMMANDS = {
    "gen-data": (cmd_gen_data, "synthesize a toy motion corpus"),
    "train": (cmd_train, "train distance fields on a corpus"),
    "project": (cmd_project, "project a motion onto the fields' zero level sets"),
    "rollout": (cmd_rollout, "integrate a motion forward from its first frame"),
    "denoise": (cmd_denoise, "fit a motion to (optionally noised) joints of itself"),
    "fit": (cmd_fit, "fit a motion to 2D/3D/point-cloud observations"),
    "inbetween": (cmd_inbetween, "fill frames between keyframes"),
    "metrics": (cmd_metrics, "compare a motion to a reference"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motionfields", description="Distance-field motion priors toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON config with a version field")
        s.add_argument("--seed", type=int, default=None, help="overrides the config seed (default 0)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--input")
        s.add_argument("--fields", help="directory holding pose.json / vel.json / acc.json")
        s.add_argument("--skeleton", help="skeleton JSON")
        s.add_argument("--reference", help="reference motion for metrics")
    return p


def _setup_logging():
    level = os.environ.get("RMF_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise CliError(f"RMF_LOG must be one of {sorted(levels)}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        cfg = load_config(args.command, args.config)
        seed = cfg.pop("seed", 0)
        args.seed = int(seed if args.seed is None else args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](args, cfg, out)
    except DivergenceError as exc:
        return _fail("divergence", str(exc), EXIT_DIVERGED)
    except (CliError, ValueError, OSError, KeyError, TypeError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INPUT)
    return 0


if __name__ == "__main__":
    sys.exit(main())
