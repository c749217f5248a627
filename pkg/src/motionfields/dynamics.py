"""Projection onto distance-field zero level sets and the projected Euler rollout."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .fields.base import DistanceField, axial_grads
from .kinematics import MotionSequence, MotionState, rebuild_states
from .product import pose_exp

ZERO_GRAD = 1e-12


@dataclass(frozen=True)
class ProjectorConfig:
    alpha: float = 1.0
    max_iter: int = 50
    eps: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 20
    enabled: bool = True

    def __post_init__(self):
        if self.alpha <= 0 or not 0 < self.shrink < 1 or self.max_iter < 0 or self.eps < 0:
            raise ValueError("invalid projector configuration")


@dataclass
class ProjectionTrace:
    """Field value before each iteration (plus the final one), accepted step
    lengths (L2 norm of the concatenated tangent step) and a stop reason."""

    values: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    status: str = "max_iter"

    @property
    def iterations(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {"values": self.values, "steps": self.steps, "status": self.status}


def _retract(kind, x, step):
    return pose_exp(x, step) if kind == "pose" else x + step


def _project(fld: DistanceField, x, cond, cfg: ProjectorConfig):
    """Batched normalized-gradient descent on ``fld`` in its main input."""
    kind = fld.kind
    x = np.array(x, dtype=float, copy=True)
    cond = [np.asarray(c, dtype=float) for c in cond]
    n = len(x)
    f, grads = axial_grads(fld, x, cond)
    f = np.array(f, dtype=float)
    g = grads[0]
    traces = [ProjectionTrace([float(v)]) for v in f]
    if not cfg.enabled:
        for tr in traces:
            tr.status = "disabled"
        return x, traces
    active = np.ones(n, dtype=bool)
    for i in np.nonzero(f < cfg.eps)[0]:
        traces[i].status = "converged"
        active[i] = False
    for _ in range(cfg.max_iter):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        gn = np.linalg.norm(g[idx].reshape(len(idx), -1), axis=1)
        flat = gn < ZERO_GRAD
        for i in idx[flat]:
            traces[i].status = "zero_grad"
            active[i] = False
        idx, gn = idx[~flat], gn[~flat]
        if len(idx) == 0:
            break
        direction = -g[idx] / gn[:, None, None]
        length = cfg.alpha * f[idx]
        pending = np.ones(len(idx), dtype=bool)
        new_x = x[idx].copy()
        new_f = f[idx].copy()
        for _bt in range(cfg.max_backtracks + 1):
            p = np.nonzero(pending)[0]
            if len(p) == 0:
                break
            cand = _retract(kind, x[idx[p]], length[p, None, None] * direction[p])
            fc = fld(cand, [c[idx[p]] for c in cond])
            ok = fc < f[idx[p]]
            new_x[p[ok]] = cand[ok]
            new_f[p[ok]] = fc[ok]
            pending[p[ok]] = False
            length[p[~ok]] *= cfg.shrink
        for j in np.nonzero(pending)[0]:
            traces[idx[j]].status = "stalled"
            active[idx[j]] = False
        acc = np.nonzero(~pending)[0]
        if len(acc) == 0:
            continue
        ai = idx[acc]
        x[ai] = new_x[acc]
        fa, ga = axial_grads(fld, x[ai], [c[ai] for c in cond])
        f[ai] = fa
        g[ai] = ga[0]
        for j, i in zip(acc, ai):
            traces[i].values.append(float(f[i]))
            traces[i].steps.append(float(length[j]))
            if f[i] < cfg.eps:
                traces[i].status = "converged"
                active[i] = False
    return x, traces


def _single_or_batch(kind, x):
    x = np.asarray(x, dtype=float)
    return x.ndim == (3 if kind == "pose" else 2)


def _run(fld, x, cond, cfg, kind):
    if fld.kind != kind:
        raise ValueError(f"expected a {kind} field, got {fld.kind}")
    single = _single_or_batch(kind, x)
    if single:
        out, traces = _project(fld, np.asarray(x)[None], [np.asarray(c)[None] for c in cond], cfg)
        return out[0], traces[0]
    return _project(fld, x, cond, cfg)


def project_pose(pose, fld: DistanceField, cfg: ProjectorConfig = ProjectorConfig()):
    """Iterates ``Exp_theta(-alpha f grad / |grad|)`` with backtracking.

    Accepts one pose ``(K, 3, 3)`` or a batch; returns the projected pose(s)
    and trace(s).
    """
    return _run(fld, pose, (), cfg, "pose")


def project_velocity(vel, fld: DistanceField, pose, cfg: ProjectorConfig = ProjectorConfig()):
    return _run(fld, vel, (pose,), cfg, "vel")


def project_acceleration(acc, fld: DistanceField, pose, vel, cfg: ProjectorConfig = ProjectorConfig()):
    return _run(fld, acc, (pose, vel), cfg, "acc")


@dataclass(frozen=True)
class StateProjectorConfig:
    pose: ProjectorConfig = ProjectorConfig()
    vel: ProjectorConfig = ProjectorConfig()
    acc: ProjectorConfig = ProjectorConfig()


@dataclass
class Fields:
    pose: Optional[DistanceField] = None
    vel: Optional[DistanceField] = None
    acc: Optional[DistanceField] = None


def project_state(state: MotionState, fields: Fields, cfg: StateProjectorConfig = StateProjectorConfig()):
    """Pose first, then velocity given the projected pose, then acceleration
    given both. Returns ``(state, {"pose": trace, "vel": trace, "acc": trace})``."""
    pose, vel, acc = state.pose, state.vel, state.acc
    traces = {}
    if fields.pose is not None:
        pose, traces["pose"] = project_pose(pose, fields.pose, cfg.pose)
    if fields.vel is not None:
        vel, traces["vel"] = project_velocity(vel, fields.vel, pose, cfg.vel)
    if fields.acc is not None:
        acc, traces["acc"] = project_acceleration(acc, fields.acc, pose, vel, cfg.acc)
    return MotionState(state.t_r, pose, vel, acc), traces


@dataclass(frozen=True)
class IntegratorConfig:
    """``lam`` scales the velocity update, ``alpha`` the pose update (both in
    seconds, default ``1/fps``). ``velocity_condition`` picks the pose the
    velocity projection is conditioned on: ``current`` uses the freshly
    rolled-out pose of the same frame, ``previous`` the pose of the frame
    before."""

    fps: float = 30.0
    lam: Optional[float] = None
    alpha: Optional[float] = None
    pose: ProjectorConfig = ProjectorConfig()
    vel: ProjectorConfig = ProjectorConfig()
    acc: ProjectorConfig = ProjectorConfig(enabled=False)
    velocity_condition: str = "current"

    def __post_init__(self):
        if self.velocity_condition not in ("current", "previous"):
            raise ValueError("velocity_condition must be 'current' or 'previous'")
        if self.fps <= 0 or (self.lam is not None and self.lam <= 0) or (self.alpha is not None and self.alpha <= 0):
            raise ValueError("integrator steps must be positive")

    @property
    def steps(self):
        dt = 1.0 / self.fps
        return (self.lam if self.lam is not None else dt, self.alpha if self.alpha is not None else dt)


def integrate(pose0, vel0, accs, fields: Fields = None, cfg: IntegratorConfig = IntegratorConfig(), t_r=None):
    """Projected geometric Euler rollout; returns ``T + 1`` frames for ``T``
    accelerations with velocities/accelerations rebuilt from the poses.

    Disabled or missing projectors reduce each step to
    ``w_t = w_{t-1} + lam a_{t-1}`` and ``theta_t = theta_{t-1} exp(alpha w_{t-1})``.
    """
    fields = fields or Fields()
    accs = np.asarray(accs, dtype=float)
    lam, alpha = cfg.steps
    poses = [np.asarray(pose0, dtype=float)]
    vels = [np.asarray(vel0, dtype=float)]
    for t in range(1, len(accs) + 1):
        a = accs[t - 1]
        if fields.acc is not None and cfg.acc.enabled:
            a, _ = project_acceleration(a, fields.acc, poses[-1], vels[-1], cfg.acc)
        theta = pose_exp(poses[-1], alpha * vels[-1])
        if fields.pose is not None and cfg.pose.enabled:
            theta, _ = project_pose(theta, fields.pose, cfg.pose)
        omega = vels[-1] + lam * a
        if fields.vel is not None and cfg.vel.enabled:
            cond = theta if cfg.velocity_condition == "current" else poses[-1]
            omega, _ = project_velocity(omega, fields.vel, cond, cfg.vel)
        poses.append(theta)
        vels.append(omega)
    poses = np.stack(poses)
    if len(poses) >= 3:
        return rebuild_states(poses, cfg.fps, t_r=t_r)
    return MotionSequence(poses, cfg.fps, t_r=t_r, vel=np.stack(vels))


def write_traces(path, traces) -> None:
    """Trace export: JSON array of per-iteration field values (one list per trace)."""
    if isinstance(traces, ProjectionTrace):
        traces = [traces]
    if isinstance(traces, dict):
        payload = {k: v.to_dict() for k, v in traces.items()}
    else:
        payload = [t.values for t in traces]
    Path(path).write_text(json.dumps(payload))
