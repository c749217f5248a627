"""Two-stage test-time optimization, motion generation and in-betweening."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional

import numpy as np

from .. import so3
from ..dynamics import Fields, IntegratorConfig, ProjectorConfig, integrate
from ..kinematics import MotionSequence, Skeleton, estimate_acceleration, estimate_velocity, forward_kinematics
from ..product import identity_pose, pose_exp
from .energy import EnergyWeights, OptimizerState, energy
from .losses import contact_heuristic
from .observations import Observation

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class FitSchedule:
    """Iteration budgets and step control.

    ``step`` is the initial global step; ``step_pose``, ``step_trans`` and
    ``step_beta`` scale it per variable group. ``smooth_metric`` holds the
    temporal smoothing constant of the descent metric for stage I and stage II
    (see :func:`temporal_metric`; 0 gives plain gradients). A rejected step is shrunk by
    ``shrink`` up to ``max_backtracks`` times; accepted steps grow by ``grow``.
    ``method`` picks limited-memory quasi-Newton directions (``lbfgs``,
    ``memory`` pairs, Armijo backtracking) or gradient steps (``gd``) whose
    accepted directions carry ``momentum`` into the next iteration; a
    momentum step that fails to decrease the energy restarts from the plain
    gradient. In stage II a projected rollout of the current accelerations is offered
    as a candidate every ``rollout_every`` iterations (0 disables it) and kept
    only when it lowers the energy.
    """

    stage1_iters: int = 200
    stage2_iters: int = 500
    step: float = 1e-3
    step_pose: float = 1.0
    step_trans: float = 1.0
    step_beta: float = 0.1
    shrink: float = 0.5
    grow: float = 1.5
    max_backtracks: int = 20
    rollout_every: int = 25
    rollout_projector: ProjectorConfig = ProjectorConfig(max_iter=2, max_backtracks=4)
    patience: int = 20
    tol: float = 1e-12
    method: str = "lbfgs"
    memory: int = 10
    momentum: float = 0.9
    smooth_metric: tuple = (10.0, 100.0)
    smooth_order: int = 1
    optimize_beta: bool = True
    contact: bool = True

    def __post_init__(self):
        if self.method not in ("lbfgs", "gd"):
            raise ValueError("method must be 'lbfgs' or 'gd'")
        if self.stage1_iters < 0 or self.stage2_iters < 0 or self.step <= 0 or not 0 < self.shrink < 1 or self.grow < 1:
            raise ValueError("invalid fit schedule")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        d["rollout_projector"] = self.rollout_projector.__dict__.copy()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitSchedule":
        known = {f.name for f in dc_fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown schedule keys: {sorted(bad)}")
        d = dict(d)
        if "rollout_projector" in d:
            d["rollout_projector"] = ProjectorConfig(**d["rollout_projector"])
        return cls(**d)


@dataclass
class FitReport:
    energy: dict = field(default_factory=lambda: {"I": [], "II": []})
    status: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)
    rollouts_accepted: int = 0
    contact_fraction: float = 0.0
    beta: Optional[list] = None
    stage1: Optional[MotionSequence] = None

    def to_dict(self) -> dict:
        return {"energy": self.energy, "status": self.status, "terms": self.terms,
                "rollouts_accepted": self.rollouts_accepted, "contact_fraction": self.contact_fraction,
                "beta": self.beta}


def initial_sequence(obs: Observation, skel: Skeleton, fps: Optional[float] = None) -> MotionSequence:
    """Identity poses; the root follows the observed root joint where visible."""
    fps = obs.fps if fps is None else fps
    t = obs.n_frames
    poses = np.broadcast_to(identity_pose(skel.k), (t, skel.k, 3, 3)).copy()
    t_r = np.zeros((t, 3))
    if obs.kind == "joints3d":
        root = skel.order[0]
        vis = obs.mask[:, root]
        if vis.any():
            idx = np.nonzero(vis)[0]
            for a in range(3):
                t_r[:, a] = np.interp(np.arange(t), idx, obs.points[idx, root, a])
    return MotionSequence(poses, fps, t_r=t_r)


def temporal_metric(n: int, c: float, order: int = 1) -> np.ndarray:
    """Inverse of ``I + c (D^T D)^order`` with ``D`` the first-difference
    operator; applied along time it smooths the descent direction."""
    d = np.diff(np.eye(n), axis=0)
    lap = d.T @ d
    return np.linalg.inv(np.eye(n) + c * np.linalg.matrix_power(lap, order))


def observable_bones(obs: Observation, skel: Skeleton) -> np.ndarray:
    """Bones whose two end joints are both visible in at least one frame.
    Point clouds count as observing every bone."""
    if obs.kind == "pointcloud":
        return np.ones(skel.k, dtype=bool)
    m = obs.mask
    out = np.zeros(skel.k, dtype=bool)
    for j in range(skel.k):
        p = skel.parents[j]
        if p >= 0:
            out[j] = bool(np.any(m[:, j] & m[:, p]))
    return out


def _direction_parts(g, sched: FitSchedule, metric=None, bones=None):
    gt, gp, gb = g
    if metric is not None:
        gt = metric @ gt
        gp = np.einsum("ts,skc->tkc", metric, gp)
    gb = sched.step_beta * gb if sched.optimize_beta else np.zeros_like(gb)
    if bones is not None:
        gb = np.where(bones, gb, 0.0)
    return [sched.step_trans * gt, sched.step_pose * gp, gb]


def _direction(res, sched: FitSchedule, prev=None, metric=None, bones=None):
    d = [-x for x in _direction_parts((res.g_t, res.g_pose, res.g_beta), sched, metric, bones)]
    if prev is not None:
        d = [a + sched.momentum * b for a, b in zip(d, prev)]
    return d


def _step(state: OptimizerState, d, s) -> OptimizerState:
    new = state.copy()
    new.t_r = state.t_r + s * d[0]
    new.poses = pose_exp(state.poses, s * d[1])
    new.beta = np.maximum(state.beta + s * d[2], -0.9)
    return new


def forward_dynamics(poses, fps: float):
    """Forward-difference velocities ``(T-1, K, 3)`` and accelerations
    ``(T-2, K, 3)``; the unprojected Euler rollout inverts them exactly."""
    rt = np.swapaxes(poses[:-1], -1, -2)
    vel = so3.log_so3(rt @ poses[1:]) * fps
    return vel, np.diff(vel, axis=0) * fps


def _rollout(state: OptimizerState, fields: Fields, fps: float, proj: ProjectorConfig):
    vel, acc = forward_dynamics(state.poses, fps)
    # the final acceleration only feeds a velocity past the last frame
    acc = np.concatenate([acc, np.zeros_like(acc[:1])])
    cfg = IntegratorConfig(fps=fps, pose=proj, vel=proj)
    seq = integrate(state.poses[0], vel[0], acc, fields, cfg)
    new = state.copy()
    new.poses = seq.poses
    return new


class _Lbfgs:
    """Limited-memory inverse-Hessian estimate over flattened tangent
    coordinates, seeded with a scaled preconditioner."""

    def __init__(self, memory: int, precond):
        self.memory = memory
        self.precond = precond
        self.pairs = []

    def reset(self):
        self.pairs = []

    def update(self, s, y):
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            self.pairs.append((s, y, 1.0 / sy))
            if len(self.pairs) > self.memory:
                self.pairs.pop(0)

    def direction(self, g):
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        r = self.precond(q)
        if self.pairs:
            s, y, _ = self.pairs[-1]
            r *= (s @ y) / max(float(y @ self.precond(y)), 1e-300)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            r += s * (a - rho * (y @ r))
        return -r


def _pack(res) -> np.ndarray:
    return np.concatenate([res.g_t.ravel(), res.g_pose.ravel(), res.g_beta.ravel()])


def _unpack(v, state: OptimizerState):
    nt, npose = state.t_r.size, state.poses.shape[0] * state.poses.shape[1] * 3
    return [v[:nt].reshape(state.t_r.shape), v[nt:nt + npose].reshape(state.poses.shape[:2] + (3,)),
            v[nt + npose:].reshape(state.beta.shape)]


def _run_stage(stage, state, obs, skel, weights, fields, sched: FitSchedule, report: FitReport, fps, contact=None):
    iters = sched.stage1_iters if stage == "I" else sched.stage2_iters
    kw = dict(fps=fps, contact=contact)

    def evaluate(st, grad=True):
        return energy(st, obs, skel, weights, fields, stage, grad=grad, **kw)

    res = evaluate(state)
    trace = report.energy[stage]
    trace.append(res.value)
    s = sched.step
    status = "max_iter"
    rises = 0
    prev = None
    c = sched.smooth_metric[stage == "II"]
    metric = temporal_metric(len(state.poses), c, sched.smooth_order) if c > 0 and len(state.poses) > 1 else None
    # unobserved bone lengths stay at the template
    bones = observable_bones(obs, skel)

    def precond(v):
        d = _direction_parts(_unpack(v, state), sched, metric, bones)
        return np.concatenate([x.ravel() for x in d])

    qn = _Lbfgs(sched.memory, precond) if sched.method == "lbfgs" else None
    for it in range(iters):
        state.iteration = it
        if not np.isfinite(res.value):
            raise DivergenceError(f"stage {stage} energy is not finite", trace)
        accepted = False
        if qn is not None:
            g = _pack(res)
            d = _unpack(qn.direction(g), state)
            slope = float(np.concatenate([x.ravel() for x in d]) @ g)
            if slope >= 0:
                qn.reset()
                d = _unpack(qn.direction(g), state)
                slope = float(np.concatenate([x.ravel() for x in d]) @ g)
            t = 1.0 if qn.pairs else s
            for _ in range(sched.max_backtracks + 1):
                cand = _step(state, d, t)
                cres = evaluate(cand)
                if np.isfinite(cres.value) and cres.value <= res.value + 1e-4 * t * slope:
                    accepted = True
                    break
                t *= sched.shrink
            if not qn.pairs:
                s = t * sched.grow
        else:
            d = _direction(res, sched, prev, metric, bones)
            if prev is not None:
                cand = _step(state, d, s)
                cres = evaluate(cand)
                accepted = bool(np.isfinite(cres.value) and cres.value <= res.value)
            if not accepted:
                # restart from the plain gradient and backtrack
                d = _direction(res, sched, metric=metric, bones=bones)
                for _ in range(sched.max_backtracks + 1):
                    cand = _step(state, d, s)
                    cres = evaluate(cand)
                    if np.isfinite(cres.value) and cres.value <= res.value:
                        accepted = True
                        break
                    s *= sched.shrink
            prev = d if accepted and sched.momentum > 0 else None
        rolled = False
        if stage == "II" and sched.rollout_every and it % sched.rollout_every == 0:
            base = cand if accepted else state
            bres = cres if accepted else res
            roll = _rollout(base, fields, fps, sched.rollout_projector)
            rres = evaluate(roll)
            if np.isfinite(rres.value) and rres.value < bres.value:
                cand, cres, accepted, prev, rolled = roll, rres, True, None, True
                report.rollouts_accepted += 1
        if not accepted:
            rises += 1
            if qn is not None:
                qn.reset()
            if rises >= sched.patience:
                status = "stalled"
                break
            continue
        if cres.value > res.value:
            raise DivergenceError(f"stage {stage} energy increased", trace)
        rises = 0
        gain = res.value - cres.value
        if qn is not None:
            if rolled:
                qn.reset()
            else:
                qn.update(t * np.concatenate([x.ravel() for x in d]), _pack(cres) - _pack(res))
        state, res = cand, cres
        trace.append(res.value)
        if qn is None:
            s *= sched.grow
        if gain <= sched.tol * max(1.0, abs(res.value)):
            status = "converged"
            break
    report.status[stage] = status
    report.terms[stage] = res.terms
    state.stage = stage
    log.info("stage %s: %s after %d iterations, energy %.6g", stage, status, len(trace) - 1, res.value)
    return state


def fit_sequence(obs: Observation, skel: Skeleton, weights: EnergyWeights = EnergyWeights(),
                 fields: Fields = None, schedule: FitSchedule = FitSchedule(),
                 init: Optional[MotionSequence] = None, stages=("I", "II")):
    """Minimize E_I and then E_II over root translations, poses and bone scales.

    Returns the fitted sequence (with rebuilt velocities/accelerations) and a
    :class:`FitReport`; the stage-I result is kept in ``report.stage1``.
    """
    fields = fields or Fields()
    init = initial_sequence(obs, skel) if init is None else init
    if len(init) != obs.n_frames:
        raise ValueError("initial sequence and observations differ in frame count")
    fps = init.fps
    state = OptimizerState.from_sequence(init)
    report = FitReport()
    if "I" in stages:
        state = _run_stage("I", state, obs, skel, weights, fields, schedule, report, fps)
        report.stage1 = state.sequence(fps).with_dynamics() if len(state.poses) >= 3 else state.sequence(fps)
    if "II" in stages:
        contact = None
        if schedule.contact:
            pos = forward_kinematics(skel, state.t_r, state.poses, state.scales(skel))
            contact = contact_heuristic(pos, fps, skel.leaves(), weights.delta, weights.contact_speed)
            report.contact_fraction = float(contact.mean())
        state = _run_stage("II", state, obs, skel, weights, fields, schedule, report, fps, contact)
    report.beta = state.scales(skel).tolist()
    out = state.sequence(fps)
    return (out.with_dynamics() if len(out) >= 3 else out), report


def joint_observation(seq: MotionSequence, skel: Skeleton, mask=None, beta=None) -> Observation:
    """Noise-free 3D joint observations of a motion."""
    return Observation("joints3d", forward_kinematics(skel, seq.t_r, seq.poses, beta), mask, fps=seq.fps)


def generate_motion(seed_pose, fields: Fields, skel: Skeleton, n_frames: int, noise: float = 0.1,
                    seed: int = 0, fps: float = 30.0, weights: EnergyWeights = EnergyWeights(),
                    schedule: FitSchedule = FitSchedule(stage1_iters=0, stage2_iters=100),
                    seed_vel=None, projector: ProjectorConfig = ProjectorConfig(max_iter=10)):
    """Sample noisy transitions from a seed state, denoise them with the
    projected rollout and refine the result against itself as a soft 3D
    observation. ``noise`` scales the random velocities (rad/s) and
    accelerations (rad/s^2)."""
    if n_frames < 3:
        raise ValueError("need at least 3 frames")
    rng = np.random.default_rng(seed)
    k = skel.k
    pose0 = np.asarray(seed_pose, dtype=float)
    vel0 = np.zeros((k, 3)) if seed_vel is None else np.asarray(seed_vel, dtype=float)
    vel0 = vel0 + noise * rng.normal(size=(k, 3))
    # noisy forward rollout, then accelerations estimated from it
    poses = [pose0]
    vel = vel0.copy()
    for _ in range(n_frames - 1):
        vel = vel + noise * rng.normal(size=(k, 3)) / fps
        poses.append(pose_exp(poses[-1], vel / fps))
    poses = np.stack(poses)
    acc = estimate_acceleration(estimate_velocity(poses, fps), fps)
    cfg = IntegratorConfig(fps=fps, pose=projector, vel=projector)
    rolled = integrate(pose0, vel0, acc[:-1], fields, cfg)
    if noise == 0 or schedule.stage1_iters + schedule.stage2_iters == 0:
        return rolled
    obs = joint_observation(rolled, skel)
    out, _ = fit_sequence(obs, skel, weights, fields, schedule, init=rolled)
    return out


def geodesic_infill(poses, observed):
    """Constant-speed per-joint interpolation along the log map between the
    bracketing observed frames; frames outside the observed span are held."""
    poses = np.array(poses, dtype=float)
    observed = np.asarray(observed, dtype=bool)
    idx = np.nonzero(observed)[0]
    if len(idx) < 2:
        raise ValueError("in-betweening needs at least 2 observed frames")
    out = poses.copy()
    out[: idx[0]] = poses[idx[0]]
    out[idx[-1] + 1:] = poses[idx[-1]]
    for a, b in zip(idx[:-1], idx[1:]):
        if b - a < 2:
            continue
        rel = so3.log_so3(np.swapaxes(poses[a], -1, -2) @ poses[b])
        for t in range(a + 1, b):
            out[t] = poses[a] @ so3.exp_so3(rel * ((t - a) / (b - a)))
    return out


def inbetween(keyframes: MotionSequence, observed, skel: Skeleton, weights: EnergyWeights = EnergyWeights(),
              fields: Fields = None, schedule: FitSchedule = FitSchedule(), stages=("I", "II")):
    """Fill unobserved frames of ``keyframes`` (values there are ignored) and
    fit with the observed frames as 3D joint observations."""
    observed = np.asarray(observed, dtype=bool)
    if observed.shape != (len(keyframes),):
        raise ValueError("observed mask must have one entry per frame")
    poses = geodesic_infill(keyframes.poses, observed)
    idx = np.nonzero(observed)[0]
    t_r = np.stack([np.interp(np.arange(len(keyframes)), idx, keyframes.t_r[idx, a]) for a in range(3)], axis=1)
    init = MotionSequence(poses, keyframes.fps, t_r=t_r)
    mask = np.broadcast_to(observed[:, None], (len(keyframes), skel.k))
    obs = Observation("joints3d", forward_kinematics(skel, keyframes.t_r, keyframes.poses), mask.copy(), fps=keyframes.fps)
    return fit_sequence(obs, skel, weights, fields, schedule, init=init, stages=stages)
