"""Stage energies and their analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, fields as dc_fields, replace
from typing import Optional

import numpy as np

from .. import so3
from ..dynamics import Fields
from ..fields.base import axial_grads
from ..kinematics import MotionSequence, Skeleton, estimate_acceleration, estimate_velocity, fk_backward, forward_kinematics
from .losses import _bone_length, _contact, _data_2d, _data_3d, _data_pc, _smooth
from .observations import Observation


@dataclass(frozen=True)
class EnergyWeights:
    """``data`` scales every data term; ``data2d`` and ``datapc`` further scale
    the 2D and point-cloud terms. ``acc`` is the acceleration-prior weight."""

    data: float = 1.0
    data2d: float = 1e-3
    datapc: float = 1.0
    beta: float = 8e-2
    theta: float = 8e-2
    reg: float = 1.0
    smooth: float = 10.0
    bl: float = 1.0
    vel: float = 1.0
    acc: float = 5e-2
    cj: float = 1.0
    cv: float = 1.0
    ch: float = 1.0
    delta: float = 0.05
    contact_speed: float = 0.2
    gm_scale: float = 100.0
    bisquare: float = 0.2

    def __post_init__(self):
        for f in dc_fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"weight {f.name} must be nonnegative")
        if self.gm_scale <= 0 or self.bisquare <= 0:
            raise ValueError("robust scales must be positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyWeights":
        known = {f.name for f in dc_fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown weight keys: {sorted(bad)}")
        return cls(**d)


@dataclass
class OptimizerState:
    """Decision variables. ``beta`` holds per-bone relative scale deviations;
    bone lengths are ``skel.beta * (1 + beta)``."""

    t_r: np.ndarray
    poses: np.ndarray
    beta: np.ndarray
    stage: str = "I"
    iteration: int = 0

    @classmethod
    def from_sequence(cls, seq: MotionSequence, beta=None) -> "OptimizerState":
        b = np.zeros(seq.k) if beta is None else np.asarray(beta, dtype=float)
        return cls(np.array(seq.t_r, dtype=float), np.array(seq.poses, dtype=float), b)

    def scales(self, skel: Skeleton):
        return skel.beta * (1.0 + self.beta)

    def sequence(self, fps: float) -> MotionSequence:
        return MotionSequence(self.poses.copy(), fps, t_r=self.t_r.copy())

    def copy(self) -> "OptimizerState":
        return replace(self, t_r=self.t_r.copy(), poses=self.poses.copy(), beta=self.beta.copy())


@dataclass
class EnergyResult:
    value: float
    terms: dict
    g_t: Optional[np.ndarray] = None
    g_pose: Optional[np.ndarray] = None
    g_beta: Optional[np.ndarray] = None


def velocity_vjp(poses, fps: float, g_vel):
    """Pull a gradient on log-central velocities back to axial pose gradients."""
    poses = np.asarray(poses, dtype=float)
    rt = np.swapaxes(poses, -1, -2)
    out = np.zeros(poses.shape[:2] + (3,))

    def pair(a, b, c, u):
        m = rt[a] @ poses[b]
        jt = np.swapaxes(so3.right_jacobian_inv(so3.log_so3(m)), -1, -2)
        ju = np.einsum("...ij,...j->...i", jt, u) * c
        out[b] += ju
        out[a] -= np.einsum("...ij,...j->...i", m, ju)

    n = len(poses)
    pair(slice(0, n - 2), slice(2, n), fps / 2.0, g_vel[1:-1])
    pair(0, 1, fps, g_vel[0])
    pair(n - 2, n - 1, fps, g_vel[-1])
    return out


def acceleration_vjp(g_acc, fps: float):
    """Transpose of the central acceleration estimator."""
    g = np.zeros_like(g_acc)
    mid = g_acc[1:-1] * (fps / 2.0)
    g[2:] += mid
    g[:-2] -= mid
    g[1] += g_acc[0] * fps
    g[0] -= g_acc[0] * fps
    g[-1] += g_acc[-1] * fps
    g[-2] -= g_acc[-1] * fps
    return g


def _data_terms(pos, obs: Observation, w: EnergyWeights, terms: dict):
    if obs.kind == "joints3d":
        v, g = _data_3d(pos, obs)
        scale = w.data
    elif obs.kind == "joints2d":
        v, g, behind = _data_2d(pos, obs, w.gm_scale)
        terms["behind_camera"] = behind
        scale = w.data * w.data2d
    else:
        v, g = _data_pc(pos, obs, w.bisquare)
        scale = w.data * w.datapc
    terms["data"] = v
    return scale * v, scale * g


def energy(state: OptimizerState, obs: Observation, skel: Skeleton, weights: EnergyWeights,
           fields: Fields, stage: str = "I", fps: float = 30.0, contact=None, contact_joints=None,
           grad: bool = True) -> EnergyResult:
    """E_I = data + beta + pose prior + reg; stage II adds the velocity and
    acceleration priors and (when ``contact`` is given) contact terms.

    The velocity prior skips the first and last frame and the acceleration
    prior the first and last two, whose estimates are one-sided.
    """
    if stage not in ("I", "II"):
        raise ValueError("stage must be 'I' or 'II'")
    w = weights
    if obs.n_frames != len(state.poses):
        raise ValueError("observation frame count does not match the sequence")
    if stage == "II" and (fields.pose is None or fields.vel is None or fields.acc is None):
        raise ValueError("stage II needs pose, velocity and acceleration fields")
    terms = {}
    scales = state.scales(skel)
    pos, glob = forward_kinematics(skel, state.t_r, state.poses, scales, return_globals=True)
    total, gpos = _data_terms(pos, obs, w, terms)
    gaxial = np.zeros(state.poses.shape[:2] + (3,))
    gvel = None

    terms["beta"] = float(np.sum(state.beta**2))
    total += w.beta * terms["beta"]
    gbeta_dev = 2.0 * w.beta * state.beta

    if w.theta > 0 and fields.pose is not None:
        f, g = axial_grads(fields.pose, state.poses)
        terms["pose_prior"] = float(np.sum(f))
        total += w.theta * terms["pose_prior"]
        gaxial += w.theta * g[0]

    if len(pos) >= 2 and w.reg > 0:
        vs, gs = _smooth(pos)
        vb, gb = _bone_length(skel, pos)
        terms["smooth"], terms["bone_length"] = vs, vb
        total += w.reg * (w.smooth * vs + w.bl * vb)
        gpos = gpos + w.reg * (w.smooth * gs + w.bl * gb)

    if stage == "II":
        vel = estimate_velocity(state.poses, fps)
        acc = estimate_acceleration(vel, fps)
        gvel = np.zeros_like(vel)
        # priors only where the central estimators apply
        iv, ia = slice(1, -1), slice(2, -2)
        if w.vel > 0 and len(vel) > 2:
            f, g = axial_grads(fields.vel, vel[iv], [state.poses[iv]])
            terms["vel_prior"] = float(np.sum(f))
            total += w.vel * terms["vel_prior"]
            gvel[iv] += w.vel * g[0]
            gaxial[iv] += w.vel * g[1]
        if w.acc > 0 and len(acc) > 4:
            f, g = axial_grads(fields.acc, acc[ia], [state.poses[ia], vel[ia]])
            terms["acc_prior"] = float(np.sum(f))
            total += w.acc * terms["acc_prior"]
            gaxial[ia] += w.acc * g[1]
            gacc = np.zeros_like(acc)
            gacc[ia] = g[0]
            gvel[ia] += w.acc * g[2]
            gvel += w.acc * acceleration_vjp(gacc, fps)
        if contact is not None:
            joints = skel.leaves() if contact_joints is None else contact_joints
            vc, gpc, gvc = _contact(pos, vel, joints, contact, w.cj, w.cv, w.ch, w.delta)
            terms["contact"] = vc
            total += vc
            gpos = gpos + gpc
            gvel += gvc

    res = EnergyResult(float(total), terms)
    if not grad:
        return res
    g_t, g_ax, g_scale = fk_backward(skel, glob, pos, gpos)
    if gvel is not None:
        gaxial += velocity_vjp(state.poses, fps, gvel)
    res.g_t = g_t
    res.g_pose = g_ax + gaxial
    res.g_beta = g_scale * skel.beta + gbeta_dev
    return res


def energy_stage1(state, obs, skel, weights, fields, fps=30.0, grad=False):
    return energy(state, obs, skel, weights, fields, "I", fps, grad=grad)


def energy_stage2(state, obs, skel, weights, fields, fps=30.0, contact=None, contact_joints=None, grad=False):
    return energy(state, obs, skel, weights, fields, "II", fps, contact, contact_joints, grad=grad)
