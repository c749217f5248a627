"""Data terms, regularizers and contact terms.

Each private ``_term`` works on joint positions ``(T, K, 3)`` and returns the
value together with its gradient w.r.t. those positions; the public wrappers
take a sequence and a skeleton.
"""
from __future__ import annotations

import numpy as np

from ..kinematics import MotionSequence, Skeleton, estimate_velocity, forward_kinematics
from .observations import Observation, PinholeCamera

GM_SCALE = 100.0
BISQUARE_CUTOFF = 0.2


def positions(seq: MotionSequence, skel: Skeleton, beta=None):
    return forward_kinematics(skel, seq.t_r, seq.poses, beta)


def _expect(obs: Observation, kind: str, n_frames: int):
    if obs.kind != kind:
        raise ValueError(f"expected {kind} observations, got {obs.kind}")
    if obs.n_frames != n_frames:
        raise ValueError("observation frame count does not match the sequence")


def _data_3d(pos, obs: Observation):
    r = (pos - obs.points) * obs.mask[..., None]
    return float(np.sum(r * r)), 2.0 * r


def geman_mcclure(r2, c: float = GM_SCALE):
    """rho = r^2 / (r^2 + c^2) on squared residual norms."""
    return r2 / (r2 + c * c)


def _data_2d(pos, obs: Observation, c: float = GM_SCALE):
    cam = obs.camera
    pc = cam.to_camera(pos)
    z = pc[..., 2]
    front = z > 1e-6
    zs = np.where(front, z, 1.0)
    u = cam.fx * pc[..., 0] / zs + cam.cx
    v = cam.fy * pc[..., 1] / zs + cam.cy
    ru, rv = u - obs.points[..., 0], v - obs.points[..., 1]
    r2 = ru * ru + rv * rv
    w = obs.conf * obs.mask * front
    val = float(np.sum(w * geman_mcclure(r2, c)))
    drho = w * c * c / (r2 + c * c) ** 2  # d rho / d r2
    gu, gv = 2.0 * drho * ru, 2.0 * drho * rv
    gpc = np.stack([gu * cam.fx / zs, gv * cam.fy / zs,
                    -(gu * cam.fx * pc[..., 0] + gv * cam.fy * pc[..., 1]) / zs**2], axis=-1)
    return val, gpc @ cam.rotation, int(np.sum(obs.mask & ~front))


def bisquare_weight(r, c: float = BISQUARE_CUTOFF):
    u = (np.asarray(r) / c) ** 2
    return np.where(u < 1.0, (1.0 - u) ** 2, 0.0)


def _data_pc(pos, obs: Observation, c: float = BISQUARE_CUTOFF):
    """Sum of ``w(r) r^2`` with ``r`` the distance from each observed point to
    its nearest joint; the weight is differentiated along with the residual."""
    val = 0.0
    grad = np.zeros_like(pos)
    for t, cloud in enumerate(obs.points):
        if len(cloud) == 0:
            continue
        diff = cloud[:, None, :] - pos[t][None]  # (M, K, 3)
        d2 = np.sum(diff * diff, axis=-1)
        nn = np.argmin(d2, axis=1)
        r2 = d2[np.arange(len(cloud)), nn]
        u = r2 / (c * c)
        inside = u < 1.0
        val += float(np.sum(np.where(inside, (1.0 - u) ** 2 * r2, 0.0)))
        coef = np.where(inside, 2.0 * (1.0 - u) * (1.0 - 3.0 * u), 0.0)
        # d/dJ of g(r) with J - o = -diff
        np.add.at(grad[t], nn, -coef[:, None] * diff[np.arange(len(cloud)), nn])
    return val, grad


def _bones(skel: Skeleton, pos):
    p = skel.parents
    child = np.array([j for j in range(skel.k) if p[j] >= 0], dtype=int)
    vec = pos[:, child] - pos[:, p[child]]
    return child, vec


def _smooth(pos):
    d = pos[1:] - pos[:-1]
    g = np.zeros_like(pos)
    g[1:] += 2.0 * d
    g[:-1] -= 2.0 * d
    return float(np.sum(d * d)), g


def _bone_length(skel: Skeleton, pos):
    child, vec = _bones(skel, pos)
    length = np.linalg.norm(vec, axis=-1)
    dl = length[1:] - length[:-1]
    gl = np.zeros_like(length)
    gl[1:] += 2.0 * dl
    gl[:-1] -= 2.0 * dl
    gvec = gl[..., None] * vec / np.maximum(length, 1e-12)[..., None]
    g = np.zeros_like(pos)
    g[:, child] += gvec
    np.add.at(g, (slice(None), skel.parents[child]), -gvec)
    return float(np.sum(dl * dl)), g


def contact_heuristic(pos, fps: float, joints, height: float = 0.05, speed: float = 0.2):
    """Contact labels ``(T, len(joints))``: 1 where a joint is within ``height``
    of the floor (z = 0) and moves slower than ``speed`` m/s, else 0."""
    p = pos[:, list(joints)]
    v = np.zeros(p.shape[:2])
    if len(p) > 1:
        sp = np.linalg.norm(np.diff(p, axis=0), axis=-1) * fps
        v[1:] = sp
        v[0] = sp[0]
    return ((np.abs(p[..., 2]) < height) & (v < speed)).astype(float)


def _contact(pos, vel, joints, probs, cj=1.0, cv=1.0, ch=1.0, delta=0.05):
    """Returns value, position gradient and body-velocity gradient."""
    joints = list(joints)
    c = np.asarray(probs, dtype=float)
    gpos = np.zeros_like(pos)
    gvel = np.zeros_like(vel)
    p = pos[:, joints]
    d = p[1:] - p[:-1]
    w = cj * c[1:, :, None]
    val = float(np.sum(w * d * d))
    gj = np.zeros_like(p)
    gj[1:] += 2.0 * w * d
    gj[:-1] -= 2.0 * w * d
    om = vel[:, joints]
    val += float(np.sum(cv * c[..., None] * om * om))
    gvel[:, joints] = 2.0 * cv * c[..., None] * om
    z = p[..., 2]
    excess = np.abs(z) - delta
    val += float(np.sum(ch * c * np.maximum(excess, 0.0)))
    gj[..., 2] += ch * c * (excess > 0) * np.sign(z)
    gpos[:, joints] = gj
    return val, gpos, gvel


def loss_data_3d(seq: MotionSequence, obs: Observation, skel: Skeleton, beta=None) -> float:
    pos = positions(seq, skel, beta)
    _expect(obs, "joints3d", len(pos))
    return _data_3d(pos, obs)[0]


def loss_data_2d(seq: MotionSequence, obs: Observation, skel: Skeleton, camera: PinholeCamera = None,
                 beta=None, scale: float = GM_SCALE) -> float:
    pos = positions(seq, skel, beta)
    _expect(obs, "joints2d", len(pos))
    if camera is not None:
        obs = Observation("joints2d", obs.points, obs.mask, obs.conf, camera, obs.fps)
    return _data_2d(pos, obs, scale)[0]


def loss_data_pc(seq: MotionSequence, obs: Observation, skel: Skeleton, beta=None,
                 cutoff: float = BISQUARE_CUTOFF) -> float:
    pos = positions(seq, skel, beta)
    _expect(obs, "pointcloud", len(pos))
    return _data_pc(pos, obs, cutoff)[0]


def loss_reg(seq: MotionSequence, skel: Skeleton, smooth: float = 1.0, bl: float = 1.0, beta=None) -> float:
    pos = positions(seq, skel, beta)
    if len(pos) < 2:
        raise ValueError("regularizer needs at least 2 frames")
    return smooth * _smooth(pos)[0] + bl * _bone_length(skel, pos)[0]


def loss_contact(seq: MotionSequence, skel: Skeleton, contact_probs, joints=None,
                 cj=1.0, cv=1.0, ch=1.0, delta=0.05, beta=None) -> float:
    joints = skel.leaves() if joints is None else joints
    pos = positions(seq, skel, beta)
    vel = estimate_velocity(seq.poses, seq.fps)
    return _contact(pos, vel, joints, contact_probs, cj, cv, ch, delta)[0]
