"""Motion states, finite-difference dynamics, forward kinematics, motion files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import so3

DEFAULT_FPS = 30.0
QUAT_UNIT_TOL = 1e-6

VELOCITY_SCHEMES = ("log-central", "matrix-central")
ACCELERATION_SCHEMES = ("central", "log-transport")


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree with rest-pose bone offsets.

    ``offsets[k]`` is the bone from ``parents[k]`` to joint ``k`` expressed in
    the parent's frame; ``beta[k]`` scales it. The root entries are unused.
    """

    parents: np.ndarray
    offsets: np.ndarray
    beta: np.ndarray = None

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=int)
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1, 3)
        k = len(parents)
        beta = np.ones(k) if self.beta is None else np.asarray(self.beta, dtype=float)
        if k < 1 or offsets.shape != (k, 3) or beta.shape != (k,):
            raise ValueError("skeleton arrays must all have K entries")
        if parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        if np.any(parents[1:] < 0) or np.any(parents >= k):
            raise ValueError("non-root joints need a valid parent index")
        if np.any(beta <= 0):
            raise ValueError("bone scales must be positive")
        if k > 1 and np.any(np.linalg.norm(offsets[1:], axis=1) == 0):
            raise ValueError("non-root offsets must be nonzero")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "_order", _topological_order(parents))

    @property
    def k(self) -> int:
        return len(self.parents)

    @property
    def order(self) -> tuple:
        return self._order

    def children(self, j: int) -> list:
        return [int(c) for c in np.nonzero(self.parents == j)[0]]

    def leaves(self) -> list:
        return [j for j in range(self.k) if not self.children(j)]

    def to_dict(self) -> dict:
        return {
            "parents": self.parents.tolist(),
            "offsets": self.offsets.tolist(),
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls(np.asarray(d["parents"]), np.asarray(d["offsets"]), np.asarray(d.get("beta")) if d.get("beta") is not None else None)


def _topological_order(parents: np.ndarray) -> tuple:
    k = len(parents)
    order, seen = [], set()
    for j in range(k):
        chain = []
        node = j
        while node != -1 and node not in seen:
            if node in chain:
                raise ValueError("cyclic parent array")
            chain.append(node)
            node = int(parents[node])
        for n in reversed(chain):
            seen.add(n)
            order.append(n)
    return tuple(order)


def toy_chain(k: int = 5, bone: float = 1.0, direction=(0.0, 0.0, -1.0)) -> Skeleton:
    """Serial chain hanging along ``direction`` with equal bone lengths."""
    d = np.asarray(direction, dtype=float)
    offsets = np.zeros((k, 3))
    offsets[1:] = bone * d / np.linalg.norm(d)
    return Skeleton(np.arange(k) - 1, offsets)


@dataclass(frozen=True)
class MotionState:
    t_r: np.ndarray
    pose: np.ndarray
    vel: np.ndarray
    acc: np.ndarray


@dataclass(frozen=True)
class MotionSequence:
    """Per-frame root translation ``(T, 3)``, poses ``(T, K, 3, 3)`` and
    body-frame velocities/accelerations ``(T, K, 3)``."""

    poses: np.ndarray
    fps: float = DEFAULT_FPS
    t_r: Optional[np.ndarray] = None
    vel: Optional[np.ndarray] = None
    acc: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=float)
        if poses.ndim != 4 or poses.shape[-2:] != (3, 3) or len(poses) < 1:
            raise ValueError("poses must have shape (T, K, 3, 3) with T >= 1")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        t = len(poses)
        t_r = np.zeros((t, 3)) if self.t_r is None else np.asarray(self.t_r, dtype=float)
        if t_r.shape != (t, 3):
            raise ValueError("t_r must have shape (T, 3)")
        for name in ("vel", "acc"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != poses.shape[:2] + (3,):
                    raise ValueError(f"{name} must have shape (T, K, 3)")
                object.__setattr__(self, name, v)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "t_r", t_r)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def k(self) -> int:
        return self.poses.shape[1]

    def state(self, t: int) -> MotionState:
        zeros = np.zeros((self.k, 3))
        return MotionState(
            self.t_r[t],
            self.poses[t],
            self.vel[t] if self.vel is not None else zeros,
            self.acc[t] if self.acc is not None else zeros,
        )

    def with_dynamics(self) -> "MotionSequence":
        return rebuild_states(self.poses, self.fps, t_r=self.t_r, meta=self.meta)


# ------------------------------------------------------------------ dynamics


def estimate_velocity(poses: np.ndarray, fps: float, scheme: str = "log-central") -> np.ndarray:
    """Body-frame angular velocities ``(T, K, 3)`` in rad/s.

    Interior frames use central differences; the two endpoints use
    one-sided first-order differences.
    """
    poses = np.asarray(poses, dtype=float)
    if len(poses) < 3:
        raise ValueError("velocity estimation needs at least 3 frames")
    if scheme not in VELOCITY_SCHEMES:
        raise ValueError(f"unknown velocity scheme {scheme!r}")
    rt = np.swapaxes(poses, -1, -2)
    out = np.empty(poses.shape[:2] + (3,))
    if scheme == "log-central":
        out[1:-1] = so3.log_so3(rt[:-2] @ poses[2:]) * (fps / 2.0)
        out[0] = so3.log_so3(rt[0] @ poses[1]) * fps
        out[-1] = so3.log_so3(rt[-2] @ poses[-1]) * fps
    else:
        out[1:-1] = so3._vee(rt[1:-1] @ (poses[2:] - poses[:-2])) * (fps / 2.0)
        out[0] = so3._vee(rt[0] @ (poses[1] - poses[0])) * fps
        out[-1] = so3._vee(rt[-1] @ (poses[-1] - poses[-2])) * fps
    return out


def estimate_acceleration(
    vel: np.ndarray, fps: float, scheme: str = "central", poses: Optional[np.ndarray] = None
) -> np.ndarray:
    """Angular accelerations ``(T, K, 3)`` in rad/s^2.

    ``log-transport`` moves the neighbouring body-frame velocities into the
    frame of the centre rotation (``R_t^T R_{t+-1} w_{t+-1}``) before
    differencing and therefore needs ``poses``.
    """
    vel = np.asarray(vel, dtype=float)
    if len(vel) < 3:
        raise ValueError("acceleration estimation needs at least 3 frames")
    if scheme not in ACCELERATION_SCHEMES:
        raise ValueError(f"unknown acceleration scheme {scheme!r}")
    out = np.empty_like(vel)
    if scheme == "central":
        out[1:-1] = (vel[2:] - vel[:-2]) * (fps / 2.0)
        out[0] = (vel[1] - vel[0]) * fps
        out[-1] = (vel[-1] - vel[-2]) * fps
        return out
    if poses is None:
        raise ValueError("log-transport needs the poses")
    poses = np.asarray(poses, dtype=float)
    rt = np.swapaxes(poses, -1, -2)

    def moved(src, dst):
        return np.einsum("...ij,...j->...i", rt[dst] @ poses[src], vel[src])

    idx = np.arange(len(vel))
    out[1:-1] = (moved(idx[2:], idx[1:-1]) - moved(idx[:-2], idx[1:-1])) * (fps / 2.0)
    out[0] = (moved(1, 0) - vel[0]) * fps
    out[-1] = (vel[-1] - moved(-2, -1)) * fps
    return out


def rebuild_states(poses, fps: float = DEFAULT_FPS, t_r=None, meta=None) -> MotionSequence:
    """Sequence with velocities (log-central) and accelerations (central)
    filled in from the poses."""
    vel = estimate_velocity(poses, fps, "log-central")
    acc = estimate_acceleration(vel, fps, "central")
    return MotionSequence(poses, fps, t_r=t_r, vel=vel, acc=acc, meta=dict(meta or {}))


# ---------------------------------------------------------------- kinematics


def forward_kinematics(skel: Skeleton, t_r, pose, beta=None, return_globals: bool = False):
    """Joint positions ``(..., K, 3)`` of ``pose`` (``(..., K, 3, 3)``).

    ``p_root = t_r`` and ``p_k = p_parent + G_parent @ (beta_k * offset_k)``
    with ``G`` the accumulated global rotations.
    """
    pose = np.asarray(pose, dtype=float)
    t_r = np.asarray(t_r, dtype=float)
    beta = skel.beta if beta is None else np.asarray(beta, dtype=float)
    if pose.shape[-3] != skel.k:
        raise ValueError("pose joint count does not match skeleton")
    lead = pose.shape[:-3]
    glob = np.empty(pose.shape)
    pos = np.empty(lead + (skel.k, 3))
    bones = beta[:, None] * skel.offsets
    for j in skel.order:
        p = skel.parents[j]
        if p < 0:
            glob[..., j, :, :] = pose[..., j, :, :]
            pos[..., j, :] = np.broadcast_to(t_r, lead + (3,))
        else:
            glob[..., j, :, :] = glob[..., p, :, :] @ pose[..., j, :, :]
            pos[..., j, :] = pos[..., p, :] + glob[..., p, :, :] @ bones[j]
    if return_globals:
        return pos, glob
    return pos


def fk_backward(skel: Skeleton, glob: np.ndarray, pos: np.ndarray, grad_pos: np.ndarray):
    """Reverse pass of :func:`forward_kinematics`.

    Returns gradients w.r.t. the root translation ``(..., 3)``, body-frame
    joint perturbations ``R_k exp(hat(d_k))`` as ``(..., K, 3)``, and the
    bone scales ``(K,)`` (summed over leading axes).
    """
    sub_g = np.array(grad_pos, dtype=float, copy=True)
    sub_c = np.cross(pos, grad_pos)
    for j in reversed(skel.order):
        p = skel.parents[j]
        if p >= 0:
            sub_g[..., p, :] += sub_g[..., j, :]
            sub_c[..., p, :] += sub_c[..., j, :]
    # sum over strict descendants of (p_d - p_j) x g_d, in world frame
    moment = sub_c - np.cross(pos, sub_g)
    g_axial = np.einsum("...kji,...kj->...ki", glob, moment)
    root = skel.order[0]
    g_t = sub_g[..., root, :]
    g_beta = np.zeros(skel.k)
    for j in range(skel.k):
        p = skel.parents[j]
        if p >= 0:
            bone_dir = glob[..., p, :, :] @ skel.offsets[j]
            g_beta[j] = np.sum(bone_dir * sub_g[..., j, :])
    return g_t, g_axial, g_beta


def bone_lengths(skel: Skeleton, positions: np.ndarray) -> np.ndarray:
    """Parent-child segment lengths ``(..., K-1)`` for joints ``1..K-1``."""
    positions = np.asarray(positions, dtype=float)
    idx = np.arange(1, skel.k)
    return np.linalg.norm(positions[..., idx, :] - positions[..., skel.parents[idx], :], axis=-1)


def canonicalize(seq: MotionSequence, root: int = 0) -> MotionSequence:
    """Apply the inverse of frame 0's root transform to every frame."""
    r0t = seq.poses[0, root].T
    poses = seq.poses.copy()
    poses[:, root] = r0t @ seq.poses[:, root]
    t_r = (seq.t_r - seq.t_r[0]) @ r0t.T
    return replace(seq, poses=poses, t_r=t_r)


# ---------------------------------------------------------------- file format


def _quats_to_matrices(quats: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(quats, axis=-1)
    if np.any(np.abs(norms - 1.0) > QUAT_UNIT_TOL):
        raise ValueError("motion file contains non-unit quaternions")
    return so3.quat_decode(quats)


def motion_to_dict(seq: MotionSequence, skel: Optional[Skeleton] = None) -> dict:
    quats = so3.quat_encode(seq.poses)
    frames = []
    for t in range(len(seq)):
        fr = {"t_r": seq.t_r[t].tolist(), "quats": quats[t].tolist()}
        if seq.vel is not None:
            fr["vel"] = seq.vel[t].tolist()
        if seq.acc is not None:
            fr["acc"] = seq.acc[t].tolist()
        frames.append(fr)
    out = {"fps": seq.fps, "k": seq.k}
    if skel is not None:
        out["skeleton"] = skel.to_dict()
    out["frames"] = frames
    return out


def motion_from_dict(d: dict):
    try:
        fps = float(d["fps"])
        k = int(d["k"])
        frames = d["frames"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed motion file: {exc}") from exc
    if not frames:
        raise ValueError("motion file has no frames")
    quats = np.asarray([f["quats"] for f in frames], dtype=float)
    if quats.shape[1:] != (k, 4):
        raise ValueError("quaternion block does not match k")
    t_r = np.asarray([f.get("t_r", [0.0, 0.0, 0.0]) for f in frames], dtype=float)
    vel = np.asarray([f["vel"] for f in frames], dtype=float) if all("vel" in f for f in frames) else None
    acc = np.asarray([f["acc"] for f in frames], dtype=float) if all("acc" in f for f in frames) else None
    skel = Skeleton.from_dict(d["skeleton"]) if d.get("skeleton") else None
    if skel is not None and skel.k != k:
        raise ValueError("skeleton joint count does not match k")
    seq = MotionSequence(_quats_to_matrices(quats), fps, t_r=t_r, vel=vel, acc=acc)
    return seq, skel


def write_motion(path, seq: MotionSequence, skel: Optional[Skeleton] = None) -> None:
    Path(path).write_text(json.dumps(motion_to_dict(seq, skel)))


def read_motion(path):
    """Returns ``(MotionSequence, Skeleton or None)``."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed motion file {path}: {exc}") from exc
    return motion_from_dict(d)
