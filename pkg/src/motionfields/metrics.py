"""Evaluation metrics: MPJPE, per-joint geodesic error and acceleration error."""
from __future__ import annotations

import numpy as np

from . import so3
from .kinematics import MotionSequence, Skeleton, estimate_acceleration, estimate_velocity, forward_kinematics


def mpjpe(pred_pos, ref_pos, mask=None) -> float:
    """Mean per-joint position error in millimetres (positions in metres)."""
    err = np.linalg.norm(np.asarray(pred_pos) - np.asarray(ref_pos), axis=-1)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return 0.0
        return float(err[mask].mean() * 1000.0)
    return float(err.mean() * 1000.0)


def joint_geodesic_error(pred_poses, ref_poses) -> np.ndarray:
    """Mean rotation angle between predicted and reference joints, per joint (rad)."""
    d = so3.geodesic_distance(np.asarray(pred_poses), np.asarray(ref_poses))
    return d.reshape(-1, d.shape[-1]).mean(axis=0)


def acceleration_error(pred_poses, ref_poses, fps: float) -> float:
    """Mean norm of the angular-acceleration difference (rad/s^2)."""
    ap = estimate_acceleration(estimate_velocity(pred_poses, fps), fps)
    ar = estimate_acceleration(estimate_velocity(ref_poses, fps), fps)
    return float(np.linalg.norm(ap - ar, axis=-1).mean())


def motion_metrics(pred: MotionSequence, ref: MotionSequence, skel: Skeleton, mask=None, beta=None) -> dict:
    if len(pred) != len(ref) or pred.k != ref.k:
        raise ValueError("predicted and reference motions differ in shape")
    pp = forward_kinematics(skel, pred.t_r, pred.poses, beta)
    pr = forward_kinematics(skel, ref.t_r, ref.poses)
    out = {
        "mpjpe_mm": mpjpe(pp, pr),
        "joint_geodesic_rad": joint_geodesic_error(pred.poses, ref.poses).tolist(),
        "acc_error": acceleration_error(pred.poses, ref.poses, ref.fps) if len(ref) >= 3 else 0.0,
    }
    if mask is not None:
        out["mpjpe_hidden_mm"] = mpjpe(pp, pr, ~np.asarray(mask, dtype=bool))
    return out
