"""The power manifold SO(3)^K of articulated poses.

A pose is an array of shape ``(..., K, 3, 3)``. Tangent steps are either
body-frame axial vectors ``(..., K, 3)`` or tangent matrices
``(..., K, 3, 3)`` of the form ``R_k @ hat(w_k)``.
"""
from __future__ import annotations

import numpy as np

from . import so3


def _check_k(a: np.ndarray, b: np.ndarray, a_tail: int, b_tail: int) -> None:
    ka = a.shape[-1 - a_tail] if a.ndim > a_tail else None
    kb = b.shape[-1 - b_tail] if b.ndim > b_tail else None
    if ka != kb:
        raise ValueError(f"joint count mismatch: {ka} vs {kb}")


def pose_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """L1 product metric: sum of per-joint geodesic distances."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_k(a, b, 2, 2)
    return np.sum(so3.geodesic_distance(a, b), axis=-1)


def pose_exp(base: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Componentwise exponential map ``R_k @ exp(hat(w_k))``.

    ``step`` may be axial vectors ``(..., K, 3)`` or tangent matrices
    ``(..., K, 3, 3)``.
    """
    base = np.asarray(base, dtype=float)
    step = np.asarray(step, dtype=float)
    if step.shape[-2:] == (3, 3) and step.ndim == base.ndim:
        _check_k(base, step, 2, 2)
        step = so3.tangent_to_axial(base, step)
    else:
        _check_k(base, step, 2, 1)
    return base @ so3.exp_so3(step)


def pose_log(base: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Componentwise logarithm as body-frame axial vectors ``(..., K, 3)``."""
    base = np.asarray(base, dtype=float)
    target = np.asarray(target, dtype=float)
    _check_k(base, target, 2, 2)
    return so3.log_so3(np.swapaxes(base, -1, -2) @ target)


def pose_rgrad(pose: np.ndarray, eg: np.ndarray) -> np.ndarray:
    """Riemannian gradient as the Cartesian product of per-joint projections."""
    pose = np.asarray(pose, dtype=float)
    eg = np.asarray(eg, dtype=float)
    _check_k(pose, eg, 2, 2)
    return so3.egrad2rgrad(pose, eg)


def identity_pose(k: int) -> np.ndarray:
    return np.tile(np.eye(3), (k, 1, 1))
