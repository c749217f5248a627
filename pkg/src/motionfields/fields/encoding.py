"""Flat network inputs for the three fields.

Layout is ``[main, cond...]``: the pose field sees ``q(theta)``; the
transition field ``[theta_dot, q(theta)]``; the acceleration field
``[theta_ddot, q(theta), theta_dot]``. Rotations become canonical unit
quaternions (4 reals per joint), vectors contribute 3 reals per joint.
"""
from __future__ import annotations

import numpy as np

from .. import so3

BLOCKS = {"pose": ("pose",), "vel": ("vel", "pose"), "acc": ("acc", "pose", "vel")}
WIDTH = {"pose": 4, "vel": 3, "acc": 3}


def block_kinds(kind: str) -> tuple:
    if kind not in BLOCKS:
        raise ValueError(f"unknown field kind {kind!r}")
    return BLOCKS[kind]


def input_dim(kind: str, k: int) -> int:
    return sum(WIDTH[b] * k for b in block_kinds(kind))


def encode_inputs(kind: str, x, cond=()) -> np.ndarray:
    """``(N, D)`` encodings; ``x`` and each ``cond`` carry a leading batch axis."""
    arrays = [np.asarray(x, dtype=float)] + [np.asarray(c, dtype=float) for c in cond]
    names = block_kinds(kind)
    if len(arrays) != len(names):
        raise ValueError(f"{kind} field expects {len(names) - 1} conditioning blocks")
    n = len(arrays[0])
    parts = []
    for name, a in zip(names, arrays):
        if len(a) != n:
            raise ValueError("conditioning batch size mismatch")
        if name == "pose":
            parts.append(so3.quat_encode(a).reshape(n, -1))
        else:
            parts.append(a.reshape(n, -1))
    return np.concatenate(parts, axis=1)


def decode_inputs(kind: str, enc: np.ndarray, k: int):
    """Inverse of :func:`encode_inputs`; returns ``(x, cond_list)``."""
    enc = np.asarray(enc, dtype=float)
    out, start = [], 0
    for name in block_kinds(kind):
        width = WIDTH[name] * k
        block = enc[:, start:start + width]
        start += width
        if name == "pose":
            out.append(so3.quat_decode(block.reshape(-1, k, 4)))
        else:
            out.append(block.reshape(-1, k, 3))
    if start != enc.shape[1]:
        raise ValueError("encoding width does not match kind and k")
    return out[0], out[1:]


def pullback(kind: str, arrays, g_enc: np.ndarray) -> list:
    """Chain an encoding-space gradient back to ambient gradients per block.

    Rotation blocks get ``(N, K, 3, 3)`` Euclidean gradients through the
    quaternion Jacobian, vector blocks ``(N, K, 3)``.
    """
    n = len(g_enc)
    out, start = [], 0
    for name, a in zip(block_kinds(kind), arrays):
        k = a.shape[1]
        width = WIDTH[name] * k
        g = g_enc[:, start:start + width]
        start += width
        if name == "pose":
            _, jac = so3.quat_encode_jacobian(a)
            out.append(np.einsum("nki,nkiab->nkab", g.reshape(n, k, 4), jac))
        else:
            out.append(g.reshape(n, k, 3))
    return out
