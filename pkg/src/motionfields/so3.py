"""Single-rotation geometry on SO(3).

All functions broadcast over leading axes: axial vectors are ``(..., 3)``,
rotations and tangent matrices are ``(..., 3, 3)``, quaternions are
``(..., 4)`` in ``(w, x, y, z)`` order.
"""
from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-6
SKEW_TOL = 1e-6


def hat(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix: ``hat(w) @ h == np.cross(w, h)``."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def _vee(m: np.ndarray) -> np.ndarray:
    # no skew check; reads the lower triangle after antisymmetrizing
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hat`.

    Raises:
        ValueError: if the symmetric part of any input exceeds ``SKEW_TOL``
            in Frobenius norm.
    """
    m = np.asarray(m, dtype=float)
    sym = 0.5 * (m + np.swapaxes(m, -1, -2))
    if np.any(np.linalg.norm(sym, axis=(-2, -1)) > SKEW_TOL):
        raise ValueError("vee: input is not skew-symmetric")
    return _vee(m)


def skew_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a - np.swapaxes(a, -1, -2))


def sym_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, with a second-order series below ``SMALL_ANGLE``."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    W = hat(w)
    W2 = W @ W
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a[..., None, None] * W + b[..., None, None] * W2


def rotation_angle(r: np.ndarray) -> np.ndarray:
    """Angle in ``[0, pi]`` of a rotation, computed with atan2 so that the
    identity maps to exactly zero."""
    r = np.asarray(r, dtype=float)
    c = np.clip(0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0), -1.0, 1.0)
    s = np.linalg.norm(_vee(r), axis=-1)
    return np.arctan2(s, c)


def log_so3(r: np.ndarray) -> np.ndarray:
    """Axial vector of a rotation, norm in ``[0, pi]``.

    Near ``theta = pi`` the skew part vanishes, so the axis is read off the
    symmetric part ``(r + r^T)/2 = cos(theta) I + (1 - cos(theta)) a a^T``.
    """
    r = np.asarray(r, dtype=float)
    shape = r.shape[:-2]
    r = r.reshape(-1, 3, 3)
    v = _vee(r)
    s = np.linalg.norm(v, axis=-1)
    c = np.clip(0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0), -1.0, 1.0)
    theta = np.arctan2(s, c)

    small = theta < SMALL_ANGLE
    near_pi = (s < SMALL_ANGLE) & (c < 0.0)
    safe_s = np.where(small | near_pi, 1.0, s)
    out = np.where(small[..., None], v, (theta / safe_s)[..., None] * v)

    if np.any(near_pi):
        idx = np.nonzero(near_pi)
        rp = r[idx]
        cp = c[idx]
        aat = (sym_part(rp) - cp[:, None, None] * np.eye(3)) / (1.0 - cp)[:, None, None]
        diag = np.diagonal(aat, axis1=-2, axis2=-1)
        col = np.argmax(diag, axis=-1)
        axis = aat[np.arange(len(col)), :, col]
        axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
        # keep the sign consistent with whatever skew part survives
        flip = np.einsum("ni,ni->n", axis, v[idx]) < 0.0
        axis[flip] *= -1.0
        out[idx] = theta[idx][:, None] * axis
    return out.reshape(shape + (3,))


def geodesic_distance(r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Rotation angle of ``r1^T r2`` in radians."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    return rotation_angle(np.swapaxes(r1, -1, -2) @ r2)


def egrad2rgrad(r: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Project an ambient gradient onto the tangent space at ``r``:
    ``r @ skew_part(r^T g)``."""
    r = np.asarray(r, dtype=float)
    g = np.asarray(g, dtype=float)
    return r @ skew_part(np.swapaxes(r, -1, -2) @ g)


def tangent_to_axial(r: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Body-frame axial vector of the tangent matrix ``xi = r @ hat(w)``."""
    return _vee(np.swapaxes(r, -1, -2) @ xi)


def rgrad_axial(r: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. a body-frame perturbation ``r @ exp(hat(d))`` at
    ``d = 0``, given the ambient gradient ``g``.

    Equals ``2 * vee(skew_part(r^T g))``; its norm is the Riemannian
    gradient norm under the metric where geodesic length is the rotation
    angle.
    """
    return 2.0 * _vee(np.swapaxes(r, -1, -2) @ g)


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian: ``log(exp(phi) exp(d)) ~ phi + Jr^-1(phi) d``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    P = hat(phi)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    coef = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    return np.eye(3) + 0.5 * P + coef[..., None, None] * (P @ P)


# ---------------------------------------------------------------- quaternions


def _canonicalize(q: np.ndarray) -> np.ndarray:
    shape = np.shape(q)
    q = np.array(q, dtype=float, copy=True).reshape(-1, 4)
    sign = np.sign(q[..., 0])
    tie = np.abs(q[..., 0]) < 1e-12
    if np.any(tie):
        sub = q[tie]
        first = np.argmax(np.abs(sub[:, 1:]) > 1e-12, axis=-1) + 1
        sign[tie] = np.sign(sub[np.arange(len(sub)), first])
    sign[sign == 0] = 1.0
    q = q * sign[..., None]
    q[..., 0] = np.where(tie, np.abs(q[..., 0]), q[..., 0])
    return q.reshape(shape)


# Shepperd branches: (diag signs for s^2, position of s/4, [(pos, i, j, k, l, sgn)])
# where each remaining component is (R[i, j] + sgn * R[k, l]) / s.
_BRANCHES = (
    ((1, 1, 1), 0, ((1, 2, 1, 1, 2, -1), (2, 0, 2, 2, 0, -1), (3, 1, 0, 0, 1, -1))),
    ((1, -1, -1), 1, ((0, 2, 1, 1, 2, -1), (2, 0, 1, 1, 0, 1), (3, 0, 2, 2, 0, 1))),
    ((-1, 1, -1), 2, ((0, 0, 2, 2, 0, -1), (1, 0, 1, 1, 0, 1), (3, 1, 2, 2, 1, 1))),
    ((-1, -1, 1), 3, ((0, 1, 0, 0, 1, -1), (1, 0, 2, 2, 0, 1), (2, 1, 2, 2, 1, 1))),
)


def _branch_index(r: np.ndarray) -> np.ndarray:
    d = np.diagonal(r, axis1=-2, axis2=-1)
    keys = np.concatenate([np.trace(r, axis1=-2, axis2=-1)[..., None], d], axis=-1)
    return np.argmax(keys, axis=-1)


def quat_encode(r: np.ndarray) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` of a rotation, canonicalized to
    ``w >= 0`` (ties broken by the first nonzero component positive)."""
    r = np.asarray(r, dtype=float)
    q, _ = _quat_and_jacobian(r, with_jacobian=False)
    return _canonicalize(q)


def _quat_and_jacobian(r: np.ndarray, with_jacobian: bool):
    shape = r.shape[:-2]
    flat = r.reshape(-1, 3, 3)
    n = flat.shape[0]
    q = np.zeros((n, 4))
    jac = np.zeros((n, 4, 3, 3)) if with_jacobian else None
    branch = _branch_index(flat)
    for b, (dsign, spos, rest) in enumerate(_BRANCHES):
        sel = np.nonzero(branch == b)[0]
        if sel.size == 0:
            continue
        m = flat[sel]
        u = 1.0 + sum(dsign[i] * m[:, i, i] for i in range(3))
        s = 2.0 * np.sqrt(np.maximum(u, 1e-300))
        q[sel, spos] = 0.25 * s
        for pos, i, j, k, l, sg in rest:
            q[sel, pos] = (m[:, i, j] + sg * m[:, k, l]) / s
        if with_jacobian:
            ds = np.zeros((sel.size, 3, 3))
            for i in range(3):
                ds[:, i, i] = 2.0 * dsign[i] / s
            jac[sel, spos] = 0.25 * ds
            for pos, i, j, k, l, sg in rest:
                num = m[:, i, j] + sg * m[:, k, l]
                dn = np.zeros((sel.size, 3, 3))
                dn[:, i, j] = 1.0
                dn[:, k, l] = sg
                jac[sel, pos] = dn / s[:, None, None] - (num / s**2)[:, None, None] * ds
    q = q.reshape(shape + (4,))
    if with_jacobian:
        jac = jac.reshape(shape + (4, 3, 3))
    return q, jac


def quat_encode_jacobian(r: np.ndarray):
    """Canonical quaternion and its Jacobian ``d q / d r`` of shape
    ``(..., 4, 3, 3)``, differentiating the branch selected at ``r``."""
    r = np.asarray(r, dtype=float)
    q, jac = _quat_and_jacobian(r, with_jacobian=True)
    qc = _canonicalize(q)
    sign = np.sign(np.sum(qc * q, axis=-1))
    return qc, jac * sign[..., None, None, None]


def quat_decode(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (normalized) quaternion ``(w, x, y, z)``."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def random_rotations(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform rotations from normalized Gaussian 4-vectors."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    return quat_decode(rng.normal(size=shape + (4,)))


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (3, 3) or not np.all(np.isfinite(r)):
        return False
    eye = np.swapaxes(r, -1, -2) @ r - np.eye(3)
    return bool(np.all(np.abs(eye) <= tol) and np.all(np.abs(np.linalg.det(r) - 1.0) <= tol))
