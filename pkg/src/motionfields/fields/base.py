"""Distance fields over poses, velocities and accelerations.

Every field maps a batch of main inputs plus conditioning blocks to
nonnegative distances and returns ambient gradients for each block:
``(N, K, 3, 3)`` for rotations, ``(N, K, 3)`` for vectors.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import so3
from ..datagen import MotionCorpus, nn_distance
from ..product import pose_rgrad
from .encoding import block_kinds, encode_inputs, input_dim, pullback
from .mlp import Mlp

MODEL_VERSION = 1
COND_TAGS = {"pose": "none", "vel": "pose", "acc": "pose+vel"}


def _batch(kind, x, cond):
    x = np.asarray(x, dtype=float)
    single = x.ndim == (3 if kind == "pose" else 2)
    if single:
        x = x[None]
        cond = [np.asarray(c, dtype=float)[None] for c in cond]
    else:
        cond = [np.asarray(c, dtype=float) for c in cond]
    if len(cond) != len(block_kinds(kind)) - 1:
        raise ValueError(f"{kind} field expects {len(block_kinds(kind)) - 1} conditioning blocks")
    return x, cond, single


class DistanceField:
    kind = "pose"
    k = 0

    def _values(self, x, cond):
        raise NotImplementedError

    def _values_and_grads(self, x, cond):
        raise NotImplementedError

    def __call__(self, x, cond=()):
        x, cond, single = _batch(self.kind, x, cond)
        v = self._values(x, cond)
        return v[0] if single else v

    value = __call__

    def value_and_grads(self, x, cond=()):
        """Values and the list of ambient gradients ``[main, cond...]``."""
        x, cond, single = _batch(self.kind, x, cond)
        v, grads = self._values_and_grads(x, cond)
        if single:
            return v[0], [g[0] for g in grads]
        return v, grads


def axial_grads(field: DistanceField, x, cond=()):
    """Like ``value_and_grads`` but rotation blocks come back as body-frame
    axial gradients ``(..., K, 3)``."""
    v, grads = field.value_and_grads(x, cond)
    arrays = [x] + list(cond)
    out = []
    for name, a, g in zip(block_kinds(field.kind), arrays, grads):
        out.append(so3.rgrad_axial(np.asarray(a, dtype=float), g) if name == "pose" else g)
    return v, out


def field_rgrad_pose(field: DistanceField, pose) -> np.ndarray:
    """Riemannian gradient of a pose field as per-joint tangent matrices."""
    if field.kind != "pose":
        raise ValueError("field_rgrad_pose needs a pose field")
    _, grads = field.value_and_grads(pose)
    return pose_rgrad(np.asarray(pose, dtype=float), grads[0])


class MlpField(DistanceField):
    """Network on normalized encodings: ``out_scale * net((e - shift) / scale)``."""

    def __init__(self, net: Mlp, kind: str, k: int, shift=None, scale=None, out_scale: float = 1.0):
        block_kinds(kind)
        d = input_dim(kind, k)
        if net.input_dim != d:
            raise ValueError(f"network input {net.input_dim} does not match {kind} encoding ({d})")
        self.net, self.kind, self.k = net, kind, int(k)
        self.shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
        self.scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float)
        self.out_scale = float(out_scale)

    def normalize(self, enc):
        return (enc - self.shift) / self.scale

    def _values(self, x, cond):
        return self.out_scale * self.net.forward(self.normalize(encode_inputs(self.kind, x, cond)))

    def _values_and_grads(self, x, cond):
        z = self.normalize(encode_inputs(self.kind, x, cond))
        zs, hs = self.net.forward_cache(z)
        g, _, _ = self.net.backward(zs, hs, np.ones(len(z)), want_weights=False)
        g_enc = self.out_scale * g / self.scale
        return self.out_scale * hs[-1][:, 0], pullback(self.kind, [x] + list(cond), g_enc)

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "field": self.kind,
            "k": self.k,
            "encoding": "quat-wpos" if self.kind == "pose" else "axial",
            "conditioning": COND_TAGS[self.kind],
            "input_shift": self.shift.tolist(),
            "input_scale": self.scale.tolist(),
            "output_scale": self.out_scale,
            "network": self.net.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpField":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        if d.get("conditioning") != COND_TAGS.get(d.get("field")):
            raise ValueError("conditioning tag does not match field kind")
        return cls(Mlp.from_dict(d["network"]), d["field"], d["k"], d["input_shift"], d["input_scale"], d["output_scale"])


def save_field(path, field: MlpField) -> None:
    Path(path).write_text(json.dumps(field.to_dict()))


def load_field(path) -> MlpField:
    try:
        d = json.loads(Path(path).read_text())
        return MlpField.from_dict(d)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"cannot read model {path}: {exc}") from exc


class IdentityField(DistanceField):
    """Exact L1 geodesic distance to the identity pose."""

    kind = "pose"

    def __init__(self, k: int):
        self.k = int(k)

    def _values(self, x, cond):
        return np.sum(so3.rotation_angle(x), axis=-1)

    def _values_and_grads(self, x, cond):
        phi = so3.log_so3(x)
        th = np.linalg.norm(phi, axis=-1, keepdims=True)
        u = np.divide(phi, th, out=np.zeros_like(phi), where=th > 0)
        # any ambient lift whose tangential part has axial gradient u
        return np.sum(so3.rotation_angle(x), axis=-1), [0.5 * x @ so3.hat(u)]


class ZeroField(DistanceField):
    """Euclidean norm of the full ``3K`` vector: distance to the origin."""

    def __init__(self, kind: str, k: int):
        if kind not in ("vel", "acc"):
            raise ValueError("ZeroField is for velocities or accelerations")
        self.kind, self.k = kind, int(k)

    def _values(self, x, cond):
        return np.linalg.norm(x.reshape(len(x), -1), axis=1)

    def _values_and_grads(self, x, cond):
        v = self._values(x, cond)
        g = np.divide(x, v[:, None, None], out=np.zeros_like(x), where=v[:, None, None] > 0)
        return v, [g] + [np.zeros_like(c) for c in cond]


class CorpusField(DistanceField):
    """Exact (conditional) nearest-neighbour distance to a motion corpus."""

    def __init__(self, corpus: MotionCorpus, kind: str = "pose", weights=(1.0, 1.0)):
        if len(corpus) == 0:
            raise ValueError("empty corpus")
        self.corpus, self.kind, self.k = corpus, kind, corpus.k
        self.names = block_kinds(kind)
        self.weights = (1.0,) + tuple(float(w) for w in weights[: len(self.names) - 1])

    def _query(self, x, cond):
        data = [self.corpus.data(n) for n in self.names]
        return nn_distance(x, data[0], self.kind, cond=cond, cond_data=data[1:], weights=self.weights[1:])

    def _values(self, x, cond):
        return self._query(x, cond)[0]

    def _values_and_grads(self, x, cond):
        d, idx = self._query(x, cond)
        grads = []
        for name, a, w in zip(self.names, [x] + list(cond), self.weights):
            ref = self.corpus.data(name)[idx]
            if name == "pose":
                phi = so3.log_so3(np.swapaxes(a, -1, -2) @ ref)
                th = np.linalg.norm(phi, axis=-1, keepdims=True)
                u = -np.divide(phi, th, out=np.zeros_like(phi), where=th > 0)
                grads.append(w * 0.5 * a @ so3.hat(u))
            else:
                diff = a - ref
                nrm = np.linalg.norm(diff, axis=-1, keepdims=True)
                grads.append(w * np.divide(diff, nrm, out=np.zeros_like(diff), where=nrm > 0))
        return d, grads


def analytic_identity_field(k: int) -> IdentityField:
    return IdentityField(k)


def analytic_corpus_field(corpus: MotionCorpus, kind: str = "pose", weights=(1.0, 1.0)) -> CorpusField:
    return CorpusField(corpus, kind, weights)

