"""Fitting a network field to nearest-neighbour distance labels."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..datagen import LabeledSet
from .base import MlpField
from .encoding import encode_inputs, input_dim
from .mlp import Mlp


@dataclass
class TrainConfig:
    widths: tuple = (256, 256, 128)
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    heldout_fraction: float = 0.1
    decay: str = "cosine"  # or "none"
    clip: float = 0.0  # global gradient-norm cap, 0 disables

    def validate(self):
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("invalid training hyperparameters")
        if self.decay not in ("cosine", "none"):
            raise ValueError(f"unknown decay {self.decay!r}")


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    train_l1: float = float("nan")
    heldout_l1: float = float("nan")
    heldout_pearson: float = float("nan")
    n_train: int = 0
    n_heldout: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    return float(np.sum(a * b) / den) if den > 0 else float("nan")


def train_field(labeled: LabeledSet, cfg: TrainConfig = None, heldout: LabeledSet = None,
                init: MlpField = None):
    """SGD with momentum on the mean L1 error between prediction and label.

    Without an explicit ``heldout`` set a seeded fraction of ``labeled`` is
    held out. ``init`` continues from an existing field (its network and
    normalization are copied, ``cfg.widths`` is ignored). Returns
    ``(MlpField, TrainReport)``.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if len(labeled) == 0:
        raise ValueError("empty labeled set")
    rng = np.random.default_rng(cfg.seed)
    if heldout is None and cfg.heldout_fraction > 0 and len(labeled) > 1:
        perm = rng.permutation(len(labeled))
        n_held = max(1, int(round(cfg.heldout_fraction * len(labeled))))
        heldout = labeled.subset(np.sort(perm[:n_held]))
        labeled = labeled.subset(np.sort(perm[n_held:]))

    k = labeled.x.shape[1]
    enc = encode_inputs(labeled.kind, labeled.x, labeled.cond)
    y = np.asarray(labeled.labels, dtype=float)
    if init is not None:
        if init.kind != labeled.kind or init.k != k:
            raise ValueError("initial field does not match the labeled set")
        net = init.net.copy()
        fld = MlpField(net, init.kind, k, init.shift.copy(), init.scale.copy(), init.out_scale)
        out_scale = fld.out_scale
    else:
        # robust statistics: the fully random samples would otherwise dominate
        shift = np.median(enc, axis=0)
        scale = np.maximum(1.4826 * np.median(np.abs(enc - shift), axis=0), 1e-3)
        out_scale = float(np.median(y)) if np.median(y) > 0 else (float(y.mean()) if y.mean() > 0 else 1.0)
        net = Mlp.init((input_dim(labeled.kind, k),) + tuple(cfg.widths) + (1,), rng)
        net.biases[-1][:] = np.log(np.expm1(1.0))
        fld = MlpField(net, labeled.kind, k, shift, scale, out_scale)
    z = fld.normalize(enc)

    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    n = len(y)
    steps_per_epoch = int(np.ceil(n / cfg.batch_size))
    total = cfg.epochs * steps_per_epoch
    report = TrainReport(n_train=n, n_heldout=len(heldout) if heldout is not None else 0)
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            bi = perm[s:s + cfg.batch_size]
            zs, hs = net.forward_cache(z[bi])
            pred = out_scale * hs[-1][:, 0]
            err = pred - y[bi]
            losses.append(np.abs(err).sum())
            up = out_scale * np.sign(err) / len(bi)
            _, gw, gb = net.backward(zs, hs, up)
            if cfg.clip > 0:
                gnorm = np.sqrt(sum(np.sum(a * a) for a in gw + gb))
                if gnorm > cfg.clip:
                    gw = [a * (cfg.clip / gnorm) for a in gw]
                    gb = [a * (cfg.clip / gnorm) for a in gb]
            lr = cfg.lr * (0.5 * (1 + np.cos(np.pi * step / total)) if cfg.decay == "cosine" else 1.0)
            for i in range(len(net.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - lr * gw[i]
                vel_b[i] = cfg.momentum * vel_b[i] - lr * gb[i]
                net.weights[i] += vel_w[i]
                net.biases[i] += vel_b[i]
            step += 1
        report.epoch_loss.append(float(np.sum(losses) / n))

    report.train_l1 = float(np.mean(np.abs(fld.net.forward(z) * out_scale - y)))
    if heldout is not None and len(heldout):
        pred = fld(heldout.x, heldout.cond)
        report.heldout_l1 = float(np.mean(np.abs(pred - heldout.labels)))
        report.heldout_pearson = pearson(pred, heldout.labels)
    return fld, report
