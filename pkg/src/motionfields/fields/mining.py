"""Hard-negative mining: samples where a trained field reads low, labeled exactly."""
from __future__ import annotations

import numpy as np

from ..datagen import LabeledSet, MotionCorpus, _vector_scale, nn_distance, perturb_rotations
from ..product import pose_exp
from .base import DistanceField, axial_grads
from .encoding import block_kinds


def concat_labeled(a: LabeledSet, b: LabeledSet) -> LabeledSet:
    if a.kind != b.kind:
        raise ValueError("cannot join labeled sets of different kinds")
    return LabeledSet(a.kind, np.concatenate([a.x, b.x]), [np.concatenate([p, q]) for p, q in zip(a.cond, b.cond)],
                      np.concatenate([a.labels, b.labels]), np.concatenate([a.categories, b.categories]), a.weights)


def descend_inputs(fld: DistanceField, blocks, scales, steps: int = 20, rate: float = 0.5):
    """Per-sample descent of ``fld`` over every input block jointly.

    Each block moves along its gradient measured in units of ``scales``
    (radians for poses, data RMS for vectors) with step length ``rate * f``;
    a step that does not lower ``f`` halves that sample's rate.
    """
    names = block_kinds(fld.kind)
    blocks = [np.array(b, dtype=float, copy=True) for b in blocks]
    n = len(blocks[0])
    rates = np.full(n, rate)
    f, grads = axial_grads(fld, blocks[0], blocks[1:])
    for _ in range(steps):
        scaled = [g * s for g, s in zip(grads, scales)]
        norm = np.sqrt(sum(np.sum(g.reshape(n, -1) ** 2, axis=1) for g in scaled))
        norm = np.maximum(norm, 1e-12)
        length = rates * f / norm
        cand = []
        for name, b, g, s in zip(names, blocks, scaled, scales):
            step = -(length[:, None, None] * s) * g
            cand.append(pose_exp(b, step) if name == "pose" else b + step)
        fc, gc = axial_grads(fld, cand[0], cand[1:])
        ok = fc < f
        for b, c in zip(blocks, cand):
            b[ok] = c[ok]
        for g, c in zip(grads, gc):
            g[ok] = c[ok]
        f = np.where(ok, fc, f)
        rates = np.where(ok, rates, rates * 0.5)
    return blocks, f


def mine_hard_negatives(fld: DistanceField, corpus: MotionCorpus, n: int, seed: int = 0, sigma: float = 0.3,
                        vec_sigma: float = 10.0, steps: int = 20, weights=(1.0, 1.0)) -> LabeledSet:
    """Perturb corpus samples in every block, descend the field over all of
    them and label where it lands with exact NN distances (category ``H``).

    Rotations get half-Gaussian noise of scale ``sigma``; vector noise scales
    are log-uniform between 0.1 and ``vec_sigma`` times the data RMS.
    """
    rng = np.random.default_rng(seed)
    names = block_kinds(fld.kind)
    idx = rng.integers(0, len(corpus), n)
    starts, scales = [], []
    for name in names:
        data = corpus.data(name)[idx]
        if name == "pose":
            starts.append(perturb_rotations(rng, data, sigma))
            scales.append(1.0)
        else:
            sc = _vector_scale(corpus.data(name))
            mag = np.exp(rng.uniform(np.log(0.1), np.log(vec_sigma), size=(n, 1, 1)))
            starts.append(data + mag * sc * rng.normal(size=data.shape))
            scales.append(sc)
    blocks, _ = descend_inputs(fld, starts, scales, steps)
    w = tuple(float(v) for v in weights[: len(names) - 1])
    labels, _ = nn_distance(blocks[0], corpus.data(fld.kind), fld.kind, cond=blocks[1:],
                            cond_data=[corpus.data(nm) for nm in names[1:]], weights=w)
    return LabeledSet(fld.kind, blocks[0], blocks[1:], labels, np.array(["H"] * n), w)
