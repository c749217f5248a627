"""Ready-made settings for the toy chain: corpus, label sampling, training and fitting."""
from __future__ import annotations

import logging
from dataclasses import replace

from .datagen import MotionCorpus, sample_negatives, synth_corpus, toy_spec
from .dynamics import Fields
from .fields import TrainConfig, train_field
from .fields.mining import concat_labeled, mine_hard_negatives
from .kinematics import toy_chain
from .optim import EnergyWeights

log = logging.getLogger(__name__)

# Plain SGD at 1e-3 does not pick up the conditioning inputs within a small
# budget; a larger clipped step on narrower layers does.
TOY_TRAIN = TrainConfig(widths=(128, 128, 64), lr=3e-2, epochs=60, batch_size=16, clip=1.0)
TOY_SAMPLES = 20000
TOY_MINING = dict(rounds=3, samples=4000, epochs=20)
# the velocity prior at weight 1 swamps the data term at toy scale
TOY_WEIGHTS = EnergyWeights(vel=0.1, acc=0.01)


def toy_corpus(k: int = 5, n_sequences: int = 20, seed: int = 0):
    """``(skeleton, train corpus, held-out corpus)`` of the swinging chain."""
    train, heldout = synth_corpus(toy_spec(k, seed=seed), n_sequences)
    return toy_chain(k), train, heldout


def train_one(corpus: MotionCorpus, kind: str, n_samples: int = TOY_SAMPLES, seed: int = 0,
              cfg: TrainConfig = TOY_TRAIN, rounds: int = TOY_MINING["rounds"],
              mine_samples: int = TOY_MINING["samples"], mine_epochs: int = TOY_MINING["epochs"]):
    """Train a field on sampled negatives, then refine it with ``rounds`` of
    hard-negative mining. Returns ``(field, [TrainReport per pass])``."""
    labeled = sample_negatives(corpus, n_samples, kind, seed=seed)
    fld, rep = train_field(labeled, replace(cfg, seed=cfg.seed + seed))
    reports = [rep]
    for r in range(rounds):
        hard = mine_hard_negatives(fld, corpus, mine_samples, seed=seed + 1000 * (r + 1))
        log.info("%s mining round %d: field %.3g vs exact %.3g", kind, r, float(fld(hard.x, hard.cond).mean()),
                 float(hard.labels.mean()))
        labeled = concat_labeled(labeled, hard)
        fld, rep = train_field(labeled, replace(cfg, seed=cfg.seed + seed + r + 1, epochs=mine_epochs), init=fld)
        reports.append(rep)
    return fld, reports


def train_fields(corpus: MotionCorpus, n_samples: int = TOY_SAMPLES, seed: int = 0,
                 cfg: TrainConfig = TOY_TRAIN, kinds=("pose", "vel", "acc"), rounds: int = TOY_MINING["rounds"]):
    """One field per kind; returns ``(Fields, {kind: [TrainReport, ...]})``."""
    out, reports = {}, {}
    for i, kind in enumerate(kinds):
        out[kind], reports[kind] = train_one(corpus, kind, n_samples, seed + 101 * (i + 1), cfg, rounds)
    return Fields(out.get("pose"), out.get("vel"), out.get("acc")), reports
