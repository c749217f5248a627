"""Synthetic motion corpora, exact nearest-neighbour labels and negative sampling."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import so3
from .kinematics import MotionSequence, rebuild_states, write_motion, read_motion

KINDS = ("pose", "vel", "acc")
DEFAULT_RATIOS = (0.6, 0.3, 0.1)
CATEGORIES = ("A", "B", "C")


@dataclass(frozen=True)
class SynthMotionSpec:
    """Per-joint sinusoidal rotation about a fixed axis.

    ``phi_k(t) = a_k sin(2 pi f_k t + psi_k + psi_seq)`` where each sequence
    draws a global phase ``psi_seq`` plus common amplitude/frequency jitter
    factors ``1 + U(-jitter, jitter)``.
    """

    axes: tuple
    amplitudes: tuple
    frequencies: tuple
    phases: tuple
    limits: tuple
    n_frames: int = 150
    fps: float = 30.0
    seed: int = 0
    amp_jitter: float = 0.1
    freq_jitter: float = 0.1
    clip: float = 0.8
    heldout: float = 0.1

    def validate(self) -> None:
        axes = np.asarray(self.axes, dtype=float)
        k = len(axes)
        for name in ("amplitudes", "frequencies", "phases", "limits"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} must have one entry per joint")
        if axes.shape != (k, 3) or np.any(np.abs(np.linalg.norm(axes, axis=1) - 1) > 1e-9):
            raise ValueError("axes must be unit 3-vectors")
        amp = np.asarray(self.amplitudes) * (1 + self.amp_jitter)
        if np.any(np.asarray(self.amplitudes) < 0) or np.any(amp > np.asarray(self.limits) + 1e-12):
            raise ValueError("amplitudes (with jitter) must lie within joint limits")
        freq = np.asarray(self.frequencies) * (1 + self.freq_jitter)
        if np.any(np.asarray(self.frequencies) < 0) or np.any(freq >= self.fps / 4):
            raise ValueError("frequencies must stay below fps/4")
        if not 0 < self.clip <= 1 or not 0 <= self.heldout < 1:
            raise ValueError("clip must be in (0, 1] and heldout in [0, 1)")
        if self.n_frames * self.clip < 3:
            raise ValueError("clipped sequences need at least 3 frames")
        if self.amp_jitter < 0 or self.freq_jitter < 0:
            raise ValueError("jitter must be nonnegative")

    @property
    def k(self) -> int:
        return len(self.axes)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {key: (np.asarray(v).tolist() if isinstance(v, (tuple, list, np.ndarray)) else v) for key, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthMotionSpec":
        d = dict(d)
        for key in ("axes", "amplitudes", "frequencies", "phases", "limits"):
            d[key] = tuple(map(lambda v: tuple(v) if isinstance(v, list) else v, d[key]))
        return cls(**d)


def toy_spec(k: int = 5, seed: int = 0, **overrides) -> SynthMotionSpec:
    """Slow in-phase swinging chain; axes are perpendicular to a chain hanging along -z.

    All joints share frequency and phase, so the poses of the corpus lie on a
    thin arc in SO(3)^K and every joint angle determines the others.
    """
    axes = [(1.0, 0.0, 0.0) if j % 2 == 0 else (0.0, 1.0, 0.0) for j in range(k)]
    amps = [0.2 if j == 0 else 0.15 for j in range(k)]
    params = dict(
        axes=tuple(axes),
        amplitudes=tuple(amps),
        frequencies=tuple([0.25] * k),
        phases=tuple([0.0] * k),
        limits=tuple([1.0] * k),
        seed=seed,
    )
    params.update(overrides)
    spec = SynthMotionSpec(**params)
    spec.validate()
    return spec


@dataclass
class MotionCorpus:
    """Frames pooled from clipped sequences: D_theta, its velocities and accelerations."""

    poses: np.ndarray
    vels: np.ndarray
    accs: np.ndarray
    seq_ids: np.ndarray
    sequences: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def k(self) -> int:
        return self.poses.shape[1]

    @classmethod
    def from_sequences(cls, sequences, meta=None) -> "MotionCorpus":
        if not sequences:
            raise ValueError("corpus needs at least one sequence")
        seqs = [s if s.vel is not None and s.acc is not None else s.with_dynamics() for s in sequences]
        return cls(
            np.concatenate([s.poses for s in seqs]),
            np.concatenate([s.vel for s in seqs]),
            np.concatenate([s.acc for s in seqs]),
            np.concatenate([np.full(len(s), i) for i, s in enumerate(seqs)]),
            list(seqs),
            dict(meta or {}),
        )

    def data(self, kind: str) -> np.ndarray:
        return {"pose": self.poses, "vel": self.vels, "acc": self.accs}[kind]


def _synth_sequence(spec: SynthMotionSpec, rng: np.random.Generator) -> MotionSequence:
    axes = np.asarray(spec.axes, dtype=float)
    amp = np.asarray(spec.amplitudes) * (1 + rng.uniform(-spec.amp_jitter, spec.amp_jitter))
    freq = np.asarray(spec.frequencies) * (1 + rng.uniform(-spec.freq_jitter, spec.freq_jitter))
    offset = rng.uniform(0, 2 * np.pi)
    t = np.arange(spec.n_frames)[:, None] / spec.fps
    phi = amp * np.sin(2 * np.pi * freq * t + np.asarray(spec.phases) + offset)
    full = rebuild_states(so3.exp_so3(phi[..., None] * axes), spec.fps)
    # derivatives come from the full sequence, so the kept middle part has no boundary stencils
    n_keep = int(round(spec.n_frames * spec.clip))
    lo = (spec.n_frames - n_keep) // 2
    sl = slice(lo, lo + n_keep)
    return MotionSequence(full.poses[sl], spec.fps, t_r=full.t_r[sl], vel=full.vel[sl], acc=full.acc[sl])


def synth_corpus(spec: SynthMotionSpec, n_sequences: int):
    """Returns ``(train, heldout)`` corpora split by sequence."""
    spec.validate()
    if n_sequences < 1:
        raise ValueError("need at least one sequence")
    rng = np.random.default_rng(spec.seed)
    seqs = [_synth_sequence(spec, rng) for _ in range(n_sequences)]
    n_held = int(round(n_sequences * spec.heldout))
    if n_sequences > 1:
        n_held = min(max(n_held, 1 if spec.heldout > 0 else 0), n_sequences - 1)
    else:
        n_held = 0
    meta = {"generator": "sinusoid", "spec": spec.to_dict(), "n_sequences": n_sequences}
    train = MotionCorpus.from_sequences(seqs[: n_sequences - n_held], dict(meta, split="train"))
    held = MotionCorpus.from_sequences(seqs[n_sequences - n_held:], dict(meta, split="heldout")) if n_held else None
    return train, held


# ---------------------------------------------------------- nearest neighbours


def _rot_features(r: np.ndarray):
    """Bilinear features so that rotation-angle pieces become matrix products.

    For ``M = A^T B``: ``tr(M) = <vec A, vec B>`` and each component of the
    skew part is ``<u_i(A), w_i(B)> / 2``.
    """
    # r: (N, K, 3, 3); columns a_j = r[..., :, j]
    c = [r[..., :, j] for j in range(3)]
    vec = r.reshape(r.shape[:-2] + (9,))
    u = [np.concatenate([c[2], -c[1]], -1), np.concatenate([c[0], -c[2]], -1), np.concatenate([c[1], -c[0]], -1)]
    w = [np.concatenate([c[1], c[2]], -1), np.concatenate([c[2], c[0]], -1), np.concatenate([c[0], c[1]], -1)]
    return vec, u, w


def _pose_dist_matrix(q: np.ndarray, d: np.ndarray, d_feats=None) -> np.ndarray:
    """``(Q, N)`` L1 geodesic distances between pose batches."""
    qv, qu, _ = _rot_features(q)
    dv, _, dw = d_feats if d_feats is not None else _rot_features(d)
    out = np.zeros((len(q), len(d)))
    for k in range(q.shape[1]):
        tr = qv[:, k] @ dv[:, k].T
        s2 = sum((qu[i][:, k] @ dw[i][:, k].T) ** 2 for i in range(3)) * 0.25
        out += np.arctan2(np.sqrt(s2), np.clip((tr - 1) / 2, -1, 1))
    return out


def _vec_dist_matrix(q: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``(Q, N)`` sums of per-joint Euclidean distances."""
    return np.linalg.norm(q[:, None] - d[None], axis=-1).sum(-1)


def _dist_matrix(kind: str, q, d, d_feats=None):
    if kind == "pose":
        return _pose_dist_matrix(q, d, d_feats)
    return _vec_dist_matrix(q, d)


def _chunk_size(n_data: int, k: int) -> int:
    return int(max(1, min(4096, 4e6 // max(1, n_data * k))))


def pointwise_distance(kind: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance between matched batches under the metric of ``kind``."""
    if kind == "pose":
        return np.sum(so3.geodesic_distance(a, b), axis=-1)
    return np.linalg.norm(a - b, axis=-1).sum(-1)


def nn_distance(query, dataset, metric: str = "pose", cond=None, cond_data=None, weights=None,
                two_stage: bool = False, k_prime: int = 1000):
    """Exact nearest-neighbour distance and index of each query.

    ``metric`` is ``pose`` (L1 sum of geodesic distances), ``vel`` or ``acc``
    (L1 sum of per-joint Euclidean distances). Conditioning blocks add
    ``weights[i] * d_i(cond[i], cond_data[i])`` to the distance; conditioning
    kinds are inferred from array rank (rotations vs vectors).

    A single unbatched query returns scalars.
    """
    if metric not in KINDS:
        raise ValueError(f"unknown metric {metric!r}")
    dataset = np.asarray(dataset, dtype=float)
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    query = np.asarray(query, dtype=float)
    single = query.ndim == dataset.ndim - 1
    if single:
        query = query[None]
        cond = [np.asarray(c)[None] for c in cond] if cond is not None else None
    cond = [np.asarray(c, dtype=float) for c in (cond or [])]
    cond_data = [np.asarray(c, dtype=float) for c in (cond_data or [])]
    if len(cond) != len(cond_data):
        raise ValueError("conditioning queries and data must pair up")
    weights = list(weights) if weights is not None else [1.0] * len(cond)
    blocks = [(metric, query, dataset, 1.0)]
    for c, cd, w in zip(cond, cond_data, weights):
        blocks.append(("pose" if cd.ndim == 4 else "vel", c, cd, float(w)))
    feats = [(_rot_features(b[2]) if b[0] == "pose" else None) for b in blocks]

    n = len(dataset)
    dist = np.empty(len(query))
    idx = np.empty(len(query), dtype=int)
    step = _chunk_size(n, dataset.shape[1] * len(blocks))
    if two_stage and k_prime < n:
        coarse_q = _coarse_encoding(blocks, which="query")
        coarse_d = _coarse_encoding(blocks, which="data")
        for s in range(0, len(query), step):
            e = slice(s, s + step)
            d2 = (np.sum(coarse_q[e] ** 2, 1)[:, None] - 2 * coarse_q[e] @ coarse_d.T + np.sum(coarse_d**2, 1)[None])
            short = np.argpartition(d2, k_prime - 1, axis=1)[:, :k_prime]
            for row, cand in zip(range(e.start, min(e.stop, len(query))), short):
                cand = np.sort(cand)
                tot = sum(w * pointwise_distance(kind, np.broadcast_to(q[row], d[cand].shape), d[cand])
                          for kind, q, d, w in blocks)
                j = int(np.argmin(tot))
                dist[row], idx[row] = tot[j], cand[j]
    else:
        for s in range(0, len(query), step):
            e = slice(s, s + step)
            tot = sum(w * _dist_matrix(kind, q[e], d, f) for (kind, q, d, w), f in zip(blocks, feats))
            j = np.argmin(tot, axis=1)
            idx[e] = j
            dist[e] = tot[np.arange(len(j)), j]
    if single:
        return float(dist[0]), int(idx[0])
    return dist, idx


def _coarse_encoding(blocks, which: str) -> np.ndarray:
    parts = []
    for kind, q, d, w in blocks:
        x = q if which == "query" else d
        if kind == "pose":
            x = so3.quat_encode(x)
        parts.append(w * x.reshape(len(x), -1))
    return np.concatenate(parts, axis=1)


# --------------------------------------------------------------- negatives


@dataclass
class LabeledSet:
    """Training samples for one field with exact NN labels.

    ``x`` holds the main input (poses ``(N, K, 3, 3)`` or vectors
    ``(N, K, 3)``); ``cond`` the conditioning blocks in order
    ``[pose]`` or ``[pose, vel]``.
    """

    kind: str
    x: np.ndarray
    cond: list
    labels: np.ndarray
    categories: np.ndarray
    weights: tuple = ()

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.kind, self.x[idx], [c[idx] for c in self.cond], self.labels[idx], self.categories[idx], self.weights)


def category_counts(n: int, ratios=DEFAULT_RATIOS) -> tuple:
    ratios = np.asarray(ratios, dtype=float)
    if len(ratios) != 3 or np.any(ratios < 0) or abs(ratios.sum() - 1) > 1e-9:
        raise ValueError("ratios must be three nonnegative numbers summing to 1")
    if n < 1:
        raise ValueError("n must be at least 1")
    counts = np.floor(ratios * n + 1e-9).astype(int)
    # hand out remainders to the largest fractional parts, earliest first
    rem = n - counts.sum()
    order = np.argsort(-(ratios * n - counts), kind="stable")
    counts[order[:rem]] += 1
    return tuple(int(c) for c in counts)


def perturb_rotations(rng, poses: np.ndarray, sigma: float) -> np.ndarray:
    """Right-multiply each joint by a rotation of angle ``|N(0, sigma)|`` about a uniform axis."""
    axis = rng.normal(size=poses.shape[:-2] + (3,))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.abs(rng.normal(0.0, sigma, size=poses.shape[:-2] + (1,))) if sigma > 0 else np.zeros(poses.shape[:-2] + (1,))
    return poses @ so3.exp_so3(angle * axis)


def random_poses(rng, n: int, k: int) -> np.ndarray:
    q = rng.normal(size=(n, k, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return so3.quat_decode(q)


def _vector_scale(data: np.ndarray) -> float:
    s = float(np.sqrt(np.mean(data**2)))
    return s if s > 0 else 1.0


def _perturb_vectors(rng, x: np.ndarray, sigma: float, scale: float) -> np.ndarray:
    mag = np.abs(rng.normal(0.0, sigma, size=(len(x),) + (1,) * (x.ndim - 1)))
    return x + mag * scale * rng.normal(size=x.shape)


def sample_negatives(corpus: MotionCorpus, n: int, kind: str = "pose", ratios=DEFAULT_RATIOS,
                     sigma: float = 0.25, seed: int = 0, cond_weights=(1.0, 1.0), random_scale: float = 30.0,
                     cond_sigma: Optional[float] = 0.05,
                     two_stage: bool = False, k_prime: int = 1000) -> LabeledSet:
    """Labeled training samples for the field of ``kind``.

    A: a corpus element perturbed with half-Gaussian magnitudes (rotations
    for poses, additive noise scaled by the data RMS for vectors);
    B: random swaps (for poses every joint comes from its own random frame,
    for conditional fields the main input and the conditioning come from
    different frames); C: uniform random rotations or Gaussian vectors whose
    scale is log-uniform between 0.1 and ``random_scale`` times the data RMS. Conditioning blocks of category A
    get the smaller noise ``cond_sigma`` (``None`` reuses ``sigma``). Labels
    are exact NN distances.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    n_a, n_b, n_c = category_counts(n, ratios)
    rng = np.random.default_rng(seed)
    k = corpus.k
    blocks = {"pose": [], "vel": ["pose"], "acc": ["pose", "vel"]}[kind]
    names = [kind] + blocks
    scales = {nm: _vector_scale(corpus.data(nm)) for nm in ("vel", "acc")}

    def draw(name, idx):
        return corpus.data(name)[idx]

    def noisy(name, x, sig):
        if name == "pose":
            return perturb_rotations(rng, x, sig)
        return _perturb_vectors(rng, x, sig, scales[name])

    def fully_random(name, m):
        if name == "pose":
            return random_poses(rng, m, k)
        # log-uniform magnitudes so far out-of-range dynamics are labeled too
        mag = np.exp(rng.uniform(np.log(0.1), np.log(random_scale), size=(m, 1, 1)))
        return mag * scales[name] * rng.normal(size=(m, k, 3))

    parts = {nm: [] for nm in names}
    ia = rng.integers(0, len(corpus), n_a)
    for nm in names:
        parts[nm].append(noisy(nm, draw(nm, ia), sigma if nm == kind or cond_sigma is None else cond_sigma))
    if kind == "pose":
        # each joint from its own random frame
        ib = rng.integers(0, len(corpus), (n_b, k))
        parts[kind].append(corpus.poses[ib, np.arange(k)])
    else:
        parts[kind].append(draw(kind, rng.integers(0, len(corpus), n_b)))
    if blocks:
        ib2 = rng.integers(0, len(corpus), n_b)
        for nm in blocks:
            parts[nm].append(draw(nm, ib2))
    for nm in names:
        parts[nm].append(fully_random(nm, n_c))
    arrays = {nm: np.concatenate(parts[nm]) for nm in names}
    cats = np.array(["A"] * n_a + ["B"] * n_b + ["C"] * n_c)

    weights = tuple(float(w) for w in cond_weights[: len(blocks)])
    labels, _ = nn_distance(
        arrays[kind], corpus.data(kind), kind,
        cond=[arrays[nm] for nm in blocks], cond_data=[corpus.data(nm) for nm in blocks],
        weights=weights, two_stage=two_stage, k_prime=k_prime,
    )
    return LabeledSet(kind, arrays[kind], [arrays[nm] for nm in blocks], labels, cats, weights)


def corpus_distance(corpus: MotionCorpus, kind: str, x, cond=(), weights=(1.0, 1.0)):
    """Exact conditional NN distance of samples of ``kind`` to the corpus."""
    blocks = {"pose": [], "vel": ["pose"], "acc": ["pose", "vel"]}[kind]
    return nn_distance(x, corpus.data(kind), kind, cond=list(cond), cond_data=[corpus.data(nm) for nm in blocks],
                       weights=tuple(weights)[: len(blocks)])[0]


# --------------------------------------------------------------------- files


def write_corpus(out_dir, train: MotionCorpus, heldout: Optional[MotionCorpus], skel=None) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    manifest = {"version": 1, "meta": train.meta, "train": [], "heldout": []}
    for split, corp in (("train", train), ("heldout", heldout)):
        if corp is None:
            continue
        for i, seq in enumerate(corp.sequences):
            name = f"{split}_{i:04d}.json"
            write_motion(out / name, seq, skel)
            manifest[split].append(name)
            written.append(out / name)
    (out / "corpus.json").write_text(json.dumps(manifest, sort_keys=True))
    written.append(out / "corpus.json")
    return written


def read_corpus(path):
    """Read a corpus manifest (or its directory); returns ``(train, heldout, skeleton)``."""
    path = Path(path)
    if path.is_dir():
        path = path / "corpus.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read corpus {path}: {exc}") from exc
    skel = None
    out = []
    for split in ("train", "heldout"):
        seqs = []
        for name in manifest.get(split, []):
            seq, sk = read_motion(path.parent / name)
            skel = skel or sk
            seqs.append(seq)
        out.append(MotionCorpus.from_sequences(seqs, dict(manifest.get("meta", {}), split=split)) if seqs else None)
    if out[0] is None:
        raise ValueError("corpus has no training sequences")
    return out[0], out[1], skel


def write_labels(path, labels: LabeledSet) -> None:
    """Sidecar labels file: JSON array of ``{encoding, distance, category}``."""
    from .fields.encoding import encode_inputs

    enc = encode_inputs(labels.kind, labels.x, labels.cond)
    rows = [{"encoding": e.tolist(), "distance": float(d), "category": str(c)}
            for e, d, c in zip(enc, labels.labels, labels.categories)]
    Path(path).write_text(json.dumps({"kind": labels.kind, "k": int(labels.x.shape[1]),
                                      "weights": list(labels.weights), "samples": rows}))


def read_labels(path) -> LabeledSet:
    from .fields.encoding import decode_inputs

    try:
        d = json.loads(Path(path).read_text())
        kind, k, rows = d["kind"], int(d["k"]), d["samples"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ValueError(f"cannot read labels {path}: {exc}") from exc
    enc = np.asarray([r["encoding"] for r in rows], dtype=float)
    x, cond = decode_inputs(kind, enc, k)
    return LabeledSet(kind, x, cond, np.asarray([r["distance"] for r in rows], dtype=float),
                      np.asarray([r["category"] for r in rows]), tuple(d.get("weights", ())))
