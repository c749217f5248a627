import numpy as np
import pytest

from motionfields import so3
from motionfields.datagen import nn_distance, random_poses, sample_negatives, synth_corpus, toy_spec
from motionfields.fields import (
    CorpusField,
    IdentityField,
    Mlp,
    MlpField,
    TrainConfig,
    ZeroField,
    analytic_corpus_field,
    analytic_identity_field,
    axial_grads,
    concat_labeled,
    decode_inputs,
    descend_inputs,
    encode_inputs,
    field_rgrad_pose,
    input_dim,
    load_field,
    mine_hard_negatives,
    mlp_forward,
    mlp_grad_input,
    mlp_grad_weights,
    save_field,
    train_field,
)
from motionfields.fields.mlp import softplus
from motionfields.product import pose_exp


def random_net(rng, widths=(5, 7, 6, 1)):
    return Mlp.init(widths, rng)


@pytest.fixture(scope="module")
def corpus():
    return synth_corpus(toy_spec(2, seed=0, n_frames=60), 5)[0]


# ---------------------------------------------------------------- network


def test_zero_weights_give_softplus_bias():
    net = Mlp((3, 4, 1))
    net.biases[-1][:] = 0.7
    x = np.random.default_rng(0).normal(size=(10, 3))
    assert np.allclose(mlp_forward(net, x), softplus(0.7), atol=0, rtol=1e-15)


def test_hand_computed_layer():
    net = Mlp((2, 1), weights=[[[2.0], [3.0]]], biases=[[0.5]], output="identity")
    assert mlp_forward(net, np.array([1.0, 0.0])) == 2.5
    net_sp = Mlp((2, 1), weights=[[[2.0], [3.0]]], biases=[[0.5]])
    assert abs(mlp_forward(net_sp, np.array([1.0, 0.0])) - np.log1p(np.exp(2.5))) < 1e-15


def test_outputs_nonnegative():
    rng = np.random.default_rng(1)
    net = random_net(rng)
    assert np.all(mlp_forward(net, rng.normal(scale=5, size=(10000, 5))) >= 0)


def test_dimension_mismatch():
    net = random_net(np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_forward(net, np.zeros(4))
    with pytest.raises(ValueError):
        mlp_grad_input(net, np.zeros((2, 6)))


def test_constant_net_zero_input_gradient():
    net = Mlp((4, 3, 1))
    net.biases[0][:] = 1.0
    assert np.all(mlp_grad_input(net, np.ones((3, 4))) == 0)


def test_input_gradient_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-5
    for _ in range(100):
        net = random_net(rng)
        x = rng.normal(size=5)
        g = mlp_grad_input(net, x)
        fd = np.array([(mlp_forward(net, x + h * e) - mlp_forward(net, x - h * e)) / (2 * h) for e in np.eye(5)])
        assert np.abs(g - fd).max() < 1e-6
        assert np.abs(g - fd).max() <= 1e-4 * max(np.abs(fd).max(), 1e-12) + 1e-9


def test_weight_gradients_finite_differences_and_linearity():
    rng = np.random.default_rng(3)
    net = random_net(rng, (3, 4, 1))
    x = rng.normal(size=(2, 3))
    gw, gb = mlp_grad_weights(net, x)
    ga = mlp_grad_weights(net, x[:1])
    gc = mlp_grad_weights(net, x[1:])
    for a, b, c in zip(gw + gb, ga[0] + ga[1], gc[0] + gc[1]):
        assert np.allclose(a, b + c, atol=1e-14)
    h = 1e-6
    w = net.weights[0]
    fd = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        w[idx] += h
        up = mlp_forward(net, x).sum()
        w[idx] -= 2 * h
        dn = mlp_forward(net, x).sum()
        w[idx] += h
        fd[idx] = (up - dn) / (2 * h)
    assert np.abs(fd - gw[0]).max() < 1e-8


def test_net_serialization_round_trip():
    net = random_net(np.random.default_rng(4))
    back = Mlp.from_dict(net.to_dict())
    x = np.random.default_rng(5).normal(size=(20, 5))
    assert np.array_equal(mlp_forward(net, x), mlp_forward(back, x))


# ---------------------------------------------------------------- encodings


@pytest.mark.parametrize("kind", ["pose", "vel", "acc"])
def test_encoding_round_trip(kind):
    rng = np.random.default_rng(6)
    k, n = 3, 8
    pose = random_poses(rng, n, k)
    vec = rng.normal(size=(n, k, 3))
    x = {"pose": pose, "vel": vec, "acc": vec}[kind]
    cond = {"pose": [], "vel": [pose], "acc": [pose, 2 * vec]}[kind]
    enc = encode_inputs(kind, x, cond)
    assert enc.shape == (n, input_dim(kind, k))
    x2, c2 = decode_inputs(kind, enc, k)
    assert np.abs(x2 - x).max() < 1e-12
    assert all(np.abs(a - b).max() < 1e-12 for a, b in zip(c2, cond))


def test_pose_encoding_single_valued():
    r = random_poses(np.random.default_rng(7), 50, 2)
    q = encode_inputs("pose", r).reshape(50, 2, 4)
    assert np.all(q[..., 0] >= 0)


@pytest.mark.parametrize("kind", ["pose", "vel", "acc"])
def test_mlp_field_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(8)
    k = 2
    fld = MlpField(Mlp.init((input_dim(kind, k), 8, 1), rng), kind, k)
    blocks = {"pose": ["pose"], "vel": ["vel", "pose"], "acc": ["acc", "pose", "vel"]}[kind]
    arrays = [random_poses(rng, 1, k)[0] if b == "pose" else rng.normal(size=(k, 3)) for b in blocks]
    _, grads = axial_grads(fld, arrays[0], arrays[1:])
    h = 1e-6
    for bi, (b, g) in enumerate(zip(blocks, grads)):
        fd = np.zeros((k, 3))
        for j in range(k):
            for a in range(3):
                e = np.zeros((k, 3))
                e[j, a] = h
                plus, minus = list(arrays), list(arrays)
                if b == "pose":
                    plus[bi], minus[bi] = pose_exp(arrays[bi], e), pose_exp(arrays[bi], -e)
                else:
                    plus[bi], minus[bi] = arrays[bi] + e, arrays[bi] - e
                fd[j, a] = (fld(plus[0], plus[1:]) - fld(minus[0], minus[1:])) / (2 * h)
        assert np.abs(fd - g).max() <= 1e-4 * max(np.abs(fd).max(), 1e-8)


def test_field_save_load_lossless(tmp_path):
    rng = np.random.default_rng(9)
    fld = MlpField(Mlp.init((input_dim("acc", 2), 6, 1), rng), "acc", 2, rng.normal(size=20), rng.uniform(1, 2, 20), 0.3)
    save_field(tmp_path / "f.json", fld)
    back = load_field(tmp_path / "f.json")
    x, c = rng.normal(size=(5, 2, 3)), [random_poses(rng, 5, 2), rng.normal(size=(5, 2, 3))]
    assert np.array_equal(fld(x, c), back(x, c))
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ValueError):
        load_field(tmp_path / "bad.json")


# ---------------------------------------------------------------- analytic fields


def rot_x(a):
    return so3.exp_so3(np.array([a, 0.0, 0.0]))


def test_identity_field_values():
    f = analytic_identity_field(1)
    assert f(np.eye(3)[None]) == 0.0
    assert abs(f(rot_x(np.pi / 2)[None]) - np.pi / 2) < 1e-12


def test_rgrad_zero_at_minimum_and_direction():
    f = IdentityField(1)
    assert np.all(field_rgrad_pose(f, np.eye(3)[None]) == 0)
    r = rot_x(0.4)[None]
    axial = so3.tangent_to_axial(r, field_rgrad_pose(f, r))[0]
    descent = -axial / np.linalg.norm(axial)
    assert np.linalg.norm(descent - [-1.0, 0.0, 0.0]) < 1e-6


def test_rgrad_directional_derivative():
    rng = np.random.default_rng(10)
    f = IdentityField(3)
    r = random_poses(rng, 1, 3)[0]
    xi = field_rgrad_pose(f, r)
    u = rng.normal(size=(3, 3))
    h = 1e-6
    fd = (f(pose_exp(r, h * u)) - f(pose_exp(r, -h * u))) / (2 * h)
    # Frobenius pairing with the tangent r hat(u) of the geodesic
    assert abs(fd - np.sum(xi * (r @ so3.hat(u)))) < 1e-4


def test_rgrad_rejects_vector_field():
    with pytest.raises(ValueError):
        field_rgrad_pose(ZeroField("vel", 2), np.zeros((2, 3)))


def test_corpus_field_equals_nn_distance(corpus):
    f = analytic_corpus_field(corpus)
    q = random_poses(np.random.default_rng(11), 1000, 2)
    assert np.array_equal(f(q), nn_distance(q, corpus.poses)[0])
    with pytest.raises(ValueError):
        CorpusField(type(corpus)(corpus.poses[:0], corpus.vels[:0], corpus.accs[:0], corpus.seq_ids[:0]))


def test_corpus_field_gradient_points_away_from_neighbour(corpus):
    f = CorpusField(corpus)
    q = random_poses(np.random.default_rng(12), 1, 2)[0]
    v, (g,) = axial_grads(f, q)
    h = 1e-6
    u = np.random.default_rng(13).normal(size=(2, 3))
    fd = (f(pose_exp(q, h * u)) - f(pose_exp(q, -h * u))) / (2 * h)
    assert abs(fd - np.sum(g * u)) < 1e-5


# ---------------------------------------------------------------- training


def test_zero_labels_learned(corpus):
    lab = sample_negatives(corpus, 500, "pose", seed=1)
    lab.labels[:] = 0.0
    fld, _ = train_field(lab, TrainConfig(epochs=30, widths=(16, 16), batch_size=16, lr=3e-2, clip=1.0))
    assert fld(lab.x).max() < 1e-2


def test_epoch_loss_non_increasing(corpus):
    lab = sample_negatives(corpus, 2000, "pose", seed=1)
    _, rep = train_field(lab, TrainConfig(epochs=20, widths=(64, 64), lr=3e-4))
    loss = np.asarray(rep.epoch_loss)
    assert np.all(loss[1:] <= 1.05 * loss[:-1])


def test_training_bit_reproducible(corpus):
    lab = sample_negatives(corpus, 300, "vel", seed=2)
    cfg = TrainConfig(epochs=3, widths=(8, 8))
    a, ra = train_field(lab, cfg)
    b, rb = train_field(lab, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.net.weights, b.net.weights))
    assert ra.epoch_loss == rb.epoch_loss


def test_training_rejects_empty(corpus):
    lab = sample_negatives(corpus, 10, "pose", seed=2)
    with pytest.raises(ValueError):
        train_field(lab.subset(np.arange(0)))


def test_warm_start_keeps_normalization(corpus):
    lab = sample_negatives(corpus, 300, "pose", seed=3)
    a, _ = train_field(lab, TrainConfig(epochs=2, widths=(8,)))
    b, _ = train_field(lab, TrainConfig(epochs=1), init=a)
    assert np.array_equal(a.shift, b.shift) and b.net.widths == a.net.widths


def test_trained_fields_nonnegative_and_low_on_corpus(k2_fields):
    train = k2_fields["train"]
    for kind, fld in k2_fields["fields"].items():
        cond = [] if kind == "pose" else [train.poses]
        vals = fld(train.data(kind), cond)
        assert np.all(vals >= 0)
        assert vals.max() < 3 * k2_fields["reports"][kind].heldout_l1


def test_transition_field_uses_conditioning(k2_fields):
    fld = k2_fields["fields"]["vel"]
    train = k2_fields["train"]
    rng = np.random.default_rng(14)
    idx = rng.integers(0, len(train), 200)
    vel = train.vels[idx] + 0.1 * rng.normal(size=(200, 2, 3))
    _, grads = axial_grads(fld, vel, [random_poses(rng, 200, 2)])
    nonzero = np.linalg.norm(grads[1].reshape(200, -1), axis=1) > 1e-8
    assert nonzero.mean() >= 0.9


# ---------------------------------------------------------------- mining


def test_descent_lowers_field_and_mined_labels_exact(k2_fields):
    fld = k2_fields["fields"]["pose"]
    train = k2_fields["train"]
    start = random_poses(np.random.default_rng(15), 30, 2)
    (out,), f = descend_inputs(fld, [start], [1.0], steps=5)
    assert np.all(f <= fld(start) + 1e-15)
    assert so3.is_rotation(out)
    hard = mine_hard_negatives(fld, train, 20, seed=1, steps=3)
    assert np.abs(hard.labels - nn_distance(hard.x, train.poses)[0]).max() < 1e-12
    both = concat_labeled(sample_negatives(train, 10, "pose", seed=0), hard)
    assert len(both) == 30 and set(both.categories) == {"A", "B", "C", "H"}
