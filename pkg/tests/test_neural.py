import numpy as np
import pytest

from biowish.neural import (SGDM, WISHNET_T, WISHNET_TF, BatchNorm, Conv2D, Dense, Dropout, MaxPool2D,
                            PairSampler, ReLU, ShapeError, TrainConfig, build_network, contrastive,
                            cross_entropy, train_classifier, train_siamese)
from biowish.neural.network import Network
from oracles import (WISHNET_T_CHAIN, WISHNET_T_PRINTED_TAIL_WIDTHS, WISHNET_TF_CHAIN, check_layer,
                     distinct_values, numeric_grad, rel_error)

GRAD_TOL = 1e-5


def _conv(rng, kh, kw, ci, co, pad):
    layer = Conv2D(kh, kw, ci, co, pad=pad)
    layer.params["W"] = rng.normal(size=layer.params["W"].shape)
    layer.params["b"] = rng.normal(size=co)
    return layer


# --- shapes -------------------------------------------------------------------

def _chain(net):
    return [(kind, out) for kind, _, out in net.shapes()]


def test_wishnet_tf_chain():
    net = build_network(WISHNET_TF)
    assert _chain(net) == WISHNET_TF_CHAIN
    assert net.embed_dim == 1024


def test_wishnet_t_chain():
    net = build_network(WISHNET_T)
    assert _chain(net) == WISHNET_T_CHAIN
    assert net.embed_dim == 128
    widths = [out[1] for _, out in WISHNET_T_CHAIN]
    start = widths.index(72)
    assert widths[start:] == WISHNET_T_PRINTED_TAIL_WIDTHS
    # batch normalization only after the first convolution
    assert [k for k, _ in WISHNET_T_CHAIN].count("BatchNorm") == 1


@pytest.mark.parametrize("width", [0.0625, 0.125, 0.5])
def test_narrow_networks_keep_spatial_chain(width):
    for arch, chain in ((WISHNET_TF, WISHNET_TF_CHAIN), (WISHNET_T, WISHNET_T_CHAIN)):
        net = build_network(arch, width=width)
        assert [(k, o[:2]) for k, o in _chain(net)] == [(k, o[:2]) for k, o in chain]


def test_conv_shape_examples():
    assert Conv2D(3, 5, 3, 8, pad=(1, 2)).output_shape((25, 41, 3)) == (25, 41, 8)
    assert Conv2D(3, 5, 4, 2).output_shape((3, 5, 4)) == (1, 1, 2)
    with pytest.raises(ShapeError, match="layer"):
        Conv2D(3, 5, 4, 2).output_shape((2, 5, 4))
    with pytest.raises(ShapeError):
        Conv2D(3, 5, 4, 2).output_shape((3, 5, 3))


def test_conv_identity_kernel():
    layer = Conv2D(1, 1, 3, 3)
    layer.params["W"] = np.eye(3).reshape(1, 1, 3, 3)
    x = np.random.default_rng(0).normal(size=(2, 4, 5, 3))
    np.testing.assert_array_equal(layer.forward(x), x)


def test_conv_matches_direct_loops():
    rng = np.random.default_rng(1)
    layer = _conv(rng, 3, 5, 2, 3, (1, 2))
    x = rng.normal(size=(2, 4, 6, 2))
    xp = np.pad(x, ((0, 0), (1, 1), (2, 2), (0, 0)))
    W, b = layer.params["W"], layer.params["b"]
    ref = np.zeros((2, 4, 6, 3))
    for n in range(2):
        for i in range(4):
            for j in range(6):
                for o in range(3):
                    ref[n, i, j, o] = np.sum(xp[n, i:i + 3, j:j + 5, :] * W[..., o]) + b[o]
    np.testing.assert_allclose(layer.forward(x), ref, rtol=1e-12)


def test_maxpool_floor_and_error():
    mp = MaxPool2D(2, 2)
    assert mp.output_shape((25, 41, 4)) == (12, 20, 4)
    assert MaxPool2D(1, 2).output_shape((1, 296, 4)) == (1, 148, 4)
    with pytest.raises(ShapeError):
        MaxPool2D(3, 3).output_shape((2, 5, 1))


def test_maxpool_constant_input_routes_to_one_element():
    mp = MaxPool2D(2, 2)
    x = np.ones((1, 4, 4, 1))
    np.testing.assert_array_equal(mp.forward(x, train=True), np.ones((1, 2, 2, 1)))
    dx = mp.backward(np.ones((1, 2, 2, 1)))
    assert dx.sum() == 4
    # ties go to the first element of each window
    np.testing.assert_array_equal(dx[0, ::2, ::2, 0], 1.0)


# --- gradients (64-bit) --------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = _conv(rng, 3, 3, 2, 3, (1, 1))
    assert check_layer(layer, rng.normal(size=(2, 4, 5, 2)), rng) < GRAD_TOL


@pytest.mark.parametrize("seed", range(10))
def test_maxpool_gradients(seed):
    rng = np.random.default_rng(seed)
    assert check_layer(MaxPool2D(2, 2), distinct_values(rng, (2, 5, 6, 2)), rng) < GRAD_TOL


@pytest.mark.parametrize("seed", range(10))
def test_batchnorm_gradients(seed):
    rng = np.random.default_rng(seed)
    bn = BatchNorm(3)
    bn.params["gamma"] = rng.normal(size=3)
    bn.params["beta"] = rng.normal(size=3)
    assert check_layer(bn, rng.normal(size=(4, 2, 3, 3)), rng) < GRAD_TOL


@pytest.mark.parametrize("seed", range(10))
def test_relu_and_dense_gradients(seed):
    rng = np.random.default_rng(seed)
    assert check_layer(ReLU(), distinct_values(rng, (3, 2, 4, 2)), rng) < GRAD_TOL
    dense = Dense(6, 4)
    dense.params["W"] = rng.normal(size=(6, 4))
    dense.params["b"] = rng.normal(size=4)
    assert check_layer(dense, rng.normal(size=(5, 6)), rng) < GRAD_TOL


@pytest.mark.parametrize("seed", range(10))
def test_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(5, 4)) * 3
    labels = rng.integers(0, 4, 5)
    _, g = cross_entropy(logits, labels)
    num = numeric_grad(lambda: cross_entropy(logits, labels)[0], logits)
    assert rel_error(g, num) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_contrastive_gradient(seed):
    rng = np.random.default_rng(seed)
    e1, e2 = rng.normal(size=(6, 5)) * 0.3, rng.normal(size=(6, 5)) * 0.3
    same = np.array([1, 0, 1, 0, 0, 1], bool)
    _, g1, g2 = contrastive(e1, e2, same, 1.0)
    assert rel_error(g1, numeric_grad(lambda: contrastive(e1, e2, same, 1.0)[0], e1)) < GRAD_TOL
    assert rel_error(g2, numeric_grad(lambda: contrastive(e1, e2, same, 1.0)[0], e2)) < GRAD_TOL


def test_whole_network_gradient():
    rng = np.random.default_rng(0)
    net = build_network(WISHNET_T, width=0.125, dropout=0.0, seed=3)
    net.layers[0].input_grad = True
    net.add_head(2)
    net.layers[-1].params["W"] = rng.normal(size=net.layers[-1].params["W"].shape)
    x = rng.normal(size=(3, 3, 300, 1))
    y = np.array([0, 1, 1])

    def loss():
        return cross_entropy(net.forward(x, train=True), y)[0]

    _, d = cross_entropy(net.forward(x, train=True), y)
    dx = net.backward(d)
    for layer in (net.layers[0], net.layers[-1]):
        W = layer.params["W"]
        assert rel_error(layer.grads["W"].copy(), numeric_grad(loss, W)) < GRAD_TOL
    assert rel_error(dx, numeric_grad(loss, x)) < GRAD_TOL


def test_first_conv_skips_input_gradient():
    net = build_network(WISHNET_T, width=0.125)
    x = np.random.default_rng(0).normal(size=(2, 3, 300, 1))
    h = net.forward(x, train=True)
    assert net.backward(np.ones_like(h)) is None
    assert net.layers[0].grads["W"].shape == net.layers[0].params["W"].shape


# --- losses ----------------------------------------------------------------------

def test_cross_entropy_values():
    assert cross_entropy(np.array([[0.0, 0.0]]), [0])[0] == pytest.approx(np.log(2))
    loss, g = cross_entropy(np.array([[1000.0, 0.0]]), [0])
    assert loss == pytest.approx(0.0, abs=1e-12) and np.all(np.isfinite(g))
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((1, 2)), [2])


def test_contrastive_values():
    e = np.ones((1, 4))
    assert contrastive(e, e, [True])[0] == 0.0
    far = np.zeros((1, 4))
    far[0, 0] = 1.5
    loss, g1, _ = contrastive(np.zeros((1, 4)), far, [False], 1.0)
    assert loss == 0.0 and np.all(g1 == 0)
    half = np.zeros((1, 4))
    half[0, 0] = 0.5
    assert contrastive(np.zeros((1, 4)), half, [False], 1.0)[0] == pytest.approx(0.25)
    # coincident negatives: undefined direction, zero gradient
    assert np.all(contrastive(e, e, [False])[1] == 0)


# --- other layers ----------------------------------------------------------------

def test_batchnorm_statistics_and_modes():
    rng = np.random.default_rng(2)
    x = rng.normal(3.0, 2.0, size=(8, 2, 3, 4))
    bn = BatchNorm(4)
    y = bn.forward(x, train=True)
    np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 1, 2)), 1.0, atol=1e-5 + 1e-5 * 4)
    bn.buffers["running_mean"] = x.mean(axis=(0, 1, 2))
    bn.buffers["running_var"] = x.var(axis=(0, 1, 2))
    np.testing.assert_allclose(bn.forward(x, train=False), y, atol=1e-6)
    with pytest.raises(ShapeError):
        bn.forward(x[:1], train=True)


def test_batchnorm_removes_input_scale():
    net = build_network(WISHNET_T, width=0.25, dropout=0.0)
    x = np.random.default_rng(3).normal(size=(4, 3, 300, 1))
    conv, bn = net.layers[0], net.layers[1]
    h = conv.forward(x, train=True) - conv.params["b"]
    a = bn.forward(h, train=True)
    alpha = 7.5
    # exact invariance once the variance floor scales with the input
    bn.eps *= alpha ** 2
    np.testing.assert_allclose(bn.forward(alpha * h, train=True), a, atol=1e-10)
    bn.eps /= alpha ** 2
    # with a fixed floor the change is of order eps / variance
    rel = bn.eps / h.var(axis=(0, 1, 2)).min()
    np.testing.assert_allclose(bn.forward(alpha * h, train=True), a, atol=5 * rel * np.abs(a).max())


def test_dropout_modes():
    x = np.random.default_rng(0).normal(size=(3, 4))
    d = Dropout(0.5)
    d.rng = np.random.default_rng(1)
    np.testing.assert_array_equal(d.forward(x, train=False), x)
    np.testing.assert_array_equal(Dropout(0.0).forward(x, train=True), x)
    kept = d.forward(x, train=True)
    assert set(np.unique(np.round(kept / x, 12))) <= {0.0, 2.0}
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_dropout_expectation_matches_eval():
    d = Dropout(0.5)
    d.rng = np.random.default_rng(7)
    x = np.linspace(0.5, 2.0, 8)[None, :]
    samples = np.stack([d.forward(x, train=True) for _ in range(10_000)])
    np.testing.assert_allclose(samples.mean(axis=0), d.forward(x), rtol=0.03)
    assert abs(samples.mean() / x.mean() - 1) < 0.01


def test_relu_subgradient_at_zero():
    r = ReLU()
    x = np.array([[-1.0, 0.0, 2.0]])
    np.testing.assert_array_equal(r.forward(x, train=True), [[0.0, 0.0, 2.0]])
    np.testing.assert_array_equal(r.backward(np.ones_like(x)), [[0.0, 0.0, 1.0]])


# --- optimizer ---------------------------------------------------------------------

def test_sgdm_steps():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, 0.25])
    opt = SGDM(0.1, 0.9)
    np.testing.assert_array_equal(opt.step([p], [np.zeros(2)])[0], p)
    opt = SGDM(0.1, 0.9)
    p1 = opt.step([p], [g])[0]
    np.testing.assert_allclose(p1, p - 0.1 * g)
    p2 = opt.step([p1], [g])[0]
    np.testing.assert_allclose(p2 - p, -0.1 * g * (2 + 0.9))
    with pytest.raises(ValueError):
        opt.step([p], [np.zeros(3)])


# --- embeddings and training ------------------------------------------------------------

def test_embedding_determinism_and_zero_input():
    net = build_network(WISHNET_TF, width=0.0625, seed=1)
    zero = np.zeros((2, 25, 41, 3))
    assert not np.any(net.embed(zero))  # zero biases, zero input
    x = np.random.default_rng(0).normal(size=(1, 25, 41, 3))
    np.testing.assert_array_equal(net.embed(x), net.embed(x.copy()))
    # batch composition only changes BLAS rounding
    np.testing.assert_allclose(net.embed(np.concatenate([x, x]))[0], net.embed(x)[0], rtol=1e-12)
    assert net.embed(x).shape == (1, 64)


def _band_set(rng, n):
    """Two classes of 3x300 frames with tones in disjoint bands."""
    t = np.arange(300) / 60.0
    y = np.arange(n) % 2
    f = np.where(y == 0, rng.uniform(2, 5, n), rng.uniform(14, 18, n))
    x = np.sin(2 * np.pi * f[:, None] * t)[:, None, :] * np.ones((1, 3, 1))
    x = x + 0.3 * rng.normal(size=x.shape)
    return x[..., None], y


def test_classifier_learns_disjoint_bands():
    rng = np.random.default_rng(0)
    x, y = _band_set(rng, 96)
    net = build_network(WISHNET_T, width=0.25, seed=0)
    hist = train_classifier(net, x, y, TrainConfig(lr=0.01, batch=16, epochs=8, seed=0), 2)
    assert all(b < a for a, b in zip(hist[:5], hist[1:6]))
    acc = np.mean(np.argmax(net.predict_proba(x), axis=1) == y)
    assert acc >= 0.95
    assert net.mode == "eval"


def test_training_is_bitwise_deterministic():
    rng = np.random.default_rng(1)
    x, y = _band_set(rng, 32)
    out = []
    for _ in range(2):
        net = build_network(WISHNET_T, width=0.125, seed=5)
        train_classifier(net, x, y, TrainConfig(lr=0.01, epochs=2, seed=9), 2)
        out.append(b"".join(a.tobytes() for _, a in net.named_arrays()))
    assert out[0] == out[1]


def test_zero_epochs_leave_network_unchanged():
    x, y = _band_set(np.random.default_rng(2), 8)
    net = build_network(WISHNET_T, width=0.125, seed=5)
    before = [a.copy() for _, a in net.named_arrays() if a.ndim]
    train_classifier(net, x, y, TrainConfig(epochs=0), 2)
    after = [a for _, a in net.named_arrays() if a.ndim]
    assert all(np.array_equal(a, b) for a, b in zip(before, after[: len(before)]))


def test_single_class_is_rejected():
    x, _ = _band_set(np.random.default_rng(3), 8)
    with pytest.raises(ValueError):
        train_classifier(build_network(WISHNET_T, width=0.125), x, np.zeros(8, int), TrainConfig())


def _pair_corpus(rng, n_subjects=10, per=12):
    """Frames whose dominant tone identifies the subject."""
    t = np.arange(300) / 60.0
    x, subj, sess = [], [], []
    for s in range(n_subjects):
        for ss in (1, 2):
            f = 2.0 + 2.0 * s + 0.2 * (ss - 1)
            for _ in range(per):
                sig = np.sin(2 * np.pi * f * t + rng.uniform(0, 6.3)) + 0.2 * rng.normal(size=300)
                x.append(np.stack([sig, 0.5 * sig, np.zeros(300)]))
                subj.append(f"S{s}")
                sess.append(ss)
    return np.asarray(x)[..., None], subj, sess


def test_siamese_separates_held_out_subjects():
    rng = np.random.default_rng(0)
    x, subj, sess = _pair_corpus(rng)
    train = np.array([int(s[1:]) < 7 for s in subj])
    net = build_network(WISHNET_T, width=0.25, dropout=0.0, seed=0)
    sampler = PairSampler(x[train], np.array(subj)[train], np.array(sess)[train])
    hist = train_siamese(net, sampler, TrainConfig(lr=0.01, batch=32, epochs=8, steps_per_epoch=10))
    assert hist[-1] < hist[0]
    held = PairSampler(x[~train], np.array(subj)[~train], np.array(sess)[~train])
    x1, x2, same = held.sample(np.random.default_rng(1), 200, 200)
    d = np.linalg.norm(net.embed(x1) - net.embed(x2), axis=1)
    assert d[same].mean() < d[~same].mean()


def test_siamese_twins_share_parameters():
    x, subj, sess = _pair_corpus(np.random.default_rng(0), n_subjects=3, per=4)
    net = build_network(WISHNET_T, width=0.125, seed=0)
    ids = [id(layer.params["W"]) for layer in net.layers if "W" in layer.params]
    train_siamese(net, PairSampler(x, subj, sess), TrainConfig(lr=0.01, batch=8, epochs=1,
                                                               steps_per_epoch=1))
    # a single parameter set is updated in place of the dict entry; the network object is the only twin
    assert len(ids) == len([layer for layer in net.layers if "W" in layer.params])


def test_siamese_negatives_beyond_margin_give_zero_step():
    rng = np.random.default_rng(0)
    e1 = rng.normal(size=(8, 4))
    e2 = e1 + 5.0
    _, g1, g2 = contrastive(e1, e2, np.zeros(8, bool), 1.0)
    assert not g1.any() and not g2.any()


def test_pair_sampler_rules_and_errors():
    x = np.zeros((6, 1))
    subj = ["A", "A", "B", "B", "C", "C"]
    sess = [1, 2, 1, 2, 1, 1]
    groups = ["g", "g", "g", "g", "h", "h"]
    s = PairSampler(x, subj, sess, groups)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x1, x2, same = s.sample(rng, 2, 2)
    idx = np.arange(6)
    sp = PairSampler(idx[:, None].astype(float), subj, sess, groups)
    a, b, same = sp.sample(rng, 50, 50)
    a, b = a[:, 0].astype(int), b[:, 0].astype(int)
    subj_a, subj_b = np.array(subj)[a], np.array(subj)[b]
    sess_a, sess_b = np.array(sess)[a], np.array(sess)[b]
    grp_a, grp_b = np.array(groups)[a], np.array(groups)[b]
    assert np.all(subj_a[same] == subj_b[same]) and np.all(sess_a[same] != sess_b[same])
    assert np.all(subj_a[~same] != subj_b[~same])
    assert np.all(grp_a == grp_b)
    with pytest.raises(ValueError, match="positive"):
        PairSampler(x[:2], ["A", "B"], [1, 1]).sample(rng, 1, 1)
    with pytest.raises(ValueError, match="negative"):
        PairSampler(x[:2], ["A", "A"], [1, 2]).sample(rng, 1, 1)
    with pytest.raises(ValueError):
        PairSampler(x, subj[:5], sess)


def test_spec_round_trip():
    net = build_network(WISHNET_TF, width=0.0625, seed=2)
    clone = Network.from_spec(net.spec())
    for name, value in net.named_arrays():
        clone.set_array(name, value)
    x = np.random.default_rng(0).normal(size=(2, 25, 41, 3))
    np.testing.assert_array_equal(clone.embed(x), net.embed(x))
