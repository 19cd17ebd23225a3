import copy

import numpy as np
import pytest

from mbl_dann.dann import (
    DannModel,
    TrainConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    train_arrays,
    train_step,
)
from mbl_dann.dann.layers import Dense, GradientReversal, softmax, softmax_cross_entropy_backward
from mbl_dann.dann.model import Architecture
from mbl_dann.dann.train import read_training_log
from mbl_dann.dataset import GridSpec, RecordSet, build_labeled_set, build_unlabeled_set
from mbl_dann.errors import DivergenceError, FormatError, InvalidArgumentError
from oracles import rel_error


def small_model(lam=1.0, seed=3, dropout_p=0.5, with_adversary=True, dtype="float64"):
    arch = Architecture(20, 6, hidden=16, dropout_p=dropout_p, dtype=dtype)
    return DannModel(arch, lam=lam, rng_seed=seed, with_adversary=with_adversary)


def _batches(seed=0, nl=8, nu=8):
    rng = np.random.default_rng(seed)
    xl = rng.normal(size=(nl, 20))
    yl = np.arange(nl) % 2
    xu = rng.normal(size=(nu, 20)) + 0.5
    return xl, yl, xu


def _feature_grads(model, xl, yl, xu, head):
    """True gradient of L_d or L_a (no reversal) with respect to theta_f."""
    m = copy.deepcopy(model)
    nl = len(xl)
    f = m.features.forward(np.concatenate([m.prepare(xl), m.prepare(xu)]), training=True)
    if head == "d":
        pd = softmax(m.discriminator.forward(f[:nl], training=True))
        df = np.zeros_like(f)
        df[:nl] = m.discriminator.backward(softmax_cross_entropy_backward(pd, yl))
    else:
        domain = np.r_[np.zeros(nl, int), np.ones(len(xu), int)]
        head_layers = m.adversary.layers[1:]  # skip the reversal layer
        z = f
        for layer in head_layers:
            z = layer.forward(z, training=True)
        g = softmax_cross_entropy_backward(softmax(z), domain)
        for layer in reversed(head_layers):
            g = layer.backward(g)
        df = g
    m.features.backward(df)
    return {name: layer.grads[key].copy() for name, layer, key in m.named_params("features")}


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_saddle_point_update(lam):
    model = small_model(lam)
    xl, yl, xu = _batches()
    g_d = _feature_grads(model, xl, yl, xu, "d")
    g_a = _feature_grads(model, xl, yl, xu, "a")
    before = {n: layer.params[k].copy() for n, layer, k in model.named_params("features")}
    lr = 0.05
    train_step(model, model.prepare(xl), yl, model.prepare(xu), lr)
    for name, layer, key in model.named_params("features"):
        delta = layer.params[key] - before[name]
        expected = -lr * (g_d[name] - lam * g_a[name])
        assert rel_error(delta, expected) < 1e-10, name


def test_toy_network_hand_gradients():
    # feature f = w*x + b; heads are fixed 1->2 dense layers
    w, b, x, lam = 0.7, -0.2, 1.5, 0.8
    feat = Dense(1, 1)
    feat.params["W"] = np.array([[w]])
    feat.params["b"] = np.array([b])
    disc, adv = Dense(1, 2), Dense(1, 2)
    disc.params["W"], disc.params["b"] = np.array([[1.0], [-2.0]]), np.array([0.1, 0.0])
    adv.params["W"], adv.params["b"] = np.array([[0.5], [1.5]]), np.array([0.0, -0.3])
    grl = GradientReversal(lam)

    f = feat.forward(np.array([[x]]))
    pd = softmax(disc.forward(f))
    pa = softmax(adv.forward(grl.forward(f)))
    df = disc.backward(softmax_cross_entropy_backward(pd, [1]))
    df = df + grl.backward(adv.backward(softmax_cross_entropy_backward(pa, [0])))
    feat.backward(df)

    fv = w * x + b
    pd_h = softmax(np.array([fv + 0.1, -2 * fv]))
    pa_h = softmax(np.array([0.5 * fv, 1.5 * fv - 0.3]))
    dld_df = 1.0 * pd_h[0] + (-2.0) * (pd_h[1] - 1)
    dla_df = 0.5 * (pa_h[0] - 1) + 1.5 * pa_h[1]
    composite = dld_df - lam * dla_df
    assert feat.grads["W"][0, 0] == pytest.approx(composite * x, rel=1e-12)
    assert feat.grads["b"][0] == pytest.approx(composite, rel=1e-12)


def test_heads_update_with_their_own_loss():
    model = small_model(1.0)
    xl, yl, xu = _batches(1)
    before = copy.deepcopy(model)
    train_step(model, model.prepare(xl), yl, model.prepare(xu), 0.1)
    for comp in ("discriminator", "adversary"):
        changed = [not np.array_equal(layer.params[k], old.params[k])
                   for (_, layer, k), (_, old, _) in zip(model.named_params(comp),
                                                         before.named_params(comp))]
        assert any(changed), comp


def _toy_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(size=(n, 20)) * 0.3
    x[:, 3] += np.where(y == 1, 1.0, -1.0)
    xu = rng.normal(size=(n, 20)) * 0.3
    xu[:, 3] += rng.choice([-1.0, 1.0], size=n)
    return x, y, xu


def test_lambda_zero_matches_no_adversary():
    x, y, xu = _toy_data()
    cfg = TrainConfig(lam=0.0, max_epochs=3, batch_size=16, stability_threshold=0.0)
    traces = []
    for with_adv in (True, False):
        model = small_model(0.0, with_adversary=with_adv)
        trace = []
        train_arrays(model, x, y, xu, cfg, on_epoch=lambda e, m: trace.append(
            {n: layer.params[k].copy() for n, layer, k in m.named_params()
             if not n.startswith("adversary")}))
        traces.append(trace)
    assert len(traces[0]) == len(traces[1]) == 3
    for a, b in zip(*traces):
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])


def test_zero_learning_rate_stops_immediately():
    x, y, xu = _toy_data()
    model = small_model()
    before = copy.deepcopy(model.state_dict())
    result = train_arrays(model, x, y, xu, TrainConfig(learning_rate=0.0, batch_size=16))
    assert len(result.log) == 1 and result.stopped_early
    assert result.log[0].label_flip_fraction == 0.0
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(value, before[name])


def test_separable_blobs():
    x, y, xu = _toy_data(n=400)
    model = small_model(1.0, dtype="float32")
    cfg = TrainConfig(max_epochs=50, batch_size=32, learning_rate=0.05, stability_threshold=0.0)
    hits = []
    train_arrays(model, x, y, xu, cfg, on_epoch=lambda e, m: hits.append(
        float(np.mean(np.argmax(m.phase_proba(x), axis=1) == y))))
    assert max(hits) >= 0.99
    assert hits[-1] >= 0.99


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported():
    x, y, xu = _toy_data()
    x = x * 1e30
    with pytest.raises(DivergenceError) as info:
        train_arrays(small_model(), x, y, xu, TrainConfig(learning_rate=1e30, batch_size=16))
    assert info.value.epoch == 1


def test_training_reproducible(tmp_path):
    x, y, xu = _toy_data()
    cfg = TrainConfig(max_epochs=4, batch_size=16, stability_threshold=0.0)
    train_arrays(small_model(), x, y, xu, cfg, log_path=tmp_path / "a.csv")
    train_arrays(small_model(), x, y, xu, cfg, log_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    log = read_training_log(tmp_path / "a.csv")
    assert [e.epoch for e in log] == [1, 2, 3, 4]


def test_warmup_ramp():
    cfg = TrainConfig(lam=1.0, warmup_epochs=10)
    assert cfg.lam_at(1) == 0.0 and cfg.lam_at(6) == 0.5 and cfg.lam_at(20) == 1.0
    assert TrainConfig(lam=0.7).lam_at(1) == 0.7


@pytest.mark.parametrize("kw", [{"learning_rate": -1}, {"batch_size": 1}, {"dropout_p": 1.0},
                                {"max_epochs": 0}, {"stability_threshold": 2}])
def test_config_validation(kw):
    with pytest.raises(InvalidArgumentError):
        TrainConfig(**kw)


@pytest.fixture(scope="module")
def records():
    grid = GridSpec(delocalized_h=(0.1,), mbl_h=(8.0,), unlabeled_h=(3.0,), eps=(0.5,), k=4)
    labeled, _ = build_labeled_set(1.0, 5, n_sites=6, grid=grid, realizations=2)
    unlabeled, _ = build_unlabeled_set(1.0, 5, n_sites=6, grid=grid, realizations=2)
    return labeled, unlabeled


def test_train_on_records(records):
    labeled, unlabeled = records
    model = DannModel.for_sites(6, TrainConfig(batch_size=4))
    result = train(model, labeled, unlabeled, TrainConfig(batch_size=4, max_epochs=2))
    assert 1 <= len(result.log) <= 2
    with pytest.raises(InvalidArgumentError):
        train(DannModel.for_sites(8), labeled, unlabeled, TrainConfig())
    with pytest.raises(InvalidArgumentError):
        train(model, unlabeled, unlabeled, TrainConfig())
    with pytest.raises(InvalidArgumentError):
        train(model, labeled.subset(np.arange(len(labeled) - 1)), unlabeled, TrainConfig())


def test_predict(records):
    labeled, _ = records
    model = DannModel.for_sites(6)
    p = predict(model, labeled)
    assert p.shape == (len(labeled),) and np.all((p >= 0) & (p <= 1))
    np.testing.assert_array_equal(predict(model, labeled), p)
    assert predict(model, labeled[0]) == pytest.approx(p[0], abs=1e-6)  # batch vs single BLAS path
    both = model.phase_proba(labeled.coefficients)
    np.testing.assert_allclose(both.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(model.adversary_proba(labeled.coefficients).sum(axis=1), 1.0,
                               atol=1e-6)
    with pytest.raises(InvalidArgumentError):
        predict(DannModel.for_sites(8), labeled)


def test_checkpoint_round_trip(tmp_path, records):
    labeled, _ = records
    model = DannModel.for_sites(6, TrainConfig(rng_seed=9))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, TrainConfig(rng_seed=9))
    back, cfg = load_checkpoint(path)
    assert cfg["rng_seed"] == 9
    a, b = model.state_dict(), back.state_dict()
    assert a.keys() == b.keys()
    for name in a:
        assert a[name].tobytes() == b[name].tobytes(), name
    assert predict(model, labeled).tobytes() == predict(back, labeled).tobytes()


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, DannModel.for_sites(6))
    data = path.read_bytes()
    for broken in (data[:-1], data[: len(data) // 2], data[:3], b"XXXX" + data[4:]):
        path.write_bytes(broken)
        with pytest.raises(FormatError):
            load_checkpoint(path)
    flipped = bytearray(data)
    flipped[-10] ^= 0x01
    path.write_bytes(bytes(flipped))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_model_without_adversary_shares_init():
    a = small_model(with_adversary=True)
    b = small_model(with_adversary=False)
    for (n1, l1, k1), (n2, l2, k2) in zip(a.named_params("features"), b.named_params("features")):
        np.testing.assert_array_equal(l1.params[k1], l2.params[k2])
    assert b.adversary is None
    with pytest.raises(InvalidArgumentError):
        b.adversary_proba(np.zeros((1, 20)))


def test_empty_inference():
    assert small_model().phase_proba(np.zeros((0, 20))).shape == (0, 2)
    assert isinstance(RecordSet.empty(6), RecordSet)
