import math

import numpy as np
import pytest

from hdc_ifd import substitute as sub
from hdc_ifd.errors import ConfigError, TrainingError
from hdc_ifd.substitute import NetworkConfig, TrainConfig

import oracles
from oracles import TOY, random_toy_net


def zero_net(cfg=NetworkConfig()):
    net = sub.init_net(cfg)
    for v in net.params.values():
        v[...] = 0.0
    return net


def test_default_output_and_shape_chain():
    cfg = NetworkConfig()
    assert cfg.layer_lengths() == {"conv_wide": 37, "pool_wide": 18, "conv_small": 16,
                                   "pool_small": 8, "flatten": 256}
    net = sub.init_net(cfg)
    assert net.params["dense_out_w"].shape == (10, 100)
    assert sub.forward(net, np.zeros(100)).shape == (10,)


def test_init_deterministic_and_scaled():
    a, b = sub.init_net(NetworkConfig(seed=3)), sub.init_net(NetworkConfig(seed=3))
    for k in sub.PARAM_NAMES:
        assert np.array_equal(a.params[k], b.params[k])
    assert not a.params["conv_wide_b"].any()
    assert abs(a.params["dense_hidden_w"].std() - math.sqrt(2 / 256)) < 0.01


def test_wide_kernel_too_large():
    with pytest.raises(ConfigError):
        sub.init_net(NetworkConfig(wide_kernel=101))


def test_collapsed_chain():
    with pytest.raises(ConfigError):
        NetworkConfig(input_length=66).layer_lengths()


def test_forward_length_mismatch():
    with pytest.raises(ValueError):
        sub.forward(sub.init_net(), np.zeros(99))


def test_zero_network():
    net = zero_net()
    assert not sub.forward(net, np.ones(100)).any()
    assert sub.loss(net, np.ones(100), 3) == pytest.approx(math.log(10), abs=1e-15)
    assert not sub.backward(net, np.ones(100), 3).input_grad.any()


def test_zero_input_gives_bias_only_forward():
    net = random_toy_net(0)
    p = net.params
    h = np.maximum(p["dense_hidden_w"] @ np.repeat(np.maximum(
        p["conv_small_b"] + p["conv_small_w"].sum(axis=2) @ np.maximum(p["conv_wide_b"], 0), 0), 1)
        + p["dense_hidden_b"], 0)
    expect = p["dense_out_w"] @ h + p["dense_out_b"]
    assert np.allclose(sub.forward(net, np.zeros(12)), expect, rtol=0, atol=1e-12)


def test_loss_large_margin_tends_to_zero():
    net = zero_net(TOY)
    net.params["dense_out_b"][:] = [60.0, 0.0, 0.0]
    assert 0 <= sub.loss(net, np.zeros(12), 0) < 1e-25


def test_loss_invalid_class():
    with pytest.raises(ValueError):
        sub.loss(random_toy_net(0), np.zeros(12), 3)


@pytest.mark.parametrize("seed", range(10))
def test_loss_matches_hand_oracle(seed):
    net = random_toy_net(seed)
    x = np.random.default_rng(seed).standard_normal(12)
    for y in range(3):
        assert abs(sub.loss(net, x, y) - oracles.cross_entropy(net, x, y)) <= 1e-9
        assert sub.loss(net, x, y) >= 0


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    errs = oracles.gradient_check(seed)
    assert max(errs.values()) <= 1e-4, errs


def test_default_size_input_gradient_finite_difference():
    net = sub.init_net(NetworkConfig(seed=2))
    x = np.random.default_rng(0).standard_normal(100)
    g = sub.backward(net, x, 4).input_grad
    num = np.empty(100)
    for i in range(100):
        e = np.zeros(100)
        e[i] = 1e-5
        num[i] = (sub.loss(net, x + e, 4) - sub.loss(net, x - e, 4)) / 2e-5
    assert oracles.relative_error(g, num) <= 1e-4


def test_batch_gradients_are_per_sample():
    net = random_toy_net(1)
    X = np.random.default_rng(0).standard_normal((5, 12))
    y = [0, 1, 2, 1, 0]
    batch = sub.input_gradients(net, X, y)
    for i in range(5):
        assert np.allclose(batch[i], sub.backward(net, X[i], y[i]).input_grad, rtol=0, atol=1e-14)


def test_maxpool_first_max_tie_break():
    # equal inputs in a pool window: the gradient goes to the first position only
    cfg = NetworkConfig(input_length=6, wide_kernel=1, wide_filters=1, small_kernel=1,
                        small_filters=1, pool_width=2, dense_units=1, num_classes=2)
    net = sub.init_net(cfg)
    for v in net.params.values():
        v[...] = 1.0
    net.params["dense_out_w"][1] = -1.0
    g = sub.backward(net, np.ones(6), 0).input_grad
    assert g[1] == 0.0 and g[0] != 0.0


def _separable(n=96, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(0, 0.3, (n, 12)) + np.where(y[:, None] == 1, 1.0, -1.0) * np.linspace(-1, 1, 12)
    return X, y


def test_train_separable_two_class():
    from hdc_ifd import data
    train, _ = data.synth_pair(J=2, train_per_class=48, test_per_class=1, noise_std=0.1, seed=3)
    (train,), _ = data.normalize(train)
    net, hist = sub.train(sub.init_net(NetworkConfig(num_classes=2)), train.windows, train.labels,
                          TrainConfig(max_epochs=40, seed=1))
    assert sub.evaluate(net, train.windows, train.labels) >= 0.95
    assert len(hist) <= 40


def test_zero_learning_rate_keeps_parameters():
    X, y = _separable()
    net0 = sub.init_net(TOY)
    net, _ = sub.train(net0, X, y, TrainConfig(learning_rate=0.0, max_epochs=3, patience=3))
    for k in sub.PARAM_NAMES:
        assert np.array_equal(net.params[k], net0.params[k])


def test_patience_zero_stops_after_first_epoch():
    X, y = _separable()
    _, hist = sub.train(sub.init_net(TOY), X, y, TrainConfig(patience=0))
    assert [h["epoch"] for h in hist] == [1]


def test_training_deterministic():
    X, y = _separable()
    a, ha = sub.train(sub.init_net(TOY), X, y, TrainConfig(max_epochs=5, patience=5, seed=4))
    b, hb = sub.train(sub.init_net(TOY), X, y, TrainConfig(max_epochs=5, patience=5, seed=4))
    assert ha == hb
    assert sub.checkpoint_bytes(a) == sub.checkpoint_bytes(b)


def test_best_validation_weights_restored():
    X, y = _separable()
    tc = TrainConfig(max_epochs=30, patience=3, seed=0)
    net, hist = sub.train(sub.init_net(TOY), X, y, tc)
    _, val = sub.split_validation(len(y), tc.validation_fraction, tc.seed)
    assert sub.evaluate(net, X[val], y[val]) == max(h["val_accuracy"] for h in hist)


def test_training_stops_when_validation_stalls():
    X, y = _separable()
    _, hist = sub.train(sub.init_net(TOY), X, y, TrainConfig(max_epochs=100, patience=2))
    accs = [h["val_accuracy"] for h in hist]
    if len(hist) < 100:
        best = accs.index(max(accs))
        assert len(hist) - 1 - best == 2


@pytest.mark.parametrize("labels,n", [([0] * 40, 40), ([0, 1] * 10, 20)])
def test_degenerate_training_sets(labels, n):
    X = np.zeros((n, 12))
    with pytest.raises(TrainingError):
        sub.train(sub.init_net(TOY), X, np.array(labels), TrainConfig())


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(validation_fraction=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(patience=101)


def test_evaluate_counts():
    net = zero_net(TOY)  # all logits tie, so every prediction is class 0
    y = np.array([0] * 600 + [1] * 150)
    assert sub.evaluate(net, np.zeros((750, 12)), y) == 0.8
    assert sub.evaluate(net, np.zeros((4, 12)), [0, 0, 0, 0]) == 1.0
    with pytest.raises(ValueError):
        sub.evaluate(net, np.zeros((0, 12)), [])


def test_evaluate_matches_loop_recount():
    net = random_toy_net(5)
    rng = np.random.default_rng(5)
    X, y = rng.standard_normal((200, 12)), rng.integers(0, 3, 200)
    loop = [int(np.argmax(oracles.logits(net, x))) for x in X]
    assert sub.evaluate(net, X, y) == oracles.accuracy_recount(loop, y)


def test_checkpoint_round_trip(tmp_path):
    net = sub.init_net(NetworkConfig(seed=9))
    sub.save_checkpoint(net, tmp_path / "c.ckpt")
    back = sub.load_checkpoint(tmp_path / "c.ckpt")
    assert back.config == net.config
    assert sub.checkpoint_bytes(back) == sub.checkpoint_bytes(net)
    assert sub.checkpoint_hash(back) == sub.checkpoint_hash(net)
