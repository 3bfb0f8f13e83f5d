import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from energyplan import nnkit
from energyplan.nnkit import (Adam, DivergenceError, FeedForwardNet, GateVector, apply_gate, backward,
                              forward, gradient_check, load_into, load_weights, optimizer_step,
                              read_manifest, save_weights, write_manifest)


def test_identity_and_bias_only():
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(forward(FeedForwardNet.identity(3), x), x)
    net = FeedForwardNet([3, 2], ["linear"])
    net.weights[0][...] = 0.0
    net.biases[0][...] = [0.5, -1.5]
    assert np.array_equal(forward(net, x), [0.5, -1.5])


def test_forward_matches_reimplementation():
    net = FeedForwardNet([4, 5, 3], rng=np.random.default_rng(2))
    x = np.random.default_rng(3).normal(size=(6, 4))
    w1, b1, w2, b2 = net.params()
    ref = np.empty((6, 3))
    for i in range(6):
        h = [np.tanh(sum(x[i, a] * w1[a, j] for a in range(4)) + b1[j]) for j in range(5)]
        ref[i] = [sum(h[j] * w2[j, k] for j in range(5)) + b2[k] for k in range(3)]
    assert np.allclose(forward(net, x), ref, rtol=1e-13, atol=1e-14)


def test_shape_errors():
    net = FeedForwardNet([3, 2])
    with pytest.raises(ValueError):
        forward(net, np.zeros(4))
    _, cache = net.forward_cache(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        net.backward(cache, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        apply_gate(GateVector(3), np.zeros(4))


def test_linear_backward_and_zero_upstream():
    net = FeedForwardNet([3, 2], ["linear"], rng=np.random.default_rng(0))
    x = np.array([0.3, -0.2, 1.0])
    up = np.array([1.0, 2.0])
    grads, dx = backward(net, x, up)
    assert np.allclose(dx, net.weights[0] @ up)
    grads, _ = backward(FeedForwardNet([3, 4, 2], rng=np.random.default_rng(1)), x, np.zeros(2))
    assert all(not np.any(g) for g in grads)


def test_gradient_check_small_net():
    rng = np.random.default_rng(4)
    net = FeedForwardNet([5, 7, 3], rng=rng)
    x = rng.normal(size=(4, 5))
    tgt = rng.normal(size=(4, 3))

    def loss():
        return 0.5 * float(np.sum((net.forward(x) - tgt) ** 2))

    y, cache = net.forward_cache(x)
    grads, _ = net.backward(cache, y - tgt)
    assert gradient_check(loss, net.params(), grads, 100, h=1e-5) < 1e-4


def test_gate_behaviour():
    f = np.array([1.0, -2.0, 4.0])
    assert np.array_equal(apply_gate(GateVector(3), f), 0.5 * f)
    assert np.allclose(apply_gate(GateVector(3, init=1000.0), f), f, rtol=1e-12)
    assert np.all(GateVector(3, init=-1000.0).effective() > 0)


def test_gate_gradient():
    rng = np.random.default_rng(0)
    gate = GateVector(6)
    gate.logits[...] = rng.normal(size=6)
    x = rng.normal(size=(3, 6))
    w = rng.normal(size=(3, 6))

    def loss():
        return float(np.sum(apply_gate(gate, x) * w))

    _, cache = gate.forward_cache(x)
    grads, dx = gate.backward(cache, w)
    assert gradient_check(loss, gate.params(), grads, 6, h=1e-5) < 1e-4
    assert np.allclose(dx, w * gate.effective())


def test_adam_examples():
    p = np.array([1.0])
    opt = Adam(lr=0.1)
    optimizer_step(opt, [p], [np.array([1.0])])
    assert p[0] == pytest.approx(0.9, abs=1e-6)
    q = np.array([1.0, 2.0])
    Adam(lr=0.1).step([q], [np.zeros(2)])
    assert np.array_equal(q, [1.0, 2.0])
    with pytest.raises(DivergenceError):
        Adam().step([q], [np.array([np.nan, 0.0])])


def test_adam_deterministic_and_order_free():
    def run(order):
        rng = np.random.default_rng(0)
        ps = [rng.normal(size=3), rng.normal(size=(2, 2))]
        gs = [[rng.normal(size=3), rng.normal(size=(2, 2))] for _ in range(5)]
        opt = Adam(lr=0.01)
        for g in gs:
            opt.step([ps[i] for i in order], [g[i] for i in order])
        return ps

    a, b = run([0, 1]), run([1, 0])
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_weights_roundtrip(tmp_path):
    net = FeedForwardNet([3, 4, 2], rng=np.random.default_rng(0))
    save_weights(tmp_path / "w.nnkw", net.params())
    arrays = load_weights(tmp_path / "w.nnkw")
    other = FeedForwardNet([3, 4, 2], rng=np.random.default_rng(9))
    load_into(other.params(), arrays)
    assert all(np.allclose(a, b, rtol=1e-6) for a, b in zip(net.params(), other.params()))
    assert open(tmp_path / "w.nnkw", "rb").read(4) == b"NNKW"
    with pytest.raises(ValueError):
        load_into(FeedForwardNet([3, 5, 2]).params(), arrays)
    write_manifest(tmp_path / "m.txt", net.describe(), 7, {"a": 1})
    man = read_manifest(tmp_path / "m.txt")
    assert man["seed"] == "7" and man["config_hash"] == nnkit.config_hash({"a": 1})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_is_pure(seed):
    rng = np.random.default_rng(seed)
    net = FeedForwardNet([3, 4, 2], rng=rng)
    x = rng.normal(size=(5, 3))
    assert np.array_equal(net.forward(x), net.forward(x))
