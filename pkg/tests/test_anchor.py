import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_scene
from energyplan import nnkit
from energyplan.anchor import (AnchorSet, RefinementNet, energy_descent_refine, kmeans, kmeans_anchors,
                               l1_distance, label_closest, refine_anchors, refine_with_context)
from energyplan.conditioning import make_context
from energyplan.field import combined_field, lane_field, risk_field, risk_values, RiskFieldParams, zero_field
from energyplan.scene import generate_scene


def _traj(offset, t_f=8):
    return np.stack([np.arange(1, t_f + 1) * 3.0, np.full(t_f, float(offset))], axis=1)


def test_anchor_set_validation_and_json():
    with pytest.raises(ValueError):
        AnchorSet(np.zeros((0, 8, 2)))
    with pytest.raises(ValueError):
        AnchorSet(np.full((1, 8, 2), np.inf))
    a = AnchorSet(np.stack([_traj(0), _traj(2)]))
    import json
    back = AnchorSet.from_dict(json.loads(a.dumps()))
    assert np.array_equal(back.anchors, a.anchors) and back.provenance == "kmeans"


def test_kmeans_examples():
    one = kmeans_anchors([_traj(1.5)] * 4, 1)
    assert np.allclose(one.anchors[0], _traj(1.5))
    corpus = [_traj(-10)] * 5 + [_traj(-10.5)] * 5 + [_traj(20)] * 3
    anchors = kmeans_anchors(corpus, 2, seed=3).anchors
    ends = sorted(anchors[:, 0, 1])
    assert ends == pytest.approx([-10.25, 20.0])
    again = kmeans_anchors(corpus, 2, seed=3).anchors
    assert np.array_equal(anchors, again)
    with pytest.raises(ValueError):
        kmeans_anchors(corpus[:1], 2)


def test_kmeans_empty_cluster_repair():
    x = np.zeros((6, 2))
    x[5] = [10.0, 0.0]
    centers, labels, _ = kmeans(x, 3, seed=0)
    assert len(set(labels.tolist())) == 3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_kmeans_objective_non_increasing(seed):
    x = np.random.default_rng(seed).normal(size=(60, 4))
    _, _, hist = kmeans(x, 5, seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_fresh_refiner_is_identity():
    scene = generate_scene(0)
    anchors = kmeans_anchors([generate_scene(s).gt_trajectory for s in range(30)], 5)
    net = RefinementNet(5, 8, rng=np.random.default_rng(0))
    out = refine_anchors(anchors, (risk_field(scene), lane_field(scene)), scene.ego, net)
    assert np.array_equal(out.anchors, anchors.anchors) and out.provenance == "refined"
    for p in net.params():
        p[...] = np.random.default_rng(1).normal(size=p.shape)
    ctx = make_context(scene)
    a = refine_with_context(anchors, ctx, net)
    assert np.array_equal(a.anchors, refine_with_context(anchors, ctx, net).anchors)
    for p in net.params():
        p[...] = 0.0
    assert np.array_equal(refine_with_context(anchors, ctx, net).anchors, anchors.anchors)
    with pytest.raises(ValueError):
        refine_with_context(anchors, ctx, RefinementNet(4, 8))


def test_refiner_gradients():
    rng = np.random.default_rng(2)
    net = RefinementNet(3, 4, ego_hidden=6, hidden=7, rng=rng)
    for p in net.params():
        p[...] = rng.normal(scale=0.3, size=p.shape)
    pooled, ego = rng.normal(size=(2, 6)), rng.normal(size=(2, 5))
    w = rng.normal(size=(2, 3, 4, 2))

    def loss():
        return float(np.sum(net.residual(pooled, ego) * w))

    _, cache = net.residual_cache(pooled, ego)
    grads = net.backward(cache, w)
    assert nnkit.gradient_check(loss, net.params(), grads, 100, h=1e-5) < 1e-4


def test_energy_descent():
    scene = make_scene([(10.0, 3.0)])
    anchors = AnchorSet(np.array([[[9.0, 2.0]]]))
    z = zero_field(scene.grid)
    assert np.array_equal(energy_descent_refine(anchors, z, 5, 1.0).anchors, anchors.anchors)
    risk = risk_field(scene)
    assert np.array_equal(energy_descent_refine(anchors, risk, 5, 0.0).anchors, anchors.anchors)
    moved = energy_descent_refine(anchors, risk, 10, 5.0).anchors.reshape(-1, 2)
    before = risk_values(anchors.anchors.reshape(-1, 2), [(10.0, 3.0)], RiskFieldParams())
    after = risk_values(moved, [(10.0, 3.0)], RiskFieldParams())
    assert after[0] < before[0]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_energy_descent_never_increases_risk(seed):
    rng = np.random.default_rng(seed)
    agents = [tuple(rng.uniform([5, -20], [45, 20])) for _ in range(3)]
    scene = make_scene(agents)
    field = combined_field(risk_field(scene), lane_field(scene), 1.0, 0.0)
    pts = rng.uniform([0, -20], [50, 20], size=(10, 8, 2))
    before = risk_values(pts.reshape(-1, 2), agents, RiskFieldParams()).sum()
    moved = energy_descent_refine(AnchorSet(pts), field, 5, 0.05).anchors
    after = risk_values(moved.reshape(-1, 2), agents, RiskFieldParams()).sum()
    assert after <= before + 1e-12


def test_label_closest():
    gt = _traj(0)
    anchors = np.stack([_traj(2), _traj(0), _traj(-1)])
    assert label_closest(anchors, gt).tolist() == [0, 1, 0]
    tie = np.stack([_traj(1), _traj(-1)])
    assert label_closest(tie, gt).tolist() == [1, 0]
    rng = np.random.default_rng(0)
    for _ in range(20):
        cands = rng.normal(size=(20, 8, 2)) * 5
        brute = min(range(20), key=lambda k: sum(abs(cands[k, i, j] - gt[i, j]) for i in range(8) for j in range(2)))
        assert int(np.argmax(label_closest(cands, gt))) == brute
    with pytest.raises(ValueError):
        label_closest(np.zeros((2, 7, 2)), gt)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_label_invariant_to_rescaling(seed, c):
    rng = np.random.default_rng(seed)
    cands = rng.normal(size=(20, 8, 2))
    gt = rng.normal(size=(8, 2))
    assert np.array_equal(label_closest(cands * c, gt * c), label_closest(cands, gt))


def test_l1_distance_units():
    assert l1_distance(np.stack([_traj(1)]), _traj(0)).tolist() == [1.0]
