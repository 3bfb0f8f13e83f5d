import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_scene
from energyplan import geometry, metrics
from energyplan.diffusion import CandidateSet
from energyplan.metrics import SOFT, SUBMETRICS, MetricParams, composite
from energyplan.scene import EgoState, StopLine, generate_scene, transform_scene

PARAMS = MetricParams()


def candidates_from_xy(xy, start=(0.0, 0.0), dt=0.5, scene_id=""):
    xy = np.asarray(xy, dtype=float)
    h = geometry.headings_from_waypoints(start, xy)
    return CandidateSet(np.concatenate([xy, h[:, None]], axis=1)[None], np.array([0.9]), dt, scene_id)


def test_gt_on_clean_scene_passes_hard_metrics():
    for seed in range(20):
        scene = generate_scene(seed)
        r = metrics.evaluate(candidates_from_xy(scene.gt_trajectory.xy), scene)
        assert (r.NC, r.DAC, r.DDC, r.TLC, r.LK, r.TTC, r.EP) == (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


def test_static_agent_on_path_collides():
    scene = make_scene([(12.0, 0.0)])
    r = metrics.evaluate(candidates_from_xy(scene.gt_trajectory.xy), scene)
    assert r.NC == 0.0 and r.composite == 0.0


def test_head_on_ttc_two_seconds():
    assert geometry.time_to_contact((-20.0, 0.0), (10.0, 0.0), 0.0) == 2.0
    # single-instant path: the ego state itself, 20 m short of a static point-sized agent
    scene10 = make_scene([(20.0, 0.0, 1e-12)], ego=EgoState((0.0, 0.0), 0.0, 10.0))
    path = np.array([[0.0, 0.0]])
    pos, vel, rad = scene10.agent_arrays()
    ttc = geometry.min_time_to_collision(path, np.array([[10.0, 0.0]]), scene10.dt, pos, vel, rad)
    assert ttc == pytest.approx(2.0, abs=1e-12)
    params = MetricParams(ego_radius=0.0, ttc_threshold=1.0)
    assert metrics.time_to_collision_score(path, scene10, params) == 1.0
    assert metrics.time_to_collision_score(path, scene10, MetricParams(ego_radius=0.0, ttc_threshold=2.5)) == 0.0


def test_composite_examples():
    ones = {k: 1.0 for k in SUBMETRICS}
    assert composite(ones) == 1.0
    assert composite({**ones, "NC": 0.0}) == 0.0
    assert composite({**ones, "HC": 0.0}) == pytest.approx(0.8)
    assert composite({**ones, "HC": 0.0, "DAC": 0.5}) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        composite(ones, {k: 0.5 for k in SOFT})
    with pytest.raises(ValueError):
        composite({**ones, "EP": 1.5})
    with pytest.raises(ValueError):
        MetricParams(weights={"EP": 1.0})


score = st.floats(0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.fixed_dictionaries({k: score for k in SUBMETRICS}), st.sampled_from(SUBMETRICS), st.floats(0.0, 1.0))
def test_composite_monotone(scores, key, frac):
    worse = dict(scores)
    worse[key] = scores[key] * frac
    assert composite(worse) <= composite(scores) + 1e-15


def test_traffic_light_and_drivable():
    sl = StopLine((10.0, -2.0), (10.0, 2.0), "red")
    scene = make_scene(stop_line=sl)
    r = metrics.evaluate(candidates_from_xy(scene.gt_trajectory.xy), scene)
    assert r.TLC == 0.0
    green = make_scene(stop_line=StopLine((10.0, -2.0), (10.0, 2.0), "green"))
    assert metrics.evaluate(candidates_from_xy(green.gt_trajectory.xy), green).TLC == 1.0
    off = np.stack([np.arange(1, 9) * 3.0, np.r_[np.zeros(4), np.full(4, 10.0)]], axis=1)
    r = metrics.evaluate(candidates_from_xy(off), scene)
    assert r.DAC == 0.5 and r.LK == 0.5


def test_direction_progress_and_comfort():
    scene = make_scene()
    back = np.stack([-np.arange(1, 9) * 0.5, np.zeros(8)], axis=1)
    r = metrics.evaluate(candidates_from_xy(back), scene)
    assert r.DDC == 0.0 and r.EP == 0.0
    half = np.stack([np.arange(1, 9) * 1.5, np.zeros(8)], axis=1)
    r = metrics.evaluate(candidates_from_xy(half), scene)
    assert r.EP == pytest.approx(0.5)
    assert r.HC == 0.0  # ego starts at 6 m/s and drops to 3 m/s in 0.5 s
    zig = scene.gt_trajectory.xy + np.stack([np.zeros(8), np.where(np.arange(8) % 2, 1.0, -1.0)], 1)
    r = metrics.evaluate(candidates_from_xy(zig), scene, previous=candidates_from_xy(scene.gt_trajectory.xy))
    assert r.EC == 0.0
    r = metrics.evaluate(candidates_from_xy(scene.gt_trajectory.xy), scene,
                         previous=candidates_from_xy(scene.gt_trajectory.xy))
    assert r.EC == 1.0 and r.HC == 1.0


def test_shape_mismatch_errors():
    scene = make_scene()
    with pytest.raises(ValueError):
        metrics.evaluate(candidates_from_xy(scene.gt_trajectory.xy[:5]), scene)
    with pytest.raises(ValueError):
        metrics.evaluate(candidates_from_xy(scene.gt_trajectory.xy, dt=0.25), scene)


def _probe_trajectories(scene, rng):
    """A mix of lane-following, agent-seeking and random paths."""
    out = [scene.gt_trajectory.xy]
    pos, vel, _ = scene.agent_arrays()
    t = np.arange(1, scene.t_f + 1) * scene.dt
    for p, v in zip(pos, vel):
        target = p + v * t[-1] * rng.uniform(0, 1) + rng.normal(scale=1.0, size=2)
        out.append(np.linspace(0, 1, scene.t_f + 1)[1:, None] * target[None, :])
    out.append(np.cumsum(rng.normal(size=(scene.t_f, 2)) * 2 + [3.0, 0.0], axis=0))
    return out


def test_nc_ttc_agree_with_dense_scan():
    rng = np.random.default_rng(0)
    checked = collisions = 0
    for seed in range(100):
        scene = generate_scene(seed)
        for xy in _probe_trajectories(scene, rng):
            path = np.vstack([scene.ego.position, xy])
            nc = metrics.no_collision(path, scene, PARAMS)
            assert nc == metrics.dense_collision_scan(path, scene, PARAMS, substeps=10)
            assert metrics.time_to_collision_score(path, scene, PARAMS) == metrics.dense_ttc_scan(path, scene, PARAMS)
            checked += 1
            collisions += nc == 0.0
    assert collisions > 20 and checked - collisions > 100


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 500), st.integers(0, 3), st.integers(-5, 5), st.integers(-5, 5))
def test_rigid_transform_invariance(seed, turns, ox, oy):
    scene = generate_scene(seed)
    rng = np.random.default_rng(seed)
    xy = _probe_trajectories(scene, rng)[-1]
    moved, tp = transform_scene(scene, turns, (float(ox), float(oy)))
    a = metrics.evaluate(candidates_from_xy(xy), scene).scores()
    b = metrics.evaluate(candidates_from_xy(tp(xy), start=moved.ego.position), moved).scores()
    for k in SUBMETRICS:
        assert a[k] == pytest.approx(b[k], abs=1e-9), k


def test_report_files():
    scenes = [generate_scene(s) for s in range(3)]
    reps = [metrics.evaluate(candidates_from_xy(s.gt_trajectory.xy, scene_id=s.scene_id), s) for s in scenes]
    d = json.loads(metrics.dumps_report(reps, {"seed": 0}))
    assert d["aggregate"]["NC"] == 1.0 and len(d["scenes"]) == 3
    assert metrics.reports_from_dict(d) == reps
    csv = metrics.report_csv(reps)
    assert csv.splitlines()[0].startswith("scene_id,NC") and csv.splitlines()[-1].startswith("mean,")
    with pytest.raises(ValueError):
        metrics.aggregate([])
    for r in reps:
        assert all(0.0 <= v <= 1.0 for v in r.scores().values())
