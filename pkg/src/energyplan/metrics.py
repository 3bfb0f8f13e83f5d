"""Mini-EPDMS: simplified driving sub-metrics on a selected trajectory and a
composite score of the form (hard product) x (weighted mean of soft terms).

Agents are rolled out at constant velocity. Positions between waypoints are
linear in time, so collision checks are exact in continuous time.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np

from . import geometry
from .scene import OUTSIDE, nearest_lane, project_points, world_to_cell

HARD = ("NC", "DAC", "TLC", "TTC")
SOFT = ("EP", "LK", "HC", "EC", "DDC")
SUBMETRICS = ("NC", "DAC", "DDC", "TLC", "EP", "TTC", "LK", "HC", "EC")
REPORT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class MetricParams:
    ego_radius: float = 1.0
    ttc_threshold: float = 1.0
    accel_max: float = 3.0
    jerk_max: float = 5.0
    progress_tol: float = 1e-6
    weights: Dict[str, float] = field(default_factory=lambda: {k: 0.2 for k in SOFT})

    def __post_init__(self):
        check_weights(self.weights)

    def to_dict(self):
        return asdict(self)


def check_weights(weights):
    if set(weights) != set(SOFT):
        raise ValueError(f"weights must cover exactly {SOFT}")
    w = np.array([weights[k] for k in SOFT], dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("soft weights must be non-negative and sum to 1")


def composite(scores, weights=None):
    """NC * DAC * TLC * TTC times the weighted mean of EP, LK, HC, EC, DDC."""
    weights = weights if weights is not None else MetricParams().weights
    check_weights(weights)
    for k in SUBMETRICS:
        v = scores[k]
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"sub-score {k}={v} outside [0, 1]")
    hard = float(np.prod([scores[k] for k in HARD]))
    return hard * float(sum(weights[k] * scores[k] for k in SOFT))


@dataclass(frozen=True)
class MetricReport:
    scene_id: str
    NC: float
    DAC: float
    DDC: float
    TLC: float
    EP: float
    TTC: float
    LK: float
    HC: float
    EC: float
    composite: float

    def scores(self):
        return {k: getattr(self, k) for k in SUBMETRICS}

    def row(self):
        return {"scene_id": self.scene_id, **self.scores(), "composite": self.composite}


# -- kinematic helpers -------------------------------------------------------

def _path(traj, scene):
    xy = np.asarray(getattr(traj, "xy", traj), dtype=float)[:, :2]
    return np.vstack([np.asarray(scene.ego.position, dtype=float)[None, :], xy])


def derivatives(path, start_velocity, dt):
    """(accelerations, jerks) from finite differences of a start-anchored path."""
    vel = geometry.ego_velocities(path, start_velocity, dt)
    acc = np.diff(vel, axis=0) / dt
    jerk = np.diff(acc, axis=0) / dt
    return acc, jerk


def _comfort_ok(acc, jerk, params):
    a = np.linalg.norm(acc, axis=1).max() if len(acc) else 0.0
    j = np.linalg.norm(jerk, axis=1).max() if len(jerk) else 0.0
    return a <= params.accel_max and j <= params.jerk_max


def matched_lane(points, lanes):
    """Lane with the smallest mean lateral distance to ``points`` (lowest index on ties)."""
    best, best_d = 0, math.inf
    for i, lane in enumerate(lanes):
        d = project_points(points, lane)[0].mean()
        if d < best_d:
            best, best_d = i, d
    return best


def _progress(path, lane):
    _, s, _, _, _ = project_points(path, lane)
    return s


# -- sub-metrics -------------------------------------------------------------

def no_collision(path, scene, params):
    if not scene.agents:
        return 1.0
    pos, vel, radii = scene.agent_arrays()
    gap = geometry.path_clearance(path, scene.dt, pos, vel, radii + params.ego_radius)
    return 1.0 if gap > 0.0 else 0.0


def time_to_collision_score(path, scene, params):
    if not scene.agents:
        return 1.0
    pos, vel, radii = scene.agent_arrays()
    ego_vel = geometry.ego_velocities(path, scene.ego.velocity, scene.dt)
    ttc = geometry.min_time_to_collision(path, ego_vel, scene.dt, pos, vel, radii + params.ego_radius)
    return 1.0 if ttc > params.ttc_threshold else 0.0


def drivable_compliance(path, scene):
    inside = 0
    for p in path[1:]:
        cell = world_to_cell(p, scene.grid)
        inside += cell != OUTSIDE and bool(scene.drivable_mask[cell])
    return inside / (len(path) - 1)


def traffic_light_compliance(path, scene):
    sl = scene.stop_line
    if sl is None or sl.state != "red":
        return 1.0
    for k in range(len(path) - 1):
        if geometry.segments_intersect(path[k], path[k + 1], sl.start, sl.end):
            return 0.0
    return 1.0


def lane_keeping(path, scene):
    _, d, _ = nearest_lane(path[1:], scene.lanes)
    hw = np.array([scene.lanes[i].lane_half_width for i in nearest_lane(path[1:], scene.lanes)[0]])
    return float(np.mean(d < hw))


def direction_compliance(path, scene, params):
    lane = scene.lanes[matched_lane(path[1:], scene.lanes)]
    s = _progress(path, lane)
    return 1.0 if np.all(np.diff(s) >= -params.progress_tol) else 0.0


def ego_progress(path, scene):
    lane = scene.lanes[matched_lane(path[1:], scene.lanes)]
    s = _progress(path, lane)
    gt_path = _path(scene.gt_trajectory, scene)
    gt_lane = scene.lanes[matched_lane(gt_path[1:], scene.lanes)]
    gt_s = _progress(gt_path, gt_lane)
    ref = gt_s[-1] - gt_s[0]
    if ref <= 0:
        return 1.0
    return float(np.clip((s[-1] - s[0]) / ref, 0.0, 1.0))


def history_comfort(path, scene, params):
    acc, jerk = derivatives(path, scene.ego.velocity, scene.dt)
    return 1.0 if _comfort_ok(acc, jerk, params) else 0.0


def extended_comfort(path, prev_path, scene, params):
    if prev_path is None:
        return 1.0
    a1, j1 = derivatives(path, scene.ego.velocity, scene.dt)
    a0, j0 = derivatives(prev_path, scene.ego.velocity, scene.dt)
    return 1.0 if _comfort_ok(a1 - a0, j1 - j0, params) else 0.0


def validate(candidates, scene):
    traj = candidates.selected_trajectory
    if abs(candidates.dt - scene.dt) > 1e-12:
        raise ValueError(f"trajectory dt {candidates.dt} != scene dt {scene.dt}")
    if len(traj) != scene.t_f:
        raise ValueError(f"trajectory has {len(traj)} poses, scene expects t_f={scene.t_f}")
    return traj


def evaluate(candidates, scene, params=None, previous=None):
    """Score the selected candidate. ``previous`` is an optional earlier replan for EC."""
    params = params or MetricParams()
    traj = validate(candidates, scene)
    path = _path(traj, scene)
    prev_path = None
    if previous is not None:
        prev_path = _path(validate(previous, scene), scene)
    s = {
        "NC": no_collision(path, scene, params),
        "DAC": drivable_compliance(path, scene),
        "DDC": direction_compliance(path, scene, params),
        "TLC": traffic_light_compliance(path, scene),
        "EP": ego_progress(path, scene),
        "TTC": time_to_collision_score(path, scene, params),
        "LK": lane_keeping(path, scene),
        "HC": history_comfort(path, scene, params),
        "EC": extended_comfort(path, prev_path, scene, params),
    }
    return MetricReport(scene.scene_id, **s, composite=composite(s, params.weights))


def aggregate(reports):
    if not reports:
        raise ValueError("no reports to aggregate")
    keys = SUBMETRICS + ("composite",)
    return {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}


# -- brute-force references --------------------------------------------------

def dense_collision_scan(path, scene, params, substeps=10):
    """NC by sampling ego and agents at dt/substeps; 1.0 when no overlap is seen."""
    if not scene.agents:
        return 1.0
    pos, vel, radii = scene.agent_arrays()
    n = (len(path) - 1) * substeps
    times = np.arange(n + 1) * scene.dt / substeps
    seg = np.minimum((times / scene.dt).astype(int), len(path) - 2)
    frac = (times - seg * scene.dt)[:, None] / scene.dt
    ego = path[seg] + frac * (path[seg + 1] - path[seg])
    agents = pos[None, :, :] + times[:, None, None] * vel[None, :, :]
    dist = np.linalg.norm(ego[:, None, :] - agents, axis=2)
    return 0.0 if np.any(dist <= radii[None, :] + params.ego_radius) else 1.0


def dense_ttc_scan(path, scene, params, step=1e-3):
    """TTC score by marching each instant's constant-velocity extrapolation up to the threshold."""
    if not scene.agents:
        return 1.0
    pos, vel, radii = scene.agent_arrays()
    ego_vel = geometry.ego_velocities(path, scene.ego.velocity, scene.dt)
    taus = np.arange(0.0, params.ttc_threshold + step / 2, step)
    for k in range(len(path)):
        t = k * scene.dt
        ego = path[k][None, :] + taus[:, None] * ego_vel[k][None, :]
        for i in range(len(pos)):
            ag = pos[i] + vel[i] * t + taus[:, None] * vel[i][None, :]
            if np.any(np.linalg.norm(ego - ag, axis=1) <= radii[i] + params.ego_radius):
                return 0.0
    return 1.0


# -- report files ------------------------------------------------------------

def report_to_dict(reports, config=None):
    return {"format_version": REPORT_FORMAT_VERSION,
            "scenes": [r.row() for r in reports],
            "aggregate": aggregate(reports),
            "config": config or {}}


def dumps_report(reports, config=None):
    return json.dumps(report_to_dict(reports, config), sort_keys=True, indent=1)


def report_csv(reports):
    buf = io.StringIO()
    cols = ["scene_id", *SUBMETRICS, "composite"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.row().items()})
    agg = aggregate(reports)
    w.writerow({"scene_id": "mean", **{k: f"{agg[k]:.6f}" for k in cols[1:]}})
    return buf.getvalue()


def reports_from_dict(d):
    if d.get("format_version") != REPORT_FORMAT_VERSION:
        raise ValueError(f"unsupported report format_version {d.get('format_version')!r}")
    return [MetricReport(**row) for row in d["scenes"]]


def evaluate_many(pairs, params=None, previous: Optional[list] = None):
    prev = previous or [None] * len(pairs)
    return [evaluate(c, s, params, p) for (c, s), p in zip(pairs, prev)]
