"""Synthetic bird's-eye-view world: grid, agents, lane branches, ego and GT.

Scenes are expressed in an ego-centric frame at t=0: the ego sits at the
origin heading along +x. Lane centerlines fork at the ego into up to three
branches (left arc, near-straight, right arc). On-road agents may block
branches; the ground-truth trajectory follows one branch that is clear.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from . import geometry

FORMAT_VERSION = 1
OUTSIDE = (-1, -1)


class ScenarioError(ValueError):
    """Raised when a scenario config cannot produce a valid scene."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned grid; ``origin`` is the world position of the centre of cell (0, 0).

    Rows run along +y, columns along +x.
    """
    width_cells: int = 64
    height_cells: int = 64
    resolution: float = 1.0
    origin: Tuple[float, float] = (-8.0, -32.0)

    def __post_init__(self):
        if self.width_cells <= 0 or self.height_cells <= 0:
            raise ValueError("grid dimensions must be positive")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self):
        return (self.height_cells, self.width_cells)

    @property
    def x_max(self):
        return self.origin[0] + (self.width_cells - 1) * self.resolution

    @property
    def y_max(self):
        return self.origin[1] + (self.height_cells - 1) * self.resolution

    def cell_centers(self):
        """World coordinates of every cell centre as two (H, W) arrays."""
        xs = self.origin[0] + np.arange(self.width_cells) * self.resolution
        ys = self.origin[1] + np.arange(self.height_cells) * self.resolution
        return np.meshgrid(xs, ys)

    def contains(self, p, margin=0.0):
        """True when p lies in the hull of cell centres (the sampling extent)."""
        x, y = float(p[0]), float(p[1])
        return (self.origin[0] + margin <= x <= self.x_max - margin
                and self.origin[1] + margin <= y <= self.y_max - margin)

    def clamp(self, pts):
        pts = np.array(pts, dtype=float)
        pts[..., 0] = np.clip(pts[..., 0], self.origin[0], self.x_max)
        pts[..., 1] = np.clip(pts[..., 1], self.origin[1], self.y_max)
        return pts


def world_to_cell(p, grid):
    """Nearest cell (row, col) for a world point, or OUTSIDE."""
    col = math.floor((float(p[0]) - grid.origin[0]) / grid.resolution + 0.5)
    row = math.floor((float(p[1]) - grid.origin[1]) / grid.resolution + 0.5)
    if 0 <= row < grid.height_cells and 0 <= col < grid.width_cells:
        return (row, col)
    return OUTSIDE


def cell_to_world(cell, grid):
    row, col = cell
    return (grid.origin[0] + col * grid.resolution, grid.origin[1] + row * grid.resolution)


@dataclass(frozen=True)
class Agent:
    position: Tuple[float, float]
    radius: float
    velocity: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("agent radius must be positive")


@dataclass(frozen=True, eq=False)
class LaneCenterline:
    polyline: np.ndarray
    lane_half_width: float = 1.75

    def __post_init__(self):
        pts = _frozen(self.polyline)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a lane needs at least two 2D points")
        seg = np.diff(pts, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seglen <= 0):
            raise ValueError("consecutive lane points must be distinct")
        object.__setattr__(self, "polyline", pts)
        object.__setattr__(self, "_seglen", _frozen(seglen))
        object.__setattr__(self, "_cum", _frozen(np.concatenate([[0.0], np.cumsum(seglen)])))

    @property
    def length(self):
        return float(self._cum[-1])

    @property
    def cumulative(self):
        return self._cum

    def point_at(self, s):
        """Position and tangent heading at arc length s (clamped to the lane)."""
        s = min(max(float(s), 0.0), self.length)
        j = int(np.searchsorted(self._cum, s, side="right") - 1)
        j = min(max(j, 0), len(self._seglen) - 1)
        a, b = self.polyline[j], self.polyline[j + 1]
        u = (s - self._cum[j]) / self._seglen[j]
        p = a + u * (b - a)
        return p, math.atan2(b[1] - a[1], b[0] - a[0])


@dataclass(frozen=True)
class EgoState:
    position: Tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0
    speed: float = 0.0

    def __post_init__(self):
        if not -math.pi <= self.heading < math.pi:
            raise ValueError("heading must lie in [-pi, pi)")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")

    @property
    def velocity(self):
        return np.array([math.cos(self.heading), math.sin(self.heading)]) * self.speed


@dataclass(frozen=True, eq=False)
class Trajectory:
    """t_f poses of (x, y, heading) spaced ``dt`` seconds apart."""
    poses: np.ndarray
    dt: float = 0.5

    def __post_init__(self):
        poses = _frozen(self.poses)
        if poses.ndim != 2 or poses.shape[1] != 3 or len(poses) == 0:
            raise ValueError("poses must have shape (t_f, 3)")
        if not np.all(np.isfinite(poses)):
            raise ValueError("trajectory contains non-finite values")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "poses", poses)

    @property
    def t_f(self):
        return len(self.poses)

    @property
    def xy(self):
        return self.poses[:, :2]


@dataclass(frozen=True)
class StopLine:
    start: Tuple[float, float]
    end: Tuple[float, float]
    state: str = "red"


@dataclass(frozen=True, eq=False)
class Scene:
    grid: GridSpec
    agents: Tuple[Agent, ...]
    lanes: Tuple[LaneCenterline, ...]
    ego: EgoState
    drivable_mask: np.ndarray
    gt_trajectory: Trajectory
    stop_line: Optional[StopLine] = None
    scene_id: str = ""

    def __post_init__(self):
        mask = np.array(self.drivable_mask, dtype=bool)
        mask.setflags(write=False)
        if mask.shape != self.grid.shape:
            raise ValueError("drivable mask does not match the grid")
        object.__setattr__(self, "drivable_mask", mask)
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "lanes", tuple(self.lanes))

    @property
    def dt(self):
        return self.gt_trajectory.dt

    @property
    def t_f(self):
        return self.gt_trajectory.t_f

    def agent_arrays(self):
        pos = np.array([a.position for a in self.agents], dtype=float).reshape(-1, 2)
        vel = np.array([a.velocity for a in self.agents], dtype=float).reshape(-1, 2)
        rad = np.array([a.radius for a in self.agents], dtype=float)
        return pos, vel, rad


def project_points(points, lane):
    """Vectorised centerline projection.

    Returns (d, s, seg, t, foot) for each point: unsigned lateral distance,
    clamped arc length, index of the nearest segment (first on ties), its
    clamped segment parameter and the foot point.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    a = lane.polyline[:-1]
    b = lane.polyline[1:]
    dist, t, foot = geometry.segment_projection(points, a, b)
    seg = np.argmin(dist, axis=1)
    idx = np.arange(len(points))
    d = dist[idx, seg]
    tt = t[idx, seg]
    s = lane.cumulative[seg] + tt * lane._seglen[seg]
    return d, np.clip(s, 0.0, lane.length), seg, tt, foot[idx, seg]


def project_to_centerline(p, lane):
    """(d, s): distance to the nearest polyline point and its arc length."""
    d, s, _, _, _ = project_points(np.asarray(p, dtype=float)[None, :], lane)
    return float(d[0]), float(s[0])


def nearest_lane(points, lanes):
    """Per point: index of the lane with minimum d (lowest index on ties), d and s."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    best_d = np.full(len(points), np.inf)
    best_s = np.zeros(len(points))
    best_i = np.zeros(len(points), dtype=int)
    for i, lane in enumerate(lanes):
        d, s, _, _, _ = project_points(points, lane)
        better = d < best_d
        best_d = np.where(better, d, best_d)
        best_s = np.where(better, s, best_s)
        best_i = np.where(better, i, best_i)
    return best_i, best_d, best_s


def drivable_from_lanes(grid, lanes):
    """Union of lane corridors evaluated at cell centres."""
    xs, ys = grid.cell_centers()
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    mask = np.zeros(len(pts), dtype=bool)
    for lane in lanes:
        d, _, _, _, _ = project_points(pts, lane)
        mask |= d < lane.lane_half_width
    return mask.reshape(grid.shape)


@dataclass
class ScenarioConfig:
    """Parameters for randomised scene generation."""
    grid: GridSpec = field(default_factory=GridSpec)
    t_f: int = 8
    dt: float = 0.5
    branch_count: Tuple[int, int] = (2, 3)
    curvature_range: Tuple[float, float] = (0.035, 0.05)
    straight_curvature: float = 0.004
    speed_range: Tuple[float, float] = (5.0, 7.5)
    agent_count: Tuple[int, int] = (0, 3)
    distractor_count: Tuple[int, int] = (0, 2)
    agent_radius_range: Tuple[float, float] = (0.8, 1.2)
    agent_speed_max: float = 1.0
    agent_s_range: Tuple[float, float] = (13.0, 40.0)
    lane_half_width: float = 1.75
    lane_tail: float = 7.0
    lane_spacing: float = 1.0
    max_lane_length: float = 80.0
    ego_radius: float = 1.0
    clearance_margin: float = 1.0
    ttc_threshold: float = 1.0
    stop_line_prob: float = 0.1
    max_retries: int = 50

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "grid" in d and isinstance(d["grid"], dict):
            d["grid"] = GridSpec(**{**d["grid"], "origin": tuple(d["grid"]["origin"])})
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


def _branch_polyline(curvature, cfg):
    grid = cfg.grid
    step = cfg.lane_spacing
    n_tail = int(round(cfg.lane_tail / step))
    pts = [(-cfg.lane_tail + i * step, 0.0) for i in range(n_tail + 1)]
    s = step
    while s <= cfg.max_lane_length:
        if abs(curvature) < 1e-12:
            p = (s, 0.0)
        else:
            p = (math.sin(curvature * s) / curvature, (1.0 - math.cos(curvature * s)) / curvature)
        if not grid.contains(p, margin=1.0):
            break
        pts.append(p)
        s += step
    return np.array(pts)


def _follow_lane(lane, s0, speed, cfg):
    poses = []
    for k in range(1, cfg.t_f + 1):
        p, h = lane.point_at(s0 + speed * k * cfg.dt)
        poses.append((p[0], p[1], h))
    return np.array(poses)


def _crosses_red(start, xy, stop_line):
    if stop_line is None or stop_line.state != "red":
        return False
    pts = np.vstack([np.asarray(start)[None, :], xy])
    return any(geometry.segments_intersect(pts[k], pts[k + 1], stop_line.start, stop_line.end)
               for k in range(len(pts) - 1))


def generate_scene(seed, config=None, scene_id=None):
    """Deterministic scene for (seed, config)."""
    cfg = config or ScenarioConfig()
    rng = np.random.default_rng(seed)
    grid = cfg.grid
    kinds = ["left", "straight", "right"]
    n_branch = int(rng.integers(cfg.branch_count[0], cfg.branch_count[1] + 1))
    n_branch = max(1, min(n_branch, 3))
    chosen = sorted(rng.choice(3, size=n_branch, replace=False).tolist()) if n_branch < 3 else [0, 1, 2]
    lanes = []
    for idx in chosen:
        if kinds[idx] == "straight":
            kappa = rng.uniform(-cfg.straight_curvature, cfg.straight_curvature)
        else:
            kappa = rng.uniform(*cfg.curvature_range) * (1.0 if kinds[idx] == "left" else -1.0)
        lanes.append(LaneCenterline(_branch_polyline(kappa, cfg), cfg.lane_half_width))
    speed = float(rng.uniform(*cfg.speed_range))
    ego = EgoState((0.0, 0.0), 0.0, speed)
    mask = drivable_from_lanes(grid, lanes)
    s0 = cfg.lane_tail

    candidates = [_follow_lane(lane, s0, speed, cfg) for lane in lanes]

    for _ in range(cfg.max_retries):
        agents = []
        n_agents = int(rng.integers(cfg.agent_count[0], cfg.agent_count[1] + 1))
        for _ in range(n_agents):
            lane = lanes[int(rng.integers(len(lanes)))]
            ahead = float(rng.uniform(*cfg.agent_s_range))
            ahead = min(ahead, lane.length - s0 - 1.0)
            p, h = lane.point_at(s0 + ahead)
            v = float(rng.uniform(0.0, cfg.agent_speed_max))
            r = float(rng.uniform(*cfg.agent_radius_range))
            agents.append(Agent((float(p[0]), float(p[1])), r,
                                (v * math.cos(h), v * math.sin(h))))
        n_distr = int(rng.integers(cfg.distractor_count[0], cfg.distractor_count[1] + 1))
        for _ in range(n_distr):
            r = float(rng.uniform(*cfg.agent_radius_range))
            for _ in range(100):
                p = (float(rng.uniform(1.0, grid.x_max - 1.0)),
                     float(rng.uniform(grid.origin[1] + 1.0, grid.y_max - 1.0)))
                _, d, _ = nearest_lane(np.array([p]), lanes)
                if d[0] > cfg.lane_half_width + r + 1.0:
                    agents.append(Agent(p, r, (0.0, 0.0)))
                    break
        stop_line = None
        if rng.uniform() < cfg.stop_line_prob:
            lane = lanes[int(rng.integers(len(lanes)))]
            p, h = lane.point_at(s0 + float(rng.uniform(9.0, 14.0)))
            n = np.array([-math.sin(h), math.cos(h)]) * cfg.lane_half_width
            state = "red" if rng.uniform() < 0.5 else "green"
            stop_line = StopLine(tuple((p - n).tolist()), tuple((p + n).tolist()), state)

        pos = np.array([a.position for a in agents]).reshape(-1, 2)
        vel = np.array([a.velocity for a in agents]).reshape(-1, 2)
        radii = np.array([a.radius for a in agents]) + cfg.ego_radius
        clear = []
        for b, poses in enumerate(candidates):
            xy = np.vstack([[0.0, 0.0], poses[:, :2]])
            if not all(grid.contains(p) for p in xy):
                continue
            if any(world_to_cell(p, grid) == OUTSIDE or not mask[world_to_cell(p, grid)] for p in xy):
                continue
            if len(agents):
                if geometry.path_clearance(xy, cfg.dt, pos, vel, radii) <= cfg.clearance_margin:
                    continue
                ego_vel = geometry.ego_velocities(xy, ego.velocity, cfg.dt)
                if geometry.min_time_to_collision(xy, ego_vel, cfg.dt, pos, vel, radii) < cfg.ttc_threshold:
                    continue
            if _crosses_red((0.0, 0.0), poses[:, :2], stop_line):
                continue
            clear.append(b)
        if clear:
            gt_branch = clear[int(rng.integers(len(clear)))]
            gt = Trajectory(candidates[gt_branch], cfg.dt)
            return Scene(grid, tuple(agents), tuple(lanes), ego, mask, gt, stop_line,
                         scene_id if scene_id is not None else f"scene_{seed:06d}")
    raise ScenarioError(
        f"no collision-free ground truth after {cfg.max_retries} retries (seed {seed}); "
        "reduce agent density")


def transform_scene(scene, quarter_turns=0, offset=(0.0, 0.0)):
    """Rigidly rotate by quarter_turns*90 degrees about the world origin, then translate.

    The grid stays axis-aligned, so only quarter turns keep the mask exact.
    Returns (scene, transform) where ``transform`` maps (N, 2) points.
    """
    k = int(quarter_turns) % 4
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k]
    rot = np.array([[c, -s], [s, c]], dtype=float)
    off = np.asarray(offset, dtype=float)

    def tp(p):
        return np.asarray(p, dtype=float) @ rot.T + off

    def tv(v):
        return np.asarray(v, dtype=float) @ rot.T

    g = scene.grid
    # corners of the cell-centre hull, rotated; new origin is the min corner
    corners = tp(np.array([[g.origin[0], g.origin[1]], [g.x_max, g.y_max]]))
    lo = corners.min(axis=0)
    if k % 2 == 0:
        w, h = g.width_cells, g.height_cells
    else:
        w, h = g.height_cells, g.width_cells
    grid = GridSpec(w, h, g.resolution, (float(lo[0]), float(lo[1])))
    # rotate mask: rows are y, cols are x
    mask = np.asarray(scene.drivable_mask)
    mask_t = np.rot90(mask.T, k).T if k else mask.copy()

    dh = float(math.atan2(s, c))
    agents = tuple(Agent(tuple(tp(a.position).tolist()), a.radius, tuple(tv(a.velocity).tolist()))
                   for a in scene.agents)
    lanes = tuple(LaneCenterline(tp(l.polyline), l.lane_half_width) for l in scene.lanes)
    ego = EgoState(tuple(tp(scene.ego.position).tolist()),
                   float(geometry.wrap_angle(scene.ego.heading + dh)), scene.ego.speed)
    poses = np.array(scene.gt_trajectory.poses)
    poses[:, :2] = tp(poses[:, :2])
    poses[:, 2] = geometry.wrap_angle(poses[:, 2] + dh)
    stop_line = None
    if scene.stop_line is not None:
        stop_line = StopLine(tuple(tp(scene.stop_line.start).tolist()),
                             tuple(tp(scene.stop_line.end).tolist()), scene.stop_line.state)
    out = Scene(grid, agents, lanes, ego, mask_t, Trajectory(poses, scene.dt), stop_line, scene.scene_id)
    return out, tp


def mirror_scene(scene):
    """Reflect across the x axis (y -> -y) on the same grid, drivable mask rebuilt from lanes.

    Used as training augmentation: left and right branches swap roles.
    """
    flip = np.array([1.0, -1.0])
    agents = tuple(Agent(tuple((np.asarray(a.position) * flip).tolist()), a.radius,
                         tuple((np.asarray(a.velocity) * flip).tolist())) for a in scene.agents)
    lanes = tuple(LaneCenterline(l.polyline * flip, l.lane_half_width) for l in scene.lanes)
    ego = EgoState(tuple((np.asarray(scene.ego.position) * flip).tolist()),
                   float(geometry.wrap_angle(-scene.ego.heading)), scene.ego.speed)
    poses = np.array(scene.gt_trajectory.poses)
    poses[:, 1] = -poses[:, 1]
    poses[:, 2] = geometry.wrap_angle(-poses[:, 2])
    stop_line = None
    if scene.stop_line is not None:
        sl = scene.stop_line
        stop_line = StopLine(tuple((np.asarray(sl.start) * flip).tolist()),
                             tuple((np.asarray(sl.end) * flip).tolist()), sl.state)
    return Scene(scene.grid, agents, lanes, ego, drivable_from_lanes(scene.grid, lanes),
                 Trajectory(poses, scene.dt), stop_line, scene.scene_id + "_mirror")


# -- serialisation -----------------------------------------------------------

def rle_encode(mask):
    flat = np.asarray(mask, dtype=bool).ravel()
    runs = []
    if flat.size:
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate([[0], change, [flat.size]])
        runs = np.diff(bounds).astype(int).tolist()
    return {"shape": list(np.shape(mask)), "start": bool(flat[0]) if flat.size else False, "runs": runs}


def rle_decode(d):
    vals = []
    v = bool(d["start"])
    for n in d["runs"]:
        vals.extend([v] * int(n))
        v = not v
    return np.array(vals, dtype=bool).reshape(d["shape"])


def scene_to_dict(scene):
    g = scene.grid
    return {
        "meta": {
            "format_version": FORMAT_VERSION,
            "resolution": g.resolution,
            "dt": scene.dt,
            "t_f": scene.t_f,
            "units": {"length": "m", "time": "s", "angle": "rad", "speed": "m/s"},
        },
        "scene_id": scene.scene_id,
        "grid": {"width_cells": g.width_cells, "height_cells": g.height_cells,
                 "resolution": g.resolution, "origin": list(g.origin)},
        "agents": [{"position": list(a.position), "radius": a.radius, "velocity": list(a.velocity)}
                   for a in scene.agents],
        "lanes": [{"polyline": l.polyline.tolist(), "lane_half_width": l.lane_half_width}
                  for l in scene.lanes],
        "ego": {"position": list(scene.ego.position), "heading": scene.ego.heading,
                "speed": scene.ego.speed},
        "drivable_mask": rle_encode(scene.drivable_mask),
        "stop_line": None if scene.stop_line is None else {
            "start": list(scene.stop_line.start), "end": list(scene.stop_line.end),
            "state": scene.stop_line.state},
        "gt_trajectory": {"dt": scene.dt, "poses": scene.gt_trajectory.poses.tolist()},
    }


def scene_from_dict(d):
    meta = d.get("meta", {})
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported scene format_version {meta.get('format_version')!r}")
    g = d["grid"]
    grid = GridSpec(g["width_cells"], g["height_cells"], g["resolution"], tuple(g["origin"]))
    agents = tuple(Agent(tuple(a["position"]), a["radius"], tuple(a["velocity"])) for a in d["agents"])
    lanes = tuple(LaneCenterline(np.array(l["polyline"]), l["lane_half_width"]) for l in d["lanes"])
    e = d["ego"]
    ego = EgoState(tuple(e["position"]), e["heading"], e["speed"])
    sl = d.get("stop_line")
    stop_line = None if sl is None else StopLine(tuple(sl["start"]), tuple(sl["end"]), sl["state"])
    gt = Trajectory(np.array(d["gt_trajectory"]["poses"]), d["gt_trajectory"]["dt"])
    return Scene(grid, agents, lanes, ego, rle_decode(d["drivable_mask"]), gt, stop_line,
                 d.get("scene_id", ""))


def dumps_scene(scene):
    return json.dumps(scene_to_dict(scene), sort_keys=True, indent=1)


def loads_scene(text):
    return scene_from_dict(json.loads(text))


def save_scene(scene, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_scene(scene))


def load_scene(path):
    with open(path, encoding="utf-8") as f:
        return loads_scene(f.read())


def with_agents(scene, agents):
    """Copy of ``scene`` with a different agent list (GT is not revalidated)."""
    return replace(scene, agents=tuple(agents))
