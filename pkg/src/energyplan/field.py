"""Analytic energy fields on the BEV grid.

Risk energy is a sum of isotropic Gaussians centred on agents; lane energy is
quadratic in the lateral offset from the nearest centerline plus a linear
term in the remaining arc length. Both carry exact per-cell gradients.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .scene import project_points

FIELD_MAGIC = b"EFLD"
FIELD_FORMAT_VERSION = 1


class FieldBoundsError(ValueError):
    def __init__(self, point):
        self.point = tuple(float(v) for v in np.ravel(point)[:2])
        super().__init__(f"point {self.point} lies outside the field grid")


@dataclass(frozen=True)
class RiskFieldParams:
    eta: float = 1.0
    sigma: float = 10.0

    def __post_init__(self):
        if not (self.eta > 0 and self.sigma > 0):
            raise ValueError("eta and sigma must be positive")


@dataclass(frozen=True)
class LaneFieldParams:
    k_lat: float = 1.0
    k_lon: float = 10.0

    def __post_init__(self):
        if self.k_lat < 0 or self.k_lon < 0 or (self.k_lat == 0 and self.k_lon == 0):
            raise ValueError("k_lat, k_lon must be non-negative and not both zero")


@dataclass(frozen=True, eq=False)
class EnergyField:
    """Scalar energy ``values`` (H, W) with gradient ``grad`` (H, W, 2) = (dU/dx, dU/dy)."""
    values: np.ndarray
    grad: np.ndarray
    grid: object

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        g = np.array(self.grad, dtype=float)
        if v.shape != self.grid.shape or g.shape != self.grid.shape + (2,):
            raise ValueError("field arrays do not match the grid")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g))):
            raise ValueError("field contains non-finite values")
        v.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "grad", g)

    def channels(self):
        """(3, H, W) stack ordered value, grad_u, grad_v."""
        return np.stack([self.values, self.grad[..., 0], self.grad[..., 1]])


def _cell_points(grid):
    xs, ys = grid.cell_centers()
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def risk_values(points, agent_positions, params):
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    agent_positions = np.asarray(agent_positions, dtype=float).reshape(-1, 2)
    diff = points[:, None, :] - agent_positions[None, :, :]
    r2 = np.einsum("pak,pak->pa", diff, diff)
    return (params.eta * np.exp(-r2 / (2.0 * params.sigma ** 2))).sum(axis=1)


def risk_gradients(points, agent_positions, params):
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    agent_positions = np.asarray(agent_positions, dtype=float).reshape(-1, 2)
    s2 = params.sigma ** 2
    diff = points[:, None, :] - agent_positions[None, :, :]
    r2 = np.einsum("pak,pak->pa", diff, diff)
    w = params.eta * np.exp(-r2 / (2.0 * s2))
    return -(diff / s2 * w[..., None]).sum(axis=1)


def _agent_positions(scene):
    return np.array([a.position for a in scene.agents], dtype=float).reshape(-1, 2)


def risk_field(scene, params=RiskFieldParams()):
    """Gaussian risk energy over all agents (the ego is not an agent)."""
    pts = _cell_points(scene.grid)
    pos = _agent_positions(scene)
    h, w = scene.grid.shape
    return EnergyField(risk_values(pts, pos, params).reshape(h, w),
                       risk_gradients(pts, pos, params).reshape(h, w, 2), scene.grid)


def risk_gradient(p, scene, params=RiskFieldParams()):
    return risk_gradients(np.asarray(p, dtype=float)[None, :], _agent_positions(scene), params)[0]


def risk_value(p, scene, params=RiskFieldParams()):
    return float(risk_values(np.asarray(p, dtype=float)[None, :], _agent_positions(scene), params)[0])


def lane_energy(points, lanes, params):
    """Lane energy and its gradient at arbitrary points.

    The lane with the smallest lateral distance wins (lowest index on ties).
    Where the projection is clamped to a vertex the arc length is locally
    constant, so only the lateral term contributes to the gradient.
    """
    if not lanes:
        raise ValueError("lane field needs at least one lane")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    best_d = np.full(n, np.inf)
    value = np.zeros(n)
    grad = np.zeros((n, 2))
    for lane in lanes:
        d, s, seg, t, foot = project_points(points, lane)
        better = d < best_d
        if not np.any(better):
            continue
        seg_vec = lane.polyline[seg + 1] - lane.polyline[seg]
        tangent = seg_vec / lane._seglen[seg][:, None]
        interior = ((t > 0.0) & (t < 1.0))[:, None]
        g = params.k_lat * (points - foot) - params.k_lon * np.where(interior, tangent, 0.0)
        v = 0.5 * params.k_lat * d ** 2 + params.k_lon * (lane.length - s)
        best_d = np.where(better, d, best_d)
        value = np.where(better, v, value)
        grad = np.where(better[:, None], g, grad)
    return value, grad


def lane_field(scene, params=LaneFieldParams()):
    if not scene.lanes:
        raise ValueError("lane field needs at least one lane")
    pts = _cell_points(scene.grid)
    v, g = lane_energy(pts, scene.lanes, params)
    h, w = scene.grid.shape
    return EnergyField(v.reshape(h, w), g.reshape(h, w, 2), scene.grid)


def combined_field(risk, lane, w_risk=1.0, w_lane=0.01):
    if risk.grid != lane.grid:
        raise ValueError("cannot combine fields on different grids")
    return EnergyField(w_risk * risk.values + w_lane * lane.values,
                       w_risk * risk.grad + w_lane * lane.grad, risk.grid)


def zero_field(grid):
    return EnergyField(np.zeros(grid.shape), np.zeros(grid.shape + (2,)), grid)


def _bilinear_weights(grid, pts):
    fx = (pts[:, 0] - grid.origin[0]) / grid.resolution
    fy = (pts[:, 1] - grid.origin[1]) / grid.resolution
    c0 = np.clip(np.floor(fx).astype(int), 0, grid.width_cells - 2) if grid.width_cells > 1 else np.zeros(len(pts), int)
    r0 = np.clip(np.floor(fy).astype(int), 0, grid.height_cells - 2) if grid.height_cells > 1 else np.zeros(len(pts), int)
    ax = fx - c0
    ay = fy - r0
    return r0, c0, ax, ay


def bilinear_stack(stack, grid, pts):
    """Bilinear interpolation of an (H, W, C) stack at clamped points (P, 2)."""
    pts = grid.clamp(np.asarray(pts, dtype=float).reshape(-1, 2))
    r0, c0, ax, ay = _bilinear_weights(grid, pts)
    r1 = np.minimum(r0 + 1, grid.height_cells - 1)
    c1 = np.minimum(c0 + 1, grid.width_cells - 1)
    ax = ax[:, None]
    ay = ay[:, None]
    return ((1 - ax) * (1 - ay) * stack[r0, c0] + ax * (1 - ay) * stack[r0, c1]
            + (1 - ax) * ay * stack[r1, c0] + ax * ay * stack[r1, c1])


def sample_many(field, pts, clamp=False):
    """Bilinear samples of values (P,) and gradients (P, 2) at points (P, 2)."""
    grid = field.grid
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if clamp:
        pts = grid.clamp(pts)
    else:
        tol = 1e-9 * grid.resolution
        bad = ((pts[:, 0] < grid.origin[0] - tol) | (pts[:, 0] > grid.x_max + tol)
               | (pts[:, 1] < grid.origin[1] - tol) | (pts[:, 1] > grid.y_max + tol))
        if np.any(bad):
            raise FieldBoundsError(pts[np.flatnonzero(bad)[0]])
    r0, c0, ax, ay = _bilinear_weights(grid, pts)
    r1 = np.minimum(r0 + 1, grid.height_cells - 1)
    c1 = np.minimum(c0 + 1, grid.width_cells - 1)
    w00 = (1 - ax) * (1 - ay)
    w01 = ax * (1 - ay)
    w10 = (1 - ax) * ay
    w11 = ax * ay

    def interp(a):
        if a.ndim == 3:
            return (w00[:, None] * a[r0, c0] + w01[:, None] * a[r0, c1]
                    + w10[:, None] * a[r1, c0] + w11[:, None] * a[r1, c1])
        return w00 * a[r0, c0] + w01 * a[r0, c1] + w10 * a[r1, c0] + w11 * a[r1, c1]

    return interp(field.values), interp(field.grad)


def sample_field(field, p):
    """Bilinear (value, grad) at a single point inside the grid extent."""
    v, g = sample_many(field, np.asarray(p, dtype=float)[None, :])
    return float(v[0]), g[0]


def dump_field(field, path_or_file):
    """Write value, grad_u, grad_v as little-endian float32 after a small header."""
    h, w = field.grid.shape
    payload = struct.pack("<4sIIII", FIELD_MAGIC, FIELD_FORMAT_VERSION, h, w, 3)
    payload += field.channels().astype("<f4").tobytes()
    if hasattr(path_or_file, "write"):
        path_or_file.write(payload)
    else:
        with open(path_or_file, "wb") as f:
            f.write(payload)
    return payload


def load_field_channels(path_or_bytes):
    """Read a field dump back as a (C, H, W) float32 array."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        data = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as f:
            data = f.read()
    magic, version, h, w, c = struct.unpack_from("<4sIIII", data, 0)
    if magic != FIELD_MAGIC:
        raise ValueError("not a field dump")
    if version != FIELD_FORMAT_VERSION:
        raise ValueError(f"unsupported field format_version {version}")
    off = struct.calcsize("<4sIIII")
    return np.frombuffer(data, dtype="<f4", count=c * h * w, offset=off).reshape(c, h, w)
