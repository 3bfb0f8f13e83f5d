"""Small planar geometry kernels shared by scene generation and metrics."""

import math

import numpy as np


def segment_projection(points, a, b):
    """Project points onto every segment a[j]->b[j].

    points: (P, 2); a, b: (S, 2).
    Returns (dist, t, foot), shapes (P, S), (P, S), (P, S, 2). The segment
    parameter ``t`` is clamped to [0, 1].
    """
    points = np.asarray(points, dtype=float)
    ab = b - a
    len2 = np.einsum("ij,ij->i", ab, ab)
    ap = points[:, None, :] - a[None, :, :]
    t = np.einsum("psk,sk->ps", ap, ab) / len2[None, :]
    t = np.clip(t, 0.0, 1.0)
    foot = a[None, :, :] + t[..., None] * ab[None, :, :]
    diff = points[:, None, :] - foot
    dist = np.sqrt(np.einsum("psk,psk->ps", diff, diff))
    return dist, t, foot


def min_distance_linear(p0, v, dur):
    """Minimum of |p0 + v*tau| over tau in [0, dur] for relative motion."""
    p0 = np.asarray(p0, dtype=float)
    v = np.asarray(v, dtype=float)
    vv = float(v @ v)
    if vv == 0.0 or dur <= 0.0:
        return float(math.hypot(*p0)), 0.0
    tau = min(max(-float(p0 @ v) / vv, 0.0), dur)
    closest = p0 + v * tau
    return float(math.hypot(*closest)), tau


def time_to_contact(rel_pos, rel_vel, radius):
    """Earliest tau >= 0 with |rel_pos + rel_vel*tau| <= radius, inf if never.

    Returns 0.0 when the discs already overlap.
    """
    rel_pos = np.asarray(rel_pos, dtype=float)
    rel_vel = np.asarray(rel_vel, dtype=float)
    c = float(rel_pos @ rel_pos) - radius * radius
    if c <= 0.0:
        return 0.0
    a = float(rel_vel @ rel_vel)
    if a == 0.0:
        return math.inf
    b = 2.0 * float(rel_pos @ rel_vel)
    disc = b * b - 4.0 * a * c
    if disc < 0.0 or b >= 0.0:
        return math.inf
    return (-b - math.sqrt(disc)) / (2.0 * a)


def segments_intersect(p1, p2, q1, q2):
    """Closed-segment intersection test for p1-p2 and q1-q2."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    if d1 == 0 and on_seg(q1, q2, p1):
        return True
    if d2 == 0 and on_seg(q1, q2, p2):
        return True
    if d3 == 0 and on_seg(p1, p2, q1):
        return True
    if d4 == 0 and on_seg(p1, p2, q2):
        return True
    return False


def headings_from_waypoints(start, waypoints):
    """Heading of each waypoint from the displacement that reaches it."""
    pts = np.vstack([np.asarray(start, dtype=float)[None, :], np.asarray(waypoints, dtype=float)])
    d = np.diff(pts, axis=0)
    return np.arctan2(d[:, 1], d[:, 0])


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def path_clearance(ego_xy, dt, agent_pos, agent_vel, radii):
    """Smallest gap (centre distance minus combined radius) over continuous time.

    ``ego_xy`` holds K+1 positions at times 0, dt, ..., K*dt; the ego moves
    linearly between them and agents move at constant velocity. Returns inf
    when there are no agents.
    """
    ego_xy = np.asarray(ego_xy, dtype=float)
    agent_pos = np.asarray(agent_pos, dtype=float).reshape(-1, 2)
    agent_vel = np.asarray(agent_vel, dtype=float).reshape(-1, 2)
    best = math.inf
    for i in range(len(agent_pos)):
        for k in range(len(ego_xy) - 1):
            t0 = k * dt
            rel0 = ego_xy[k] - (agent_pos[i] + agent_vel[i] * t0)
            rel_v = (ego_xy[k + 1] - ego_xy[k]) / dt - agent_vel[i]
            dist, _ = min_distance_linear(rel0, rel_v, dt)
            best = min(best, dist - radii[i])
    return best


def ego_velocities(ego_xy, start_velocity, dt):
    """Velocity at each instant: the initial state, then backward differences."""
    ego_xy = np.asarray(ego_xy, dtype=float)
    vel = np.empty_like(ego_xy)
    vel[0] = start_velocity
    vel[1:] = np.diff(ego_xy, axis=0) / dt
    return vel


def min_time_to_collision(ego_xy, ego_vel, dt, agent_pos, agent_vel, radii):
    """Minimum constant-velocity time-to-collision over the instants of a path."""
    ego_xy = np.asarray(ego_xy, dtype=float)
    agent_pos = np.asarray(agent_pos, dtype=float).reshape(-1, 2)
    agent_vel = np.asarray(agent_vel, dtype=float).reshape(-1, 2)
    best = math.inf
    for k in range(len(ego_xy)):
        t = k * dt
        for i in range(len(agent_pos)):
            rel = ego_xy[k] - (agent_pos[i] + agent_vel[i] * t)
            best = min(best, time_to_contact(rel, ego_vel[k] - agent_vel[i], radii[i]))
    return best
