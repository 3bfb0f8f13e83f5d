import numpy as np
import pytest

from energyplan.scene import (Agent, EgoState, GridSpec, LaneCenterline, Scene, Trajectory,
                              drivable_from_lanes)


def make_scene(agents=(), lanes=None, grid=None, gt=None, ego=None, stop_line=None, dt=0.5):
    """Hand-built scene. ``agents`` holds (x, y) or (x, y, r) or (x, y, r, vx, vy) tuples."""
    grid = grid or GridSpec(64, 64, 1.0, (-8.0, -32.0))
    if lanes is None:
        lanes = [np.array([[-7.0, 0.0], [55.0, 0.0]])]
    lanes = tuple(l if isinstance(l, LaneCenterline) else LaneCenterline(np.asarray(l, dtype=float))
                  for l in lanes)
    ags = []
    for a in agents:
        a = tuple(float(v) for v in a)
        r = a[2] if len(a) > 2 else 1.0
        vel = (a[3], a[4]) if len(a) > 4 else (0.0, 0.0)
        ags.append(Agent((a[0], a[1]), r, vel))
    if gt is None:
        gt = np.stack([np.arange(1, 9) * 3.0, np.zeros(8), np.zeros(8)], axis=1)
    ego = ego or EgoState((0.0, 0.0), 0.0, 6.0)
    return Scene(grid, tuple(ags), lanes, ego, drivable_from_lanes(grid, lanes),
                 Trajectory(np.asarray(gt, dtype=float), dt), stop_line, "hand")


@pytest.fixture
def straight_scene():
    return make_scene()


# -- acceptance summary ------------------------------------------------------

_CRITERIA = {}


def record_criterion(key, title, passed, detail):
    _CRITERIA[key] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:<3} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
