"""Field and ego-state features fed to the refinement net and the denoiser."""

from dataclasses import dataclass

import numpy as np

from .field import LaneFieldParams, RiskFieldParams, bilinear_stack, lane_field, risk_field, zero_field

N_FIELD_CHANNELS = 6
EGO_DIM = 5
COORD_SCALE = 10.0
# speed enters as (v - SPEED_REF) / SPEED_SCALE; trajectory length is very
# sensitive to it, so it needs an O(1) spread across typical scenes
SPEED_REF = 6.0
SPEED_SCALE = 1.0


@dataclass(frozen=True)
class FieldNormaliser:
    """Fixed channel scales so field inputs are O(1) for default parameters."""
    risk: RiskFieldParams = RiskFieldParams()
    lane: LaneFieldParams = LaneFieldParams()
    lane_extent: float = 50.0

    def scales(self):
        r_v = self.risk.eta
        r_g = self.risk.eta / self.risk.sigma
        l_v = max(self.lane.k_lon * self.lane_extent + 0.5 * self.lane.k_lat * 25.0, 1e-12)
        l_g = max(self.lane.k_lon + self.lane.k_lat * 5.0, 1e-12)
        return np.array([r_v, r_g, r_g, l_v, l_g, l_g])


def ego_features(ego):
    x, y = ego.position
    return np.array([x / COORD_SCALE, y / COORD_SCALE, np.cos(ego.heading), np.sin(ego.heading),
                     (ego.speed - SPEED_REF) / SPEED_SCALE])


@dataclass(frozen=True, eq=False)
class SceneContext:
    """Everything the learned modules read from a scene, precomputed once."""
    grid: object
    stack: np.ndarray        # (H, W, 6) normalised risk value/grad, lane value/grad
    pooled: np.ndarray       # (6,) global average of ``stack``
    ego: np.ndarray          # (5,)
    ego_start: np.ndarray    # (2,) ego position in metres

    def local(self, pts):
        """Bilinear samples of all six channels at points (..., 2), clamped to the grid."""
        pts = np.asarray(pts, dtype=float)
        out = bilinear_stack(self.stack, self.grid, pts.reshape(-1, 2))
        return out.reshape(pts.shape[:-1] + (N_FIELD_CHANNELS,))


def field_stack(risk, lane, normaliser):
    raw = np.concatenate([risk.values[..., None], risk.grad, lane.values[..., None], lane.grad], axis=-1)
    return raw / normaliser.scales()


def make_context(scene, risk=None, lane=None, normaliser=None, zero_fields=False):
    """Context from analytic fields (default), given fields, or all-zero fields."""
    normaliser = normaliser or FieldNormaliser()
    if zero_fields:
        risk = lane = zero_field(scene.grid)
    else:
        risk = risk if risk is not None else risk_field(scene, normaliser.risk)
        lane = lane if lane is not None else lane_field(scene, normaliser.lane)
    stack = field_stack(risk, lane, normaliser)
    stack.setflags(write=False)
    return SceneContext(scene.grid, stack, stack.mean(axis=(0, 1)), ego_features(scene.ego),
                        np.asarray(scene.ego.position, dtype=float))
