"""Per-cell regressor that predicts risk and lane energy from local occupancy features."""

import logging
from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np

from . import nnkit
from .field import EnergyField, LaneFieldParams, RiskFieldParams, lane_field, risk_field
from .scene import nearest_lane

logger = logging.getLogger(__name__)

MAX_AGENT_DISTANCE = 50.0


def feature_dim(r):
    return (2 * r + 1) ** 2 + 4


def featurize(scene, r=2):
    """(H, W, (2r+1)^2 + 4) feature grid.

    Per cell: occupancy of the (2r+1)^2 neighbourhood (zero padded), distance
    to the nearest agent centre (capped), lateral distance d and normalised
    arc length s/L of the nearest lane, drivable flag.
    """
    grid = scene.grid
    h, w = grid.shape
    xs, ys = grid.cell_centers()
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    pos, _, rad = scene.agent_arrays()
    if len(pos):
        diff = pts[:, None, :] - pos[None, :, :]
        dist = np.sqrt(np.einsum("pak,pak->pa", diff, diff))
        occ = np.any(dist <= rad[None, :], axis=1).reshape(h, w).astype(float)
        nearest = np.minimum(dist.min(axis=1), MAX_AGENT_DISTANCE)
    else:
        occ = np.zeros((h, w))
        nearest = np.full(len(pts), MAX_AGENT_DISTANCE)
    padded = np.pad(occ, r)
    window = np.lib.stride_tricks.sliding_window_view(padded, (2 * r + 1, 2 * r + 1))
    occ_feats = window.reshape(h, w, -1)
    idx, d, s = nearest_lane(pts, scene.lanes)
    lengths = np.array([lane.length for lane in scene.lanes])[idx]
    extra = np.stack([nearest, d, s / lengths, scene.drivable_mask.ravel().astype(float)], axis=1)
    return np.concatenate([occ_feats, extra.reshape(h, w, 4)], axis=2)


@dataclass
class FieldTrainConfig:
    radius: int = 2
    hidden: Tuple[int, ...] = (32, 32)
    epochs: int = 200
    lr: float = 1e-2
    batch_size: int = 512
    cells_per_scene: int = 256
    lam: float = 1.0
    optimizer: str = "adam"
    seed: int = 0
    risk: RiskFieldParams = field(default_factory=RiskFieldParams)
    lane: LaneFieldParams = field(default_factory=LaneFieldParams)

    def to_dict(self):
        return asdict(self)


class FieldRegressor:
    """Feature standardisation, a small tanh net, and fixed per-field output scales."""

    def __init__(self, d_feat, hidden=(32, 32), rng=None):
        self.net = nnkit.FeedForwardNet([d_feat, *hidden, 2], rng=rng)
        self.feature_mean = np.zeros(d_feat)
        self.feature_std = np.ones(d_feat)
        self.target_scale = np.ones(2)

    @classmethod
    def zeros(cls, d_feat, hidden=(32, 32)):
        reg = cls(d_feat, hidden)
        for p in reg.net.params():
            p[...] = 0.0
        return reg

    @property
    def d_feat(self):
        return self.net.in_dim

    def params(self):
        return self.net.params()

    def buffers(self):
        return [self.feature_mean, self.feature_std, self.target_scale]

    def _standardise(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d_feat:
            raise ValueError(f"feature width {x.shape[-1]} != regressor input {self.d_feat}")
        return (x - self.feature_mean) / self.feature_std

    def predict_normalised(self, x):
        return self.net.forward(self._standardise(x))

    def predict(self, x):
        return self.predict_normalised(x) * self.target_scale


def flow_loss(pred, target, lam):
    """lam * (MSE over the risk channel + MSE over the lane channel)."""
    diff = pred - target
    return lam * float(np.mean(diff[:, 0] ** 2) + np.mean(diff[:, 1] ** 2))


def flow_loss_and_grads(reg, x, target_norm, lam):
    """Loss on scale-normalised targets and its parameter gradients."""
    z = reg._standardise(x)
    pred, cache = reg.net.forward_cache(z)
    diff = pred - target_norm
    n = len(x)
    loss = lam * float(np.mean(diff[:, 0] ** 2) + np.mean(diff[:, 1] ** 2))
    grads, _ = reg.net.backward(cache, lam * 2.0 * diff / n)
    return loss, grads


def field_targets(scene, risk_params, lane_params):
    return np.stack([risk_field(scene, risk_params).values.ravel(),
                     lane_field(scene, lane_params).values.ravel()], axis=1)


def build_field_dataset(scenes, config, targets=None):
    """Sampled (features, targets) rows; ``targets`` may override the analytic fields."""
    rng = np.random.default_rng(config.seed)
    xs, ys = [], []
    for i, scene in enumerate(scenes):
        feats = featurize(scene, config.radius).reshape(-1, feature_dim(config.radius))
        tgt = targets[i] if targets is not None else field_targets(scene, config.risk, config.lane)
        n = min(config.cells_per_scene, len(feats)) if config.cells_per_scene else len(feats)
        pick = np.sort(rng.choice(len(feats), size=n, replace=False))
        xs.append(feats[pick])
        ys.append(np.asarray(tgt, dtype=float).reshape(-1, 2)[pick])
    return np.concatenate(xs), np.concatenate(ys)


def train_field_regressor(scenes, config=None, targets=None, dataset=None):
    """Fit the regressor to analytic fields. Returns (regressor, per-epoch loss).

    ``losses[0]`` is the loss before any update; ``losses[e]`` the full-data
    loss after epoch e.
    """
    config = config or FieldTrainConfig()
    if dataset is None:
        if not scenes:
            raise ValueError("field training needs at least one scene")
        x, y = build_field_dataset(scenes, config, targets)
    else:
        x, y = dataset
    rng = np.random.default_rng(config.seed)
    reg = FieldRegressor(x.shape[1], config.hidden, rng=rng)
    reg.feature_mean[...] = x.mean(axis=0)
    reg.feature_std[...] = np.maximum(x.std(axis=0), 1e-6)
    rms = np.sqrt(np.mean(y ** 2, axis=0))
    reg.target_scale[...] = np.where(rms > 0, rms, 1.0)
    y_norm = y / reg.target_scale

    params = reg.params()
    opt = nnkit.Adam(lr=config.lr)
    losses = [flow_loss_and_grads(reg, x, y_norm, config.lam)[0]]
    n = len(x)
    for epoch in range(config.epochs):
        if config.optimizer == "sgd":
            _, grads = flow_loss_and_grads(reg, x, y_norm, config.lam)
            nnkit.sgd_step(params, grads, config.lr)
        else:
            order = rng.permutation(n)
            for start in range(0, n, config.batch_size):
                batch = order[start:start + config.batch_size]
                _, grads = flow_loss_and_grads(reg, x[batch], y_norm[batch], config.lam)
                opt.step(params, grads)
        loss = flow_loss_and_grads(reg, x, y_norm, config.lam)[0]
        if not np.isfinite(loss):
            raise nnkit.DivergenceError(f"field loss diverged at epoch {epoch + 1}", losses[-1])
        losses.append(loss)
    logger.info("field regressor: loss %.4g -> %.4g", losses[0], losses[-1])
    return reg, np.array(losses)


def predict_fields(reg, features, grid):
    """Apply the regressor per cell; gradients by central differences of the prediction."""
    features = np.asarray(features, dtype=float)
    h, w = grid.shape
    if features.shape[:2] != (h, w):
        raise ValueError("feature grid does not match the field grid")
    out = reg.predict(features.reshape(h * w, -1)).reshape(h, w, 2)
    fields = []
    for c in range(2):
        v = out[..., c]
        gy, gx = np.gradient(v, grid.resolution) if min(h, w) > 1 else (np.zeros_like(v), np.zeros_like(v))
        fields.append(EnergyField(v, np.stack([gx, gy], axis=-1), grid))
    return fields[0], fields[1]
