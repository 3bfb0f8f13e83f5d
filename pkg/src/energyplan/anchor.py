"""Anchor trajectories: K-means construction, learned field-aware refinement,
an energy-descent refinement used as a reference, and closest-to-GT labels."""

import json
from dataclasses import dataclass

import numpy as np

from . import nnkit
from .conditioning import (COORD_SCALE, EGO_DIM, N_FIELD_CHANNELS, FieldNormaliser, SceneContext,
                           ego_features, field_stack)
from .field import sample_many

ANCHOR_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class AnchorSet:
    anchors: np.ndarray            # (N, t_f, 2) metres
    provenance: str = "kmeans"

    def __post_init__(self):
        a = np.array(self.anchors, dtype=float)
        if a.ndim != 3 or a.shape[2] != 2 or a.shape[0] < 1:
            raise ValueError("anchors must have shape (N, t_f, 2) with N >= 1")
        if not np.all(np.isfinite(a)):
            raise ValueError("anchor waypoints must be finite")
        if self.provenance not in ("kmeans", "refined"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        a.setflags(write=False)
        object.__setattr__(self, "anchors", a)

    @property
    def n(self):
        return self.anchors.shape[0]

    @property
    def t_f(self):
        return self.anchors.shape[1]

    def to_dict(self):
        return {"format_version": ANCHOR_FORMAT_VERSION, "N": self.n, "t_f": self.t_f,
                "provenance": self.provenance, "waypoints": self.anchors.ravel().tolist()}

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != ANCHOR_FORMAT_VERSION:
            raise ValueError(f"unsupported anchor format_version {d.get('format_version')!r}")
        a = np.array(d["waypoints"], dtype=float).reshape(d["N"], d["t_f"], 2)
        return cls(a, d["provenance"])

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _as_waypoints(corpus):
    if isinstance(corpus, np.ndarray):
        arr = np.asarray(corpus, dtype=float)
    else:
        items = [np.asarray(getattr(t, "xy", t), dtype=float)[:, :2] for t in corpus]
        if len({it.shape for it in items}) > 1:
            raise ValueError("all corpus trajectories must share t_f")
        arr = np.stack(items) if items else np.zeros((0, 1, 2))
    return arr[..., :2]


def _kmeanspp(x, k, rng):
    n = len(x)
    centers = [x[int(rng.integers(n))]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(x, k, seed=0, max_iter=100):
    """Lloyd iterations with k-means++ seeding.

    Returns (centers, labels, objective history). Empty clusters are
    reseeded from the point farthest from its current centre.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < k:
        raise ValueError(f"corpus of {len(x)} trajectories is smaller than N={k}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(x)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                resid = ((x - centers[labels]) ** 2).sum(axis=1)
                far = int(np.argmax(resid))
                centers[j] = x[far]
                labels[far] = j
    return centers, labels, history


def kmeans_anchors(corpus, n, seed=0):
    wp = _as_waypoints(corpus)
    if len(wp) < n:
        raise ValueError(f"corpus of {len(wp)} trajectories is smaller than N={n}")
    t_f = wp.shape[1]
    centers, _, _ = kmeans(wp.reshape(len(wp), -1), n, seed)
    return AnchorSet(centers.reshape(n, t_f, 2), "kmeans")


class RefinementNet:
    """Residual predictor: pooled field features and an ego encoder feed a head
    whose output offsets every anchor waypoint. The head's last layer starts
    at zero, so a fresh net leaves anchors untouched."""

    def __init__(self, n_anchors, t_f, ego_hidden=32, hidden=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_anchors = n_anchors
        self.t_f = t_f
        self.ego_encoder = nnkit.FeedForwardNet([EGO_DIM + N_FIELD_CHANNELS, ego_hidden], ["tanh"], rng=rng)
        self.head = nnkit.FeedForwardNet([N_FIELD_CHANNELS + ego_hidden, hidden, n_anchors * t_f * 2],
                                         rng=rng, zero_last=True)

    def params(self):
        return self.ego_encoder.params() + self.head.params()

    def describe(self):
        return {"ego_encoder": self.ego_encoder.describe(), "head": self.head.describe()}

    def residual_cache(self, pooled, ego):
        """pooled (B, 6), ego (B, 5) -> residual (B, N, t_f, 2) in metres."""
        pooled = np.atleast_2d(pooled)
        ego = np.atleast_2d(ego)
        e, c1 = self.ego_encoder.forward_cache(np.concatenate([ego, pooled], axis=1))
        out, c2 = self.head.forward_cache(np.concatenate([pooled, e], axis=1))
        res = out.reshape(-1, self.n_anchors, self.t_f, 2) * COORD_SCALE
        return res, (c1, c2, e.shape[1])

    def residual(self, pooled, ego):
        return self.residual_cache(pooled, ego)[0]

    def backward(self, cache, d_res):
        c1, c2, e_dim = cache
        d_out = np.asarray(d_res).reshape(len(d_res), -1) * COORD_SCALE
        g_head, d_in = self.head.backward(c2, d_out)
        g_enc, _ = self.ego_encoder.backward(c1, d_in[:, N_FIELD_CHANNELS:])
        return g_enc + g_head


def refine_with_context(anchors, context, net):
    if net.n_anchors != anchors.n or net.t_f != anchors.t_f:
        raise ValueError(f"refinement net expects ({net.n_anchors}, {net.t_f}) anchors, "
                         f"got ({anchors.n}, {anchors.t_f})")
    res = net.residual(context.pooled[None, :], context.ego[None, :])[0]
    return AnchorSet(anchors.anchors + res, "refined")


def refine_anchors(anchors, fields, ego, net, normaliser=None):
    """Anchors plus the net's residual given (risk, lane) fields and ego state."""
    risk, lane = fields
    stack = field_stack(risk, lane, normaliser or FieldNormaliser())
    ctx = SceneContext(risk.grid, stack, stack.mean(axis=(0, 1)), ego_features(ego),
                       np.asarray(ego.position, dtype=float))
    return refine_with_context(anchors, ctx, net)


def energy_descent_refine(anchors, field, steps, step_size):
    """Move every waypoint down the sampled field gradient, clamped to the grid."""
    pts = np.array(anchors.anchors, dtype=float).reshape(-1, 2)
    for _ in range(int(steps)):
        _, g = sample_many(field, pts, clamp=True)
        pts = field.grid.clamp(pts - step_size * g)
    return AnchorSet(pts.reshape(anchors.anchors.shape), anchors.provenance)


def l1_distance(cands, gt):
    """Mean over waypoints of |dx| + |dy|, per candidate: (N,)."""
    cands = np.asarray(getattr(cands, "anchors", cands), dtype=float)[..., :2]
    gt = np.asarray(getattr(gt, "xy", gt), dtype=float)[..., :2]
    return np.abs(cands - gt[None]).sum(axis=2).mean(axis=1)


def label_closest(cands, gt):
    """One-hot over candidates: 1 at the smallest summed L1 distance (lowest index on ties)."""
    cands = np.asarray(getattr(cands, "anchors", cands), dtype=float)[..., :2]
    gt = np.asarray(getattr(gt, "xy", gt), dtype=float)[..., :2]
    if cands.shape[1:] != gt.shape:
        raise ValueError("candidate and ground-truth shapes differ")
    dist = np.abs(cands - gt[None]).sum(axis=(1, 2))
    y = np.zeros(len(cands))
    y[int(np.argmin(dist))] = 1.0
    return y
