"""Anchored conditional diffusion planner with gated mode / trajectory heads."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import nnkit
from .anchor import RefinementNet, kmeans_anchors, label_closest, refine_with_context
from .conditioning import COORD_SCALE, EGO_DIM, N_FIELD_CHANNELS, make_context
from .geometry import headings_from_waypoints
from .scene import mirror_scene

logger = logging.getLogger(__name__)

CANDIDATE_FORMAT_VERSION = 1
ABLATIONS = (None, "no-flow", "no-adapt", "no-decouple")


# -- schedule and the two closed-form updates --------------------------------

@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    alpha: np.ndarray        # alpha_1 .. alpha_T
    alpha_bar: np.ndarray    # alpha_bar_0 = 1, then cumulative products
    kind: str = "linear"

    @property
    def T(self):
        return len(self.alpha)


def make_schedule(T, kind="linear", beta_start=1e-4, beta_end=2e-3, max_beta=0.999):
    """Linear betas in [beta_start, beta_end], or the cosine alpha_bar curve."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if kind == "linear":
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ValueError(f"invalid beta range ({beta_start}, {beta_end})")
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        if not 0.0 < max_beta < 1.0:
            raise ValueError(f"invalid max_beta {max_beta}")
        s = 0.008
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, max_beta)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - betas
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    alpha.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(alpha, alpha_bar, kind)


def forward_noise(a0, t, eps, sched):
    """sqrt(abar_t) * a0 + sqrt(1 - abar_t) * eps."""
    a0 = np.asarray(getattr(a0, "anchors", a0), dtype=float)
    eps = np.asarray(eps, dtype=float)
    if a0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != anchor shape {a0.shape}")
    if not 0 <= t <= sched.T:
        raise ValueError(f"timestep {t} outside [0, {sched.T}]")
    ab = sched.alpha_bar[t]
    return math.sqrt(ab) * a0 + math.sqrt(1.0 - ab) * eps


def ddim_step(a_t, a0_hat, t, t_prev, sched):
    """Deterministic reverse update from t to t_prev given a clean estimate."""
    if not 0 <= t_prev < t <= sched.T:
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    ab_t = sched.alpha_bar[t]
    ab_p = sched.alpha_bar[t_prev]
    eps_hat = (np.asarray(a_t) - math.sqrt(ab_t) * a0_hat) / math.sqrt(1.0 - ab_t)
    return math.sqrt(ab_p) * a0_hat + math.sqrt(1.0 - ab_p) * eps_hat


def ddim_timesteps(T, steps):
    if not 1 <= steps <= T:
        raise ValueError(f"ddim_steps must lie in [1, {T}]")
    ts = np.round(np.linspace(T, 0, steps + 1)).astype(int)
    return list(zip(ts[:-1].tolist(), ts[1:].tolist()))


def timestep_embedding(t, dim=8, T=50):
    t = np.asarray(t, dtype=float).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-math.log(max(T, 2)) * np.arange(half) / max(half, 1))
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)], axis=1)


def bce(scores, labels, eps=1e-12):
    scores = np.clip(np.asarray(scores, dtype=float), eps, 1 - eps)
    labels = np.asarray(labels, dtype=float)
    return -(labels * np.log(scores) + (1 - labels) * np.log(1 - scores))


def bce_with_logits(logits, labels):
    """Stable elementwise BCE on logits and its derivative."""
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return loss, nnkit.sigmoid(z) - y


# -- denoiser ----------------------------------------------------------------

class Denoiser:
    """Shared trunk over per-anchor conditioning, then gated task heads.

    Each anchor row sees its noisy waypoints, the six field channels sampled
    at those waypoints, pooled field features, the ego state and a timestep
    embedding. The mode head reads trunk features through gate g1, the
    trajectory head through gate g2. With ``decoupled=False`` one shared
    head emits both outputs from ungated features.
    """

    def __init__(self, n_anchors, t_f, T, width=64, head_hidden=32, time_dim=8, decoupled=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_anchors = n_anchors
        self.t_f = t_f
        self.T = T
        self.time_dim = time_dim
        self.decoupled = decoupled
        self.trained = False
        in_dim = 2 * t_f * (2 + N_FIELD_CHANNELS) + N_FIELD_CHANNELS + EGO_DIM + time_dim
        self.trunk = nnkit.FeedForwardNet([in_dim, width, width], ["tanh", "tanh"], rng=rng)
        if decoupled:
            self.gate_mode = nnkit.GateVector(width)
            self.gate_traj = nnkit.GateVector(width)
            self.mode_head = nnkit.FeedForwardNet([width, head_hidden, 1], rng=rng)
            self.traj_head = nnkit.FeedForwardNet([width, head_hidden, t_f * 2], rng=rng)
        else:
            self.shared_head = nnkit.FeedForwardNet([width, head_hidden, 1 + t_f * 2], rng=rng)

    @property
    def in_dim(self):
        return self.trunk.in_dim

    def params(self):
        ps = self.trunk.params()
        if self.decoupled:
            ps += self.gate_mode.params() + self.gate_traj.params()
            ps += self.mode_head.params() + self.traj_head.params()
        else:
            ps += self.shared_head.params()
        return ps

    def describe(self):
        d = {"trunk": self.trunk.describe(), "decoupled": self.decoupled, "time_dim": self.time_dim,
             "n_anchors": self.n_anchors, "t_f": self.t_f, "T": self.T}
        if self.decoupled:
            d.update(mode_head=self.mode_head.describe(), traj_head=self.traj_head.describe())
        else:
            d.update(shared_head=self.shared_head.describe())
        return d

    def heads_cache(self, feats):
        """Heads applied to trunk features: (logits (R,), delta (R, 2 t_f), cache)."""
        if self.decoupled:
            gm, cgm = self.gate_mode.forward_cache(feats)
            gt, cgt = self.gate_traj.forward_cache(feats)
            logit, cm = self.mode_head.forward_cache(gm)
            delta, ct = self.traj_head.forward_cache(gt)
            return logit[:, 0], delta, (cgm, cgt, cm, ct)
        out, cs = self.shared_head.forward_cache(feats)
        return out[:, 0], out[:, 1:], (cs,)

    def forward_cache(self, x, query_flat):
        """x: (R, in_dim) conditioning rows; query_flat: (R, 2 t_f) normalised anchor queries.

        The clean-trajectory estimate is the query plus the trajectory head's offset.
        """
        feats, ctrunk = self.trunk.forward_cache(x)
        logit, delta, chead = self.heads_cache(feats)
        return logit, query_flat + delta, (ctrunk, chead)

    def forward(self, x, query_flat):
        logit, a0, _ = self.forward_cache(x, query_flat)
        return logit, a0

    def backward(self, cache, d_logit, d_a0):
        """Parameter grads in ``params()`` order (queries are treated as data)."""
        ctrunk, chead = cache
        if self.decoupled:
            cgm, cgt, cm, ct = chead
            g_mh, d_gm = self.mode_head.backward(cm, d_logit[:, None])
            g_th, d_gt = self.traj_head.backward(ct, d_a0)
            g_gm, d_f1 = self.gate_mode.backward(cgm, d_gm)
            g_gt, d_f2 = self.gate_traj.backward(cgt, d_gt)
            g_trunk, _ = self.trunk.backward(ctrunk, d_f1 + d_f2)
            return g_trunk + g_gm + g_gt + g_mh + g_th
        (cs,) = chead
        g_sh, d_f = self.shared_head.backward(cs, np.concatenate([d_logit[:, None], d_a0], axis=1))
        g_trunk, _ = self.trunk.backward(ctrunk, d_f)
        return g_trunk + g_sh


def path_frame_samples(context, pts):
    """Field channels at waypoints (N, t_f, 2) in metres, gradients expressed
    along / across each path's direction of travel at that waypoint."""
    local = context.local(pts)
    start = np.broadcast_to(context.ego_start, pts[:, :1].shape)
    d = np.diff(np.concatenate([start, pts], axis=1), axis=1)
    h = np.arctan2(d[..., 1], d[..., 0])
    c, s = np.cos(h), np.sin(h)
    out = np.array(local)
    for i in (1, 4):
        gx, gy = local[..., i], local[..., i + 1]
        out[..., i] = gx * c + gy * s
        out[..., i + 1] = -gx * s + gy * c
    return out


def denoiser_inputs(a_t, queries, contexts, t, time_dim, T):
    """Conditioning rows for noisy anchors a_t (B, N, t_f, 2) in normalised units.

    ``queries`` holds the clean (refined) anchors the noise was placed around,
    same shape and units as ``a_t``. Fields are sampled along both.
    """
    a_t = np.asarray(a_t, dtype=float)
    queries = np.broadcast_to(queries, a_t.shape)
    b, n, t_f, _ = a_t.shape
    local = np.stack([np.concatenate([path_frame_samples(ctx, a_t[i] * COORD_SCALE),
                                      path_frame_samples(ctx, queries[i] * COORD_SCALE)], axis=2)
                      for i, ctx in enumerate(contexts)])
    pooled = np.stack([ctx.pooled for ctx in contexts])
    ego = np.stack([ctx.ego for ctx in contexts])
    temb = timestep_embedding(np.broadcast_to(np.asarray(t), (b,)), time_dim, T)
    per_scene = np.concatenate([pooled, ego, temb], axis=1)
    rows = np.concatenate([a_t.reshape(b, n, -1), queries.reshape(b, n, -1), local.reshape(b, n, -1),
                           np.repeat(per_scene[:, None, :], n, axis=1)], axis=2)
    return rows.reshape(b * n, -1)


# -- candidate set -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CandidateSet:
    trajectories: np.ndarray     # (N, t_f, 3) x, y, heading
    scores: np.ndarray           # (N,) in (0, 1)
    dt: float = 0.5
    scene_id: str = ""

    def __post_init__(self):
        tr = np.array(self.trajectories, dtype=float)
        sc = np.array(self.scores, dtype=float)
        if tr.ndim != 3 or tr.shape[2] != 3 or sc.shape != (tr.shape[0],):
            raise ValueError("candidate trajectories must be (N, t_f, 3) with N scores")
        if not (np.all(np.isfinite(sc)) and np.all(np.isfinite(tr))):
            raise ValueError("candidates must be finite")
        tr.setflags(write=False)
        sc.setflags(write=False)
        object.__setattr__(self, "trajectories", tr)
        object.__setattr__(self, "scores", sc)

    @property
    def selected(self):
        return int(np.argmax(self.scores))

    @property
    def selected_trajectory(self):
        return self.trajectories[self.selected]

    def to_dict(self):
        return {"format_version": CANDIDATE_FORMAT_VERSION, "scene_id": self.scene_id, "dt": self.dt,
                "selected": self.selected, "scores": self.scores.tolist(),
                "trajectories": self.trajectories.tolist()}

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != CANDIDATE_FORMAT_VERSION:
            raise ValueError(f"unsupported candidate format_version {d.get('format_version')!r}")
        return cls(np.array(d["trajectories"]), np.array(d["scores"]), d["dt"], d.get("scene_id", ""))

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def plan(scene, fields, anchors, denoiser, sched, ddim_steps=2, seed=0, zero_fields=False,
         allow_untrained=False, context=None):
    """Sample N candidates by DDIM from noise placed around ``anchors`` (already refined)."""
    if not (denoiser.trained or allow_untrained):
        raise ValueError("denoiser has not been trained")
    if (anchors.n, anchors.t_f) != (denoiser.n_anchors, denoiser.t_f):
        raise ValueError(f"denoiser expects ({denoiser.n_anchors}, {denoiser.t_f}) anchors, "
                         f"got ({anchors.n}, {anchors.t_f})")
    if denoiser.T != sched.T:
        raise ValueError("denoiser and schedule disagree on T")
    if context is None:
        risk, lane = fields if fields is not None else (None, None)
        context = make_context(scene, risk, lane, zero_fields=zero_fields)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(anchors.anchors.shape)
    query = anchors.anchors / COORD_SCALE
    a = forward_noise(query, sched.T, eps, sched)
    n, t_f = anchors.n, anchors.t_f
    logit = None
    for t, t_prev in ddim_timesteps(sched.T, ddim_steps):
        x = denoiser_inputs(a[None], query[None], [context], t, denoiser.time_dim, sched.T)
        logit, a0 = denoiser.forward(x, query.reshape(n, -1))
        a = ddim_step(a, a0.reshape(n, t_f, 2), t, t_prev, sched)
    xy = a * COORD_SCALE
    start = context.ego_start
    heads = np.stack([headings_from_waypoints(start, xy[k]) for k in range(n)])
    traj = np.concatenate([xy, heads[..., None]], axis=2)
    return CandidateSet(traj, nnkit.sigmoid(logit), scene.dt, scene.scene_id)


# -- training ----------------------------------------------------------------

# which trajectories decide the positive mode: refined anchors, raw anchors
# (default: a fixed target per scene) or the denoised predictions of the
# current step
LABEL_SOURCES = ("refined", "anchors", "predicted")


@dataclass
class PlannerConfig:
    n_anchors: int = 20
    T: int = 50
    schedule: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 2e-3
    ddim_steps: int = 2
    lam_traj: float = 1.0
    lam_mode: float = 0.5
    lam_anchor: float = 0.5
    epochs: int = 100
    batch_size: int = 8
    lr: float = 2e-3
    lr_floor: float = 0.1
    refine_lr: float = 2e-4
    refine_hidden: int = 64
    mirror: bool = True
    width: int = 64
    head_hidden: int = 32
    time_dim: int = 8
    seed: int = 0
    ablate: Optional[str] = None
    labels: str = "anchors"

    def __post_init__(self):
        if self.ablate not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablate!r}")
        if self.labels not in LABEL_SOURCES:
            raise ValueError(f"unknown label source {self.labels!r}")

    def to_dict(self):
        return asdict(self)


class Planner:
    """Anchors, refinement net, denoiser and schedule trained together."""

    def __init__(self, anchors, config, t_f):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.anchors = anchors
        self.refiner = RefinementNet(config.n_anchors, t_f, hidden=config.refine_hidden, rng=rng)
        self.denoiser = Denoiser(config.n_anchors, t_f, config.T, config.width, config.head_hidden,
                                 config.time_dim, decoupled=config.ablate != "no-decouple", rng=rng)
        self.schedule = make_schedule(config.T, config.schedule, config.beta_start, config.beta_end)

    @property
    def uses_refinement(self):
        return self.config.ablate != "no-adapt"

    @property
    def zero_fields(self):
        return self.config.ablate == "no-flow"

    def params(self):
        return self.refiner.params() + self.denoiser.params()

    def context(self, scene, fields=None):
        risk, lane = fields if fields is not None else (None, None)
        return make_context(scene, risk, lane, zero_fields=self.zero_fields)

    def refined(self, context):
        if not self.uses_refinement:
            return self.anchors
        return refine_with_context(self.anchors, context, self.refiner)

    def plan_scene(self, scene, seed=0, fields=None, ddim_steps=None, context=None):
        ctx = context if context is not None else self.context(scene, fields)
        return plan(scene, None, self.refined(ctx), self.denoiser, self.schedule,
                    ddim_steps or self.config.ddim_steps, seed, context=ctx)

    def describe(self):
        return {"refiner": self.refiner.describe(), "denoiser": self.denoiser.describe()}


@dataclass
class TrainState:
    epoch: int = 0
    plan_losses: List[float] = field(default_factory=list)
    anchor_losses: List[float] = field(default_factory=list)
    optimizer: Optional[nnkit.Adam] = None
    refine_optimizer: Optional[nnkit.Adam] = None
    rng_state: Optional[dict] = None


def planner_batch_loss(planner, contexts, gts, t, eps):
    """Composite loss on one batch and gradients for every planner parameter.

    contexts: B scene contexts, gts: (B, t_f, 2) metres, t: (B,) timesteps,
    eps: (B, N, t_f, 2). Returns (L_plan, L_anchor, grads).
    """
    cfg = planner.config
    sched = planner.schedule
    b = len(contexts)
    n, t_f = planner.anchors.n, planner.anchors.t_f
    base = np.broadcast_to(planner.anchors.anchors, (b, n, t_f, 2))
    if planner.uses_refinement:
        pooled = np.stack([c.pooled for c in contexts])
        ego = np.stack([c.ego for c in contexts])
        res, rcache = planner.refiner.residual_cache(pooled, ego)
        refined = base + res
    else:
        refined = np.array(base)

    # denoising: refined anchors enter as data
    ab = sched.alpha_bar[np.asarray(t)]
    a_t = np.sqrt(ab)[:, None, None, None] * (refined / COORD_SCALE) + np.sqrt(1 - ab)[:, None, None, None] * eps
    query = refined / COORD_SCALE
    x = denoiser_inputs(a_t, query, contexts, t, planner.denoiser.time_dim, sched.T)
    logit, a0, dcache = planner.denoiser.forward_cache(x, query.reshape(b * n, -1))
    traj = a0.reshape(b, n, t_f, 2) * COORD_SCALE
    source = {"refined": refined, "anchors": base, "predicted": traj}[cfg.labels]
    labels = np.stack([label_closest(source[i], gts[i]) for i in range(b)])

    # anchor regression on the labelled refined anchor
    diff_a = refined - gts[:, None]
    l1_a = np.abs(diff_a).sum(axis=3).mean(axis=2)
    l_anchor = float(np.mean((labels * cfg.lam_anchor * l1_a).sum(axis=1) / n))
    d_refined = (labels * cfg.lam_anchor / n)[:, :, None, None] * np.sign(diff_a) / t_f / b

    diff_t = traj - gts[:, None]
    l1_t = np.abs(diff_t).sum(axis=3).mean(axis=2)
    bce_l, d_logit = bce_with_logits(logit.reshape(b, n), labels)
    per_scene = (labels * cfg.lam_traj * l1_t + cfg.lam_mode * bce_l).sum(axis=1)
    l_plan = float(per_scene.mean())

    d_traj = (labels * cfg.lam_traj)[:, :, None, None] * np.sign(diff_t) / t_f / b
    d_a0 = (d_traj * COORD_SCALE).reshape(b * n, -1)
    d_logit = (cfg.lam_mode * d_logit / b).reshape(-1)
    g_den = planner.denoiser.backward(dcache, d_logit, d_a0)
    if planner.uses_refinement:
        g_ref = planner.refiner.backward(rcache, d_refined)
    else:
        g_ref = [np.zeros_like(p) for p in planner.refiner.params()]
    return l_plan, l_anchor, g_ref + g_den


def _evaluate_initial(planner, contexts, gts, seed):
    rng = np.random.default_rng(seed + 7919)
    cfg = planner.config
    lp, la = [], []
    for start in range(0, len(contexts), cfg.batch_size):
        sl = slice(start, start + cfg.batch_size)
        ctx = contexts[sl]
        t = rng.integers(1, cfg.T + 1, size=len(ctx))
        eps = rng.standard_normal((len(ctx),) + planner.anchors.anchors.shape)
        a, b_, _ = planner_batch_loss(planner, ctx, gts[sl], t, eps)
        lp.append(a * len(ctx))
        la.append(b_ * len(ctx))
    return sum(lp) / len(contexts), sum(la) / len(contexts)


def cosine_lr(base, epoch, epochs, floor):
    """Learning rate for ``epoch``: cosine decay from base to floor * base."""
    frac = epoch / max(epochs, 1)
    return base * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))


def augment_scenes(scenes, config):
    scenes = list(scenes)
    if config.mirror:
        scenes += [mirror_scene(s) for s in scenes]
    return scenes


def build_planner(train_scenes, config):
    """Cluster GT trajectories into anchors and create an untrained planner."""
    corpus = np.stack([s.gt_trajectory.xy for s in train_scenes])
    anchors = kmeans_anchors(corpus, config.n_anchors, config.seed)
    return Planner(anchors, config, corpus.shape[1])


def train_planner(train_scenes, config=None, planner=None, state=None, epochs=None, contexts=None,
                  fields=None):
    """Train refinement and denoiser jointly with Adam.

    With ``config.mirror`` the scene list is extended by its mirror images
    first; ``contexts`` or ``fields``, when given, must follow the extended
    list (see ``augment_scenes``). Returns (planner, state). ``state.plan_losses[0]`` is the loss before any
    update, later entries are per-epoch means. Passing back ``planner`` and
    ``state`` resumes bit-for-bit; ``epochs`` caps how many epochs run now.
    """
    config = config or PlannerConfig()
    if not train_scenes:
        raise ValueError("planner training needs at least one scene")
    train_scenes = augment_scenes(train_scenes, config)
    if planner is None:
        planner = build_planner(train_scenes, config)
    if contexts is None:
        contexts = [planner.context(s, None if fields is None else fields[i])
                    for i, s in enumerate(train_scenes)]
    gts = np.stack([s.gt_trajectory.xy for s in train_scenes])
    ref_params = planner.refiner.params()
    den_params = planner.denoiser.params()
    n_ref = len(ref_params)
    if state is None:
        state = TrainState(optimizer=nnkit.Adam(lr=config.lr), refine_optimizer=nnkit.Adam(lr=config.refine_lr))
        lp0, la0 = _evaluate_initial(planner, contexts, gts, config.seed)
        state.plan_losses.append(lp0)
        state.anchor_losses.append(la0)
        state.rng_state = np.random.default_rng(config.seed + 1).bit_generator.state
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    target = config.epochs if epochs is None else min(config.epochs, state.epoch + epochs)
    n_scenes = len(train_scenes)
    n, t_f = planner.anchors.n, planner.anchors.t_f
    while state.epoch < target:
        state.optimizer.lr = cosine_lr(config.lr, state.epoch, config.epochs, config.lr_floor)
        order = rng.permutation(n_scenes)
        lp_sum = la_sum = 0.0
        for start in range(0, n_scenes, config.batch_size):
            idx = order[start:start + config.batch_size]
            t = rng.integers(1, config.T + 1, size=len(idx))
            eps = rng.standard_normal((len(idx), n, t_f, 2))
            lp, la, grads = planner_batch_loss(planner, [contexts[i] for i in idx], gts[idx], t, eps)
            if not (np.isfinite(lp) and np.isfinite(la)):
                last = state.plan_losses[-1] if state.plan_losses else None
                raise nnkit.DivergenceError(f"planner loss diverged in epoch {state.epoch + 1}", last)
            state.refine_optimizer.step(ref_params, grads[:n_ref])
            state.optimizer.step(den_params, grads[n_ref:])
            if not all(np.all(np.isfinite(p)) for p in ref_params + den_params):
                last = state.plan_losses[-1] if state.plan_losses else None
                raise nnkit.DivergenceError(f"planner parameters overflowed in epoch {state.epoch + 1}", last)
            lp_sum += lp * len(idx)
            la_sum += la * len(idx)
        state.epoch += 1
        state.plan_losses.append(lp_sum / n_scenes)
        state.anchor_losses.append(la_sum / n_scenes)
        state.rng_state = rng.bit_generator.state
        logger.debug("epoch %d: L_plan %.4f L_anchor %.4f", state.epoch, state.plan_losses[-1],
                     state.anchor_losses[-1])
    planner.denoiser.trained = True
    return planner, state
