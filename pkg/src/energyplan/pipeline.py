"""File-level workflow: scenario sets, checkpoints, planning fan-out, reports
and ablation runs. The command-line front end is a thin layer over this."""

import csv
import io
import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields as dc_fields, is_dataclass
from typing import Optional, Tuple

import numpy as np

from . import diffusion, learnfield, metrics, nnkit, render
from .anchor import AnchorSet
from .field import LaneFieldParams, RiskFieldParams, combined_field, lane_field, risk_field
from .metrics import MetricParams
from .scene import ScenarioConfig, generate_scene, load_scene, save_scene

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1
STATE_FORMAT_VERSION = 1


class DataError(ValueError):
    """Missing or malformed input files."""


# -- run configuration -------------------------------------------------------

@dataclass
class RunConfig:
    scenario_dir: str = "scenarios"
    heldout_dir: str = "heldout"
    checkpoint: str = "checkpoint"
    out: str = "out"
    count: int = 200
    seed: int = 0
    jobs: int = 1
    train_field: bool = False
    use_learned_fields: bool = False
    render: bool = True
    render_scale: int = 4
    ablate: Optional[str] = None
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    risk: RiskFieldParams = field(default_factory=RiskFieldParams)
    lane: LaneFieldParams = field(default_factory=LaneFieldParams)
    field_training: learnfield.FieldTrainConfig = field(default_factory=learnfield.FieldTrainConfig)
    planner: diffusion.PlannerConfig = field(default_factory=diffusion.PlannerConfig)
    metrics: MetricParams = field(default_factory=MetricParams)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _from_dict(cls, d):
    """Rebuild nested dataclasses, restoring tuples where the defaults use them."""
    if not isinstance(d, dict):
        raise DataError(f"expected an object for {cls.__name__}")
    known = {f.name: f for f in dc_fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise DataError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    proto = cls()
    kwargs = {}
    for name, value in d.items():
        current = getattr(proto, name)
        if is_dataclass(current):
            value = _from_dict(type(current), value)
        elif isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return RunConfig.from_dict(json.load(f))


def set_option(config, dotted, raw):
    """Override one field, e.g. ``planner.lr=3e-3``; the value is parsed as JSON when possible."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    d = config.to_dict()
    node = d
    keys = dotted.split(".")
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise DataError(f"unknown config key {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise DataError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value
    return RunConfig.from_dict(d)


# -- scenario sets -----------------------------------------------------------

def scene_seed(run_seed, i):
    return int(np.random.SeedSequence([int(run_seed), int(i)]).generate_state(1)[0])


def generate_scenes(count, seed, scenario=None):
    scenario = scenario or ScenarioConfig()
    return [generate_scene(scene_seed(seed, i), scenario, scene_id=f"s{seed}_{i:05d}") for i in range(count)]


def write_scenarios(directory, scenes, seed=0, scenario=None):
    os.makedirs(directory, exist_ok=True)
    names = []
    for s in scenes:
        name = f"{s.scene_id}.json"
        save_scene(s, os.path.join(directory, name))
        names.append(name)
    index = {"format_version": INDEX_FORMAT_VERSION, "count": len(names), "seed": seed,
             "scenario": (scenario or ScenarioConfig()).to_dict(), "scenes": names}
    _write_text(os.path.join(directory, "index.json"), json.dumps(index, sort_keys=True, indent=1))
    return names


def load_scenarios(directory):
    path = os.path.join(directory, "index.json")
    if not os.path.exists(path):
        raise DataError(f"no scenario index at {path}")
    with open(path, encoding="utf-8") as f:
        index = json.load(f)
    if index.get("format_version") != INDEX_FORMAT_VERSION:
        raise DataError(f"unsupported index format_version {index.get('format_version')!r}")
    return [load_scene(os.path.join(directory, name)) for name in index["scenes"]]


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text if text.endswith("\n") else text + "\n")


# -- fields ------------------------------------------------------------------

def analytic_fields(scene, config):
    return risk_field(scene, config.risk), lane_field(scene, config.lane)


def learned_fields(reg, scene, config):
    feats = learnfield.featurize(scene, config.field_training.radius)
    return learnfield.predict_fields(reg, feats, scene.grid)


def scene_fields(scene, config, reg=None):
    if config.use_learned_fields:
        if reg is None:
            raise DataError("learned fields requested but no field regressor is available")
        return learned_fields(reg, scene, config)
    return analytic_fields(scene, config)


# -- checkpoints -------------------------------------------------------------

STATE_MAGIC = b"ERST"


def save_arrays(path, arrays, meta):
    """Deterministic container: magic, JSON header (meta, names, shapes), raw float64 LE data."""
    names = list(arrays)
    header = {"meta": meta, "arrays": [[n, list(np.shape(arrays[n]))] for n in names]}
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = STATE_MAGIC + struct.pack("<I", len(text)) + text
    payload += b"".join(np.asarray(arrays[n], dtype="<f8").tobytes() for n in names)
    with open(path, "wb") as f:
        f.write(payload)


def load_arrays(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != STATE_MAGIC:
        raise DataError(f"{path} is not a train state file")
    (n,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + n].decode("utf-8"))
    off = 8 + n
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    return arrays, header["meta"]

def _state_arrays(planner, state, reg):
    out = {f"param_{i}": p for i, p in enumerate(planner.params())}
    meta = {"format_version": STATE_FORMAT_VERSION, "epoch": state.epoch, "rng_state": state.rng_state,
            "plan_losses": state.plan_losses, "anchor_losses": state.anchor_losses}
    for prefix, opt in (("adam", state.optimizer), ("radam", state.refine_optimizer)):
        moments = opt.state_arrays()
        for i, a in enumerate(moments):
            out[f"{prefix}_{i}"] = a
        meta[prefix] = {"step": opt.step_count, "lr": opt.lr, "count": len(moments)}
    if reg is not None:
        tensors = reg.params() + reg.buffers()
        for i, p in enumerate(tensors):
            out[f"field_{i}"] = p
        meta["field_count"] = len(tensors)
    return out, meta


def save_checkpoint(directory, planner, state, config, reg=None, field_losses=None):
    """Weights file + manifest (the published format) and an exact float64 resume state."""
    os.makedirs(directory, exist_ok=True)
    nnkit.save_weights(os.path.join(directory, "planner.nnkw"), planner.params())
    _write_text(os.path.join(directory, "anchors.json"), planner.anchors.dumps())
    _write_text(os.path.join(directory, "config.json"), config.dumps())
    pc = config.planner
    nnkit.write_manifest(os.path.join(directory, "manifest.txt"), planner.describe(), pc.seed, config.to_dict(),
                         extra={"schedule": pc.schedule, "T": pc.T, "N": planner.anchors.n,
                                "t_f": planner.anchors.t_f, "lam_traj": pc.lam_traj, "lam_mode": pc.lam_mode,
                                "lam_anchor": pc.lam_anchor, "epochs_done": state.epoch})
    rows = ["epoch,L_plan,L_anchor"]
    for e in range(1, len(state.plan_losses)):
        rows.append(f"{e},{state.plan_losses[e]:.8g},{state.anchor_losses[e]:.8g}")
    _write_text(os.path.join(directory, "losses.csv"), "\n".join(rows))
    if reg is not None:
        nnkit.save_weights(os.path.join(directory, "field.nnkw"), reg.params() + reg.buffers())
        nnkit.write_manifest(os.path.join(directory, "field_manifest.txt"),
                             {"sizes": reg.net.sizes, "activations": reg.net.activations},
                             config.field_training.seed, config.field_training.to_dict())
        if field_losses is not None:
            _write_text(os.path.join(directory, "field_losses.csv"),
                        "\n".join(["epoch,L_flow"] + [f"{e},{v:.8g}" for e, v in enumerate(field_losses)][1:]))
    save_arrays(os.path.join(directory, "train_state.bin"), *_state_arrays(planner, state, reg))


def _require(path):
    if not os.path.exists(path):
        raise DataError(f"missing checkpoint file {path}")
    return path


def _field_regressor(config, arrays):
    d_feat = learnfield.feature_dim(config.field_training.radius)
    reg = learnfield.FieldRegressor.zeros(d_feat, tuple(config.field_training.hidden))
    nnkit.load_into(reg.params() + reg.buffers(), arrays)
    return reg


def load_checkpoint(directory):
    """Planner (and field regressor if present) as published in the weights files."""
    config = load_config(_require(os.path.join(directory, "config.json")))
    with open(_require(os.path.join(directory, "anchors.json")), encoding="utf-8") as f:
        anchors = AnchorSet.from_dict(json.load(f))
    planner = diffusion.Planner(anchors, config.planner, anchors.t_f)
    nnkit.load_into(planner.params(), nnkit.load_weights(_require(os.path.join(directory, "planner.nnkw"))))
    planner.denoiser.trained = True
    reg = None
    fpath = os.path.join(directory, "field.nnkw")
    if os.path.exists(fpath):
        reg = _field_regressor(config, nnkit.load_weights(fpath))
    return planner, config, reg


def load_resume_state(directory, planner):
    """Restore exact parameters, optimiser moments, RNG and loss history."""
    arrays, meta = load_arrays(_require(os.path.join(directory, "train_state.bin")))
    if meta.get("format_version") != STATE_FORMAT_VERSION:
        raise DataError("unsupported train state format_version")
    for i, p in enumerate(planner.params()):
        p[...] = arrays[f"param_{i}"]
    state = diffusion.TrainState(epoch=meta["epoch"], plan_losses=list(meta["plan_losses"]),
                                 anchor_losses=list(meta["anchor_losses"]), rng_state=meta["rng_state"])
    for prefix, attr in (("adam", "optimizer"), ("radam", "refine_optimizer")):
        info = meta[prefix]
        opt = nnkit.Adam(lr=info["lr"])
        opt.load_state_arrays([arrays[f"{prefix}_{i}"] for i in range(info["count"])], info["step"])
        setattr(state, attr, opt)
    reg = None
    if "field_count" in meta:
        config = load_config(os.path.join(directory, "config.json"))
        reg = _field_regressor(config, [arrays[f"field_{i}"] for i in range(meta["field_count"])])
    return state, reg


# -- training ----------------------------------------------------------------

def train(config, scenes, directory=None, resume=False, stop_after=None):
    """Train (optionally) the field regressor, then the planner. Returns (planner, state, reg)."""
    if not scenes:
        raise DataError("scenario set is empty")
    pc = config.planner
    reg = field_losses = None
    aug = diffusion.augment_scenes(scenes, pc)
    if resume:
        if directory is None:
            raise DataError("resume needs a checkpoint directory")
        saved = load_config(_require(os.path.join(directory, "config.json")))
        with open(_require(os.path.join(directory, "anchors.json")), encoding="utf-8") as f:
            anchors = AnchorSet.from_dict(json.load(f))
        planner = diffusion.Planner(anchors, saved.planner, anchors.t_f)
        state, reg = load_resume_state(directory, planner)
        config = saved
    else:
        planner = diffusion.build_planner(aug, pc)
        state = None
        if config.train_field:
            reg, field_losses = learnfield.train_field_regressor(scenes, config.field_training)
    contexts = [planner.context(s, scene_fields(s, config, reg)) for s in aug]
    planner, state = diffusion.train_planner(scenes, config.planner, planner=planner, state=state,
                                             epochs=stop_after, contexts=contexts)
    if directory is not None:
        save_checkpoint(directory, planner, state, config, reg, field_losses)
    return planner, state, reg


# -- planning and evaluation -------------------------------------------------

def plan_seed(run_seed, scene_id):
    """Per-scene sampling seed, independent of scene order."""
    digest = np.frombuffer(scene_id.encode("utf-8"), dtype=np.uint8)
    return int(np.random.SeedSequence([int(run_seed), *digest.tolist()]).generate_state(1)[0])


def plan_one(planner, scene, config, reg=None, replan=True):
    ctx = planner.context(scene, scene_fields(scene, config, reg))
    seed = plan_seed(config.seed, scene.scene_id)
    first = planner.plan_scene(scene, seed=seed, context=ctx)
    second = planner.plan_scene(scene, seed=seed + 1, context=ctx) if replan else None
    return first, second


_WORKER = {}


def _worker_init(checkpoint_dir, config_dict):
    planner, _, reg = load_checkpoint(checkpoint_dir)
    _WORKER.update(planner=planner, reg=reg, config=RunConfig.from_dict(config_dict))


def _worker_plan(scene):
    return plan_one(_WORKER["planner"], scene, _WORKER["config"], _WORKER["reg"])


def plan_scenes(planner, scenes, config, reg=None, jobs=1, checkpoint_dir=None):
    """(candidates, replans) per scene, sorted by scene id. ``jobs`` > 1 needs a checkpoint dir."""
    scenes = sorted(scenes, key=lambda s: s.scene_id)
    if jobs > 1 and checkpoint_dir is not None and len(scenes) > 1:
        with ProcessPoolExecutor(jobs, initializer=_worker_init,
                                 initargs=(checkpoint_dir, config.to_dict())) as pool:
            results = list(pool.map(_worker_plan, scenes))
    else:
        results = [plan_one(planner, s, config, reg) for s in scenes]
    return scenes, results


def write_candidates(directory, results):
    os.makedirs(directory, exist_ok=True)
    for first, second in results:
        _write_text(os.path.join(directory, f"{first.scene_id}.json"), first.dumps())
        if second is not None:
            _write_text(os.path.join(directory, f"{first.scene_id}.replan.json"), second.dumps())


def load_candidates(directory, scene_id):
    path = os.path.join(directory, f"{scene_id}.json")
    if not os.path.exists(path):
        raise DataError(f"no candidates for {scene_id} in {directory}")
    with open(path, encoding="utf-8") as f:
        first = diffusion.CandidateSet.from_dict(json.load(f))
    rpath = os.path.join(directory, f"{scene_id}.replan.json")
    second = None
    if os.path.exists(rpath):
        with open(rpath, encoding="utf-8") as f:
            second = diffusion.CandidateSet.from_dict(json.load(f))
    return first, second


def evaluate_results(scenes, results, config):
    pairs = sorted(zip(scenes, results), key=lambda p: p[0].scene_id)
    return [metrics.evaluate(first, s, config.metrics, second) for s, (first, second) in pairs]


def write_reports(directory, reports, config, stem="report"):
    os.makedirs(directory, exist_ok=True)
    _write_text(os.path.join(directory, f"{stem}.json"), metrics.dumps_report(reports, config.to_dict()))
    _write_text(os.path.join(directory, f"{stem}.csv"), metrics.report_csv(reports))


def render_results(directory, scenes, results, planner, config, reg=None):
    os.makedirs(directory, exist_ok=True)
    for s, (first, _) in zip(scenes, results):
        risk, lane = scene_fields(s, config, reg)
        ctx = planner.context(s, (risk, lane))
        anchors = planner.refined(ctx)
        img = render.render_scene(s, combined_field(risk, lane), anchors, first, config.render_scale)
        render.write_ppm(os.path.join(directory, f"{s.scene_id}.ppm"), img)
        _write_text(os.path.join(directory, f"{s.scene_id}.svg"),
                    render.render_svg(s, anchors, first, config.render_scale))


def render_scenes(directory, scenes, config):
    """Field heatmap, lanes, agents and GT for each scene (no planner needed)."""
    os.makedirs(directory, exist_ok=True)
    for s in scenes:
        risk, lane = analytic_fields(s, config)
        img = render.render_scene(s, combined_field(risk, lane), scale=config.render_scale)
        render.write_ppm(os.path.join(directory, f"{s.scene_id}.ppm"), img)
        _write_text(os.path.join(directory, f"{s.scene_id}.svg"), render.render_svg(s, scale=config.render_scale))


# -- ablation ----------------------------------------------------------------

ABLATION_ROWS = ("full", "no-flow", "no-adapt", "no-decouple")
GATED = ("no-flow", "no-adapt")


def run_ablation(config, train_scenes, heldout, seeds=(0,)):
    """Train every ablation row for each seed and score the held-out set.

    Returns a dict with per-row mean composite (over seeds), per-seed values,
    deltas against the full model, and the gated direction checks.
    """
    rows = {}
    for name in ABLATION_ROWS:
        per_seed = []
        for seed in seeds:
            pc = diffusion.PlannerConfig(**{**asdict(config.planner), "seed": seed,
                                            "ablate": None if name == "full" else name})
            cfg = RunConfig.from_dict({**config.to_dict(), "planner": asdict(pc)})
            planner, _, reg = train(cfg, train_scenes)
            _, results = plan_scenes(planner, heldout, cfg, reg)
            reports = evaluate_results(heldout, results, cfg)
            per_seed.append(metrics.aggregate(reports))
        rows[name] = {"per_seed": per_seed,
                      "composite": float(np.mean([a["composite"] for a in per_seed])),
                      "NC": float(np.mean([a["NC"] for a in per_seed])),
                      "DAC": float(np.mean([a["DAC"] for a in per_seed]))}
    full = rows["full"]["composite"]
    deltas = {k: rows[k]["composite"] - full for k in ABLATION_ROWS[1:]}
    checks = {k: full > rows[k]["composite"] for k in GATED}
    return {"format_version": 1, "seeds": list(seeds), "rows": rows, "deltas": deltas, "checks": checks}


def ablation_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "composite", "NC", "DAC", "delta_vs_full", "gated"])
    for name in ABLATION_ROWS:
        r = result["rows"][name]
        delta = 0.0 if name == "full" else result["deltas"][name]
        w.writerow([name, f"{r['composite']:.6f}", f"{r['NC']:.6f}", f"{r['DAC']:.6f}", f"{delta:.6f}",
                    "yes" if name in GATED else "no"])
    return buf.getvalue()


def heldout_split(config, count=50) -> Tuple[list, list]:
    """Default train / held-out scene lists: disjoint generator seeds."""
    train_scenes = generate_scenes(config.count, config.seed, config.scenario)
    held = generate_scenes(count, config.seed + 1_000_000, config.scenario)
    return train_scenes, held
