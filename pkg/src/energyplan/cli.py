"""energyplan command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
Every command writes only under its output directory and is reproducible
from (config, seed).
"""

import argparse
import json
import logging
import os
import sys

from . import metrics, pipeline
from .nnkit import DivergenceError
from .scene import ScenarioError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _common(p):
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. planner.lr=3e-3 (repeatable)")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--jobs", type=int, help="worker processes for per-scene work")
    p.add_argument("--out", help="output directory for this command")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = _Parser(prog="energyplan", description="Energy-field conditioned diffusion planning on synthetic BEV scenes.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write K scenario files and an index")
    _common(p)
    p.add_argument("--count", type=int, help="number of scenes (K)")

    p = sub.add_parser("train", help="train refinement net and denoiser (optionally the field regressor)")
    _common(p)
    p.add_argument("--scenario-dir")
    p.add_argument("--epochs", type=int, help="planner epochs")
    p.add_argument("--train-field", action="store_true", help="also fit the field regressor")
    p.add_argument("--ablate", choices=["no-flow", "no-adapt", "no-decouple"])
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.add_argument("--stop-after", type=int, help="run at most this many epochs now")

    for name, helptext in (("plan", "sample candidates per scene"),
                           ("plan-eval", "plan, evaluate, write reports and renders")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--scenario-dir")
        p.add_argument("--checkpoint")
        p.add_argument("--no-render", action="store_true")

    p = sub.add_parser("eval", help="score saved candidates")
    _common(p)
    p.add_argument("--scenario-dir")
    p.add_argument("--candidates", required=True, help="directory written by 'plan'")

    p = sub.add_parser("render", help="field heatmap renders of scenes (PPM + SVG)")
    _common(p)
    p.add_argument("--scenario-dir")

    p = sub.add_parser("ablate", help="train every ablation row and compare on held-out scenes")
    _common(p)
    p.add_argument("--scenario-dir")
    p.add_argument("--heldout-dir")
    p.add_argument("--seeds", default="0", help="comma-separated training seeds")
    p.add_argument("--epochs", type=int)
    return ap


def resolve_config(args):
    config = pipeline.load_config(args.config) if args.config else pipeline.RunConfig()
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        config = pipeline.set_option(config, key.strip(), value)
    direct = {"seed": args.seed, "jobs": args.jobs, "scenario_dir": getattr(args, "scenario_dir", None),
              "checkpoint": getattr(args, "checkpoint", None), "heldout_dir": getattr(args, "heldout_dir", None)}
    d = config.to_dict()
    for k, v in direct.items():
        if v is not None:
            d[k] = v
    if getattr(args, "epochs", None) is not None:
        d["planner"]["epochs"] = args.epochs
    if getattr(args, "ablate", None):
        d["planner"]["ablate"] = args.ablate
    if getattr(args, "train_field", False):
        d["train_field"] = True
    if getattr(args, "no_render", False):
        d["render"] = False
    if args.seed is not None:
        d["planner"]["seed"] = args.seed
        d["field_training"]["seed"] = args.seed
    config = pipeline.RunConfig.from_dict(d)
    if config.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    return config


def cmd_generate(config, args):
    out = args.out or config.scenario_dir
    count = config.count if args.count is None else args.count
    if count < 0:
        raise UsageError("--count must be non-negative")
    scenes = pipeline.generate_scenes(count, config.seed, config.scenario)
    pipeline.write_scenarios(out, scenes, config.seed, config.scenario)
    print(f"wrote {count} scenes to {out}")


def cmd_train(config, args):
    out = args.out or config.checkpoint
    scenes = pipeline.load_scenarios(config.scenario_dir)
    planner, state, _ = pipeline.train(config, scenes, out, resume=args.resume, stop_after=args.stop_after)
    print(f"epoch {state.epoch}: L_plan {state.plan_losses[-1]:.4f} "
          f"(initial {state.plan_losses[0]:.4f}); checkpoint in {out}")


def _plan(config, args):
    if not os.path.isdir(config.checkpoint):
        raise pipeline.DataError(f"missing checkpoint directory {config.checkpoint}")
    planner, _, reg = pipeline.load_checkpoint(config.checkpoint)
    saved = pipeline.load_config(os.path.join(config.checkpoint, "config.json"))
    config = pipeline.RunConfig.from_dict({**config.to_dict(), "planner": saved.to_dict()["planner"]})
    scenes = pipeline.load_scenarios(config.scenario_dir)
    scenes, results = pipeline.plan_scenes(planner, scenes, config, reg, config.jobs, config.checkpoint)
    return config, planner, reg, scenes, results


def cmd_plan(config, args):
    out = args.out or config.out
    config, _, _, _, results = _plan(config, args)
    pipeline.write_candidates(os.path.join(out, "candidates"), results)
    print(f"planned {len(results)} scenes into {out}")


def _summary(reports):
    if not reports:
        return "no scenes"
    agg = metrics.aggregate(reports)
    return " ".join(f"{k}={agg[k]:.3f}" for k in ("NC", "DAC", "TTC", "EP", "composite"))


def cmd_plan_eval(config, args):
    out = args.out or config.out
    config, planner, reg, scenes, results = _plan(config, args)
    pipeline.write_candidates(os.path.join(out, "candidates"), results)
    reports = pipeline.evaluate_results(scenes, results, config)
    if reports:
        pipeline.write_reports(out, reports, config)
    if config.render:
        pipeline.render_results(os.path.join(out, "renders"), scenes, results, planner, config, reg)
    print(_summary(reports))


def cmd_eval(config, args):
    out = args.out or config.out
    scenes = sorted(pipeline.load_scenarios(config.scenario_dir), key=lambda s: s.scene_id)
    results = [pipeline.load_candidates(args.candidates, s.scene_id) for s in scenes]
    reports = pipeline.evaluate_results(scenes, results, config)
    if reports:
        pipeline.write_reports(out, reports, config)
    print(_summary(reports))


def cmd_render(config, args):
    out = args.out or os.path.join(config.out, "renders")
    scenes = pipeline.load_scenarios(config.scenario_dir)
    pipeline.render_scenes(out, scenes, config)
    print(f"rendered {len(scenes)} scenes into {out}")


def cmd_ablate(config, args):
    out = args.out or config.out
    try:
        seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"bad --seeds {args.seeds!r}")
    if not seeds:
        raise UsageError("--seeds is empty")
    train_scenes = pipeline.load_scenarios(config.scenario_dir)
    heldout = pipeline.load_scenarios(config.heldout_dir)
    result = pipeline.run_ablation(config, train_scenes, heldout, seeds)
    os.makedirs(out, exist_ok=True)
    pipeline._write_text(os.path.join(out, "ablation.json"), json.dumps(result, sort_keys=True, indent=1))
    pipeline._write_text(os.path.join(out, "ablation.csv"), pipeline.ablation_csv(result))
    for name in pipeline.ABLATION_ROWS:
        print(f"{name:12s} {result['rows'][name]['composite']:.4f}")


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "plan": cmd_plan, "eval": cmd_eval,
            "plan-eval": cmd_plan_eval, "render": cmd_render, "ablate": cmd_ablate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        COMMANDS[args.command](config, args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"diverged: {e} (last finite loss {e.last_finite_loss})", file=sys.stderr)
        return EXIT_DIVERGED
    except (pipeline.DataError, ScenarioError, FileNotFoundError, json.JSONDecodeError, ValueError,
            KeyError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
