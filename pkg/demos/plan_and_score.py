"""Train a planner, sample candidates on unseen scenes, score them.

Run: python demos/plan_and_score.py [epochs]
Defaults to a short run (about a minute); the full default is 100 epochs.
"""
import sys

import numpy as np

from energyplan import metrics, pipeline

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20

# %% data: disjoint training and held-out scene sets
config = pipeline.RunConfig()
config.planner.epochs = epochs
train, held = pipeline.heldout_split(config, 30)
print(len(train), "training scenes,", len(held), "held-out")

# %% training
planner, state, _ = pipeline.train(config, train)
print(f"L_plan {state.plan_losses[0]:.3f} -> {state.plan_losses[-1]:.3f} in {state.epoch} epochs")

# %% planning: N candidates per scene, the best-scored one is executed
scenes, results = pipeline.plan_scenes(planner, held, config)
first, _ = results[0]
print("scene", first.scene_id, "scores", np.round(first.scores, 3), "selected", first.selected)

# %% scoring with the mini driving score
reports = pipeline.evaluate_results(scenes, results, config)
agg = metrics.aggregate(reports)
for k in ("NC", "DAC", "TTC", "EP", "LK", "composite"):
    print(f"{k:9s} {agg[k]:.3f}")
worst = min(reports, key=lambda r: r.composite)
print("worst scene", worst.scene_id, {k: round(v, 2) for k, v in worst.scores().items()})
