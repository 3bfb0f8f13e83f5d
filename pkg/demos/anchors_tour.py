"""Anchors: K-means over ground-truth paths, then two ways to bend them.

Run: python demos/anchors_tour.py
The first bend is a plain descent on the risk field (no learning). The
second is the learned residual after a short training run.
"""
import numpy as np

from energyplan.anchor import energy_descent_refine, kmeans_anchors, l1_distance, label_closest
from energyplan.diffusion import PlannerConfig, train_planner
from energyplan.field import risk_field, sample_many
from energyplan.scene import generate_scene

scenes = [generate_scene(s) for s in range(120)]

# %% cluster ground-truth paths into N anchors
anchors = kmeans_anchors(np.stack([s.gt_trajectory.xy for s in scenes]), 12, seed=0)
print("anchors", anchors.anchors.shape, "end points:")
print(np.round(anchors.anchors[:, -1], 1))

# %% descent on the risk field pushes waypoints away from agents
scene = next(s for s in scenes if s.agents)
risk = risk_field(scene)
moved = energy_descent_refine(anchors, risk, steps=20, step_size=2.0)
before = sample_many(risk, anchors.anchors.reshape(-1, 2), clamp=True)[0].sum()
after = sample_many(risk, moved.anchors.reshape(-1, 2), clamp=True)[0].sum()
print(f"summed waypoint risk: {before:.3f} -> {after:.3f}")

# %% the label marks the anchor nearest the ground truth
gt = scene.gt_trajectory.xy
y = label_closest(anchors.anchors, gt)
print("label", int(np.argmax(y)), "L1 to GT", round(float(l1_distance(anchors.anchors, gt)[y == 1][0]), 3))

# %% learned refinement: a short run, then the labelled anchor gets closer on unseen scenes
cfg = PlannerConfig(n_anchors=12, epochs=15)
planner, state = train_planner(scenes[:100], cfg)
gain = []
for s in scenes[100:]:
    g = s.gt_trajectory.xy
    ref = planner.refined(planner.context(s)).anchors
    raw = planner.anchors.anchors
    gain.append(l1_distance(raw, g).min() - l1_distance(ref, g).min())
print(f"held-out mean L1 gain from refinement: {np.mean(gain):.3f} m")
