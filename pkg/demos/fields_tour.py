"""A walk through the two analytic energy fields on one generated scene.

Run: python demos/fields_tour.py [outdir]
Writes a heatmap render of the combined field and prints a few probes.
"""
import os
import sys

import numpy as np

from energyplan.field import combined_field, lane_field, risk_field, sample_field
from energyplan.render import render_scene, write_ppm
from energyplan.scene import generate_scene

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
os.makedirs(out, exist_ok=True)

# %% a scene: a fork of lanes, some agents, a ground-truth path on a clear branch
scene = next(s for s in (generate_scene(seed) for seed in range(100)) if len(s.agents) >= 2)
print("scene", scene.scene_id, "agents", len(scene.agents), "lanes", len(scene.lanes))
for a in scene.agents:
    print("  agent at", np.round(a.position, 2), "radius", a.radius)

# %% risk peaks at each agent, lane energy falls along the centerline
risk, lane = risk_field(scene), lane_field(scene)
print("risk range", risk.values.min().round(4), risk.values.max().round(4))
print("lane range", lane.values.min().round(1), lane.values.max().round(1))

ag = np.asarray(scene.agents[0].position)
for dx in (0.0, 2.0, 5.0, 10.0):
    v, g = sample_field(risk, ag + [dx, 0.0])
    print(f"risk {dx:4.1f} m right of agent 0: {v:.4f}, gradient {np.round(g, 4)}")

# %% the gradient of the combined field points uphill; planners descend it
both = combined_field(risk, lane)
for x in (5.0, 15.0, 25.0):
    v, g = sample_field(both, (x, 0.0))
    print(f"combined at ({x}, 0): {v:8.3f}  downhill {np.round(-g, 3)}")

# %% picture: heatmap underlay, lanes, agents, GT in green
img = render_scene(scene, both)
write_ppm(os.path.join(out, "fields_tour.ppm"), img)
print("wrote", os.path.join(out, "fields_tour.ppm"), img.shape)
