"""Drop one component at a time and compare held-out scores.

Run: python demos/ablation_tour.py [epochs] [seeds]
Rows: full model, zeroed fields (no-flow), no anchor refinement
(no-adapt), and a shared head trunk (no-decouple). With few scenes and
epochs the differences are noisy, so several seeds are averaged.
"""
import sys

from energyplan import pipeline

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
seeds = tuple(int(s) for s in (sys.argv[2] if len(sys.argv) > 2 else "0").split(","))

config = pipeline.RunConfig()
config.planner.epochs = epochs
train, held = pipeline.heldout_split(config, 50)

# %% every row, every seed
result = pipeline.run_ablation(config, train, held, seeds)

# %% table
print(pipeline.ablation_csv(result))
for name, ok in result["checks"].items():
    print(f"full beats {name}: {ok}")
