"""
How much does the teacher help?
===============================

Hold one architecture sample and seed fixed, then sweep the temperature and
the KD weight. The alpha = 0 column is plain cross entropy, so it cannot
depend on temperature.
"""

import numpy as np

from autokd.graphgen import GeneratorHyperparams, GraphGenSpec
from autokd.harness import ablation_grid, loads, prepare

cfg = loads("[dataset]\nn_samples = 400\n[teacher]\nepochs = 30\n")
prep = prepare(cfg)

theta = GeneratorHyperparams(*(GraphGenSpec("ER", 3, er_p=0.5) for _ in range(3)))
temps = [1.0, 2.0, 4.0, 8.0]
weights = [0.0, 0.2, 0.5, 1.0]
grid = ablation_grid(theta, temps, weights, budget=8, seed=0, ctx=prep.ctx)

print("tau \\ alpha " + "".join(f"{w:>8g}" for w in weights))
for tau, row in zip(temps, grid):
    print(f"{tau:>11g} " + "".join(f"{v:8.3f}" for v in row))

w = np.array(weights)
print(f"mean over alpha >= 0.5: {grid[:, w >= 0.5].mean():.3f}")
print(f"mean over alpha <= 0.2: {grid[:, w <= 0.2].mean():.3f}")
