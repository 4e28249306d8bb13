"""
From random graphs to one flat architecture
===========================================

A generator is three random-graph specifications stacked into levels. Every
node of the top graph becomes a mid-level graph, and every mid node becomes
a bottom-level graph of op units. Sampling the generator flattens all of that
into one DAG.
"""

import numpy as np

from autokd.graphgen import (GeneratorHyperparams, GraphGenSpec, assemble, export_dot,
                             sample_ba, sample_er, sample_ws, to_dag)
from autokd.netbuilder import BudgetConstraint, param_count, scale_to_budget

rng = np.random.default_rng(0)

# The three families. WS and BA have fixed edge counts; ER only in expectation.
print("ER(8, 0.3):", sample_er(8, 0.3, rng).edges)
print("WS(8, 2, 0.2):", len(sample_ws(8, 2, 0.2, rng).edges), "edges (always n*k/2 = 8)")
ba = sample_ba(8, 2, rng)
print("BA(8, 2):", len(ba.edges), "edges, degrees", ba.degrees().tolist())

# Orienting edges from low to high index can never close a cycle. A fresh
# source and sink absorb the loose ends.
dag = to_dag(sample_er(5, 0.3, rng))
dag.check()
print("to_dag edges:", dag.edges)

# A full generator: WS on top, BA in the middle, ER at the bottom.
theta = GeneratorHyperparams(
    top=GraphGenSpec("WS", 4, ws_k=2, ws_beta=0.25),
    mid=GraphGenSpec("BA", 3, ba_m=1),
    bottom=GraphGenSpec("ER", 2, er_p=0.5),
)
arch = assemble(theta, np.random.default_rng(7))
print(f"{arch.num_units} op units (4 x 3 x 2), {len(arch.edges)} edges")

# Same generator, different seeds: different wiring, same unit count.
for seed in range(3):
    g = assemble(theta, np.random.default_rng(seed))
    print(f"  seed {seed}: {len(g.edges)} edges")

# Fit the sample under a 5k-parameter cap by bisecting the channel width.
model = scale_to_budget(arch, "vector", 2, BudgetConstraint(5000), 2, rng)
print(f"width {model.base_width} -> {param_count(model)} parameters")

# DOT text for graphviz (`dot -Tsvg arch.dot > arch.svg`).
with open("arch.dot", "w") as fh:
    fh.write(export_dot(arch))
print("wrote arch.dot")
