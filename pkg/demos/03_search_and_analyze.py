"""
A small search, end to end
==========================

Train a teacher on two interleaved spirals, run the multi-fidelity search
over generators and KD settings, then retrain the winner and write the
analysis reports. Takes about a minute on one core.
"""

import os
import tempfile

from autokd.bohb import compute_brackets
from autokd.harness import analyze, loads, prepare, retrain, run_search
from autokd.harness.search import retrain_seeds

out = tempfile.mkdtemp(prefix="autokd-demo-")

cfg = loads("""
[run]
master_seed = 1
iterations = 2
[dataset]
kind = spirals
n_samples = 400
[student]
target_params = 1500
[teacher]
epochs = 30
""")

# The budget ladder 2 -> 4 -> 8 epochs gives three brackets per iteration.
for br in compute_brackets(cfg.bohb_config()):
    print(f"bracket s={br.s}: " + " -> ".join(f"{c}@{b}" for b, c in br.rungs))

# Teacher first; its logits file lands in `out` next to the trial log.
prep = prepare(cfg, out)
acc = (prep.teacher.logits[prep.val_idx].argmax(1) == prep.dataset.labels[prep.val_idx]).mean()
print(f"teacher validation accuracy {acc:.3f}")

res = run_search(cfg, out, prep)
best = res.best_record
print(f"{len(res.records)} trials; best at budget {best.budget}: {best.val_accuracy:.3f} "
      f"(tau={best.theta.kd_temperature:.2f}, alpha={best.theta.kd_weight:.2f})")
print("levels:", [(s.family, s.n) for s in best.theta.levels])

# Retraining draws fresh architectures from the winning generator.
rt = retrain(res.best_theta, 3, 16, retrain_seeds(cfg.run.master_seed, 3), prep.ctx)
print(f"retrained x3 for 16 epochs: mean {rt.mean:.3f}, std {rt.std:.3f}")

for path in analyze(os.path.join(out, "trials.jsonl"), os.path.join(out, "report")):
    print("wrote", path)
print(open(os.path.join(out, "report", "rank_correlation.csv")).read())
