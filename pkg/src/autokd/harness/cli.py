"""``autokd`` command line: teacher, search, retrain, ablate, analyze."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional

from ..graphgen import GeneratorHyperparams, GraphGenSpec
from . import config as config_mod
from .analysis import analyze
from .search import ablation_grid, ensure_teacher, load_dataset, grid_csv, prepare, retrain, retrain_seeds, run_search
from .teacher import read_logits

# a mid-sized generator used by `ablate` when no --theta file is given
DEFAULT_ABLATION_THETA = GeneratorHyperparams(
    GraphGenSpec("ER", 3, er_p=0.5), GraphGenSpec("ER", 3, er_p=0.5), GraphGenSpec("ER", 3, er_p=0.5)
)


class CliError(Exception):
    pass


def _load_theta(path: str) -> GeneratorHyperparams:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    return GeneratorHyperparams.from_dict(blob.get("theta", blob))


def _with_logits(cfg, path: Optional[str]):
    return replace(cfg, teacher=replace(cfg.teacher, logits=path))


def cmd_teacher(args) -> int:
    cfg = config_mod.load(args.config)
    out = args.out or cfg.teacher.out_dir
    ds, tr, va = load_dataset(cfg)
    tl = ensure_teacher(_with_logits(cfg, None), ds, tr, va, out)
    acc = (tl.logits[va].argmax(axis=1) == ds.labels[va]).mean()
    print(f"teacher written to {out} (val accuracy {acc:.4f})")
    return 0


def cmd_search(args) -> int:
    cfg = config_mod.load(args.config)
    if args.iterations is not None:
        cfg = replace(cfg, run=replace(cfg.run, iterations=args.iterations))
    res = run_search(cfg, args.out)
    print(f"{len(res.records)} trials; best trial {res.best_record.trial_id} "
          f"val accuracy {res.best_record.val_accuracy:.4f}")
    return 0


def cmd_retrain(args) -> int:
    cfg_path = os.path.join(args.out, "config.ini")
    best_path = os.path.join(args.out, "best.json")
    for p in (cfg_path, best_path):
        if not os.path.exists(p):
            raise CliError(f"{p} not found; run `autokd search --out {args.out}` first")
    cfg = config_mod.load(cfg_path)
    teacher = None
    cached = os.path.join(args.out, "teacher.akdl")
    if not cfg.teacher.logits and os.path.exists(cached):
        teacher = read_logits(cached)
    prep = prepare(cfg, args.out, teacher)
    k = args.samples if args.samples is not None else cfg.retrain.samples
    budget = args.budget if args.budget is not None else cfg.retrain_budget
    res = retrain(_load_theta(best_path), k, budget, retrain_seeds(cfg.run.master_seed, k), prep.ctx)
    with open(os.path.join(args.out, "retrain.json"), "w", encoding="utf-8") as fh:
        json.dump({"accuracies": res.accuracies, "mean": res.mean, "std": res.std,
                   "seeds": res.seeds, "budget": budget}, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(args.out, "retrain_curves.csv"), "w", encoding="utf-8") as fh:
        fh.write("run,epoch,val_accuracy\n")
        for i, curve in enumerate(res.curves):
            fh.writelines(f"{i},{e + 1},{a:.6f}\n" for e, a in enumerate(curve))
    print(f"retrain k={k}: mean {res.mean:.4f} std {res.std:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = config_mod.load(args.config)
    a = cfg.ablation
    theta = _load_theta(args.theta) if args.theta else DEFAULT_ABLATION_THETA
    cfg = replace(cfg, kd=replace(cfg.kd, weight_max=max(cfg.kd.weight_max, max(a.weights))))
    prep = prepare(cfg, args.teacher_dir)
    grid = ablation_grid(theta, a.temperatures, a.weights, a.budget, a.seed, prep.ctx)
    text = grid_csv(a.temperatures, a.weights, grid)
    out = args.out or a.out
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"ablation grid written to {out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    for path in analyze(args.log, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autokd", description="Generator search with knowledge distillation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("teacher", help="train the teacher and cache its logits")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (default: [teacher] out_dir)")
    t.set_defaults(func=cmd_teacher)

    s = sub.add_parser("search", help="run the BOHB search phase")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int, help="override [run] iterations")
    s.set_defaults(func=cmd_search)

    r = sub.add_parser("retrain", help="retrain samples of the best generator")
    r.add_argument("--out", required=True, help="a directory written by `autokd search`")
    r.add_argument("--samples", type=int)
    r.add_argument("--budget", type=float)
    r.set_defaults(func=cmd_retrain)

    a = sub.add_parser("ablate", help="temperature x weight accuracy grid")
    a.add_argument("--config", required=True)
    a.add_argument("--theta", help="JSON file with a generator (e.g. best.json)")
    a.add_argument("--out", help="CSV path (default: [ablation] out, else stdout)")
    a.add_argument("--teacher-dir", help="where a freshly trained teacher is written")
    a.set_defaults(func=cmd_ablate)

    z = sub.add_parser("analyze", help="histograms, best-so-far and rank-correlation reports")
    z.add_argument("--log", required=True)
    z.add_argument("--out", required=True)
    z.set_defaults(func=cmd_analyze)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, RuntimeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"autokd {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
