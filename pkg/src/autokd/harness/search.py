"""The evaluation function, search and retrain phases, and the KD ablation grid."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..bohb import Job, TrialRecord, rank_survivors, run_bohb
from ..diffengine import KdLossConfig, TrainConfig, cross_entropy, train
from ..graphgen import DEFAULT_OP_CAP, GeneratorHyperparams, assemble
from ..netbuilder import BudgetConstraint, BudgetInfeasibleError, Model, param_count, scale_to_budget
from .config import SearchRunConfig
from .data import Dataset, make_synthetic
from .logio import append_log, read_log
from .teacher import TeacherLogits, read_logits, train_teacher

logger = logging.getLogger(__name__)

# nominal FLOPs per parameter per sample for one forward+backward pass, and a
# nominal machine speed; together they define the deterministic "cost" clock
_FLOPS_PER_PARAM = 6.0
_NOMINAL_FLOPS = 1e9


@dataclass
class EvalContext:
    """Everything f_kd needs besides (theta, budget, seed)."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    mode: str
    in_shape: Tuple[int, ...]
    num_classes: int
    constraint: BudgetConstraint
    teacher_train: Optional[np.ndarray] = None
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    tau_squared: bool = False
    op_cap: int = DEFAULT_OP_CAP
    clock: str = "cost"


def _streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def evaluate_model(model: Model, x: np.ndarray, y: np.ndarray) -> Tuple[float, Optional[float]]:
    """(top-1 accuracy, mean CE); diverged models score (0, None)."""
    logits = model.predict(x)
    if not np.isfinite(logits).all():
        return 0.0, None
    acc = float((logits.argmax(axis=1) == y).mean())
    return acc, float(cross_entropy(logits, y).mean())


def f_kd(theta: GeneratorHyperparams, budget: float, seed: int, ctx: EvalContext,
         trial_id: int = 0, bracket_s: int = 0, rung: int = 0) -> TrialRecord:
    """Sample one architecture from G(theta), distill it for ``budget`` epochs,
    and score it on the validation split."""
    g_rng, init_rng, train_rng = _streams(seed)
    graph = assemble(theta, g_rng, ctx.op_cap)
    common = dict(trial_id=trial_id, theta=theta, budget=budget, seed=seed,
                  bracket_s=bracket_s, rung=rung)
    try:
        model = scale_to_budget(graph, ctx.mode, ctx.in_shape, ctx.constraint,
                                ctx.num_classes, init_rng)
    except BudgetInfeasibleError:
        return TrialRecord(val_accuracy=0.0, val_loss=None, wall_seconds=0.0,
                           infeasible=True, **common)
    cfg = KdLossConfig(theta.kd_temperature, theta.kd_weight, ctx.tau_squared)
    epochs = max(1, int(round(budget)))
    t0 = time.perf_counter()
    train(model, ctx.x_train, ctx.y_train, ctx.teacher_train if cfg.weight else None,
          cfg, epochs, train_rng, ctx.train_cfg)
    elapsed = time.perf_counter() - t0
    acc, loss = evaluate_model(model, ctx.x_val, ctx.y_val)
    if ctx.clock == "measured":
        wall = elapsed
    else:
        wall = round(epochs * len(ctx.y_train) * param_count(model) * _FLOPS_PER_PARAM
                     / _NOMINAL_FLOPS, 9)
    return TrialRecord(val_accuracy=acc, val_loss=loss, wall_seconds=wall, **common)


def _run_job(args):
    job, ctx = args
    return f_kd(job.theta, job.budget, job.seed, ctx, job.trial_id, job.bracket_s, job.rung)


# ---------------------------------------------------------------------------
# setup


@dataclass
class Prepared:
    dataset: Dataset
    train_idx: np.ndarray
    val_idx: np.ndarray
    teacher: Optional[TeacherLogits]
    ctx: EvalContext


def load_dataset(cfg: SearchRunConfig) -> Tuple[Dataset, np.ndarray, np.ndarray]:
    d = cfg.dataset
    ds = make_synthetic(d.kind, d.n_samples, d.n_classes, dims=d.dims, image_side=d.image_side,
                        noise=d.noise, seed=cfg.dataset_seed, channels=d.channels)
    tr, va = ds.split(cfg.split.val, cfg.run.master_seed)
    return ds, tr, va


def ensure_teacher(cfg: SearchRunConfig, ds: Dataset, tr: np.ndarray, va: np.ndarray,
                   out_dir=None) -> TeacherLogits:
    """Load the configured logits file (hash-checked) or train a fresh teacher."""
    digest = ds.digest(tr, va)
    if cfg.teacher.logits:
        tl = read_logits(cfg.teacher.logits)
        if tl.dataset_hash != digest or tl.n_samples != len(ds):
            raise ValueError(f"{cfg.teacher.logits}: logits were produced for a different dataset split")
        return tl
    t = cfg.teacher
    _, tl, _ = train_teacher(ds, tr, va, cfg.teacher_level(),
                             t.param_multiplier * cfg.student.target_params, t.epochs,
                             cfg.run.master_seed, replace(cfg.train_config(), lr=t.lr),
                             t.min_val_accuracy, out_dir)
    return tl


def prepare(cfg: SearchRunConfig, out_dir=None, teacher: Optional[TeacherLogits] = None) -> Prepared:
    ds, tr, va = load_dataset(cfg)
    needs_teacher = cfg.kd.weight_max > 0
    if teacher is None and needs_teacher:
        teacher = ensure_teacher(cfg, ds, tr, va, out_dir)
    if teacher is not None and teacher.dataset_hash != ds.digest(tr, va):
        raise ValueError("teacher logits do not match the dataset split")
    ctx = EvalContext(
        x_train=ds.inputs[tr], y_train=ds.labels[tr], x_val=ds.inputs[va], y_val=ds.labels[va],
        mode=ds.mode, in_shape=ds.in_shape, num_classes=ds.num_classes,
        constraint=cfg.budget_constraint(),
        teacher_train=teacher.rows(tr) if teacher is not None else None,
        train_cfg=cfg.train_config(), tau_squared=cfg.kd.tau_squared_scaling,
        op_cap=cfg.search_space.op_cap, clock=cfg.run.clock,
    )
    return Prepared(ds, tr, va, teacher, ctx)


# ---------------------------------------------------------------------------
# search


@dataclass
class SearchResult:
    best_theta: GeneratorHyperparams
    best_record: TrialRecord
    records: List[TrialRecord]


def select_best(records: Sequence[TrialRecord], b_max: float) -> TrialRecord:
    """Best record at the full budget; ties go to the lower trial_id."""
    top = [r for r in records if r.budget == b_max] or list(records)
    return top[rank_survivors(top, 1)[0]]


def run_search(cfg: SearchRunConfig, out_dir=None, prepared: Optional[Prepared] = None) -> SearchResult:
    """Search phase: every Hyperband bracket for ``iterations`` passes.

    With ``out_dir`` the log is written to ``out_dir/trials.jsonl``; records
    already present there are reused, so an interrupted run resumes.
    """
    prepared = prepared or prepare(cfg, out_dir)
    ctx = prepared.ctx
    log_path = previous = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "trials.jsonl")
        previous = read_log(log_path) if os.path.exists(log_path) else []
        with open(os.path.join(out_dir, "config.ini"), "w", encoding="utf-8") as fh:
            fh.write(cfg.dumps())
    known = {r.trial_id for r in previous or []}
    executor = ProcessPoolExecutor(cfg.run.workers) if cfg.run.workers > 1 else None

    def evaluate(jobs: List[Job]) -> List[TrialRecord]:
        if executor is None:
            return [_run_job((jb, ctx)) for jb in jobs]
        return list(executor.map(_run_job, [(jb, ctx) for jb in jobs]))

    def on_rung(recs):
        if log_path is not None:
            append_log(log_path, [r for r in recs if r.trial_id not in known])

    try:
        records = run_bohb(cfg.bohb_config(), cfg.search_space_obj(), evaluate,
                           cfg.run.master_seed, cfg.run.iterations, previous or [], on_rung)
    finally:
        if executor is not None:
            executor.shutdown()
    best = select_best(records, cfg.bohb.b_max)
    if out_dir is not None:
        with open(os.path.join(out_dir, "best.json"), "w", encoding="utf-8") as fh:
            json.dump({"trial_id": best.trial_id, "val_accuracy": best.val_accuracy,
                       "theta": best.theta.to_dict()}, fh, indent=2)
            fh.write("\n")
    return SearchResult(best.theta, best, records)


# ---------------------------------------------------------------------------
# retrain and ablation


@dataclass
class RetrainResult:
    accuracies: List[float]
    mean: float
    std: float
    curves: List[List[float]]      # per-run validation accuracy after each epoch
    seeds: List[int]


def retrain(theta: GeneratorHyperparams, k: int, budget: float, seeds: Sequence[int],
            ctx: EvalContext) -> RetrainResult:
    """Train k independent samples of G(theta) for the long budget."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(seeds) < k:
        raise ValueError("need one seed per retrained sample")
    accs, curves = [], []
    epochs = max(1, int(round(budget)))
    for seed in seeds[:k]:
        g_rng, init_rng, train_rng = _streams(seed)
        graph = assemble(theta, g_rng, ctx.op_cap)
        model = scale_to_budget(graph, ctx.mode, ctx.in_shape, ctx.constraint,
                                ctx.num_classes, init_rng)
        cfg = KdLossConfig(theta.kd_temperature, theta.kd_weight, ctx.tau_squared)
        curve: List[float] = []
        train(model, ctx.x_train, ctx.y_train, ctx.teacher_train if cfg.weight else None, cfg,
              epochs, train_rng, ctx.train_cfg,
              callback=lambda ep, m: curve.append(evaluate_model(m, ctx.x_val, ctx.y_val)[0]))
        accs.append(curve[-1])
        curves.append(curve)
    return RetrainResult(accs, float(np.mean(accs)), float(np.std(accs)), curves, list(seeds[:k]))


def retrain_seeds(master_seed: int, k: int) -> List[int]:
    ss = np.random.SeedSequence([master_seed, 17])
    return [int(x) for x in ss.generate_state(k)]


def ablation_grid(theta: GeneratorHyperparams, temperatures: Sequence[float],
                  weights: Sequence[float], budget: float, seed: int,
                  ctx: EvalContext) -> np.ndarray:
    """Validation accuracy for every (temperature, weight) pair; rows follow
    ``temperatures``. The architecture sample and seed stay fixed."""
    if not temperatures or not weights:
        raise ValueError("ablation grids must be non-empty")
    out = np.zeros((len(temperatures), len(weights)))
    for i, tau in enumerate(temperatures):
        for j, a in enumerate(weights):
            th = replace(theta, kd_temperature=float(tau), kd_weight=float(a))
            out[i, j] = f_kd(th, budget, seed, ctx).val_accuracy
    return out


def grid_csv(temperatures: Sequence[float], weights: Sequence[float], grid: np.ndarray) -> str:
    lines = ["temperature," + ",".join(f"alpha={w:g}" for w in weights)]
    for tau, row in zip(temperatures, grid):
        lines.append(f"{tau:g}," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"
