import dataclasses
import json

import numpy as np
import pytest

from autokd.bohb import compute_brackets
from autokd.diffengine import KdLossConfig, kd_loss, train
from autokd.graphgen import ArchGraph, GeneratorHyperparams, GraphGenSpec, OpNode
from autokd.harness import config as C
from autokd.harness.data import make_synthetic
from autokd.harness.logio import LogFormatError, append_log, read_log
from autokd.harness.search import (
    ablation_grid, f_kd, grid_csv, prepare, retrain, retrain_seeds, run_search, select_best,
)
from autokd.harness.teacher import (
    TeacherLogits, TeacherQualityError, read_logits, train_teacher, write_logits,
)
from autokd.netbuilder import materialize

SMALL = """
[run]
master_seed = 3
[dataset]
n_samples = 300
[student]
target_params = 1000
[teacher]
epochs = 20
"""

THETA = GeneratorHyperparams(GraphGenSpec("ER", 2, er_p=0.5), GraphGenSpec("ER", 2, er_p=0.5),
                             GraphGenSpec("ER", 2, er_p=0.5), kd_temperature=4.0, kd_weight=0.5)


@pytest.fixture(scope="module")
def small_cfg():
    return C.loads(SMALL)


@pytest.fixture(scope="module")
def prepared(small_cfg):
    return prepare(small_cfg)


# --- data --------------------------------------------------------------------

def test_blobs_zero_noise_nearest_centroid():
    ds = make_synthetic("blobs", 200, 4, dims=3, noise=0.0, seed=1)
    cents = np.stack([ds.inputs[ds.labels == c].mean(0) for c in range(4)])
    pred = ((ds.inputs[:, None] - cents[None]) ** 2).sum(-1).argmin(1)
    assert (pred == ds.labels).all()


def test_synthetic_deterministic_and_valid():
    for kind, kw in (("blobs", {}), ("spirals", {}), ("blobs", {"image_side": 6})):
        a = make_synthetic(kind, 50, 3, seed=4, **kw)
        b = make_synthetic(kind, 50, 3, seed=4, **kw)
        assert a.inputs.tobytes() == b.inputs.tobytes() and np.array_equal(a.labels, b.labels)
        assert a.labels.max() < 3
    with pytest.raises(ValueError):
        make_synthetic("spirals", 10, 2, image_side=4)
    with pytest.raises(ValueError):
        make_synthetic("moons", 10, 2)


def test_split_disjoint_and_seeded():
    ds = make_synthetic("spirals", 100, 2)
    tr, va = ds.split(0.2, 5)
    assert len(va) == 20 and not set(tr) & set(va) and len(tr) + len(va) == 100
    tr2, va2 = ds.split(0.2, 5)
    assert np.array_equal(va, va2)
    assert ds.digest(tr, va) != ds.digest(*ds.split(0.2, 6))


def _linear_accuracy(ds, tr, va):
    g = ArchGraph([OpNode("input"), OpNode("output")], [(0, 1)], 0, 1)
    m = materialize(g, "vector", ds.in_shape, 1, ds.num_classes, np.random.default_rng(0))
    train(m, ds.inputs[tr], ds.labels[tr], None, KdLossConfig(1, 0), 50, np.random.default_rng(1))
    return [(m.predict(ds.inputs[i]).argmax(1) == ds.labels[i]).mean() for i in (tr, va)]


def test_spirals_need_a_nonlinear_model():
    cfg = C.SearchRunConfig()
    from autokd.harness.search import load_dataset, ensure_teacher
    ds, tr, va = load_dataset(cfg)
    assert max(_linear_accuracy(ds, tr, va)) < 0.75
    tl = ensure_teacher(cfg, ds, tr, va)
    assert (tl.logits[va].argmax(1) == ds.labels[va]).mean() > 0.9


# --- config ------------------------------------------------------------------

def test_config_roundtrip_and_defaults():
    cfg = C.SearchRunConfig()
    assert cfg.retrain.samples == 8 and cfg.retrain_budget == 5 * cfg.bohb.b_max
    assert (cfg.kd.temperature_min, cfg.kd.temperature_max) == (1.0, 10.0)
    again = C.loads(cfg.dumps())
    assert again == cfg


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n", "[run]\nmaster_sed = 1\n", "[split]\ntrain = 0.7\nval = 0.2\n",
    "[run]\nmaster_seed = one\n", "[teacher]\nparam_multiplier = 1\n", "[bohb]\neta = 1\n",
])
def test_config_rejections(text):
    with pytest.raises(C.ConfigError):
        C.loads(text)


# --- teacher -----------------------------------------------------------------

def test_teacher_on_clean_blobs(tmp_path):
    ds = make_synthetic("blobs", 200, 3, noise=0.0, seed=0)
    tr, va = ds.split(0.2, 0)
    _, tl, acc = train_teacher(ds, tr, va, GraphGenSpec("ER", 2, er_p=0.5), 2000, 10, 0,
                               out_dir=tmp_path)
    assert acc >= 0.99
    assert tl.n_samples == len(ds)
    back = read_logits(tmp_path / "teacher.akdl")
    assert (tmp_path / "teacher.akdm").exists()
    s = np.random.default_rng(0).normal(size=(len(ds), 3))
    cfg = KdLossConfig(3.0, 0.7)
    assert kd_loss(s, back.rows(np.arange(len(ds))), ds.labels, cfg).tobytes() == \
        kd_loss(s, tl.rows(np.arange(len(ds))), ds.labels, cfg).tobytes()


def test_teacher_quality_floor():
    ds = make_synthetic("spirals", 100, 2, noise=0.5)
    tr, va = ds.split(0.2, 0)
    with pytest.raises(TeacherQualityError):
        train_teacher(ds, tr, va, GraphGenSpec("ER", 1), 200, 1, 0, min_val_accuracy=0.999)


def test_logits_file_layout(tmp_path):
    tl = TeacherLogits(np.arange(6, dtype=np.float32).reshape(3, 2), bytes(range(32)))
    write_logits(tl, tmp_path / "x.akdl")
    raw = (tmp_path / "x.akdl").read_bytes()
    assert raw[:4] == b"AKDL" and raw[4:12] == (3).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert len(raw) == 12 + 24 + 32 and raw[-32:] == bytes(range(32))
    (tmp_path / "bad.akdl").write_bytes(raw[:-1])
    with pytest.raises(ValueError):
        read_logits(tmp_path / "bad.akdl")
    with pytest.raises(ValueError):
        TeacherLogits(np.array([[np.nan, 0.0]]), bytes(32))


def test_teacher_hash_mismatch_rejected(tmp_path, small_cfg, prepared):
    write_logits(prepared.teacher, tmp_path / "t.akdl")
    other = dataclasses.replace(small_cfg, run=dataclasses.replace(small_cfg.run, master_seed=9),
                                teacher=dataclasses.replace(small_cfg.teacher, logits=str(tmp_path / "t.akdl")))
    with pytest.raises(ValueError):
        prepare(other)


# --- f_kd ----------------------------------------------------------------------

def test_f_kd_is_pure(prepared):
    a = f_kd(THETA, 2, 11, prepared.ctx)
    b = f_kd(THETA, 2, 11, prepared.ctx)
    assert a.to_json() == b.to_json()
    assert 0 <= a.val_accuracy <= 1 and not a.infeasible


def test_f_kd_alpha_zero_matches_no_teacher(prepared):
    th0 = dataclasses.replace(THETA, kd_weight=0.0)
    with_t = f_kd(th0, 2, 5, prepared.ctx)
    no_t = f_kd(th0, 2, 5, dataclasses.replace(prepared.ctx, teacher_train=None))
    assert with_t.to_json() == no_t.to_json()


def test_f_kd_infeasible(prepared):
    ctx = dataclasses.replace(prepared.ctx, constraint=dataclasses.replace(
        prepared.ctx.constraint, target_params=5))
    r = f_kd(THETA, 2, 0, ctx)
    assert r.infeasible and r.val_accuracy == 0.0 and r.val_loss is None


def test_longer_budget_usually_helps(prepared):
    from autokd.bohb import SearchSpace
    space = SearchSpace()
    rng = np.random.default_rng(0)
    wins = 0
    for i in range(20):
        th = space.sample_uniform(rng)
        wins += f_kd(th, 8, i, prepared.ctx).val_accuracy >= f_kd(th, 2, i, prepared.ctx).val_accuracy
    assert wins >= 14


# --- search ------------------------------------------------------------------

def test_search_counts_match_schedule(tmp_path, small_cfg, prepared):
    res = run_search(small_cfg, tmp_path, prepared)
    for br in compute_brackets(small_cfg.bohb_config()):
        for r_idx, (budget, count) in enumerate(br.rungs):
            got = [r for r in res.records if r.bracket_s == br.s and r.rung == r_idx]
            assert len(got) == count and all(r.budget == budget for r in got)
    logged = read_log(tmp_path / "trials.jsonl")
    assert [r.to_json() for r in logged] == [r.to_json() for r in res.records]
    best = json.loads((tmp_path / "best.json").read_text())
    assert best["trial_id"] == res.best_record.trial_id
    assert res.best_record.budget == small_cfg.bohb.b_max
    top = max(r.val_accuracy for r in res.records if r.budget == small_cfg.bohb.b_max)
    assert res.best_record.val_accuracy == top


def test_search_resumes_from_partial_log(tmp_path, small_cfg, prepared):
    full = run_search(small_cfg, tmp_path / "a", prepared)
    lines = (tmp_path / "a" / "trials.jsonl").read_text().splitlines(keepends=True)
    (tmp_path / "b").mkdir()
    (tmp_path / "b" / "trials.jsonl").write_text("".join(lines[:7]))
    again = run_search(small_cfg, tmp_path / "b", prepared)
    assert (tmp_path / "b" / "trials.jsonl").read_text() == "".join(lines)
    assert again.best_record == full.best_record


def test_single_bracket_search(small_cfg, prepared):
    cfg = dataclasses.replace(small_cfg, bohb=dataclasses.replace(small_cfg.bohb, b_min=2, b_max=2))
    res = run_search(cfg, None, prepared)
    assert len(res.records) == 1 and res.best_theta == res.records[0].theta


def test_select_best_tie_breaks_by_id(prepared):
    r = f_kd(THETA, 2, 0, prepared.ctx)
    a, b = dataclasses.replace(r, trial_id=4), dataclasses.replace(r, trial_id=2)
    assert select_best([a, b], 2).trial_id == 2


def test_parallel_workers_give_identical_log(tmp_path, small_cfg, prepared):
    serial = run_search(small_cfg, None, prepared)
    cfg = dataclasses.replace(small_cfg, run=dataclasses.replace(small_cfg.run, workers=2))
    par = run_search(cfg, None, prepared)
    assert [r.to_json() for r in par.records] == [r.to_json() for r in serial.records]


# --- retrain / ablation ---------------------------------------------------------

def test_retrain_statistics(prepared):
    one = retrain(THETA, 1, 3, [1], prepared.ctx)
    assert one.std == 0.0 and len(one.curves[0]) == 3
    seeds = retrain_seeds(0, 2)
    a = retrain(THETA, 2, 3, seeds, prepared.ctx)
    b = retrain(THETA, 2, 3, seeds, prepared.ctx)
    assert (a.mean, a.std, a.accuracies) == (b.mean, b.std, b.accuracies)
    with pytest.raises(ValueError):
        retrain(THETA, 0, 3, [], prepared.ctx)


def test_retrain_does_not_regress_on_blobs():
    cfg = C.loads("[dataset]\nkind = blobs\nn_samples = 300\nn_classes = 3\nnoise = 1.0\n"
                  "[student]\ntarget_params = 1000\n[teacher]\nepochs = 20\n")
    prep = prepare(cfg)
    res = run_search(cfg, None, prep)
    rt = retrain(res.best_theta, 3, cfg.retrain_budget, retrain_seeds(0, 3), prep.ctx)
    assert rt.mean >= res.best_record.val_accuracy - 0.05


def test_ablation_grid_shape_and_alpha_zero(prepared):
    temps, weights = [1.0, 3.0, 7.0], [0.0, 0.5]
    g = ablation_grid(THETA, temps, weights, 2, 4, prepared.ctx)
    assert g.shape == (3, 2)
    assert np.all(g[:, 0] == g[0, 0])
    csv = grid_csv(temps, weights, g).splitlines()
    assert csv[0] == "temperature,alpha=0,alpha=0.5" and len(csv) == 4
    with pytest.raises(ValueError):
        ablation_grid(THETA, [], weights, 2, 4, prepared.ctx)


# --- log io --------------------------------------------------------------------

def test_log_errors_carry_line_numbers(tmp_path, prepared):
    r = f_kd(THETA, 2, 0, prepared.ctx)
    p = tmp_path / "log.jsonl"
    append_log(p, [r, dataclasses.replace(r, trial_id=1)])
    with open(p, "a") as fh:
        fh.write("{broken\n")
    with pytest.raises(LogFormatError, match=":3:"):
        read_log(p)
    with pytest.raises(LogFormatError):
        read_log(tmp_path / "missing.jsonl")
