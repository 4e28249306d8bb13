import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from autokd.diffengine import (
    Batch, ConfigurationError, KdLossConfig, Tensor, TrainConfig, backward, check_gradients,
    cross_entropy, kd_loss, kl_div, sgd_step, softmax_t, train,
)
from autokd.netbuilder import materialize
from autokd.graphgen import ArchGraph, OpNode
from conftest import small_model

# 30-digit mpmath evaluations, frozen
SOFTMAX_2_0_T2 = (0.731058578630004879, 0.268941421369995121)
CE_123_LABEL2 = 0.407605964444380304
KL_73_46 = 0.183786897386812288
KD_EXAMPLE = 0.387689422389116296    # student [1,0], teacher [0,1], label 0, tau 1, alpha 0.5
LN10 = 2.302585092994045684

logits_st = arrays(np.float64, st.integers(2, 8),
                   elements=st.floats(-30, 30, allow_nan=False, allow_infinity=False))


# --- softmax / CE / KL -----------------------------------------------------

def test_softmax_examples():
    assert np.allclose(softmax_t([0.0, 0.0], 3.7), [0.5, 0.5])
    assert np.allclose(softmax_t([math.log(3), 0.0], 1.0), [0.75, 0.25], atol=1e-15)
    assert np.allclose(softmax_t([2.0, 0.0], 2.0), SOFTMAX_2_0_T2, atol=1e-6)


def test_softmax_rejects_nonpositive_temperature():
    for tau in (0.0, -1.0):
        with pytest.raises(ValueError):
            softmax_t([1.0, 2.0], tau)


@given(logits_st, st.floats(0.1, 20), st.floats(-100, 100))
def test_softmax_is_distribution_and_shift_invariant(z, tau, c):
    p = softmax_t(z, tau)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    assert np.allclose(softmax_t(z + c, tau), p, atol=1e-12)


@given(logits_st, st.floats(1, 10), st.floats(0.01, 5))
def test_max_component_decreases_with_temperature(z, tau, dt):
    if np.ptp(z) < 1e-6:
        return
    p1, p2 = softmax_t(z, tau).max(), softmax_t(z, tau + dt).max()
    assert p2 < p1 or math.isclose(p1, p2, rel_tol=0, abs_tol=1e-15)


def test_cross_entropy_examples():
    assert cross_entropy(np.zeros(10), 3) == pytest.approx(LN10, abs=1e-12)
    assert cross_entropy([20.0, 0.0], 0) <= 1e-4
    assert cross_entropy([1.0, 2.0, 3.0], 2) == pytest.approx(CE_123_LABEL2, abs=1e-5)


def test_kl_examples():
    assert kl_div([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kl_div([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert kl_div([0.7, 0.3], [0.4, 0.6]) == pytest.approx(KL_73_46, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(2, 10))
def test_kl_nonnegative(seed, k):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    assert kl_div(p, q) >= -1e-15
    assert abs(kl_div(p, p)) <= 1e-12


# --- kd_loss ---------------------------------------------------------------

def test_kd_loss_example():
    v = kd_loss([1.0, 0.0], [0.0, 1.0], 0, KdLossConfig(1.0, 0.5))
    assert v == pytest.approx(KD_EXAMPLE, abs=1e-12)


@given(logits_st, st.floats(1, 10))
def test_kd_alpha_zero_is_cross_entropy(z, tau):
    label = len(z) - 1
    assert kd_loss(z, None, label, KdLossConfig(tau, 0.0)) == cross_entropy(z, label)


@given(logits_st, st.floats(1, 10))
def test_kd_alpha_one_identical_logits_is_zero(z, tau):
    assert abs(kd_loss(z, z, 0, KdLossConfig(tau, 1.0))) <= 1e-12


def test_kd_endpoints_and_tau_squared(rng):
    s, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    y = rng.integers(0, 3, 5)
    kl = kl_div(softmax_t(t, 3.0), softmax_t(s, 3.0))
    assert np.allclose(kd_loss(s, t, y, KdLossConfig(3.0, 1.0)), kl, atol=1e-14)
    assert np.allclose(kd_loss(s, t, y, KdLossConfig(3.0, 1.0, True)), 9 * kl, atol=1e-13)
    # continuity in alpha near both endpoints
    a = kd_loss(s, t, y, KdLossConfig(3.0, 1e-9))
    assert np.allclose(a, cross_entropy(s, y), atol=1e-8)


def test_kd_needs_teacher_when_weighted():
    with pytest.raises(ConfigurationError):
        kd_loss([1.0, 0.0], None, 0, KdLossConfig(2.0, 0.3))


@pytest.mark.parametrize("kw", [dict(temperature=0.5), dict(weight=-0.1), dict(weight=1.5)])
def test_kd_config_ranges(kw):
    with pytest.raises(ConfigurationError):
        KdLossConfig(**kw)


# --- autodiff --------------------------------------------------------------

def test_scalar_square_gradient():
    w = Tensor(np.array(3.0), requires_grad=True)
    (w * w).backward()
    assert w.grad == 6.0


def test_broadcast_add_gradient():
    a = Tensor(np.ones((3, 2)), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    ((a + b) * 2.0).sum().backward()
    assert np.array_equal(b.grad, [6.0, 6.0])
    assert np.array_equal(a.grad, np.full((3, 2), 2.0))


@pytest.mark.parametrize("seed", range(4))
def test_vector_model_gradients_match_finite_differences(seed):
    model, x, y, t, th = small_model(seed)
    err, checked, skipped = check_gradients(model, Batch(x, y, t),
                                            KdLossConfig(th.kd_temperature, th.kd_weight))
    assert checked > skipped
    assert err <= 1e-6


def test_image_model_gradients_match_finite_differences():
    model, x, y, t, th = small_model(7, max_params=400, mode="image")
    err, checked, _ = check_gradients(model, Batch(x, y, t),
                                      KdLossConfig(th.kd_temperature, th.kd_weight, True))
    assert checked > 0 and err <= 1e-6


def test_alpha_zero_gradients_match_pure_ce():
    model, x, y, t, _ = small_model(3)
    _, g0 = backward(model, Batch(x, y, t), KdLossConfig(5.0, 0.0))
    _, g1 = backward(model, Batch(x, y, None), KdLossConfig(1.0, 0.0))
    assert g0.keys() == g1.keys()
    assert all(np.array_equal(g0[k], g1[k]) for k in g0)


# --- optimizer and training -----------------------------------------------

def test_sgd_examples():
    p = {"w": np.array([1.0])}
    sgd_step(p, {"w": np.array([2.0])}, lr=0.1)
    assert p["w"][0] == pytest.approx(0.8)
    q = {"w": np.array([1.0])}
    sgd_step(q, {"w": np.array([5.0])}, lr=0.0, momentum=0.9, velocity={})
    assert q["w"][0] == 1.0


def test_sgd_momentum_accumulates():
    p, v = {"w": np.array([0.0])}, {}
    for _ in range(2):
        sgd_step(p, {"w": np.array([1.0])}, lr=1.0, momentum=0.5, velocity=v)
    assert p["w"][0] == pytest.approx(-(1.0 + 1.5))


def test_sgd_decreases_convex_quadratic():
    A = np.diag([1.0, 3.0, 10.0])
    p, v = {"w": np.array([1.0, -2.0, 0.5])}, {}
    losses = []
    for _ in range(10):
        w = p["w"]
        losses.append(0.5 * w @ A @ w)
        sgd_step(p, {"w": A @ w}, lr=0.01, momentum=0.5, velocity=v)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def _single_unit_vector_model(d, k, width, rng):
    nodes = [OpNode("unit", (0, 0, 0), "relu-dense-norm", 0), OpNode("input", (), "", 0),
             OpNode("output", (), "", 0)]
    g = ArchGraph(nodes, [(1, 0), (0, 2)], 1, 2)
    return materialize(g, "vector", d, width, k, rng)


def test_train_rejects_zero_budget(rng):
    m = _single_unit_vector_model(2, 2, 4, rng)
    with pytest.raises(ValueError):
        train(m, np.zeros((4, 2)), np.zeros(4, int), None, KdLossConfig(1, 0), 0, rng)


def test_train_learns_separable_blobs():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-2, 0.5, (50, 2)), rng.normal(2, 0.5, (50, 2))])
    y = np.repeat([0, 1], 50)
    m = _single_unit_vector_model(2, 2, 8, np.random.default_rng(1))
    hist = train(m, x, y, None, KdLossConfig(1.0, 0.0), 20, np.random.default_rng(2),
                 TrainConfig(lr=0.05, batch_size=16))
    assert len(hist) == 20
    assert (m.predict(x).argmax(1) == y).mean() >= 0.95


def test_train_is_deterministic():
    def run():
        model, x, y, t, _ = small_model(5)
        train(model, x, y, t, KdLossConfig(4.0, 0.5), 3, np.random.default_rng(9))
        return model.params
    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_backward_loss_matches_kd_loss(seed):
    model, x, y, t, th = small_model(seed % 50)
    cfg = KdLossConfig(th.kd_temperature, th.kd_weight)
    loss, _ = backward(model, Batch(x, y, t), cfg, training=False)
    logits = model.forward(x).data
    assert loss == pytest.approx(float(kd_loss(logits, t, y, cfg).mean()), rel=1e-12)
