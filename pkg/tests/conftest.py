from __future__ import annotations

import numpy as np
import pytest

from autokd.graphgen import GeneratorHyperparams, GraphGenSpec, assemble
from autokd.netbuilder import count_params, materialize


def small_model(seed: int, max_params: int = 500, mode: str = "vector"):
    """A random hierarchical model with at most ``max_params`` parameters,
    plus a matching random batch and KD hyperparameters."""
    rng = np.random.default_rng(seed)
    fam = str(rng.choice(["ER", "WS", "BA"]))
    top = GraphGenSpec(fam, int(rng.integers(3, 5)), er_p=0.5, ws_k=2, ws_beta=0.3, ba_m=1)
    theta = GeneratorHyperparams(
        top, GraphGenSpec("ER", int(rng.integers(1, 3)), er_p=0.5), GraphGenSpec("ER", 1),
        kd_temperature=float(rng.uniform(1, 10)), kd_weight=float(rng.uniform(0, 1)),
    )
    g = assemble(theta, rng)
    k = int(rng.integers(2, 5))
    in_shape = int(rng.integers(2, 5)) if mode == "vector" else (1, 4, 4)
    width = 1
    while count_params(g, mode, in_shape, width + 1, k) <= max_params:
        width += 1
    model = materialize(g, mode, in_shape, width, k, rng)
    n = 32
    shape = (n, in_shape) if mode == "vector" else (n, *in_shape)
    x = rng.normal(size=shape)
    y = rng.integers(0, k, n)
    t = rng.normal(size=(n, k)) * 3
    return model, x, y, t, theta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(key: str, title: str, ok, detail: str) -> bool:
        ok = bool(ok)
        _ACCEPTANCE[key] = f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {title} -- {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[key])
