"""Turn an ``ArchGraph`` into a trainable network.

Every op unit is an activation -> transform -> normalization triplet. The
transform is a dense layer in vector mode and a 3x3 convolution in image mode.
Units with several inputs average them. Units fed straight from the network
input skip the leading activation so raw features keep their sign.

Image mode groups top-level cells into up to three stages by topological
depth; an edge that crosses into a later stage passes through a strided 1x1
convolution that halves the resolution and doubles the channels per stage.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .diffengine import (NormState, Tensor, batch_norm, conv1x1, conv3x3, global_avg_pool,
                         linear, mean_of, relu)
from .graphgen import ArchGraph

logger = logging.getLogger(__name__)

MODES = ("vector", "image")
MAX_WIDTH = 4096
CHECKPOINT_MAGIC = b"AKDM"
CHECKPOINT_VERSION = 1


class BudgetInfeasibleError(ValueError):
    def __init__(self, minimal_count: int, target: int):
        super().__init__(f"width-1 model has {minimal_count} parameters, above the target {target}")
        self.minimal_count = minimal_count
        self.target = target


@dataclass(frozen=True)
class BudgetConstraint:
    target_params: int
    tolerance: float = 0.25

    def __post_init__(self):
        if self.target_params <= 0:
            raise ValueError("target_params must be positive")
        if not 0.0 < self.tolerance < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")


@dataclass(frozen=True)
class _Layout:
    """Shapes implied by (graph, mode, input shape, width, classes)."""

    order: List[int]                 # unit ids, topological
    preds: Dict[int, List[int]]
    width: Dict[int, int]            # unit id -> channels
    stage: Dict[int, int]
    entry: Dict[int, bool]
    head_in: int
    out_stage: int
    exits: List[int]
    param_shapes: Dict[str, Tuple[int, ...]]


def _layout(g: ArchGraph, mode: str, in_shape: Sequence[int], base_width: int,
            num_classes: int) -> _Layout:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    preds = g.predecessors()
    order = [i for i in g.topological_order() if g.nodes[i].kind == "unit"]
    in_ch = int(in_shape[0])
    ndepth = 1 + max((g.nodes[u].top_depth for u in order), default=0)
    stage, width, entry = {}, {}, {}
    for u in order:
        s = min(2, g.nodes[u].top_depth * 3 // ndepth) if mode == "image" else 0
        stage[u] = s
        width[u] = base_width * (2 ** s)
        entry[u] = preds[u] == [g.source]
    shapes: Dict[str, Tuple[int, ...]] = {}
    for u in order:
        src = preds[u]
        # same-stage inputs already have this unit's width; others are projected to it
        fan = in_ch if entry[u] else width[u]
        if not entry[u]:
            for p in src:
                if stage[p] != stage[u]:
                    shapes[f"t{p}_{u}.w"] = (width[u], width[p])
        w_shape = (width[u], fan) if mode == "vector" else (width[u], fan, 3, 3)
        shapes[f"u{u}.w"] = w_shape
        shapes[f"u{u}.b"] = (width[u],)
        shapes[f"u{u}.gamma"] = (width[u],)
        shapes[f"u{u}.beta"] = (width[u],)
    exits = [p for p in preds[g.sink] if p != g.source]
    out_stage = max((stage[p] for p in exits), default=0)
    for p in exits:
        if stage[p] != out_stage:
            shapes[f"t{p}_out.w"] = (base_width * 2 ** out_stage, width[p])
    head_in = base_width * 2 ** out_stage if exits else in_ch
    shapes["head.w"] = (num_classes, head_in)
    shapes["head.b"] = (num_classes,)
    return _Layout(order, preds, width, stage, entry, head_in, out_stage, exits, shapes)


def _as_shape(in_shape) -> Tuple[int, ...]:
    if isinstance(in_shape, (int, np.integer)):
        return (int(in_shape),)
    return tuple(int(s) for s in in_shape)


def count_params(g: ArchGraph, mode: str, in_shape, base_width: int, num_classes: int) -> int:
    """Exact parameter count without allocating the model."""
    lay = _layout(g, mode, _as_shape(in_shape), base_width, num_classes)
    return int(sum(np.prod(s) for s in lay.param_shapes.values()))


class Model:
    """A materialized network; ``params`` is mutated in place by training."""

    def __init__(self, graph: ArchGraph, mode: str, in_shape: Sequence[int], base_width: int,
                 num_classes: int, params: Dict[str, np.ndarray]):
        self.graph = graph
        self.mode = mode
        self.in_shape = tuple(int(s) for s in in_shape)
        self.base_width = base_width
        self.num_classes = num_classes
        self._lay = _layout(graph, mode, self.in_shape, base_width, num_classes)
        self.params = params
        self.norm = {u: NormState(np.zeros(self._lay.width[u]), np.ones(self._lay.width[u]))
                     for u in self._lay.order}

    @property
    def unit_widths(self) -> List[int]:
        return [self._lay.width[u] for u in self._lay.order]

    def forward(self, x: np.ndarray, leaves: Optional[Dict[str, Tensor]] = None,
                training: bool = False, update_stats: bool = False,
                probe: Optional[list] = None) -> Tensor:
        lay = self._lay
        P = leaves if leaves is not None else {k: Tensor(v) for k, v in self.params.items()}
        inp = Tensor(np.asarray(x, dtype=np.float64))
        out: Dict[int, Tensor] = {}
        for u in lay.order:
            if lay.entry[u]:
                h = inp
            else:
                ins = []
                for p in lay.preds[u]:
                    t = out[p]
                    if lay.stage[p] != lay.stage[u]:
                        t = conv1x1(t, P[f"t{p}_{u}.w"], stride=2 ** (lay.stage[u] - lay.stage[p]))
                    ins.append(t)
                h = relu(mean_of(ins), probe)
            if self.mode == "vector":
                h = linear(h, P[f"u{u}.w"], P[f"u{u}.b"])
            else:
                h = conv3x3(h, P[f"u{u}.w"], P[f"u{u}.b"])
            out[u] = batch_norm(h, P[f"u{u}.gamma"], P[f"u{u}.beta"], self.norm[u],
                                training=training, update_stats=update_stats)
        if lay.exits:
            ins = []
            for p in lay.exits:
                t = out[p]
                if lay.stage[p] != lay.out_stage:
                    t = conv1x1(t, P[f"t{p}_out.w"], stride=2 ** (lay.out_stage - lay.stage[p]))
                ins.append(t)
            h = mean_of(ins)
        else:
            h = inp
        if self.mode == "image":
            h = global_avg_pool(h)
        return linear(h, P["head.w"], P["head.b"])

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Evaluation-mode logits."""
        with np.errstate(over="ignore", invalid="ignore"):
            chunks = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks) if chunks else np.zeros((0, self.num_classes))

    def state_arrays(self) -> List[np.ndarray]:
        """Parameters then running statistics, in topological order."""
        arrays = [self.params[k] for k in self.params]
        for u in self._lay.order:
            arrays += [self.norm[u].mean, self.norm[u].var]
        return arrays


def materialize(g: ArchGraph, mode: str, in_shape: Union[int, Sequence[int]], base_width: int,
                num_classes: int, rng: np.random.Generator) -> Model:
    """Allocate and initialize a model for ``g``.

    Weights are drawn from N(0, 2 / fan_in); biases and shifts start at 0,
    scales at 1. ``in_shape`` is the feature count (vector) or (C, H, W).
    """
    if base_width < 1:
        raise ValueError("base_width must be at least 1")
    if num_classes < 2:
        raise ValueError("num_classes must be at least 2")
    in_shape = _as_shape(in_shape)
    lay = _layout(g, mode, in_shape, base_width, num_classes)
    params: Dict[str, np.ndarray] = {}
    for name, shape in lay.param_shapes.items():
        kind = name.rsplit(".", 1)[1]
        if kind == "w":
            fan_in = int(np.prod(shape[1:]))
            gain = 1.0 if name.startswith("head") else 2.0
            params[name] = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
        elif kind == "gamma":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return Model(g, mode, in_shape, base_width, num_classes, params)


def param_count(m: Model) -> int:
    return int(sum(p.size for p in m.params.values()))


def scale_to_budget(g: ArchGraph, mode: str, in_shape, constraint: BudgetConstraint,
                    num_classes: int, rng: np.random.Generator) -> Model:
    """Widest model whose parameter count stays at or below the target."""
    in_shape = _as_shape(in_shape)
    target = constraint.target_params
    smallest = count_params(g, mode, in_shape, 1, num_classes)
    if smallest > target:
        raise BudgetInfeasibleError(smallest, target)
    lo, hi = 1, MAX_WIDTH
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if count_params(g, mode, in_shape, mid, num_classes) <= target:
            lo = mid
        else:
            hi = mid - 1
    model = materialize(g, mode, in_shape, lo, num_classes, rng)
    n = param_count(model)
    if n < target * (1 - constraint.tolerance) and lo < MAX_WIDTH:
        logger.debug("width %d gives %d params, below tolerance of target %d", lo, n, target)
    return model


def save_checkpoint(model: Model, path) -> None:
    """Write the AKDM checkpoint: header, unit widths, then float32 tensors."""
    header = [CHECKPOINT_MAGIC,
              struct.pack("<II", CHECKPOINT_VERSION, MODES.index(model.mode)),
              struct.pack("<I", len(model.in_shape)),
              struct.pack(f"<{len(model.in_shape)}I", *model.in_shape),
              struct.pack("<II", model.num_classes, model.base_width),
              struct.pack("<I", len(model.unit_widths)),
              struct.pack(f"<{len(model.unit_widths)}I", *model.unit_widths)]
    body = [np.ascontiguousarray(a, dtype="<f4").tobytes() for a in model.state_arrays()]
    with open(path, "wb") as fh:
        fh.write(b"".join(header + body))


def load_checkpoint(path, graph: ArchGraph) -> Model:
    """Rebuild a model for ``graph`` from an AKDM checkpoint."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an AKDM checkpoint")
    off = 4
    version, mode_idx, nd = struct.unpack_from("<III", buf, off)
    off += 12
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    in_shape = struct.unpack_from(f"<{nd}I", buf, off)
    off += 4 * nd
    num_classes, base_width, nu = struct.unpack_from("<III", buf, off)
    off += 12
    widths = list(struct.unpack_from(f"<{nu}I", buf, off))
    off += 4 * nu
    model = materialize(graph, MODES[mode_idx], in_shape, base_width, num_classes,
                        np.random.default_rng(0))
    if widths != model.unit_widths:
        raise ValueError(f"{path}: unit widths do not match the supplied graph")
    for a in model.state_arrays():
        vals = np.frombuffer(buf, dtype="<f4", count=a.size, offset=off)
        a[...] = vals.reshape(a.shape)
        off += 4 * a.size
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes")
    return model
