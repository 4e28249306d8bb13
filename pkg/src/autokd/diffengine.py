"""Reverse-mode differentiation, the distillation objective, and an SGD trainer.

The engine is deliberately small: a ``Tensor`` wraps a numpy array and records
the closure that pushes its gradient to its parents. Composite operations that
matter for speed (dense/conv transforms, normalization, the KD loss) are fused
into single nodes with hand-written backward rules; every rule is checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NORM_EPS = 1e-5


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Tensor


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: Tuple["Tensor", ...] = ()):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf's ``.grad``."""
        order: List[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # elementwise arithmetic, with numpy broadcasting undone on the way back
    def __add__(self, other):
        other = _wrap(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def _bw(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def _bw(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __pow__(self, k: float):
        out = Tensor(self.data ** k, _parents=(self,))

        def _bw(g):
            self._accumulate(g * k * self.data ** (k - 1))

        out._backward = _bw
        return out

    def __matmul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data @ other.data, _parents=(self, other))

        def _bw(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)

        out._backward = _bw
        return out

    def sum(self):
        out = Tensor(np.sum(self.data), _parents=(self,))

        def _bw(g):
            self._accumulate(np.broadcast_to(g, self.data.shape))

        out._backward = _bw
        return out

    def mean(self):
        return self.sum() * (1.0 / self.data.size)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# network primitives


def relu(x: Tensor, probe: Optional[list] = None) -> Tensor:
    """max(x, 0); the subgradient at 0 is 0.

    When ``probe`` is a list the pre-activation array is appended to it, which
    the gradient checker uses to detect perturbations that cross a kink.
    """
    if probe is not None:
        probe.append(x.data)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), _parents=(x,))
    out._backward = lambda g: x._accumulate(g * mask)
    return out


def mean_of(xs: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of same-shaped tensors."""
    if len(xs) == 1:
        return xs[0]
    k = 1.0 / len(xs)
    out = Tensor(sum(x.data for x in xs) * k, _parents=tuple(xs))

    def _bw(g):
        for x in xs:
            x._accumulate(g * k)

    out._backward = _bw
    return out


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w.T + b, with w shaped (out, in)."""
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(y, _parents=parents)

    def _bw(g):
        x._accumulate(g @ w.data)
        w._accumulate(g.T @ x.data)
        if b is not None:
            b._accumulate(g.sum(axis=0))

    out._backward = _bw
    return out


def conv3x3(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Same-padded 3x3 convolution. x: (N, C, H, W); w: (O, C, 3, 3)."""
    n, c, h, wd = x.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    y = np.einsum("nchwij,ocij->nohw", cols, w.data, optimize=True)
    if b is not None:
        y = y + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(y, _parents=parents)

    def _bw(g):
        w._accumulate(np.einsum("nohw,nchwij->ocij", g, cols, optimize=True))
        if b is not None:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    gx[:, :, i:i + h, j:j + wd] += np.einsum(
                        "nohw,oc->nchw", g, w.data[:, :, i, j], optimize=True
                    )
            x._accumulate(gx[:, :, 1:-1, 1:-1])

    out._backward = _bw
    return out


def conv1x1(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Strided pointwise convolution, no bias. w: (O, C)."""
    xs = x.data[:, :, ::stride, ::stride]
    out = Tensor(np.einsum("nchw,oc->nohw", xs, w.data, optimize=True), _parents=(x, w))

    def _bw(g):
        w._accumulate(np.einsum("nohw,nchw->oc", g, xs, optimize=True))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, :, ::stride, ::stride] = np.einsum("nohw,oc->nchw", g, w.data, optimize=True)
            x._accumulate(gx)

    out._backward = _bw
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    out = Tensor(x.data.mean(axis=(2, 3)), _parents=(x,))
    out._backward = lambda g: x._accumulate(
        np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape)
    )
    return out


@dataclass
class NormState:
    """Running statistics of one normalization layer (evaluation mode)."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: NormState,
               training: bool = True, update_stats: bool = True) -> Tensor:
    """Per-feature standardization with learned scale and shift.

    Features are axis 1; statistics pool over every other axis. Training mode
    uses batch statistics and (optionally) folds them into ``state``.
    """
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.data.ndim == 2 else (1, -1, 1, 1)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_stats:
            m = state.momentum
            state.mean = (1 - m) * state.mean + m * mu
            state.var = (1 - m) * state.var + m * var
    else:
        mu, var = state.mean, state.var
    inv = 1.0 / np.sqrt(var + NORM_EPS)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = Tensor(xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape),
                 _parents=(x, gamma, beta))
    count = x.data.size // x.data.shape[1]

    def _bw(g):
        gamma._accumulate((g * xhat).sum(axis=axes))
        beta._accumulate(g.sum(axis=axes))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            s1 = gxhat.sum(axis=axes).reshape(bshape)
            s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
            gx = (gxhat - s1 / count - xhat * s2 / count) * inv.reshape(bshape)
        else:
            gx = gxhat * inv.reshape(bshape)
        x._accumulate(gx)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# probabilities and losses (pure numpy; last axis indexes classes)


def log_softmax_t(logits, tau: float = 1.0) -> np.ndarray:
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_t(logits, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax exp(z/tau) / sum exp(z/tau), max-shifted."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, label) -> np.ndarray:
    """-log softmax(logits)[label]; vectorized over leading axes."""
    lp = log_softmax_t(logits, 1.0)
    label = np.asarray(label)
    if lp.ndim == 1:
        return -lp[int(label)]
    return -np.take_along_axis(lp, label.reshape(-1, 1), axis=-1)[:, 0]


def kl_div(p, q) -> np.ndarray:
    """sum_j p_j log(p_j / q_j), with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def _kl_from_logits(teacher, student, tau: float) -> np.ndarray:
    lpt = log_softmax_t(teacher, tau)
    lps = log_softmax_t(student, tau)
    pt = np.exp(lpt)
    return np.where(pt > 0, pt * (lpt - lps), 0.0).sum(axis=-1)


@dataclass(frozen=True)
class KdLossConfig:
    temperature: float = 4.0
    weight: float = 0.9
    tau_squared_scaling: bool = False

    def __post_init__(self):
        if self.temperature < 1.0:
            raise ConfigurationError(f"temperature must be >= 1, got {self.temperature}")
        if not 0.0 <= self.weight <= 1.0:
            raise ConfigurationError(f"weight must lie in [0, 1], got {self.weight}")

    @property
    def kl_scale(self) -> float:
        return self.temperature ** 2 if self.tau_squared_scaling else 1.0


def kd_loss(student_logits, teacher_logits, label, cfg: KdLossConfig) -> np.ndarray:
    """(1 - a) CE(student, label) + a KL(softmax(teacher/t) || softmax(student/t)).

    Works on a single vector or a batch (returns per-sample values).
    """
    ce = cross_entropy(student_logits, label)
    if cfg.weight == 0.0:
        return ce
    if teacher_logits is None:
        raise ConfigurationError("teacher logits are required when the KD weight is positive")
    kl = _kl_from_logits(teacher_logits, student_logits, cfg.temperature)
    return (1.0 - cfg.weight) * ce + cfg.weight * cfg.kl_scale * kl


def kd_objective(logits: Tensor, labels: np.ndarray, teacher_logits: Optional[np.ndarray],
                 cfg: KdLossConfig) -> Tensor:
    """Batch-mean KD loss as a graph node."""
    s = logits.data
    n = s.shape[0]
    losses = kd_loss(s, teacher_logits, labels, cfg)
    out = Tensor(np.asarray(losses.mean()), _parents=(logits,))

    def _bw(g):
        onehot = np.zeros_like(s)
        onehot[np.arange(n), labels] = 1.0
        grad = softmax_t(s, 1.0) - onehot
        if cfg.weight != 0.0:
            tau = cfg.temperature
            grad = (1.0 - cfg.weight) * grad + cfg.weight * cfg.kl_scale / tau * (
                softmax_t(s, tau) - softmax_t(teacher_logits, tau)
            )
        logits._accumulate(g * grad / n)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# gradients, optimizer, training loop


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    teacher_logits: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels disagree on sample count")
        if self.teacher_logits is not None and len(self.teacher_logits) != len(self.labels):
            raise ValueError("teacher logits disagree on sample count")


def backward(model, batch: Batch, cfg: KdLossConfig, training: bool = True,
             update_stats: bool = False) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean KD loss on ``batch`` and its gradient for every model parameter.

    ``model`` is anything with ``params`` (name -> array) and
    ``forward(x, leaves, training=..., update_stats=...)`` building the graph
    from the supplied leaf tensors.
    """
    leaves = {k: Tensor(v, requires_grad=True) for k, v in model.params.items()}
    logits = model.forward(batch.inputs, leaves, training=training, update_stats=update_stats)
    loss = kd_objective(logits, batch.labels, batch.teacher_logits, cfg)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return float(loss.data), grads


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float,
             momentum: float = 0.0, velocity: Optional[Dict[str, np.ndarray]] = None) -> None:
    """In-place momentum SGD: v <- m v + g; p <- p - lr v."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    for k, g in grads.items():
        if momentum:
            if velocity is None:
                raise ValueError("momentum needs a velocity buffer")
            v = velocity.get(k)
            v = g.copy() if v is None else momentum * v + g
            velocity[k] = v
            step = v
        else:
            step = g
        params[k] -= lr * step


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    cosine: bool = True


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float


def train(model, inputs: np.ndarray, labels: np.ndarray, teacher_logits: Optional[np.ndarray],
          cfg: KdLossConfig, epochs: int, rng: np.random.Generator,
          tcfg: Optional[TrainConfig] = None,
          callback: Optional[Callable[[int, object], None]] = None) -> List[EpochMetrics]:
    """Shuffled mini-batch momentum SGD with cosine-decayed learning rate.

    ``callback(epoch, model)`` runs after every epoch (1-based). A run that
    diverges keeps going with non-finite values; callers score it (the
    harness gives such trials accuracy 0), so overflow warnings are muted.
    """
    if epochs < 1:
        raise ValueError(f"training budget must be at least one epoch, got {epochs}")
    tcfg = tcfg or TrainConfig()
    n = len(labels)
    n_batches = max(1, math.ceil(n / tcfg.batch_size))
    total = epochs * n_batches
    velocity: Dict[str, np.ndarray] = {}
    history = []
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            perm = rng.permutation(n)
            loss_sum = 0.0
            correct = 0
            for idx in np.array_split(perm, n_batches):
                lr = tcfg.lr * 0.5 * (1 + math.cos(math.pi * step / total)) if tcfg.cosine else tcfg.lr
                leaves = {k: Tensor(v, requires_grad=True) for k, v in model.params.items()}
                logits = model.forward(inputs[idx], leaves, training=True, update_stats=True)
                t = teacher_logits[idx] if teacher_logits is not None else None
                loss = kd_objective(logits, labels[idx], t, cfg)
                loss.backward()
                grads = {k: lf.grad for k, lf in leaves.items() if lf.grad is not None}
                sgd_step(model.params, grads, lr, tcfg.momentum, velocity)
                loss_sum += float(loss.data) * len(idx)
                correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
                step += 1
            history.append(EpochMetrics(epoch + 1, loss_sum / n, correct / n))
            if callback is not None:
                callback(epoch + 1, model)
    return history


def check_gradients(model, batch: Batch, cfg: KdLossConfig, eps: float = 1e-5,
                    floor: float = 1e-3) -> Tuple[float, int, int]:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    Coordinates whose +/-eps perturbation flips the sign pattern of any relu
    input are skipped. Relative error is |a - n| / max(|a|, |n|, floor).
    Returns (max relative error, checked count, skipped count).
    """
    _, grads = backward(model, batch, cfg)

    def loss_and_signs():
        probe: list = []
        leaves = {k: Tensor(v) for k, v in model.params.items()}
        logits = model.forward(batch.inputs, leaves, training=True, update_stats=False, probe=probe)
        loss = kd_loss(logits.data, batch.teacher_logits, batch.labels, cfg).mean()
        return loss, [a > 0 for a in probe]

    _, base_signs = loss_and_signs()
    worst, checked, skipped = 0.0, 0, 0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, sp = loss_and_signs()
            flat[i] = orig - eps
            lm, sm = loss_and_signs()
            flat[i] = orig
            if any((a != b).any() or (a != c).any() for a, b, c in zip(base_signs, sp, sm)):
                skipped += 1
                continue
            num = (lp - lm) / (2 * eps)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
            checked += 1
    return worst, checked, skipped
