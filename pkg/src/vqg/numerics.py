"""Dense float64 tensors with reverse-mode autodiff, LSTM cell, Adam, gradient checks.

Only the handful of ops the question generator needs are provided. Tensors are
2-D ``(batch, features)`` internally; single vectors are accepted by
:func:`lstm_step` and :func:`softmax` and handled as one-row batches.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericError(ArithmeticError):
    """Raised when a loss, gradient or tensor goes non-finite."""


class ShapeError(ValueError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (generation, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- primitive ops ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _result(ad @ bd, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-wise ``x + b`` for ``x`` of shape (B, N) and ``b`` of shape (N,)."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: bias {b.shape} does not fit input {x.shape}")
    return _result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def total(parts: Iterable[Tensor]) -> Tensor:
    """Sum of same-shaped tensors."""
    parts = tuple(parts)
    data = parts[0].data.copy()
    for p in parts[1:]:
        data = data + p.data
    return _result(data, parts, lambda g: (g,) * len(parts))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """``max(0, x) + slope * min(0, x)``; slope is a scalar (shape (1,)) or per-channel."""
    xd, sd = x.data, slope.data
    if sd.shape not in ((1,), (xd.shape[-1],)):
        raise ShapeError(f"prelu: slope shape {sd.shape} fits neither scalar nor {xd.shape[-1]} channels")
    neg = np.minimum(xd, 0.0)
    out = np.maximum(xd, 0.0) + sd * neg

    def back(g):
        gx = np.where(xd > 0, g, g * sd)
        gs = g * neg
        gs = gs.reshape(-1, xd.shape[-1]).sum(axis=0)
        if sd.shape == (1,):
            gs = np.array([gs.sum()])
        return gx, gs

    return _result(out, (x, slope), back)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    widths = [p.shape[-1] for p in parts]
    splits = np.cumsum(widths)[:-1]
    out = np.concatenate([p.data for p in parts], axis=-1)
    return _result(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=-1)))


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    width = x.shape[-1]

    def back(g):
        full = np.zeros(x.shape[:-1] + (width,))
        full[..., start:stop] = g
        return (full,)

    return _result(x.data[..., start:stop], (x,), back)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather columns of a (D, K) table into a (len(ids), D) batch."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[1]):
        raise ShapeError(f"embedding_lookup: id out of range for table of width {table.shape[1]}")

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full.T, idx, g)
        return (full,)

    return _result(table.data[:, idx].T, (table,), back)


def where_rows(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Row-select: rows of ``a`` where ``mask`` is true, else rows of ``b``."""
    m = np.asarray(mask, dtype=bool)[:, None]
    return _result(np.where(m, a.data, b.data), (a, b),
                   lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)))


def _log_softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    """Max-shifted softmax over the last axis; accepts a 1-D vector or a (B, N) batch."""
    if logits.data.size == 0 or logits.shape[-1] == 0:
        raise ShapeError("softmax of an empty tensor")
    e = np.exp(logits.data - logits.data.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (logits,), back)


def log_softmax(logits: Tensor) -> Tensor:
    out = _log_softmax_rows(logits.data)
    p = np.exp(out)
    return _result(out, (logits,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits: Tensor, targets: Sequence[int], coeffs: Sequence[float]) -> Tensor:
    """Scalar ``sum_b coeffs[b] * -log softmax(logits[b])[targets[b]]``."""
    tgt = np.asarray(targets, dtype=np.int64)
    c = np.asarray(coeffs, dtype=np.float64)
    logp = _log_softmax_rows(logits.data)
    rows = np.arange(len(tgt))
    value = -(c * logp[rows, tgt]).sum()

    def back(g):
        grad = np.exp(logp) * c[:, None]
        grad[rows, tgt] -= c
        return (grad * g,)

    return _result(np.array(value), (logits,), back)


def check_finite(t: Tensor | np.ndarray, what: str = "tensor"):
    data = t.data if isinstance(t, Tensor) else t
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in {what}")


# -- LSTM -------------------------------------------------------------------


@dataclass
class LstmParams:
    """Standard LSTM cell. ``weight`` is (input + hidden, 4 * hidden), gate order i, f, o, g."""

    weight: Tensor
    bias: Tensor

    @property
    def hidden_size(self) -> int:
        return self.bias.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.weight.shape[0] - self.hidden_size

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
             prefix: str = "lstm", scale_: float = 0.08, forget_bias: float = 0.0) -> "LstmParams":
        w = rng.uniform(-scale_, scale_, size=(input_size + hidden_size, 4 * hidden_size))
        b = rng.uniform(-scale_, scale_, size=4 * hidden_size)
        b[hidden_size:2 * hidden_size] += forget_bias
        return cls(Tensor(w, True, f"{prefix}.weight"), Tensor(b, True, f"{prefix}.bias"))

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, prefix: str = "lstm") -> "LstmParams":
        return cls(Tensor(np.zeros((input_size + hidden_size, 4 * hidden_size)), True, f"{prefix}.weight"),
                   Tensor(np.zeros(4 * hidden_size), True, f"{prefix}.bias"))


@dataclass
class LstmState:
    hidden: Tensor
    memory: Tensor

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lstm_step(params: LstmParams, x: Tensor, state: LstmState) -> LstmState:
    H, D = params.hidden_size, params.input_size
    if x.shape[-1] != D:
        raise ShapeError(f"lstm_step: input has width {x.shape[-1]}, expected {D}")
    for label, t in (("hidden", state.hidden), ("memory", state.memory)):
        if t.shape[-1] != H:
            raise ShapeError(f"lstm_step: state {label} has width {t.shape[-1]}, expected {H}")
    vector = x.data.ndim == 1
    if vector:
        x = reshape(x, (1, D))
        state = LstmState(reshape(state.hidden, (1, H)), reshape(state.memory, (1, H)))
    z = add_bias(matmul(concat([x, state.hidden]), params.weight), params.bias)
    i = sigmoid(columns(z, 0, H))
    f = sigmoid(columns(z, H, 2 * H))
    o = sigmoid(columns(z, 2 * H, 3 * H))
    g = tanh(columns(z, 3 * H, 4 * H))
    m = add(mul(f, state.memory), mul(i, g))
    h = mul(o, tanh(m))
    if vector:
        return LstmState(reshape(h, (H,)), reshape(m, (H,)))
    return LstmState(h, m)


# -- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Pure: returns new arrays and a new state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {params[name].shape}")
    t = state.step + 1
    new_params, first, second = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        m = state.first.get(name, np.zeros_like(p))
        v = state.second.get(name, np.zeros_like(p))
        if g is None:
            new_params[name], first[name], second[name] = p, m, v
            continue
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        first[name], second[name] = m, v
    return new_params, AdamState(t, first, second)


# -- finite differences -----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None
    n_checked: int
    tol: float
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                      tol: float = 1e-4, max_per_tensor: int | None = None,
                      rng: np.random.Generator | None = None, min_grad: float = 0.0) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from the current ``params`` data on every call.
    With ``max_per_tensor`` set, a random subset of coordinates is checked per tensor.
    Coordinates whose analytic gradient magnitude is below ``min_grad`` are skipped:
    there the difference quotient resolves only ~ulp(f) / 2h and is pure roundoff.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for p in params:
        p.grad = None
    out = f()
    if not np.isfinite(out.item()):
        raise NumericError("f is not finite at the base point")
    out.backward()
    rng = rng or np.random.default_rng(0)
    worst, worst_err, n, skipped = None, 0.0, 0, 0
    for pi, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            coords = np.sort(rng.choice(flat.size, size=max_per_tensor, replace=False))
        for c in coords:
            if abs(analytic.reshape(-1)[c]) < min_grad:
                skipped += 1
                continue
            orig = flat[c]
            flat[c] = orig + h
            up = f().item()
            flat[c] = orig - h
            down = f().item()
            flat[c] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"f is not finite near {p.name or pi}[{c}]")
            numeric = (up - down) / (2 * h)
            err = relative_error(numeric, float(analytic.reshape(-1)[c]))
            n += 1
            if err > worst_err or worst is None:
                worst_err = err
                worst = (p.name or str(pi), np.unravel_index(c, p.shape))
    return GradCheckReport(worst_err, worst, n, tol, skipped)
