"""Minimal dense-tensor engine: reverse-mode autodiff on a tape, AdamW, cosine LR.

Tensors wrap numpy arrays (float64 by default). Ops record onto the innermost
active ``Tape`` (a ``with`` context); without an active tape they run in plain
inference mode. One tape plus its tensors form a single-owner computation
context, so independent contexts can run on separate threads.

Broadcasting is restricted: operand shapes must be equal, or one shape must be
a trailing suffix of the other (leading-batch expansion), or a scalar. Anything
else raises ``InvalidArgument``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

_TAPE_STACK = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_TAPE_STACK, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A dense array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise InvalidArgument("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, _as_tensor(1.0 / other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class Tape:
    """Ordered record of ops; creation order is the topological order.

    Records are (output, inputs, backward_fn) triples where backward_fn maps
    the output gradient to per-input gradients (None for non-differentiable
    slots). ``backward`` consumes the tape; a second call raises.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_TAPE_STACK, "stack", None)
        if stack is None:
            stack = _TAPE_STACK.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.stack.pop()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._records.append((out, inputs, backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``.

        Gradients are added into any existing ``.grad`` so separate tapes can
        accumulate over a batch.
        """
        if self._consumed:
            raise InvalidArgument("tape already consumed by a previous backward call")
        if loss.shape != ():
            raise InvalidArgument(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True

        produced = {id(out) for out, _, _ in self._records}
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        holders: dict[int, Tensor] = {id(loss): loss}

        for out, inputs, backward_fn in reversed(self._records):
            g = grads.pop(id(out), None)
            holders.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                acc = grads.get(key)
                grads[key] = gi if acc is None else acc + gi
                holders[key] = inp

        # whatever is left was never produced on this tape: the leaves
        for key, g in grads.items():
            if key in produced:
                continue
            leaf = holders[key]
            leaf.grad = np.array(g) if leaf.grad is None else leaf.grad + g


def backward(loss: Tensor, tape: Tape) -> None:
    """Run reverse-mode accumulation for ``loss`` over ``tape``."""
    tape.backward(loss)


def _record(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if out.requires_grad and tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def _broadcast_check(sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    if sa == sb or sa == () or sb == ():
        return
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if big[len(big) - len(small):] != small:
        raise InvalidArgument(
            f"shapes {sa} and {sb} are not equal and neither is a trailing suffix of the other"
        )


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out the leading axes a suffix-broadcast expanded
    if g.shape == shape:
        return g
    return g.sum(axis=tuple(range(g.ndim - len(shape)))).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear-algebra ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.shape, b.shape)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.shape, b.shape)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.shape, b.shape)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise InvalidArgument(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise InvalidArgument(f"matmul inner-dimension mismatch: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise InvalidArgument(f"matmul batch dims must match exactly: {a.shape} @ {b.shape}")

    def backward_fn(g):
        ga = _reduce_to(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _reduce_to(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record(np.matmul(a.data, b.data), (a, b), backward_fn)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(perm))
    return _record(np.transpose(a.data, perm), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise InvalidArgument("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis),
                   tuple(tensors), backward_fn)


def slice_rows(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    key = [slice(None)] * a.ndim
    key[axis] = slice(start, stop)
    key = tuple(key)
    shape = a.shape

    def backward_fn(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[key] = g
        return (out,)

    return _record(a.data[key], (a,), backward_fn)


def gather(a: Tensor, indices, axis: int = 0) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def backward_fn(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (slice(None),) * axis + (idx,), g)
        return (out,)

    return _record(np.take(a.data, idx, axis=axis), (a,), backward_fn)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record(a.data.sum(axis=axis), (a,), backward_fn)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _record(a.data.mean(axis=axis), (a,), backward_fn)


# ---------------------------------------------------------------------------
# nonlinearities and the masked loss

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)

    def backward_fn(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * d,)

    return _record(0.5 * x * (1.0 + t), (a,), backward_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(y, (a,), backward_fn)


def layernorm(a: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis`` (no affine)."""
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * inv

    def backward_fn(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * y).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _record(y, (a,), backward_fn)


def mse(pred: Tensor, target, mask) -> Tensor:
    """Mean squared error over masked entries only.

    ``target`` and ``mask`` are plain arrays (constants). ``mask`` is 0/1 and
    must either match ``pred``'s shape or be a leading-prefix shape (e.g. one
    flag per row), in which case it selects whole rows.
    """
    t = np.asarray(target, dtype=pred.data.dtype)
    m = np.asarray(mask, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise InvalidArgument(f"target shape {t.shape} != prediction shape {pred.shape}")
    if m.shape != pred.shape:
        if m.shape != pred.shape[:m.ndim]:
            raise InvalidArgument(
                f"mask shape {m.shape} is neither {pred.shape} nor a leading prefix of it"
            )
        m = m.reshape(m.shape + (1,) * (pred.ndim - m.ndim))
    weight = np.broadcast_to(m, pred.shape)
    count = weight.sum()
    if count == 0:
        raise InvalidArgument("mask selects no entries")
    diff = (pred.data - t) * weight

    def backward_fn(g):
        return (g * 2.0 * diff / count,)

    return _record(np.asarray((diff * (pred.data - t)).sum() / count),
                   (pred,), backward_fn)


# ---------------------------------------------------------------------------
# optimizer and schedule


@dataclass
class OptimizerState:
    """AdamW moments and hyperparameters, keyed like the parameter dict."""

    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_init(params: dict[str, Tensor], lr: float, betas=(0.9, 0.999),
               eps: float = 1e-8, weight_decay: float = 0.0) -> OptimizerState:
    state = OptimizerState(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: OptimizerState) -> None:
    """One decoupled-weight-decay Adam update in place; missing grads count as zero."""
    state.step += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise InvalidArgument(f"non-finite gradient for parameter {name!r}")
        if g.shape != p.data.shape:
            raise InvalidArgument(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= state.lr * update + state.lr * state.weight_decay * p.data


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0) -> float:
    """Linear warmup to ``base_lr`` then half-cycle cosine decay to zero."""
    if not 0 <= step <= total_steps:
        raise InvalidArgument(f"step {step} outside [0, {total_steps}]")
    if warmup_steps >= total_steps:
        raise InvalidArgument(f"warmup_steps {warmup_steps} must be < total_steps {total_steps}")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
