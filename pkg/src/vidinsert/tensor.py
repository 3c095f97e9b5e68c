"""Dense float32 tensors with reverse-mode automatic differentiation.

The engine is define-by-run: every differentiable op computes its value
eagerly with numpy and, when a Tape is active, records a backward rule.
``backward(loss)`` replays the recorded rules in reverse order, which is a
valid reverse topological order because recording follows execution.
Gradients accumulate into the ``.grad`` slot of leaf tensors (tensors the
user created with ``requires_grad=True``); intermediate adjoints live only
for the duration of the backward pass.

Everything is float32. Values are immutable by convention once created;
only ``.grad`` slots mutate. A tape and its tensors belong to one worker
at a time.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_GELU_K = np.float32(math.sqrt(2.0 / math.pi))
_GELU_C = np.float32(0.044715)


def _as_f32(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    """A numpy float32 array plus an optional same-shape gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_produced")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._produced = False  # True once an op on an active tape made this

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
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, contrib: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(contrib, dtype=np.float32, copy=True)
        else:
            self.grad += contrib

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; the free functions hold the real implementations
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class _ScratchPool:
    """Reusable float32 buffers; avoids re-faulting big pages every call."""

    def __init__(self, max_per_shape: int = 8):
        self._free: dict[tuple[int, ...], list[np.ndarray]] = {}
        self._max = max_per_shape

    def acquire(self, shape: tuple[int, ...]) -> np.ndarray:
        stack = self._free.get(shape)
        if stack:
            return stack.pop()
        return np.empty(shape, dtype=np.float32)

    def release(self, arr: np.ndarray) -> None:
        stack = self._free.setdefault(arr.shape, [])
        if len(stack) < self._max:
            stack.append(arr)


_scratch = _ScratchPool()


class Tape:
    """Ordered record of ops; replaying it in reverse yields gradients.

    Use as a context manager around the forward computation:

        with Tape() as tape:
            loss = f(x)
            backward(loss)

    Ops executed while no tape is active compute values but record nothing,
    which is the inference path. Ops may park scratch buffers on the tape;
    they return to the pool when the block exits.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable]] = []
        self._scratch: list[np.ndarray] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        Tape._stack.pop()
        for arr in self._scratch:
            _scratch.release(arr)
        self._scratch.clear()
        self._entries.clear()
        return False

    def __len__(self) -> int:
        return len(self._entries)

    @staticmethod
    def active() -> "Tape | None":
        return Tape._stack[-1] if Tape._stack else None


def _record(out: Tensor, rule: Callable[[np.ndarray], list]) -> None:
    tape = Tape.active()
    if tape is not None and out.requires_grad:
        out._produced = True
        tape._entries.append((out, rule))


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

    Repeated calls without zeroing grads add up; the optimizer owns the
    reset. Replays are deterministic: same tape, same gradients.
    """
    tape = tape if tape is not None else Tape.active()
    if tape is None:
        raise ContractError("backward() needs an active or explicit Tape")
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, rule in reversed(tape._entries):
        g = adjoint.pop(id(out), None)
        if g is None:
            continue
        for t, contrib in rule(g):
            if not t.requires_grad:
                continue
            if t._produced:
                key = id(t)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + contrib
                else:
                    adjoint[key] = contrib
            else:
                t.accumulate_grad(contrib)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        grads = []
        if a.requires_grad:
            grads.append((a, _unbroadcast(g, a.shape)))
        if b.requires_grad:
            grads.append((b, _unbroadcast(g, b.shape)))
        return grads

    _record(out, rule)
    return out


def sub(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        grads = []
        if a.requires_grad:
            grads.append((a, _unbroadcast(g, a.shape)))
        if b.requires_grad:
            grads.append((b, _unbroadcast(-g, b.shape)))
        return grads

    _record(out, rule)
    return out


def neg(a) -> Tensor:
    a = _ensure(a)
    out = Tensor(-a.data, a.requires_grad)
    _record(out, lambda g: [(a, -g)])
    return out


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        grads = []
        if a.requires_grad:
            grads.append((a, _unbroadcast(g * b.data, a.shape)))
        if b.requires_grad:
            grads.append((b, _unbroadcast(g * a.data, b.shape)))
        return grads

    _record(out, rule)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    a = _ensure(a)
    s32 = np.float32(s)
    out = Tensor(a.data * s32, a.requires_grad)
    _record(out, lambda g: [(a, g * s32)])
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; stacked (batched) operands share leading dims."""
    a, b = _ensure(a), _ensure(b)
    if (
        a.ndim < 2
        or b.ndim < 2
        or a.shape[-1] != b.shape[-2]
        or a.shape[:-2] != b.shape[:-2]
    ):
        raise ShapeError(f"matmul shapes do not agree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        grads = []
        if a.requires_grad:
            grads.append((a, g @ np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            grads.append((b, np.swapaxes(a.data, -1, -2) @ g))
        return grads

    _record(out, rule)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _ensure(a)
    out = Tensor(a.data.reshape(shape), a.requires_grad)
    _record(out, lambda g: [(a, g.reshape(a.shape))])
    return out


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = _ensure(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)), a.requires_grad)
    _record(out, lambda g: [(a, g.transpose(inverse))])
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_ensure(p) for p in parts]
    if not parts:
        raise ContractError("concat needs at least one part")
    if len(parts) == 1:
        return parts[0]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    out = Tensor(out_data, any(p.requires_grad for p in parts))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        pieces = np.split(g, splits, axis=axis)
        return [(p, piece) for p, piece in zip(parts, pieces) if p.requires_grad]

    _record(out, rule)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    a = _ensure(a)
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}) exceeds axis {axis} of {a.shape}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(a.data[index].copy(), a.requires_grad)

    def rule(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return [(a, full)]

    _record(out, rule)
    return out


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup table[i] for an int index vector (embedding gather)."""
    table = _ensure(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ContractError(f"gather_rows wants a 1-D index vector, got {idx.shape}")
    out = Tensor(table.data[idx], table.requires_grad)

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return [(table, full)]

    _record(out, rule)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Exponentials normalized along ``axis``, max-subtracted for stability."""
    x = _ensure(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=axis, keepdims=True)
    out = Tensor(y, x.requires_grad)

    def rule(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return [(x, y * (g - inner))]

    _record(out, rule)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance along the last axis, then affine."""
    x, gain, bias = _ensure(x), _ensure(gain), _ensure(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ContractError(
            f"gain/bias must have shape ({n},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data, x.requires_grad or gain.requires_grad or bias.requires_grad)

    def rule(g):
        grads = []
        if x.requires_grad:
            dxhat = g * gain.data
            term = dxhat.sum(axis=-1, keepdims=True)
            proj = (dxhat * xhat).sum(axis=-1, keepdims=True)
            grads.append((x, (inv / n) * (n * dxhat - term - xhat * proj)))
        if gain.requires_grad:
            grads.append((gain, (g * xhat).reshape(-1, n).sum(axis=0)))
        if bias.requires_grad:
            grads.append((bias, g.reshape(-1, n).sum(axis=0)))
        return grads

    _record(out, rule)
    return out


def gelu(x: Tensor) -> Tensor:
    """GELU activation (tanh approximation)."""
    x = _ensure(x)
    d = x.data
    u = _GELU_K * (d + _GELU_C * d * d * d)
    th = np.tanh(u)
    out = Tensor(0.5 * d * (1.0 + th), x.requires_grad)

    def rule(g):
        du = _GELU_K * (1.0 + 3.0 * _GELU_C * d * d)
        local = 0.5 * (1.0 + th) + 0.5 * d * (1.0 - th * th) * du
        return [(x, g * local)]

    _record(out, rule)
    return out


def sum_all(x: Tensor) -> Tensor:
    # accumulate in f64 so scalar readouts round once, not per element
    x = _ensure(x)
    out = Tensor(np.float32(x.data.sum(dtype=np.float64)), x.requires_grad)
    _record(out, lambda g: [(x, np.broadcast_to(g, x.shape).astype(np.float32))])
    return out


def mean_all(x: Tensor) -> Tensor:
    x = _ensure(x)
    out = Tensor(np.float32(x.data.mean(dtype=np.float64)), x.requires_grad)
    inv = np.float32(1.0 / x.size)

    def rule(g):
        return [(x, np.broadcast_to(g * inv, x.shape).astype(np.float32))]

    _record(out, rule)
    return out


def attention(q: Tensor, k: Tensor, v: Tensor, att_scale: float,
              chunk: int = 256, capture: dict | None = None) -> Tensor:
    """Softmax(q @ k^T * scale) @ v over stacked heads, shape (H, S, D).

    Fused and processed in row chunks so the (S, S) score blocks stay
    cache-resident; the softmax probabilities are kept for the backward
    rule. Pass ``capture`` to get a copy of the probabilities under key
    ``"probs"`` (heads, S, S).
    """
    q, k, v = _ensure(q), _ensure(k), _ensure(v)
    if not (q.shape == k.shape == v.shape) or q.ndim != 3:
        raise ShapeError(
            f"attention wants matching (H, S, D) stacks, got {q.shape}, {k.shape}, {v.shape}"
        )
    heads, seq, dh = q.shape
    s32 = np.float32(att_scale)
    tape = Tape.active()
    probs = _scratch.acquire((heads, seq, seq))
    ctx = np.empty((heads, seq, dh), dtype=np.float32)
    for h in range(heads):
        kt = np.ascontiguousarray(k.data[h].T)
        qh = q.data[h] * s32
        for i in range(0, seq, chunk):
            rows = probs[h][i : i + chunk]
            np.matmul(qh[i : i + chunk], kt, out=rows)
            rows -= rows.max(axis=1, keepdims=True)
            np.exp(rows, out=rows)
            rows /= rows.sum(axis=1, keepdims=True)
            np.matmul(rows, v.data[h], out=ctx[h][i : i + chunk])
    if capture is not None:
        capture["probs"] = probs.copy()
    if tape is None:
        _scratch.release(probs)  # nothing records a backward rule
    else:
        tape._scratch.append(probs)
    out = Tensor(ctx, q.requires_grad or k.requires_grad or v.requires_grad)

    def rule(g):
        dq = np.empty_like(q.data)
        dk = np.zeros_like(k.data)
        dv = np.zeros_like(v.data)
        buf = np.empty((min(chunk, seq), seq), dtype=np.float32)
        for h in range(heads):
            vt = np.ascontiguousarray(v.data[h].T)
            for i in range(0, seq, chunk):
                n = min(chunk, seq - i)
                pc = probs[h][i : i + n]
                dp = np.matmul(g[h][i : i + n], vt, out=buf[:n])
                rowdot = np.einsum("ij,ij->i", dp, pc)
                dp -= rowdot.reshape(-1, 1)
                dp *= pc
                np.matmul(dp, k.data[h], out=dq[h][i : i + n])
                dk[h] += dp.T @ q.data[h][i : i + n]
                dv[h] += pc.T @ g[h][i : i + n]
            dq[h] *= s32
            dk[h] *= s32
        grads = []
        if q.requires_grad:
            grads.append((q, dq))
        if k.requires_grad:
            grads.append((k, dk))
        if v.requires_grad:
            grads.append((v, dv))
        return grads

    _record(out, rule)
    return out


def grad_pair(
    f: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-3
) -> tuple[np.ndarray, np.ndarray]:
    """(analytic, central-difference) gradient pair of a scalar map at point."""
    if not point.requires_grad:
        raise ContractError("grad check point must have requires_grad=True")
    if not 1e-4 <= step <= 1e-2:
        raise ContractError(f"step {step} outside [1e-4, 1e-2]")
    with Tape() as tape:
        out = f(point)
        if out.size != 1:
            raise ContractError("grad check needs a scalar-valued map")
        point.grad = None
        backward(out, tape)
    analytic = (
        np.zeros(point.shape, dtype=np.float64)
        if point.grad is None
        else point.grad.astype(np.float64)
    ).reshape(-1)
    flat = point.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    h = np.float32(step)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(point).item()
        flat[i] = orig - h
        down = f(point).item()
        flat[i] = orig
        numeric[i] = (up - down) / (2.0 * float(h))
    return analytic, numeric


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-3) -> float:
    """Max relative error between backward() and central finite differences.

    ``f`` must map ``point`` to a scalar Tensor. Error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8); the max over
    coordinates is returned.
    """
    analytic, numeric = grad_pair(f, point, step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
