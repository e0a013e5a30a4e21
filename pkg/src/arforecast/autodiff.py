"""Reverse-mode automatic differentiation on a per-evaluation tape.

Dense float64 tensors plus the operation set the forecasting models and
the rollout objective need: elementwise arithmetic, matrix multiply,
relu/abs, full reductions, slicing and concatenation, softmax and layer
normalization along an axis, and a stop-gradient operator that is the
identity in the forward pass and blocks all gradient flow backward.

A ``Tape`` is built fresh for every loss evaluation (define-by-run) and
is a single-threaded unit of work; separate tapes share no mutable state
and may live on separate threads. Operations record onto the innermost
active tape of the current thread; with no active tape they compute
values only, which is the fast path used for inference and for the
finite-difference oracle.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

import numpy as np

_LN_EPS = 1e-5  # layer_norm variance floor

_local = threading.local()
_serials = itertools.count(1)


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> "Tape | None":
    """The innermost tape of the current thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array, optionally tracked on the active tape.

    A tensor with ``requires_grad`` is (re-)registered as a leaf on
    whichever tape first consumes it, so persistent parameters can be
    reused across the per-evaluation tapes.
    """

    __slots__ = ("values", "requires_grad", "tape_serial", "node_id")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.array(values, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.tape_serial: int | None = None
        self.node_id: int | None = None
        if self.requires_grad:
            tape = active_tape()
            if tape is not None:
                tape.watch(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.values)

    def relu(self) -> "Tensor":
        return relu(self)

    def abs(self) -> "Tensor":
        return absolute(self)

    def mean(self) -> "Tensor":
        return mean_all(self)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def __add__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return add(self, other)

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return NotImplemented

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Append-only record of operations, in topological order.

    Records hold (output id, input ids, local-gradient rule, saved
    context). ``backward`` walks the records once, in reverse append
    order, accumulating adjoints; leaves that the loss never reaches get
    exact zero gradients.
    """

    def __init__(self):
        self.serial = next(_serials)
        self.records: list[tuple[int, tuple[int | None, ...], object, tuple]] = []
        self.leaf_shapes: dict[int, tuple[int, ...]] = {}
        self.grad_table: dict[int, Tensor] = {}
        self.min_kink_gap = float("inf")
        self._next_id = 0

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def _new_id(self) -> int:
        node_id = self._next_id
        self._next_id += 1
        return node_id

    def watch(self, tensor: Tensor) -> int:
        """Register a requires_grad tensor as a leaf of this tape."""
        if tensor.tape_serial == self.serial and tensor.node_id is not None:
            return tensor.node_id
        node_id = self._new_id()
        tensor.tape_serial = self.serial
        tensor.node_id = node_id
        self.leaf_shapes[node_id] = tensor.values.shape
        return node_id

    def _node_for(self, tensor: Tensor) -> int | None:
        if tensor.tape_serial == self.serial:
            return tensor.node_id
        if tensor.requires_grad:
            return self.watch(tensor)
        return None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule, ctx: tuple) -> None:
        ids = tuple(self._node_for(t) for t in inputs)
        if all(i is None for i in ids):
            return
        out.tape_serial = self.serial
        out.node_id = self._new_id()
        self.records.append((out.node_id, ids, rule, ctx))

    def observe_kink(self, gap: float) -> None:
        if gap < self.min_kink_gap:
            self.min_kink_gap = gap

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        """Populate and return the gradient table d(loss)/d(leaf).

        ``loss`` must be scalar. Each record is visited exactly once, in
        reverse topological (= reverse append) order. Adjoint arrays are
        never mutated in place, so shared references stay safe.
        """
        if not isinstance(loss, Tensor) or loss.values.size != 1:
            raise ValueError("backward requires a scalar loss tensor")
        grads: dict[int, np.ndarray] = {}
        if loss.tape_serial == self.serial and loss.node_id is not None:
            grads[loss.node_id] = np.ones_like(loss.values)
        for out_id, in_ids, rule, ctx in reversed(self.records):
            upstream = grads.pop(out_id, None)
            if upstream is None:
                continue
            for node_id, contrib in zip(in_ids, rule(ctx, upstream)):
                if node_id is None or contrib is None:
                    continue
                held = grads.get(node_id)
                grads[node_id] = contrib if held is None else held + contrib
        table = {}
        for leaf_id, shape in self.leaf_shapes.items():
            grad = grads.get(leaf_id)
            table[leaf_id] = Tensor(grad if grad is not None else np.zeros(shape))
        self.grad_table = table
        return table

    def grad_of(self, tensor: Tensor) -> np.ndarray:
        """Gradient of the last backward w.r.t. ``tensor`` (zeros if unreached)."""
        if tensor.tape_serial == self.serial and tensor.node_id in self.grad_table:
            return self.grad_table[tensor.node_id].values
        return np.zeros_like(tensor.values)

    def gradient(self, loss: Tensor, tensors: list[Tensor]) -> list[np.ndarray]:
        """backward() plus gradient lookup for ``tensors``, in order."""
        self.backward(loss)
        return [self.grad_of(t) for t in tensors]


def make_tensor(shape, values, requires_grad: bool = False) -> Tensor:
    """Build a tensor from a flat row-major value list."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"extents must be positive, got {shape}")
    flat = np.asarray(values, dtype=np.float64).ravel()
    expected = int(np.prod(shape)) if shape else 1
    if flat.size != expected:
        raise ValueError(f"shape {shape} needs {expected} values, got {flat.size}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def _emit(values: np.ndarray, inputs: tuple[Tensor, ...], rule, ctx: tuple) -> Tensor:
    out = Tensor(values)
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, rule, ctx)
    return out


# Local-gradient rules. Module-level on purpose: records resolve them at
# op time, so a test harness can swap one out as a negative control.

def _add_rule(ctx, g):
    return g, g


def _sub_rule(ctx, g):
    return g, -g


def _mul_rule(ctx, g):
    a, b = ctx
    return g * b, g * a


def _scale_rule(ctx, g):
    (c,) = ctx
    return (g * c,)


def _matmul_rule(ctx, g):
    a, b = ctx
    return g @ b.T, a.T @ g


def _transpose_rule(ctx, g):
    return (g.T,)


def _relu_rule(ctx, g):
    (x,) = ctx
    return (g * (x > 0.0),)


def _abs_rule(ctx, g):
    (x,) = ctx
    return (g * np.sign(x),)


def _mean_rule(ctx, g):
    shape, size = ctx
    return (np.full(shape, float(g) / size),)


def _sum_rule(ctx, g):
    (shape,) = ctx
    return (np.full(shape, float(g)),)


def _concat_rule(ctx, g):
    axis, sizes = ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _slice_rule(ctx, g):
    shape, axis, start, stop = ctx
    out = np.zeros(shape)
    index = [slice(None)] * len(shape)
    index[axis] = slice(start, stop)
    out[tuple(index)] = g
    return (out,)


def _softmax_rule(ctx, g):
    y, axis = ctx
    return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)


def _layer_norm_rule(ctx, g):
    y, inv, axis = ctx
    g_mean = np.mean(g, axis=axis, keepdims=True)
    gy_mean = np.mean(g * y, axis=axis, keepdims=True)
    return (inv * (g - g_mean - y * gy_mean),)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.values + b.values, (a, b), _add_rule, ())


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.values - b.values, (a, b), _sub_rule, ())


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _emit(a.values * b.values, (a, b), _mul_rule, (a.values, b.values))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    if not np.isfinite(c):
        raise ValueError("scale factor must be finite")
    return _emit(a.values * c, (a,), _scale_rule, (c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError(f"matmul: expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    return _emit(a.values @ b.values, (a, b), _matmul_rule, (a.values, b.values))


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ValueError(f"transpose: expects a 2-d tensor, got {a.shape}")
    return _emit(np.ascontiguousarray(a.values.T), (a,), _transpose_rule, ())


def relu(a: Tensor) -> Tensor:
    tape = active_tape()
    if tape is not None and a.values.size:
        tape.observe_kink(float(np.min(np.abs(a.values))))
    return _emit(np.maximum(a.values, 0.0), (a,), _relu_rule, (a.values,))


def absolute(a: Tensor) -> Tensor:
    tape = active_tape()
    if tape is not None and a.values.size:
        tape.observe_kink(float(np.min(np.abs(a.values))))
    return _emit(np.abs(a.values), (a,), _abs_rule, (a.values,))


def mean_all(a: Tensor) -> Tensor:
    return _emit(np.mean(a.values), (a,), _mean_rule, (a.values.shape, a.values.size))


def sum_all(a: Tensor) -> Tensor:
    return _emit(np.sum(a.values), (a,), _sum_rule, (a.values.shape,))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty input list")
    ndim = tensors[0].values.ndim
    if not 0 <= axis < ndim:
        raise ValueError(f"concat: axis {axis} out of range for {ndim}-d tensors")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != ndim or other[:axis] + other[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise ValueError(f"concat: incompatible shapes {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    values = np.concatenate([t.values for t in tensors], axis=axis)
    return _emit(values, tuple(tensors), _concat_rule, (axis, sizes))


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ndim = a.values.ndim
    if not 0 <= axis < ndim:
        raise ValueError(f"slice_axis: axis {axis} out of range for shape {a.shape}")
    if not (0 <= start < stop <= a.shape[axis]):
        raise ValueError(f"slice_axis: bounds [{start}, {stop}) invalid for extent {a.shape[axis]}")
    index = [slice(None)] * ndim
    index[axis] = slice(start, stop)
    values = np.ascontiguousarray(a.values[tuple(index)])
    return _emit(values, (a,), _slice_rule, (a.values.shape, axis, start, stop))


def softmax(a: Tensor, axis: int) -> Tensor:
    if not 0 <= axis < a.values.ndim:
        raise ValueError(f"softmax: axis {axis} out of range for shape {a.shape}")
    shifted = a.values - np.max(a.values, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    return _emit(y, (a,), _softmax_rule, (y, axis))


def layer_norm(a: Tensor, axis: int, eps: float = _LN_EPS) -> Tensor:
    if not 0 <= axis < a.values.ndim:
        raise ValueError(f"layer_norm: axis {axis} out of range for shape {a.shape}")
    mu = np.mean(a.values, axis=axis, keepdims=True)
    centered = a.values - mu
    var = np.mean(centered * centered, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    return _emit(y, (a,), _layer_norm_rule, (y, inv, axis))


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward (bit-exact copy), no gradient flows to ancestors."""
    return Tensor(a.values.copy())


def finite_diff_oracle(eval_fn, params, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    Independent of the tape machinery by construction: it only calls
    ``eval_fn`` on perturbed copies of ``params``.
    """
    if h <= 0:
        raise ValueError("finite_diff_oracle: h must be positive")
    p = np.asarray(params, dtype=np.float64).ravel()
    grad = np.empty_like(p)
    for i in range(p.size):
        bump = np.zeros_like(p)
        bump[i] = h
        grad[i] = (eval_fn(p + bump) - eval_fn(p - bump)) / (2.0 * h)
    return grad


def max_relative_error(a, b, scale_floor: float = 1e-6) -> float:
    """Largest coordinate-wise relative difference between two arrays.

    Coordinates where both magnitudes sit below ``scale_floor`` are
    compared against the floor instead, so exact-zero gradients do not
    turn finite-difference roundoff into spurious relative error.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"max_relative_error: size mismatch {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), scale_floor)
    return float(np.max(np.abs(a - b) / denom))


@dataclass
class GradCheckReport:
    """Outcome of checking reverse-mode gradients against the central-difference oracle."""

    max_rel_error: float
    per_param_errors: list[tuple[str, float]]
    step_size: float
    norm_bound_ok: bool
    d_hat: float

    def lines(self) -> list[str]:
        out = [
            f"max_rel_error: {self.max_rel_error:.3e}",
            f"step_size: {self.step_size:.1e}",
            f"norm_bound_ok: {self.norm_bound_ok}",
            f"d_hat: {self.d_hat:.6g}",
        ]
        out.extend(f"  {name}: {err:.3e}" for name, err in self.per_param_errors)
        return out
