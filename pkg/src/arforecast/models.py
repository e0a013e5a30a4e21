"""Small forecasting models mapping an S-by-V context to an (L+T)-by-V prediction.

Three kinds share the interface: a per-variate linear map, a per-variate
one-hidden-layer MLP, and a single-block single-head attention model that
treats each variate's whole history as one token. The linear and MLP heads
are channel independent (one temporal map shared across variates), so
parameter counts never depend on V.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    layer_norm,
    matmul,
    relu,
    scale,
    softmax,
    transpose,
)

KINDS = ("linear", "mlp", "inverted_attention")

STD_FLOOR = 1e-5


@dataclass(frozen=True)
class Dims:
    """Shape bundle: context length S, block length T, overlap L, variates V, hidden width."""

    S: int
    T: int
    L: int = 0
    V: int = 1
    hidden: int = 0

    def __post_init__(self):
        if self.S < 1:
            raise ValueError(f"S must be >= 1, got {self.S}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.L < 0:
            raise ValueError(f"L must be >= 0, got {self.L}")
        if self.L >= self.S:
            raise ValueError(f"L must be < S, got L={self.L}, S={self.S}")
        if self.V < 1:
            raise ValueError(f"V must be >= 1, got {self.V}")
        if self.hidden < 0:
            raise ValueError(f"hidden must be >= 0, got {self.hidden}")

    @property
    def out_len(self) -> int:
        return self.L + self.T


@dataclass
class Forecaster:
    kind: str
    dims: Dims
    params: dict[str, Tensor]

    def param_vector(self) -> np.ndarray:
        return np.concatenate([t.values.ravel() for t in self.params.values()])

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64).ravel()
        offset = 0
        for t in self.params.values():
            n = t.values.size
            t.values[...] = vec[offset:offset + n].reshape(t.values.shape)
            offset += n
        if offset != vec.size:
            raise ValueError(f"parameter vector has {vec.size} entries, model needs {offset}")

    @property
    def param_count(self) -> int:
        return sum(t.values.size for t in self.params.values())


def _param_shapes(kind: str, dims: Dims) -> list[tuple[str, tuple[int, int], int]]:
    """(name, shape, fan_in) triples, in initialization/serialization order."""
    out = dims.out_len
    if kind == "linear":
        return [("w", (out, dims.S), dims.S), ("b", (out, 1), dims.S)]
    if kind == "mlp":
        h = dims.hidden
        return [
            ("w1", (h, dims.S), dims.S),
            ("b1", (h, 1), dims.S),
            ("w2", (out, h), h),
            ("b2", (out, 1), h),
        ]
    if kind == "inverted_attention":
        h = dims.hidden
        shapes = [("embed_w", (h, dims.S), dims.S), ("embed_b", (h, 1), dims.S)]
        for name in ("q", "k", "v", "o", "ff1", "ff2"):
            shapes.append((f"{name}_w", (h, h), h))
            shapes.append((f"{name}_b", (h, 1), h))
        shapes.append(("proj_w", (out, h), h))
        shapes.append(("proj_b", (out, 1), h))
        return shapes
    raise ValueError(f"unknown forecaster kind {kind!r}")


def param_count(kind: str, dims: Dims) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in _param_shapes(kind, dims))


def init_forecaster(kind: str, dims: Dims, seed: int) -> Forecaster:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.

    Uses the Philox counter-based generator, so identical seeds give
    bit-identical parameters across platforms and runs.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if kind in ("mlp", "inverted_attention") and dims.hidden < 1:
        raise ValueError(f"{kind} requires hidden >= 1, got {dims.hidden}")
    rng = np.random.Generator(np.random.Philox(seed))
    params: dict[str, Tensor] = {}
    for name, shape, fan_in in _param_shapes(kind, dims):
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    return Forecaster(kind=kind, dims=dims, params=params)


def _with_bias(x: Tensor, b: Tensor, v: int) -> Tensor:
    # column-broadcast b (n,1) across v columns, staying inside the op set
    if v == 1:
        return x + b
    return x + matmul(b, Tensor(np.ones((1, v))))


def forecast(model: Forecaster, context: Tensor) -> Tensor:
    """Apply the model to one S-by-V context, producing (L+T)-by-V values."""
    dims = model.dims
    if not isinstance(context, Tensor):
        context = Tensor(context)
    if context.values.ndim != 2 or context.shape[0] != dims.S:
        raise ValueError(f"context must be ({dims.S}, V), got {context.shape}")
    v = context.shape[1]
    p = model.params
    if model.kind == "linear":
        return _with_bias(matmul(p["w"], context), p["b"], v)
    if model.kind == "mlp":
        hidden = relu(_with_bias(matmul(p["w1"], context), p["b1"], v))
        return _with_bias(matmul(p["w2"], hidden), p["b2"], v)
    if model.kind == "inverted_attention":
        tokens = _with_bias(matmul(p["embed_w"], context), p["embed_b"], v)
        q = _with_bias(matmul(p["q_w"], tokens), p["q_b"], v)
        k = _with_bias(matmul(p["k_w"], tokens), p["k_b"], v)
        val = _with_bias(matmul(p["v_w"], tokens), p["v_b"], v)
        scores = scale(matmul(transpose(q), k), 1.0 / np.sqrt(dims.hidden))
        attn = softmax(scores, axis=1)
        mixed = matmul(val, transpose(attn))
        mixed = _with_bias(matmul(p["o_w"], mixed), p["o_b"], v)
        x1 = layer_norm(tokens + mixed, axis=0)
        ff = relu(_with_bias(matmul(p["ff1_w"], x1), p["ff1_b"], v))
        ff = _with_bias(matmul(p["ff2_w"], ff), p["ff2_b"], v)
        x2 = layer_norm(x1 + ff, axis=0)
        return _with_bias(matmul(p["proj_w"], x2), p["proj_b"], v)
    raise ValueError(f"unknown forecaster kind {model.kind!r}")


@dataclass(frozen=True)
class NormState:
    """Per-variate context mean and floored population std."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_context(cls, context: np.ndarray) -> "NormState":
        context = np.asarray(context, dtype=np.float64)
        if context.ndim != 2:
            raise ValueError(f"context must be 2-d, got shape {context.shape}")
        mean = context.mean(axis=0)
        std = np.maximum(context.std(axis=0), STD_FLOOR)
        return cls(mean=mean, std=std)


def apply_norm(x: np.ndarray, state: NormState) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - state.mean) / state.std


def invert_norm(x: np.ndarray, state: NormState) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * state.std + state.mean
