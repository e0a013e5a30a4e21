"""Autoregressive rollout prediction and the discounted multi-block objective.

A short-horizon model is extended to long horizons by feeding its own
predictions back as input, one T-step block at a time. Training scores
every block: the first block contributes its MSE directly, and each later
block k adds a geometrically discounted term mixing its MSE with a
monotonicity penalty |e_k - sg(e_{k-1})|. The stop-gradient confines the
penalty's gradient to the current block, so the effective coefficient on
a block's error gradient is 1 when its error exceeds the previous block's,
(1 - beta) at equality, and (1 - 2*beta) when the error decreased, which
damps updates driven by blocks that look accidentally better than their
predecessors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    GradCheckReport,
    Tape,
    Tensor,
    absolute,
    concat,
    finite_diff_oracle,
    max_relative_error,
    mean_all,
    scale,
    slice_axis,
    stop_gradient,
)
from .models import Forecaster, NormState, apply_norm, forecast


@dataclass(frozen=True)
class RolloutConfig:
    """Rollout geometry and objective weights: (S, T, L, n, gamma, beta)."""

    S: int
    T: int
    L: int = 0
    n: int = 1
    gamma: float = 0.5
    beta: float = 0.1

    def __post_init__(self):
        if self.S < 1:
            raise ValueError(f"S must be >= 1, got {self.S}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.L < 0 or self.L >= self.S:
            raise ValueError(f"L must satisfy 0 <= L < S, got L={self.L}, S={self.S}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0.0 < self.beta < 0.5:
            raise ValueError(f"beta must be in (0, 0.5), got {self.beta}")

    @property
    def horizon(self) -> int:
        return self.n * self.T


@dataclass
class RolloutPrediction:
    """Model output over L + n*T steps: the stitched values plus the per-step blocks."""

    values: Tensor
    blocks: list[Tensor]


@dataclass
class BlockErrors:
    """Per-block errors e_1..e_n (still on tape), the objective, and the violation count."""

    e: list[Tensor]
    loss: Tensor
    violations: int


def _check_model_cfg(model: Forecaster, cfg: RolloutConfig) -> None:
    d = model.dims
    if (d.S, d.T, d.L) != (cfg.S, cfg.T, cfg.L):
        raise ValueError(
            f"model dims (S={d.S}, T={d.T}, L={d.L}) do not match "
            f"rollout config (S={cfg.S}, T={cfg.T}, L={cfg.L})"
        )


def rollout_predict(model: Forecaster, context: Tensor, cfg: RolloutConfig) -> RolloutPrediction:
    """Autoregressive n-block rollout; consumes no ground-truth future.

    Block 1 comes from the raw context. Every later block's input is the
    last S entries of the running sequence whose first S entries are the
    context and whose tail is prior predictions, entered un-detached so
    gradients flow through the whole chain.
    """
    _check_model_cfg(model, cfg)
    if not isinstance(context, Tensor):
        context = Tensor(context)
    if context.values.ndim != 2 or context.shape[0] != cfg.S:
        raise ValueError(f"context must be ({cfg.S}, V), got {context.shape}")
    S, T, L, n = cfg.S, cfg.T, cfg.L, cfg.n

    first = forecast(model, context)
    overlap = slice_axis(first, 0, 0, L) if L > 0 else None
    blocks = [slice_axis(first, 0, L, L + T)]
    for k in range(1, n):
        pieces = []
        if k * T < S:
            pieces.append(slice_axis(context, 0, k * T, S))
        lo = max(S, k * T)
        hi = S + k * T
        for j, block in enumerate(blocks):
            b_lo, b_hi = S + j * T, S + (j + 1) * T
            take_lo, take_hi = max(lo, b_lo), min(hi, b_hi)
            if take_lo >= take_hi:
                continue
            if take_lo == b_lo and take_hi == b_hi:
                pieces.append(block)
            else:
                pieces.append(slice_axis(block, 0, take_lo - b_lo, take_hi - b_lo))
        step_input = pieces[0] if len(pieces) == 1 else concat(pieces, axis=0)
        out = forecast(model, step_input)
        blocks.append(slice_axis(out, 0, L, L + T))

    parts = ([overlap] if overlap is not None else []) + blocks
    values = parts[0] if len(parts) == 1 else concat(parts, axis=0)
    return RolloutPrediction(values=values, blocks=blocks)


def block_error(pred_block: Tensor, truth_block) -> Tensor:
    """Mean squared error over every entry of one block, kept differentiable."""
    if not isinstance(truth_block, Tensor):
        truth_block = Tensor(truth_block)
    if pred_block.shape != truth_block.shape:
        raise ValueError(f"block shapes differ: {pred_block.shape} vs {truth_block.shape}")
    diff = pred_block - truth_block
    return mean_all(diff * diff)


def discounted_loss(errors: list[Tensor], gamma: float, beta: float) -> Tensor:
    """e_1 + sum_k gamma^k * ((1-beta) * e_{k+1} + beta * |e_{k+1} - sg(e_k)|).

    Accepts beta == 0 so the pure geometric accumulation can be exercised
    on its own; RolloutConfig itself keeps beta strictly positive.
    """
    if not errors:
        raise ValueError("discounted_loss: empty error list")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    if not 0.0 <= beta < 0.5:
        raise ValueError(f"beta must be in [0, 0.5), got {beta}")
    loss = errors[0]
    for k in range(1, len(errors)):
        term = scale(errors[k], 1.0 - beta)
        if beta > 0.0:
            gap = absolute(errors[k] - stop_gradient(errors[k - 1]))
            term = term + scale(gap, beta)
        loss = loss + scale(term, gamma ** k)
    return loss


def loss_magnitude_factor(cfg: RolloutConfig) -> float:
    """(1 - gamma^n) / (1 - gamma): the objective-to-single-block magnitude ratio."""
    return (1.0 - cfg.gamma ** cfg.n) / (1.0 - cfg.gamma)


def ar_loss(model: Forecaster, window, cfg: RolloutConfig) -> BlockErrors:
    """Rollout objective for one window, on the window's normalized scale.

    The window context fixes the normalization state; the rollout runs in
    normalized space and each block is scored against the correspondingly
    normalized slice of the ground-truth future.
    """
    _check_model_cfg(model, cfg)
    context = np.asarray(window.context, dtype=np.float64)
    future = np.asarray(window.future, dtype=np.float64)
    if context.ndim != 2 or context.shape[0] != cfg.S:
        raise ValueError(f"window context must be ({cfg.S}, V), got {context.shape}")
    if future.shape != (cfg.horizon, context.shape[1]):
        raise ValueError(
            f"window future must be ({cfg.horizon}, {context.shape[1]}), got {future.shape}"
        )
    state = NormState.from_context(context)
    ctx_n = apply_norm(context, state)
    fut_n = apply_norm(future, state)

    prediction = rollout_predict(model, Tensor(ctx_n), cfg)
    errors = [
        block_error(block, fut_n[k * cfg.T:(k + 1) * cfg.T])
        for k, block in enumerate(prediction.blocks)
    ]
    if cfg.n == 1:
        loss = errors[0]
    else:
        loss = discounted_loss(errors, cfg.gamma, cfg.beta)
    raw = [e.item() for e in errors]
    violations = sum(1 for k in range(len(raw) - 1) if raw[k + 1] < raw[k])
    return BlockErrors(e=errors, loss=loss, violations=violations)


def mse_loss(model: Forecaster, window) -> Tensor:
    """Vanilla single-block objective: normalized MSE of the first T steps."""
    dims = model.dims
    context = np.asarray(window.context, dtype=np.float64)
    future = np.asarray(window.future, dtype=np.float64)
    if context.ndim != 2 or context.shape[0] != dims.S:
        raise ValueError(f"window context must be ({dims.S}, V), got {context.shape}")
    if future.ndim != 2 or future.shape[0] < dims.T or future.shape[1] != context.shape[1]:
        raise ValueError(f"window future must cover {dims.T} steps of {context.shape[1]} variates")
    state = NormState.from_context(context)
    ctx_n = apply_norm(context, state)
    fut_n = apply_norm(future[:dims.T], state)
    out = forecast(model, Tensor(ctx_n))
    block = slice_axis(out, 0, dims.L, dims.L + dims.T)
    return block_error(block, fut_n)


def loss_kink_gap(model: Forecaster, window, cfg: RolloutConfig) -> float:
    """Smallest |input| seen at any relu/abs kink while evaluating ar_loss."""
    with Tape() as tape:
        ar_loss(model, window, cfg)
        return tape.min_kink_gap


def _pinned_loss_value(model: Forecaster, window, cfg: RolloutConfig,
                       anchors: list[float]) -> float:
    """ar_loss value with every stop-gradient operand frozen to ``anchors``.

    Plain-float accumulation, independent of the tape and of
    discounted_loss; used only as the finite-difference surrogate.
    """
    raw = [e.item() for e in ar_loss(model, window, cfg).e]
    value = raw[0]
    for k in range(1, cfg.n):
        value += cfg.gamma ** k * (
            (1.0 - cfg.beta) * raw[k] + cfg.beta * abs(raw[k] - anchors[k - 1])
        )
    return value


def check_gradients(
    model: Forecaster,
    window,
    cfg: RolloutConfig,
    h: float = 1e-4,
    scale_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ar_loss against the central-difference oracle.

    The objective's gradient is defined with the detached previous-block
    errors held constant, so the oracle differentiates the surrogate in
    which those anchors are frozen at their base-point values; a naive
    difference of the raw forward value would re-open the blocked path.

    Also verifies the per-sample gradient-norm bound
    ||grad loss|| <= sum_k gamma^(k-1) * ||grad e_k||
    (and the looser 1/(1-gamma) * max_k form), reporting the largest
    per-block gradient norm as d_hat.
    """
    names = list(model.params.keys())
    with Tape() as tape:
        blocks = ar_loss(model, window, cfg)
        grad_loss = np.concatenate(
            [g.ravel() for g in tape.gradient(blocks.loss, list(model.params.values()))]
        )
        block_norms = []
        for e in blocks.e:
            ge = np.concatenate(
                [g.ravel() for g in tape.gradient(e, list(model.params.values()))]
            )
            block_norms.append(float(np.linalg.norm(ge)))
    anchors = [e.item() for e in blocks.e]

    base = model.param_vector()

    def eval_at(vec: np.ndarray) -> float:
        model.set_param_vector(vec)
        return _pinned_loss_value(model, window, cfg, anchors)

    try:
        fd = finite_diff_oracle(eval_at, base, h)
    finally:
        model.set_param_vector(base)

    per_param = []
    offset = 0
    for name in names:
        size = model.params[name].values.size
        err = max_relative_error(
            grad_loss[offset:offset + size], fd[offset:offset + size], scale_floor
        )
        per_param.append((name, err))
        offset += size

    loss_norm = float(np.linalg.norm(grad_loss))
    triangle = sum(cfg.gamma ** k * block_norms[k] for k in range(cfg.n))
    d_hat = max(block_norms)
    bound_ok = loss_norm <= triangle and loss_norm < d_hat / (1.0 - cfg.gamma) + 1e-9
    return GradCheckReport(
        max_rel_error=max(err for _, err in per_param),
        per_param_errors=per_param,
        step_size=h,
        norm_bound_ok=bound_ok,
        d_hat=d_hat,
    )
