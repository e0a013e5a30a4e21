"""Mini-batch Adam training over the rollout objective (or plain MSE).

Everything is deterministic given (seed, config, dataset): window order is
shuffled with a seeded Philox generator, gradients accumulate in fixed
index order, and checkpoints serialize to a byte-stable binary format.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .data import SeriesDataset, window_iter
from .models import Dims, Forecaster, init_forecaster
from .rollout import RolloutConfig, ar_loss, mse_loss

CHECKPOINT_MAGIC = b"ARPT"
CHECKPOINT_VERSION = 1

OBJECTIVES = ("ar", "mse")


class CheckpointError(Exception):
    """Base class for checkpoint I/O failures."""


class CheckpointFormatError(CheckpointError):
    """Wrong magic bytes or a structurally corrupt file."""


class CheckpointVersionError(CheckpointError):
    """File written by an unsupported format version."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    objective: str = "ar"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, t: int, cfg: TrainConfig):
    """One bias-corrected Adam update, in place. ``t`` is 1-based."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    if set(params) != set(grads):
        raise ValueError("params and grads must share the same keys")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        m, v = state.m[name], state.v[name]
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p[...] = p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return params, state


@dataclass
class Checkpoint:
    kind: str
    dims: Dims
    params: dict[str, np.ndarray]
    rollout: RolloutConfig
    norm_policy: str = "context_zscore"
    epoch: int = 0
    val_loss: float = math.nan
    seed: int = 0

    def to_forecaster(self) -> Forecaster:
        model = init_forecaster(self.kind, self.dims, seed=0)
        for name in model.params:
            model.params[name].values[...] = self.params[name]
        return model

    @classmethod
    def from_forecaster(cls, model: Forecaster, rollout: RolloutConfig,
                        epoch: int, val_loss: float, seed: int) -> "Checkpoint":
        return cls(
            kind=model.kind,
            dims=model.dims,
            params={k: t.values.copy() for k, t in model.params.items()},
            rollout=rollout,
            epoch=epoch,
            val_loss=val_loss,
            seed=seed,
        )


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


def _objective_fn(objective: str):
    if objective == "ar":
        return lambda model, window, cfg: ar_loss(model, window, cfg).loss
    return lambda model, window, cfg: mse_loss(model, window)


def _mean_objective(model, windows, cfg, loss_fn) -> float:
    total = 0.0
    for w in windows:
        total += loss_fn(model, w, cfg).item()
    return total / len(windows)


def train(model: Forecaster, dataset: SeriesDataset, rollout_cfg: RolloutConfig,
          train_cfg: TrainConfig) -> tuple[Checkpoint, list[EpochStats]]:
    """Train in place; returns the best-validation checkpoint and the loss history.

    The mse objective trains on single-block windows (horizon T); the ar
    objective needs the full n*T future. If the validation split is too
    short for any window, the training loss stands in for early stopping.
    """
    horizon = rollout_cfg.T if train_cfg.objective == "mse" else rollout_cfg.horizon
    train_windows = window_iter(dataset, "train", rollout_cfg.S, horizon)
    if not train_windows:
        raise ValueError("train split supports no windows for this config")
    val_windows = window_iter(dataset, "val", rollout_cfg.S, horizon)

    loss_fn = _objective_fn(train_cfg.objective)
    param_tensors = list(model.params.values())
    param_arrays = {k: t.values for k, t in model.params.items()}
    state = AdamState.zeros_like(param_arrays)
    rng = np.random.Generator(np.random.Philox(train_cfg.seed))

    best = Checkpoint.from_forecaster(model, rollout_cfg, epoch=0,
                                      val_loss=math.nan, seed=train_cfg.seed)
    best_val = math.inf
    stale = 0
    step = 0
    history: list[EpochStats] = []

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(train_windows))
        epoch_loss = 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            grad_sum = {k: np.zeros_like(p) for k, p in param_arrays.items()}
            for idx in batch:
                with Tape() as tape:
                    loss = loss_fn(model, train_windows[idx], rollout_cfg)
                    grads = tape.gradient(loss, param_tensors)
                epoch_loss += loss.item()
                for name, g in zip(param_arrays, grads):
                    grad_sum[name] += g
            grad_mean = {k: g / len(batch) for k, g in grad_sum.items()}
            step += 1
            adam_step(param_arrays, grad_mean, state, step, train_cfg)
        train_loss = epoch_loss / len(train_windows)
        if val_windows:
            val_loss = _mean_objective(model, val_windows, rollout_cfg, loss_fn)
        else:
            val_loss = train_loss
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best = Checkpoint.from_forecaster(model, rollout_cfg, epoch=epoch,
                                              val_loss=val_loss, seed=train_cfg.seed)
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break
    return best, history


def save_checkpoint(ck: Checkpoint, path) -> None:
    d = ck.dims
    header = {
        "kind": ck.kind,
        "dims": {"S": d.S, "T": d.T, "L": d.L, "V": d.V, "hidden": d.hidden},
        "rollout": {"S": ck.rollout.S, "T": ck.rollout.T, "L": ck.rollout.L,
                    "n": ck.rollout.n, "gamma": ck.rollout.gamma, "beta": ck.rollout.beta},
        "norm_policy": ck.norm_policy,
        "params": [[name, list(arr.shape)] for name, arr in ck.params.items()],
        "meta": {
            "epoch": ck.epoch,
            "val_loss": None if math.isnan(ck.val_loss) else ck.val_loss,
            "seed": ck.seed,
        },
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate([arr.ravel() for arr in ck.params.values()])
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload.astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic bytes)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    (header_len,) = struct.unpack_from("<I", blob, 8)
    header_end = 12 + header_len
    if len(blob) < header_end:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:header_end].decode("utf-8"))
        dims = Dims(**header["dims"])
        rollout = RolloutConfig(**header["rollout"])
        shapes = [(name, tuple(shape)) for name, shape in header["params"]]
        meta = header["meta"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header ({exc})") from exc
    total = sum(int(np.prod(shape)) for _, shape in shapes)
    payload = np.frombuffer(blob[header_end:], dtype="<f8")
    if payload.size != total:
        raise CheckpointFormatError(
            f"{path}: payload holds {payload.size} doubles, header expects {total}"
        )
    params = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        params[name] = payload[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
    val_loss = meta["val_loss"]
    return Checkpoint(
        kind=header["kind"],
        dims=dims,
        params=params,
        rollout=rollout,
        norm_policy=header["norm_policy"],
        epoch=int(meta["epoch"]),
        val_loss=math.nan if val_loss is None else float(val_loss),
        seed=int(meta["seed"]),
    )


def write_history_csv(history: list[EpochStats], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in history:
            fh.write(f"{row.epoch},{row.train_loss:.17g},{row.val_loss:.17g}\n")
