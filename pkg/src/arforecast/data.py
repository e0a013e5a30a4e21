"""Synthetic series generators, CSV ingestion, and sliding-window sampling.

All randomness goes through the Philox counter-based generator so a fixed
seed reproduces the same series bit-for-bit on any platform. Splits are
chronological and windows never straddle a split boundary.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_SPLIT = (0.7, 0.1, 0.2)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SeriesWindow:
    """One sample: S context rows plus the horizon rows that follow them."""

    context: np.ndarray
    future: np.ndarray
    origin_index: int


@dataclass
class SeriesDataset:
    name: str
    values: np.ndarray
    columns: list[str]
    splits: dict[str, tuple[int, int]] = field(default_factory=dict)

    @classmethod
    def from_values(cls, name, values, columns=None, ratios=DEFAULT_SPLIT) -> "SeriesDataset":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError(f"series values must be (N, V) with N >= 1, got {values.shape}")
        n, v = values.shape
        if columns is None:
            columns = [f"var{i}" for i in range(v)]
        if len(columns) != v:
            raise ValueError(f"{len(columns)} column names for {v} variates")
        if len(ratios) != 3 or any(r < 0 for r in ratios) or not np.isclose(sum(ratios), 1.0):
            raise ValueError(f"split ratios must be 3 nonnegative values summing to 1, got {ratios}")
        n_train = int(n * ratios[0])
        n_val = int(n * ratios[1])
        splits = {
            "train": (0, n_train),
            "val": (n_train, n_train + n_val),
            "test": (n_train + n_val, n),
        }
        return cls(name=name, values=values, columns=list(columns), splits=splits)

    @property
    def n_variates(self) -> int:
        return self.values.shape[1]

    def split_range(self, split: str) -> tuple[int, int]:
        if split not in self.splits:
            raise ValueError(f"unknown split {split!r}, have {sorted(self.splits)}")
        return self.splits[split]

    def split_values(self, split: str) -> np.ndarray:
        lo, hi = self.split_range(split)
        return self.values[lo:hi]


def gen_sinusoid(length, V=1, periods=24.0, amplitude=1.0, noise_std=0.0, seed=0,
                 ratios=DEFAULT_SPLIT) -> SeriesDataset:
    """amplitude * sin(2*pi*t / period_v) plus seeded Gaussian noise."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    periods = np.broadcast_to(np.asarray(periods, dtype=np.float64), (V,))
    if np.any(periods <= 0):
        raise ValueError("periods must be positive")
    t = np.arange(length, dtype=np.float64)[:, None]
    values = amplitude * np.sin(2.0 * np.pi * t / periods[None, :])
    if noise_std > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        values = values + rng.normal(0.0, noise_std, size=values.shape)
    return SeriesDataset.from_values("sinusoid", values, ratios=ratios)


def _spectral_radius(coeffs: np.ndarray) -> float:
    p = coeffs.size
    companion = np.zeros((p, p))
    companion[0, :] = coeffs
    if p > 1:
        companion[1:, :-1] = np.eye(p - 1)
    return float(np.max(np.abs(np.linalg.eigvals(companion)))) if p else 0.0


def gen_ar_process(length, V=1, coeffs=(0.9,), noise_std=1.0, seed=0,
                   ratios=DEFAULT_SPLIT) -> SeriesDataset:
    """AR(p) process from zero initial state, first 10*p samples discarded as burn-in."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 1 or coeffs.size < 1:
        raise ValueError("coeffs must be a nonempty 1-d sequence")
    radius = _spectral_radius(coeffs)
    if radius >= 1.0:
        raise ValueError(f"nonstationary AR coefficients (spectral radius {radius:.3f} >= 1)")
    p = coeffs.size
    burn = 10 * p
    rng = np.random.Generator(np.random.Philox(seed))
    eps = rng.normal(0.0, noise_std, size=(length + burn, V))
    x = np.zeros((length + burn + p, V))
    for t in range(length + burn):
        lags = x[t:t + p][::-1]  # row 0 is lag 1
        x[t + p] = coeffs @ lags + eps[t]
    values = x[p + burn:]
    return SeriesDataset.from_values("ar_process", values, ratios=ratios)


def load_csv(path, has_header=True, time_column=None, ratios=DEFAULT_SPLIT) -> SeriesDataset:
    """Comma-separated, '.' decimal, optional header row, optional time column to drop."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]  # tolerate trailing blank lines
    if not rows:
        raise ValueError(f"{path}: empty file")

    line0 = 1
    if has_header:
        names = [c.strip() for c in rows[0]]
        data_rows = rows[1:]
        line0 = 2
    else:
        if time_column is not None:
            raise ValueError("time_column requires has_header=True")
        names = [f"var{i}" for i in range(len(rows[0]))]
        data_rows = rows
    if not data_rows:
        raise ValueError(f"{path}: no data rows")

    drop = None
    if time_column is not None:
        if time_column not in names:
            raise ValueError(f"{path}: time column {time_column!r} not in header {names}")
        drop = names.index(time_column)
        names = names[:drop] + names[drop + 1:]

    width = len(rows[0])  # header row (or first data row) fixes the width
    parsed = np.empty((len(data_rows), len(names)))
    for i, row in enumerate(data_rows):
        if len(row) != width:
            raise ValueError(f"{path}: ragged row at line {line0 + i} "
                             f"({len(row)} cells, expected {width})")
        out_j = 0
        for j, cell in enumerate(row):
            if j == drop:
                continue
            try:
                value = float(cell)
            except ValueError:
                raise ValueError(f"{path}: cannot parse {cell!r} at line {line0 + i}, "
                                 f"column {j + 1} ({names[out_j]!r})") from None
            if not np.isfinite(value):
                raise ValueError(f"{path}: non-finite value at line {line0 + i}, "
                                 f"column {j + 1} ({names[out_j]!r})")
            parsed[i, out_j] = value
            out_j += 1
    return SeriesDataset.from_values(path.stem, parsed, columns=names, ratios=ratios)


def window_iter(ds: SeriesDataset, split: str, S: int, horizon: int,
                stride: int = 1) -> list[SeriesWindow]:
    """Every (context, future) window lying fully inside the split.

    Yields floor((split_len - S - horizon) / stride) + 1 windows; a split
    too short for even one window produces an empty list with a warning
    rather than an error.
    """
    if S < 1 or horizon < 1 or stride < 1:
        raise ValueError(f"S, horizon, stride must be >= 1, got {S}, {horizon}, {stride}")
    lo, hi = ds.split_range(split)
    if hi - lo < S + horizon:
        warnings.warn(
            f"split {split!r} of {ds.name!r} has {hi - lo} rows, "
            f"too short for S={S} + horizon={horizon}; no windows",
            stacklevel=2,
        )
        return []
    windows = []
    for origin in range(lo, hi - S - horizon + 1, stride):
        windows.append(SeriesWindow(
            context=ds.values[origin:origin + S],
            future=ds.values[origin + S:origin + S + horizon],
            origin_index=origin,
        ))
    return windows
