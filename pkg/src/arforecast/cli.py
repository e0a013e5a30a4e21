"""Command-line entry point: train, eval, predict, and gradcheck workflows.

Configuration is a single INI file with [dataset], [model], [rollout],
[train], and [output] sections. Every config-driven run writes the fully
defaulted configuration it actually used back into the output directory.
Exit codes: 0 success, 1 runtime failure (including a failed gradient
check), 2 invalid input or config.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from .data import SeriesDataset, gen_ar_process, gen_sinusoid, load_csv, window_iter
from .evaluation import evaluate, export_curve, write_report_json
from .models import Dims, NormState, apply_norm, init_forecaster, invert_norm, param_count
from .rollout import RolloutConfig, check_gradients, loss_kink_gap, rollout_predict
from .training import (
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history_csv,
)

GRADCHECK_MAX_PARAMS = 5000
GRADCHECK_STEP = 1e-4


class ConfigError(ValueError):
    """Invalid configuration or command input; maps to exit code 2."""


_SECTION_KEYS = {
    "dataset": {"source", "path", "has_header", "time_column", "length", "variates",
                "periods", "amplitude", "noise_std", "coeffs", "seed", "split"},
    "model": {"kind", "hidden"},
    "rollout": {"s", "t", "l", "n", "gamma", "beta"},
    "train": {"lr", "adam_beta1", "adam_beta2", "adam_eps", "batch_size",
              "max_epochs", "patience", "seed", "objective"},
    "output": {"dir"},
}


def _get(section, key, cast, default=None, required=False):
    raw = section.get(key)
    if raw is None or raw == "":
        if required:
            raise ConfigError(f"[{section.name}] missing required key {key!r}")
        return default
    try:
        if cast is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError:
        raise ConfigError(
            f"[{section.name}] {key}: cannot parse {raw!r} as {cast.__name__}"
        ) from None


def _float_list(section, key, required=False):
    raw = section.get(key)
    if raw is None or raw == "":
        if required:
            raise ConfigError(f"[{section.name}] missing required key {key!r}")
        return None
    try:
        return [float(x) for x in raw.split(",")]
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: cannot parse {raw!r} as float list") from None


class RunConfig:
    """Parsed, validated, fully defaulted run configuration."""

    def __init__(self, path, out_override=None, seed_override=None):
        parser = configparser.ConfigParser()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc

        for name in parser.sections():
            if name not in _SECTION_KEYS:
                raise ConfigError(f"unknown config section [{name}]")
            for key in parser[name]:
                if key not in _SECTION_KEYS[name]:
                    raise ConfigError(f"[{name}] unknown key {key!r}")
        for name in ("dataset", "model", "rollout"):
            if name not in parser:
                raise ConfigError(f"missing config section [{name}]")
        if "train" not in parser:
            parser.add_section("train")
        if "output" not in parser:
            parser.add_section("output")

        ds = parser["dataset"]
        self.source = _get(ds, "source", str, required=True)
        if self.source not in ("sinusoid", "ar", "csv"):
            raise ConfigError(f"[dataset] source must be sinusoid, ar, or csv, got {self.source!r}")
        self.split = tuple(_float_list(ds, "split") or (0.7, 0.1, 0.2))
        if len(self.split) != 3 or any(r < 0 for r in self.split) \
                or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"[dataset] split must be 3 nonnegative ratios summing to 1, "
                              f"got {self.split}")
        self.dataset_seed = _get(ds, "seed", int, default=0)
        if self.source == "csv":
            self.csv_path = Path(_get(ds, "path", str, required=True))
            if not self.csv_path.exists():
                raise ConfigError(f"[dataset] path: no such file {self.csv_path}")
            self.has_header = _get(ds, "has_header", bool, default=True)
            self.time_column = _get(ds, "time_column", str, default=None)
        else:
            self.length = _get(ds, "length", int, required=True)
            if self.length < 1:
                raise ConfigError(f"[dataset] length must be >= 1, got {self.length}")
            self.variates = _get(ds, "variates", int, default=1)
            if self.variates < 1:
                raise ConfigError(f"[dataset] variates must be >= 1, got {self.variates}")
            self.noise_std = _get(ds, "noise_std", float, default=0.0)
            if self.source == "sinusoid":
                self.periods = _float_list(ds, "periods") or [24.0]
                self.amplitude = _get(ds, "amplitude", float, default=1.0)
            else:
                self.coeffs = _float_list(ds, "coeffs", required=True)

        mdl = parser["model"]
        self.kind = _get(mdl, "kind", str, required=True)
        if self.kind not in ("linear", "mlp", "inverted_attention"):
            raise ConfigError(f"[model] kind must be linear, mlp, or inverted_attention, "
                              f"got {self.kind!r}")
        self.hidden = _get(mdl, "hidden", int, default=0)

        ro = parser["rollout"]
        try:
            self.rollout = RolloutConfig(
                S=_get(ro, "s", int, required=True),
                T=_get(ro, "t", int, required=True),
                L=_get(ro, "l", int, default=0),
                n=_get(ro, "n", int, default=1),
                gamma=_get(ro, "gamma", float, default=0.5),
                beta=_get(ro, "beta", float, default=0.1),
            )
        except ValueError as exc:
            raise ConfigError(f"[rollout] {exc}") from None

        tr = parser["train"]
        try:
            self.train = TrainConfig(
                lr=_get(tr, "lr", float, default=1e-3),
                adam_beta1=_get(tr, "adam_beta1", float, default=0.9),
                adam_beta2=_get(tr, "adam_beta2", float, default=0.999),
                adam_eps=_get(tr, "adam_eps", float, default=1e-8),
                batch_size=_get(tr, "batch_size", int, default=32),
                max_epochs=_get(tr, "max_epochs", int, default=100),
                patience=_get(tr, "patience", int, default=10),
                seed=seed_override if seed_override is not None
                     else _get(tr, "seed", int, default=0),
                objective=_get(tr, "objective", str, default="ar"),
            )
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from None

        out_dir = out_override or _get(parser["output"], "dir", str, default=None)
        if out_dir is None:
            raise ConfigError("[output] missing key 'dir' (or pass --out)")
        self.out_dir = Path(out_dir)

    def build_dataset(self) -> SeriesDataset:
        try:
            if self.source == "csv":
                return load_csv(self.csv_path, has_header=self.has_header,
                                time_column=self.time_column, ratios=self.split)
            if self.source == "sinusoid":
                periods = self.periods
                if len(periods) == 1:
                    periods = periods * self.variates
                if len(periods) != self.variates:
                    raise ValueError(f"{len(periods)} periods for {self.variates} variates")
                return gen_sinusoid(self.length, V=self.variates, periods=periods,
                                    amplitude=self.amplitude, noise_std=self.noise_std,
                                    seed=self.dataset_seed, ratios=self.split)
            return gen_ar_process(self.length, V=self.variates, coeffs=self.coeffs,
                                  noise_std=self.noise_std, seed=self.dataset_seed,
                                  ratios=self.split)
        except (ValueError, FileNotFoundError) as exc:
            raise ConfigError(f"[dataset] {exc}") from None

    def build_model(self, n_variates: int):
        dims = Dims(S=self.rollout.S, T=self.rollout.T, L=self.rollout.L,
                    V=n_variates, hidden=self.hidden)
        try:
            return init_forecaster(self.kind, dims, seed=self.train.seed)
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}") from None

    def resolved(self) -> configparser.ConfigParser:
        out = configparser.ConfigParser()
        out["dataset"] = {"source": self.source,
                          "split": ",".join(f"{r:g}" for r in self.split)}
        if self.source == "csv":
            out["dataset"]["path"] = str(self.csv_path)
            out["dataset"]["has_header"] = str(self.has_header).lower()
            if self.time_column is not None:
                out["dataset"]["time_column"] = self.time_column
        else:
            out["dataset"]["length"] = str(self.length)
            out["dataset"]["variates"] = str(self.variates)
            out["dataset"]["noise_std"] = f"{self.noise_std:g}"
            out["dataset"]["seed"] = str(self.dataset_seed)
            if self.source == "sinusoid":
                out["dataset"]["periods"] = ",".join(f"{p:g}" for p in self.periods)
                out["dataset"]["amplitude"] = f"{self.amplitude:g}"
            else:
                out["dataset"]["coeffs"] = ",".join(f"{c:g}" for c in self.coeffs)
        out["model"] = {"kind": self.kind, "hidden": str(self.hidden)}
        ro = self.rollout
        out["rollout"] = {"s": str(ro.S), "t": str(ro.T), "l": str(ro.L), "n": str(ro.n),
                          "gamma": f"{ro.gamma:g}", "beta": f"{ro.beta:g}"}
        tr = self.train
        out["train"] = {"lr": f"{tr.lr:g}", "adam_beta1": f"{tr.adam_beta1:g}",
                        "adam_beta2": f"{tr.adam_beta2:g}", "adam_eps": f"{tr.adam_eps:g}",
                        "batch_size": str(tr.batch_size), "max_epochs": str(tr.max_epochs),
                        "patience": str(tr.patience), "seed": str(tr.seed),
                        "objective": tr.objective}
        out["output"] = {"dir": str(self.out_dir)}
        return out

    def write_resolved(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / "config_resolved.ini", "w", encoding="utf-8") as fh:
            self.resolved().write(fh)


def _load_checkpoint_or_fail(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc


def _check_horizon(horizon: int, block: int) -> int:
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if horizon % block != 0:
        k = horizon // block
        options = [k * block, (k + 1) * block] if k >= 1 else [(k + 1) * block]
        pretty = " or ".join(str(o) for o in options)
        raise ConfigError(
            f"horizon {horizon} is not a multiple of the checkpoint block length "
            f"T={block}; rollouts extend the forecast in whole blocks (k x T), "
            f"so the nearest valid horizons are {pretty}"
        )
    return horizon // block


def cmd_train(args) -> int:
    cfg = RunConfig(args.config, out_override=args.out, seed_override=args.seed)
    dataset = cfg.build_dataset()
    model = cfg.build_model(dataset.n_variates)
    cfg.write_resolved()

    checkpoint, history = train(model, dataset, cfg.rollout, cfg.train)
    save_checkpoint(checkpoint, cfg.out_dir / "checkpoint.arpt")
    write_history_csv(history, cfg.out_dir / "history.csv")
    print(f"trained {cfg.kind} for {len(history)} epochs; "
          f"best val loss {checkpoint.val_loss:.6g} at epoch {checkpoint.epoch}")
    print(f"outputs in {cfg.out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = RunConfig(args.config, out_override=args.out, seed_override=args.seed)
    ck = _load_checkpoint_or_fail(args.checkpoint)
    n = _check_horizon(args.horizon, ck.dims.T)
    dataset = cfg.build_dataset()
    if dataset.n_variates != ck.dims.V:
        raise ConfigError(f"checkpoint was built for {ck.dims.V} variates, "
                          f"dataset has {dataset.n_variates}")
    cfg.write_resolved()

    model = ck.to_forecaster()
    roll = RolloutConfig(S=ck.dims.S, T=ck.dims.T, L=ck.dims.L, n=n,
                         gamma=ck.rollout.gamma, beta=ck.rollout.beta)
    report = evaluate(model, dataset, "test", roll, raw_scale=args.raw_scale)
    write_report_json(report, cfg.out_dir / "report.json")
    export_curve(report, cfg.out_dir / "curve.csv")
    print(f"evaluated {report.window_count} windows over horizon {args.horizon} "
          f"({n} blocks, {report.scale} scale)")
    print(f"cumulative mse {report.cumulative[0]:.6g}, mae {report.cumulative[1]:.6g}, "
          f"block violation rate {report.block_violation_rate:.3f}")
    return 0


def _read_predict_input(path: Path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    cells = [c.strip() for c in first.strip().split(",")]
    try:
        [float(c) for c in cells]
        has_header = False
    except ValueError:
        has_header = True
    return load_csv(path, has_header=has_header, ratios=(0.0, 0.0, 1.0))


def cmd_predict(args) -> int:
    ck = _load_checkpoint_or_fail(args.checkpoint)
    n = _check_horizon(args.horizon, ck.dims.T)
    path = Path(args.input_csv)
    if not path.exists():
        raise ConfigError(f"input csv not found: {path}")
    try:
        dataset = _read_predict_input(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if dataset.values.shape[0] < ck.dims.S:
        raise ConfigError(f"input provides {dataset.values.shape[0]} rows, "
                          f"model context needs at least {ck.dims.S}")
    if dataset.n_variates != ck.dims.V:
        raise ConfigError(f"checkpoint was built for {ck.dims.V} variates, "
                          f"input has {dataset.n_variates}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = ck.to_forecaster()
    roll = RolloutConfig(S=ck.dims.S, T=ck.dims.T, L=ck.dims.L, n=n,
                         gamma=ck.rollout.gamma, beta=ck.rollout.beta)
    context = dataset.values[-ck.dims.S:]
    state = NormState.from_context(context)
    prediction = rollout_predict(model, apply_norm(context, state), roll)
    values = invert_norm(prediction.values.values, state)

    out_path = out_dir / "predictions.csv"
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(dataset.columns) + "\n")
        for row in values:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
    print(f"wrote {values.shape[0]} forecast rows to {out_path}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = RunConfig(args.config, out_override=args.out, seed_override=args.seed)
    dataset = cfg.build_dataset()
    model = cfg.build_model(dataset.n_variates)
    if model.param_count > GRADCHECK_MAX_PARAMS:
        raise ConfigError(f"model has {model.param_count} parameters; gradcheck is "
                          f"limited to {GRADCHECK_MAX_PARAMS} to keep the "
                          f"finite-difference oracle tractable")
    windows = window_iter(dataset, "train", cfg.rollout.S, cfg.rollout.horizon)
    if not windows:
        raise ConfigError("train split supports no windows for this config")
    cfg.write_resolved()

    # prefer a window whose relu/abs inputs sit safely away from the kinks
    window = max(windows[:32], key=lambda w: loss_kink_gap(model, w, cfg.rollout))
    report = check_gradients(model, window, cfg.rollout, h=GRADCHECK_STEP)
    for line in report.lines():
        print(line)
    ok = report.max_rel_error < 1e-5 and report.norm_bound_ok
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arforecast",
        description="Train, evaluate, and run rollout forecasts for small time-series models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    p_train.add_argument("--seed", type=int, default=None, help="override [train] seed")
    p_train.set_defaults(handler=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--horizon", type=int, required=True,
                        help="total prediction length; must be a multiple of the block length")
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--raw-scale", action="store_true",
                        help="report errors on the raw data scale instead of normalized")
    p_eval.set_defaults(handler=cmd_eval)

    p_pred = sub.add_parser("predict", help="roll out a forecast from the tail of a CSV")
    p_pred.add_argument("input_csv")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--horizon", type=int, required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.set_defaults(handler=cmd_predict)

    p_gc = sub.add_parser("gradcheck", help="verify rollout-loss gradients against the oracle")
    p_gc.add_argument("--config", required=True)
    p_gc.add_argument("--out", default=None)
    p_gc.add_argument("--seed", type=int, default=None)
    p_gc.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 1
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
