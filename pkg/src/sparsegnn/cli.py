"""Command-line entry point: dataset stats, single runs, sweeps, reports.

Config files are flat `key: value` lines ('#' starts a comment). Flag values
override file values, which override defaults. Exit codes: 2 on usage
errors, 1 on runtime failures, 0 otherwise.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields, replace

from .graphs import TuFormatError, parse_tu_dataset
from .models import VARIANTS
from .sweeps import (DEFAULT_EPS_GRID, DEFAULT_ZETA_GRID, MARGINAL_EPS,
                     SweepSpec, emit_csv, emit_marginal_csv, emit_param_table,
                     marginalize_zeta, report_from_logs, run_log_path, run_sweep)
from .training import MODES, TrainConfig, run_training


class ConfigError(ValueError):
    pass


def _parse_bool(text):
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_float_list(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_str_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


# Every CLI flag has a config-file key; extra keys cover sweep grids and the
# less common training knobs.
SCHEMA = {
    "dataset": str,
    "model": str,
    "mode": str,
    "epsilon": float,
    "zeta": float,
    "seed": int,
    "n_seeds": int,
    "num_blocks": int,
    "hidden_dim": int,
    "lr": float,
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "dropout_rate": float,
    "window": int,
    "rewire_patience": int,
    "rewire_min_delta": float,
    "zeta_min": float,
    "zeta_max": float,
    "mask_all": _parse_bool,
    "log_positions": _parse_bool,
    "eps_grid": _parse_float_list,
    "zeta_grid": _parse_float_list,
    "modes": _parse_str_list,
    "out": str,
    "jobs": int,
}

ALIASES = {"zeta_mode": "mode", "zeta_init": "zeta", "epochs": "max_epochs"}


def load_config(path) -> dict:
    """Parse and validate a flat key-value config file."""
    values = {}
    unknown = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key: value', got {raw.rstrip()!r}")
            key, _, value = line.partition(":")
            key = key.strip()
            value = value.strip()
            key = ALIASES.get(key, key)
            if key not in SCHEMA:
                unknown.append(key)
                continue
            try:
                values[key] = SCHEMA[key](value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    if unknown:
        raise ConfigError(f"{path}: unknown keys: {', '.join(sorted(set(unknown)))}")
    _validate_ranges(values, path)
    return values


def _validate_ranges(values, source):
    for key in ("epsilon", "zeta", "zeta_min", "zeta_max", "dropout_rate"):
        if key in values and not 0.0 <= values[key] <= 1.0:
            raise ConfigError(f"{source}: {key} must be in [0, 1], got {values[key]}")
    for key in ("eps_grid", "zeta_grid"):
        if key in values and any(not 0.0 <= v <= 1.0 for v in values[key]):
            raise ConfigError(f"{source}: {key} values must be in [0, 1]")
    if "model" in values and values["model"] not in VARIANTS:
        raise ConfigError(f"{source}: unknown model {values['model']!r}")
    if "mode" in values and values["mode"] not in MODES:
        raise ConfigError(f"{source}: unknown mode {values['mode']!r}")
    if "modes" in values:
        for m in values["modes"]:
            if m not in MODES:
                raise ConfigError(f"{source}: unknown mode {m!r}")


def _merged(args) -> dict:
    """defaults <- config file <- command-line flags."""
    merged = load_config(args.config) if args.config else {}
    for key in SCHEMA:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    _validate_ranges(merged, "command line")
    return merged


def _train_config(merged) -> TrainConfig:
    kwargs = {f.name: merged[f.name] for f in fields(TrainConfig) if f.name in merged}
    return TrainConfig(**kwargs).validate()


def _require_dataset(merged):
    path = merged.get("dataset")
    if not path:
        raise ConfigError("--dataset is required")
    return parse_tu_dataset(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_parse(args):
    merged = _merged(args)
    ds = _require_dataset(merged)
    info = ds.summary()
    total = sum(info["class_counts"])
    balance = ", ".join(f"{c}: {n} ({n / total:.2f})" for c, n in enumerate(info["class_counts"]))
    print(f"dataset: {info['name']}")
    print(f"graphs: {info['graphs']}")
    print(f"mean nodes: {info['mean_nodes']:.1f}")
    print(f"mean edges: {info['mean_edges']:.1f}")
    print(f"node feature dim: {info['node_dim']}")
    print(f"edge feature dim: {info['edge_dim']}")
    print(f"classes: {info['num_classes']} ({balance})")
    return 0


def cmd_train(args):
    merged = _merged(args)
    ds = _require_dataset(merged)
    config = _train_config(merged)
    out = merged.get("out", "out")
    log_path = run_log_path(out, ds.name, config.model, config.mode,
                            config.epsilon, config.zeta, config.seed)
    os.makedirs(os.path.dirname(log_path), exist_ok=True)
    result = run_training(config, ds, log_path=log_path)
    print(f"run log: {log_path}")
    print(f"epochs run: {result.epochs_run}")
    print(f"best val acc: {result.best_val_acc:.4f} (epoch {result.best_epoch})")
    print(f"test acc at checkpoint: {result.test_acc:.4f}")
    print(f"params active/total: {result.params_active}/{result.params_total}")
    return 0


def cmd_sweep(args):
    merged = _merged(args)
    ds = _require_dataset(merged)
    base = _train_config(merged)
    modes = merged.get("modes")
    if modes is None:
        modes = (merged["mode"],) if "mode" in merged else ("sparse",)
    spec = SweepSpec(
        model=merged.get("model", base.model),
        modes=tuple(modes),
        eps_grid=tuple(merged.get("eps_grid", DEFAULT_EPS_GRID)),
        zeta_grid=tuple(merged.get("zeta_grid", DEFAULT_ZETA_GRID)),
        n_seeds=merged.get("n_seeds", 5),
        base=base,
    ).validate()
    out = merged.get("out", "out")
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "sweep.csv")

    def progress(rec):
        print(f"done: mode={rec.mode} eps={rec.epsilon} zeta={rec.zeta} "
              f"acc={rec.acc_mean:.4f}+-{rec.acc_std:.4f}")

    records = run_sweep(spec, ds, csv_path=csv_path, out_dir=out,
                        jobs=merged.get("jobs", 1), progress=progress)
    emit_param_table(ds, [spec.model], spec.eps_grid,
                     os.path.join(out, "params.csv"), base=base)
    if set(MARGINAL_EPS) <= set(spec.eps_grid):
        emit_marginal_csv(marginalize_zeta(records), os.path.join(out, "zeta_marginal.csv"))
    print(f"sweep table: {csv_path} ({len(records)} cells)")
    return 0


def cmd_report(args):
    merged = _merged(args)
    out = merged.get("out", "out")
    records = report_from_logs(out)
    csv_path = os.path.join(out, "report.csv")
    emit_csv(records, csv_path)
    eps_present = {r.epsilon for r in records}
    if set(MARGINAL_EPS) <= eps_present:
        emit_marginal_csv(marginalize_zeta(records), os.path.join(out, "zeta_marginal.csv"))
    print(f"report table: {csv_path} ({len(records)} cells)")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--dataset", help="TU-format dataset directory")
    p.add_argument("--config", help="flat key:value config file")
    p.add_argument("--model", choices=VARIANTS)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--epsilon", type=float, help="sparsity fraction in [0, 1]")
    p.add_argument("--zeta", type=float, help="rewiring rate (or adaptive initial rate)")
    p.add_argument("--seeds", dest="seed", type=int, help="base RNG seed")
    p.add_argument("--n-seeds", dest="n_seeds", type=int, help="seeds per sweep cell")
    p.add_argument("--epochs", dest="max_epochs", type=int)
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--jobs", type=int, help="parallel workers for sweep cells")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sparsegnn",
        description="Graph classification with sparse-initialized, rewirable GNNs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, desc in [
        ("parse", cmd_parse, "print dataset statistics"),
        ("train", cmd_train, "run one training configuration"),
        ("sweep", cmd_sweep, "run an (epsilon, zeta, mode) grid"),
        ("report", cmd_report, "rebuild result tables from run logs"),
    ]:
        p = sub.add_parser(name, help=desc)
        _add_common(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (ConfigError, TuFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
