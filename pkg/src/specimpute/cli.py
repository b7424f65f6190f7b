"""Command-line entry point.

Verbs: train, impute, eval, ablate, plot, spectra dump. One JSON config
document drives a run; selected flags override config keys, and a global
--seed (or the SPECTRA_SEED environment variable) overrides every seeded
component. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data as dt
from . import evaluate as ev
from . import spectral as sp
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .numerics import Tensor
from .runner import (
    ABLATION_GRID,
    impute_batch,
    restore_model,
    run_ablation,
    run_experiment,
)
from .training import NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specimpute")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed overriding every seeded component "
                             "(falls back to $SPECTRA_SEED)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a run config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--quiet", action="store_true")

    p_imp = sub.add_parser("impute", help="fill missing entries of a CSV series")
    p_imp.add_argument("--checkpoint", required=True)
    p_imp.add_argument("--data", required=True)
    p_imp.add_argument("--out", required=True)
    p_imp.add_argument("--samples", type=int, default=None)
    p_imp.add_argument("--save-samples", action="store_true")

    p_eval = sub.add_parser("eval", help="score an imputation against held-out truth")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--mask", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--samples-npz", default=None)
    p_eval.add_argument("--with-baselines", action="store_true")
    p_eval.add_argument("--table", action="store_true")

    p_abl = sub.add_parser("ablate", help="train the variant grid on shared masks")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--out", required=True)
    p_abl.add_argument("--grid", default="all",
                       help="'all' or comma list like dft-attention,none-conv")
    p_abl.add_argument("--quiet", action="store_true")

    p_plot = sub.add_parser("plot", help="emit deterministic PNG/SVG plots")
    p_plot.add_argument("--kind", choices=["metric-vs-k", "spectra"], required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--metric", default="mae")
    p_plot.add_argument("inputs", nargs="*")

    p_spec = sub.add_parser("spectra", help="spectral debugging tools")
    spec_sub = p_spec.add_subparsers(dest="spectra_command", required=True)
    p_dump = spec_sub.add_parser("dump", help="write a gram as CSV (frame,bin,re,im)")
    p_dump.add_argument("--input", required=True)
    p_dump.add_argument("--out", required=True)
    p_dump.add_argument("--transform", choices=["dft", "stft", "frsst"], default="stft")
    p_dump.add_argument("--feature", default="0")
    p_dump.add_argument("--window-len", type=int, default=None)
    p_dump.add_argument("--hop", type=int, default=None)
    return parser


def _resolve_seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SPECTRA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SPECTRA_SEED={env!r} is not an integer") from None
    return None


def _load_run_config(args):
    cfg = load_config(args.config)
    seed = _resolve_seed(args)
    if seed is not None:
        cfg.override_seed(seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if args.epochs is not None:
        cfg.training.epochs = args.epochs
    if args.batch_size is not None:
        cfg.training.batch_size = args.batch_size
    if args.lr is not None:
        cfg.training.lr = args.lr
    cfg.validate()
    log = None if args.quiet else lambda msg: print(msg, flush=True)
    run_experiment(cfg, out_dir=args.out, log=log)
    print(f"wrote checkpoint and report under {args.out}")
    return EXIT_OK


def cmd_impute(args) -> int:
    trained = restore_model(args.checkpoint)
    batch = dt.load_csv(args.data)
    T = trained.config.dataset.window_length
    if batch.shape[1] != T:
        batch = dt.window(batch, T, T)
    if batch.shape[2] != trained.model.D:
        raise dt.DataError(
            f"checkpoint expects D={trained.model.D} features, data has {batch.shape[2]}")
    seed = _resolve_seed(args)
    if seed is None:
        seed = trained.config.training.seed
    k = args.samples if args.samples is not None else trained.config.sampling.num_samples
    if k < 1:
        raise ConfigError("--samples must be >= 1")
    levels = trained.config.sampling.quantiles
    result = impute_batch(trained, batch, k, seed, levels)
    os.makedirs(args.out, exist_ok=True)

    filled = dt.TimeSeriesBatch(
        np.where(batch.mask == 1, batch.values, result.mean).astype(np.float32),
        np.ones_like(batch.mask), batch.timestamps, batch.feature_names)
    for b in range(batch.shape[0]):
        suffix = "" if batch.shape[0] == 1 else f".{b}"
        dt.write_csv(filled, os.path.join(args.out, f"imputed{suffix}.csv"),
                     batch_index=b)
    _write_quantiles_csv(result, batch, os.path.join(args.out, "quantiles.csv"))
    if args.save_samples:
        np.savez(os.path.join(args.out, "samples.npz"), samples=result.samples)
    meta = {"config": trained.config.to_dict(), "num_samples": k, "seed": seed,
            "data": os.path.abspath(args.data)}
    with open(os.path.join(args.out, "impute_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
    print(f"wrote imputation under {args.out}")
    return EXIT_OK


def _write_quantiles_csv(result, batch, path) -> None:
    levels = result.quantile_levels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["b", "t", "d"] + [f"q{q:g}" for q in levels])
        missing = np.argwhere(batch.mask == 0)
        for b, t, d in missing:
            row = [b, t, d] + [f"{result.quantiles[i, b, t, d]:.9g}"
                               for i in range(len(levels))]
            writer.writerow(row)


def cmd_eval(args) -> int:
    pred = dt.load_csv(args.pred)
    truth = dt.load_csv(args.truth)
    if pred.shape != truth.shape:
        raise dt.DataError(f"pred {pred.shape} and truth {truth.shape} are misaligned")
    mask = dt.load_mask_csv(args.mask, truth.shape)
    if not np.all(mask <= truth.mask):
        raise dt.DataError("eval mask marks entries missing from the truth file")
    samples = None
    if args.samples_npz:
        with np.load(args.samples_npz) as npz:
            samples = npz["samples"]
        if samples.shape[1:] != truth.shape:
            raise dt.DataError(
                f"samples {samples.shape} misaligned with truth {truth.shape}")
    metadata = {"pred": os.path.abspath(args.pred),
                "truth": os.path.abspath(args.truth),
                "mask": os.path.abspath(args.mask)}
    if args.with_baselines:
        hidden = dt.TimeSeriesBatch((truth.values * (truth.mask - mask)).astype(np.float32),
                                    truth.mask - mask, truth.timestamps,
                                    truth.feature_names)
        baselines = {}
        for kind in ("mean", "median", "linear-interp"):
            try:
                filled = ev.reference_impute(hidden, kind)
                baselines[kind] = {"mae": ev.mae(filled, truth.values, mask),
                                   "rmse": ev.rmse(filled, truth.values, mask)}
            except ValueError as exc:
                baselines[kind] = {"error": str(exc)}
        metadata["baselines"] = baselines
    report = ev.compute_report(pred.values, truth.values, mask, samples=samples,
                               feature_names=truth.feature_names, metadata=metadata)
    if args.with_baselines and "mae" in metadata["baselines"].get("mean", {}):
        report.metadata["model_beats_mean_baseline"] = bool(
            report.mae < metadata["baselines"]["mean"]["mae"])
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    if args.table:
        print(report.to_table())
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    if args.grid == "all":
        grid = ABLATION_GRID
    else:
        grid = []
        for cell in args.grid.split(","):
            cell = cell.strip()
            if not cell:
                continue
            try:
                fbp_kind, backbone = cell.split("-")
            except ValueError:
                raise ConfigError(f"bad grid cell {cell!r}; use fbp-backbone") from None
            if (fbp_kind, backbone) not in ABLATION_GRID:
                raise ConfigError(f"unknown grid cell {cell!r}")
            grid.append((fbp_kind, backbone))
        if not grid:
            raise ConfigError("empty ablation grid")
    log = None if args.quiet else lambda msg: print(msg, flush=True)
    rows = run_ablation(cfg, grid, out_dir=args.out, log=log)
    failures = [r for r in rows if r["status"] != "ok"]
    for r in rows:
        mae_txt = "-" if r["mae"] is None else f"{r['mae']:.5f}"
        print(f"{r['variant']:>16}  mae={mae_txt}  [{r['status']}]")
    if failures:
        print(f"{len(failures)} variant(s) failed; see {args.out}/ablation.csv")
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import plotting

    if not args.inputs:
        raise ConfigError("plot requires at least one input file")
    for path in args.inputs:
        if not os.path.exists(path):
            raise dt.DataError(f"plot input {path} does not exist")
    try:
        if args.kind == "metric-vs-k":
            plotting.plot_metric_vs_samples(args.inputs, args.out, metric=args.metric)
        else:
            plotting.plot_spectra_overlay(args.inputs, args.out)
    except plotting.PlotError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_spectra_dump(args) -> int:
    batch = dt.load_csv(args.input)
    names = batch.feature_names
    if args.feature in names:
        d = names.index(args.feature)
    else:
        try:
            d = int(args.feature)
        except ValueError:
            raise ConfigError(f"unknown feature {args.feature!r}") from None
        if not 0 <= d < len(names):
            raise ConfigError(f"feature index {d} out of range (D={len(names)})")
    x = Tensor(batch.values[0, :, d].astype(np.float64))
    T = x.shape[-1]
    if args.transform == "dft":
        gram = sp.rdft(x)
        coeffs = gram.coeffs.numpy()[:, None]           # (F, 1)
    else:
        if args.window_len is not None:
            win = sp.WindowSpec(length=args.window_len,
                                hop=args.hop or max(1, args.window_len // 2))
        elif args.transform == "stft":
            win = sp.default_stft_window(T)
        else:
            win = sp.default_frsst_window(T)
        gram = sp.stft(x, win) if args.transform == "stft" else sp.frsst(x, win)
        coeffs = gram.coeffs.numpy()
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "bin", "re", "im"])
        F, L = coeffs.shape
        for ell in range(L):
            for f in range(F):
                writer.writerow([ell, f, f"{coeffs[f, ell].real:.12g}",
                                 f"{coeffs[f, ell].imag:.12g}"])
    print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "impute": cmd_impute,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "spectra":
            return cmd_spectra_dump(args)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (dt.DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
