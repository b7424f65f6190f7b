"""End-to-end experiment pipeline: dataset assembly, training, evaluation.

Used by the CLI commands and the acceptance benchmarks. Everything is
deterministic given the run config (a command-line master seed overrides
every seeded component).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import data as dt
from . import diffusion as df
from . import evaluate as ev
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config
from .denoiser import Denoiser
from .training import TrainHistory, load_state, train_model

VAL_WINDOW_CAP = 16      # all-steps validation is S forward passes per epoch


@dataclass
class DatasetBundle:
    train: dt.TimeSeriesBatch
    val: dt.TimeSeriesBatch
    test: dt.TimeSeriesBatch
    normalizer: dt.Normalizer
    feature_names: list


@dataclass
class TrainedModel:
    model: Denoiser
    sched: df.NoiseSchedule
    normalizer: dt.Normalizer
    config: RunConfig
    history: TrainHistory | None = None


def assemble_dataset(cfg: RunConfig) -> DatasetBundle:
    """Load or synthesize the series, window it, and split chronologically."""
    ds = cfg.dataset
    if ds.kind == "csv":
        series = dt.load_csv(ds.csv_path)
    else:
        series = dt.synth_dataset(ds.synth.to_synth_spec())
    windows = dt.window(series, ds.window_length, ds.window_stride)
    n = windows.shape[0]
    n_train = max(1, int(round(ds.train_fraction * n)))
    n_val = int(round(ds.val_fraction * n))
    if n_train + n_val >= n:
        raise ConfigError(
            f"split leaves no test windows (n={n}, train={n_train}, val={n_val})")

    def slice_batch(lo, hi):
        return dt.TimeSeriesBatch(windows.values[lo:hi].copy(),
                                  windows.mask[lo:hi].copy(),
                                  windows.timestamps.copy(),
                                  list(windows.feature_names))

    train = slice_batch(0, n_train)
    val = slice_batch(n_train, n_train + n_val)
    test = slice_batch(n_train + n_val, n)
    return DatasetBundle(train=train, val=val, test=test,
                         normalizer=dt.Normalizer.fit(train),
                         feature_names=list(windows.feature_names))


def build_model(cfg: RunConfig, D: int) -> tuple:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.training.seed, 0x1]))
    model = Denoiser(cfg.model, cfg.dataset.window_length, D,
                     cfg.schedule.steps, rng)
    sched = df.build_schedule(cfg.schedule.steps, cfg.schedule.beta_start,
                              cfg.schedule.beta_end, cfg.schedule.kind)
    return model, sched


def config_echo(cfg: RunConfig, bundle: DatasetBundle) -> dict:
    return {
        "run_config": cfg.to_dict(),
        "normalizer": bundle.normalizer.to_dict(),
        "feature_names": bundle.feature_names,
        "dims": {"T": cfg.dataset.window_length, "D": len(bundle.feature_names)},
    }


def run_training(cfg: RunConfig, out_dir=None, log=None,
                 bundle: DatasetBundle | None = None) -> TrainedModel:
    """Train per config; loads the best-validation state back into the model
    and optionally writes the checkpoint + training log under ``out_dir``."""
    if bundle is None:
        bundle = assemble_dataset(cfg)
    model, sched = build_model(cfg, len(bundle.feature_names))
    train_n = bundle.normalizer.normalize(bundle.train)
    val_n = bundle.normalizer.normalize(bundle.val)
    val_values = val_n.values[:VAL_WINDOW_CAP]
    val_mask = val_n.mask[:VAL_WINDOW_CAP]
    history, best_state = train_model(
        model, train_n.values, train_n.mask, val_values, val_mask, sched,
        epochs=cfg.training.epochs, batch_size=cfg.training.batch_size,
        lr=cfg.training.lr, seed=cfg.training.seed, log=log,
        val_every=cfg.training.val_every)
    load_state(model, best_state)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        echo = config_echo(cfg, bundle)
        save_checkpoint(os.path.join(out_dir, "checkpoint"), best_state, echo)
        log_doc = {
            "config": echo,
            "train_loss": history.train_loss,
            "val_loss": history.val_loss,
            "lr": history.lr,
            "best_epoch": history.best_epoch,
            "best_val_loss": history.best_val_loss,
        }
        with open(os.path.join(out_dir, "training_log.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(log_doc, fh, sort_keys=True, indent=2)
    return TrainedModel(model=model, sched=sched, normalizer=bundle.normalizer,
                        config=cfg, history=history)


def restore_model(checkpoint_dir) -> TrainedModel:
    echo, state = load_checkpoint(checkpoint_dir)
    cfg = parse_config(echo["run_config"])
    model, sched = build_model(cfg, echo["dims"]["D"])
    load_state(model, state)
    normalizer = dt.Normalizer.from_dict(echo["normalizer"])
    return TrainedModel(model=model, sched=sched, normalizer=normalizer, config=cfg)


def impute_batch(trained: TrainedModel, masked: dt.TimeSeriesBatch, num_samples: int,
                 seed: int, quantiles: tuple = ()) -> df.ImputationResult:
    """Impute a raw-unit batch; returns a result in raw units.

    The batch is normalized with the training statistics, the sampler fills
    the missing entries, and every output is mapped back; observed entries
    are the input values verbatim.
    """
    normed = trained.normalizer.normalize(masked)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    res = df.impute(normed.values, normed.mask, trained.model, trained.sched,
                    num_samples, rng, quantile_levels=tuple(quantiles))
    denorm = trained.normalizer.denormalize
    obs = masked.mask == 1
    samples = np.stack([np.where(obs, masked.values, denorm(s)) for s in res.samples])
    mean = np.where(obs, masked.values, denorm(res.mean))
    quants = np.stack([np.where(obs, masked.values, denorm(q))
                       for q in res.quantiles]) if len(res.quantile_levels) else res.quantiles
    return df.ImputationResult(samples=samples, mean=mean,
                               quantile_levels=res.quantile_levels, quantiles=quants)


def evaluate_on_test(trained: TrainedModel, bundle: DatasetBundle,
                     mask_spec: dt.MaskSpec, num_samples: int,
                     seed: int) -> tuple:
    """Mask the test split, impute, and score against the held-out truth.

    Returns (report, eval mask, masked batch); the report's metadata holds
    the mean/median/linear-interp reference scores and the model-vs-mean
    ordering. Metrics are computed in raw (denormalized) units.
    """
    truth = bundle.test
    masked, m_eval = dt.apply_mask(truth, mask_spec)
    result = impute_batch(trained, masked, num_samples, seed,
                          trained.config.sampling.quantiles)
    baselines = {}
    for kind in ("mean", "median", "linear-interp"):
        try:
            filled = ev.reference_impute(masked, kind)
            baselines[kind] = {
                "mae": ev.mae(filled, truth.values, m_eval),
                "rmse": ev.rmse(filled, truth.values, m_eval),
            }
        except ValueError as exc:
            baselines[kind] = {"error": str(exc)}
    report = ev.compute_report(result.mean, truth.values, m_eval,
                               samples=result.samples,
                               feature_names=bundle.feature_names)
    report.metadata["baselines"] = baselines
    mean_mae = baselines.get("mean", {}).get("mae")
    if mean_mae is not None:
        report.metadata["model_beats_mean_baseline"] = bool(report.mae < mean_mae)
    report.metadata["mask"] = {
        "pattern": mask_spec.pattern, "rate": mask_spec.rate,
        "seed": mask_spec.seed, "n_eval": int(m_eval.sum()),
        "sha256": hashlib.sha256(m_eval.astype(np.uint8).tobytes()).hexdigest(),
    }
    report.metadata["num_samples"] = num_samples
    return report, m_eval, masked


def run_experiment(cfg: RunConfig, out_dir=None, log=None,
                   bundle: DatasetBundle | None = None) -> dict:
    """Train + evaluate; returns the report dict written to report.json."""
    if bundle is None:
        bundle = assemble_dataset(cfg)
    trained = run_training(cfg, out_dir=out_dir, log=log, bundle=bundle)
    report, m_eval, _ = evaluate_on_test(trained, bundle, cfg.mask,
                                         cfg.sampling.num_samples,
                                         cfg.training.seed)
    doc = report.to_dict()
    doc["config"] = config_echo(cfg, bundle)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
        dt.export_mask_csv(m_eval, os.path.join(out_dir, "eval_mask.csv"))
    return doc


ABLATION_GRID = [("none", "attention"), ("none", "conv"),
                 ("dft", "attention"), ("dft", "conv"),
                 ("stft", "attention"), ("stft", "conv"),
                 ("frsst", "attention"), ("frsst", "conv")]


def run_ablation(cfg: RunConfig, grid, out_dir=None, log=None) -> list:
    """Train every (fbp_kind, backbone) variant on shared data, masks, seeds.

    Returns one row per cell; a failing cell is reported in place and the
    remaining cells still run.
    """
    import copy

    bundle = assemble_dataset(cfg)
    rows = []
    for fbp_kind, backbone in grid:
        name = f"{fbp_kind}-{backbone}"
        cell_cfg = copy.deepcopy(cfg)
        cell_cfg.model.fbp_kind = fbp_kind
        cell_cfg.model.backbone = backbone
        cell_dir = os.path.join(out_dir, name) if out_dir is not None else None
        if log is not None:
            log(f"[{name}] training")
        try:
            doc = run_experiment(cell_cfg, out_dir=cell_dir, log=log, bundle=bundle)
            rows.append({"variant": name, "fbp_kind": fbp_kind, "backbone": backbone,
                         "status": "ok", "mae": doc["mae"], "rmse": doc["rmse"],
                         "mape": doc["mape"], "crps": doc["crps"],
                         "mask_sha256": doc["metadata"]["mask"]["sha256"]})
        except Exception as exc:   # keep the grid going, report per cell
            rows.append({"variant": name, "fbp_kind": fbp_kind, "backbone": backbone,
                         "status": f"error: {exc}", "mae": None, "rmse": None,
                         "mape": None, "crps": None, "mask_sha256": None})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_ablation_table(rows, os.path.join(out_dir, "ablation.csv"))
        ranked = sorted([r for r in rows if r["status"] == "ok"],
                        key=lambda r: r["mae"])
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump({"ranked": ranked, "rows": rows, "config": cfg.to_dict()},
                      fh, sort_keys=True, indent=2)
    return rows


def _write_ablation_table(rows, path) -> None:
    import csv as _csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(fh, fieldnames=["variant", "fbp_kind", "backbone",
                                                 "status", "mae", "rmse", "mape",
                                                 "crps", "mask_sha256"])
        writer.writeheader()
        writer.writerows(rows)
