import json

import numpy as np
import pytest

from specimpute import cli
from specimpute import data as dt


def tiny_config_dict(seed=0):
    return {
        "dataset": {"synth": {"features": 2, "length": 32 * 20, "seed": seed,
                              "period": 32, "waves": 1, "max_cycles": 4.0,
                              "noise_std": 0.05},
                    "window_length": 32, "window_stride": 32,
                    "train_fraction": 0.7, "val_fraction": 0.1},
        "mask": {"pattern": "pointwise", "rate": 0.2, "seed": seed},
        "model": {"channels": 8, "blocks": 1, "heads": 2, "fbp_kind": "dft",
                  "backbone": "attention", "d_time": 8, "d_feature": 4,
                  "cond_channels": 4, "step_embed_dim": 8, "fbp_dropout": 0.0,
                  "decomp_kernel": 3},
        "schedule": {"steps": 10},
        "training": {"epochs": 1, "batch_size": 8, "lr": 1e-3, "seed": seed},
        "sampling": {"num_samples": 2, "quantiles": [0.25, 0.5, 0.75]},
    }


@pytest.fixture()
def trained_run(tmp_path):
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(tiny_config_dict()))
    out = tmp_path / "run"
    rc = cli.main(["train", "--config", str(cfg_path), "--out", str(out), "--quiet"])
    assert rc == 0
    return cfg_path, out


def write_series_csv(path, T=32, D=2, missing=None, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    vals = np.stack([np.sin(2 * np.pi * 3 * t / T), np.cos(2 * np.pi * 2 * t / T)],
                    axis=-1) + 0.05 * rng.standard_normal((T, D))
    mask = np.ones((T, D), dtype=np.float32)
    if missing is not None:
        for (tt, dd) in missing:
            mask[tt, dd] = 0.0
    batch = dt.TimeSeriesBatch((vals * mask).astype(np.float32)[None], mask[None],
                               np.arange(T, dtype=np.float64))
    dt.write_csv(batch, path)
    return batch


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"modle": {}}))
        rc = cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_data_error_is_3(self, trained_run, tmp_path):
        _, out = trained_run
        missing_csv = tmp_path / "nope.csv"
        rc = cli.main(["impute", "--checkpoint", str(out / "checkpoint"),
                       "--data", str(missing_csv), "--out", str(tmp_path / "imp")])
        assert rc == 3

    def test_bad_env_seed_is_2(self, tmp_path, monkeypatch):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(tiny_config_dict()))
        monkeypatch.setenv("SPECTRA_SEED", "not-an-int")
        rc = cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"),
                       "--quiet"])
        assert rc == 2


class TestTrainCommand:
    def test_artifacts_written(self, trained_run):
        _, out = trained_run
        assert (out / "checkpoint" / "manifest.json").exists()
        assert (out / "checkpoint" / "params.bin").exists()
        assert (out / "training_log.json").exists()
        report = json.loads((out / "report.json").read_text())
        assert "mae" in report and "config" in report

    def test_seed_flag_reproducible_reports(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(tiny_config_dict()))
        outs = []
        for name in ("r1", "r2"):
            rc = cli.main(["--seed", "7", "train", "--config", str(cfg_path),
                           "--out", str(tmp_path / name), "--quiet"])
            assert rc == 0
            outs.append((tmp_path / name / "report.json").read_bytes())
        assert outs[0] == outs[1]


class TestImputeCommand:
    def test_fully_observed_passthrough(self, trained_run, tmp_path):
        _, out = trained_run
        src = tmp_path / "full.csv"
        write_series_csv(src)
        imp = tmp_path / "imp"
        rc = cli.main(["impute", "--checkpoint", str(out / "checkpoint"),
                       "--data", str(src), "--out", str(imp), "--samples", "2"])
        assert rc == 0
        original = dt.load_csv(src)
        roundtrip = dt.load_csv(imp / "imputed.csv")
        np.testing.assert_array_equal(original.values, roundtrip.values)

    def test_missing_entries_filled_and_quantiles_monotone(self, trained_run, tmp_path):
        _, out = trained_run
        src = tmp_path / "holes.csv"
        write_series_csv(src, missing=[(3, 0), (10, 1), (17, 0)])
        imp = tmp_path / "imp"
        rc = cli.main(["impute", "--checkpoint", str(out / "checkpoint"),
                       "--data", str(src), "--out", str(imp),
                       "--samples", "4", "--save-samples"])
        assert rc == 0
        filled = dt.load_csv(imp / "imputed.csv")
        assert filled.mask.all()
        assert np.all(np.isfinite(filled.values))
        rows = (imp / "quantiles.csv").read_text().strip().splitlines()
        assert rows[0] == "b,t,d,q0.25,q0.5,q0.75"
        assert len(rows) == 4
        for line in rows[1:]:
            parts = line.split(",")
            qs = [float(v) for v in parts[3:]]
            assert qs == sorted(qs)
        with np.load(imp / "samples.npz") as npz:
            assert npz["samples"].shape[0] == 4

    def test_feature_count_mismatch_is_data_error(self, trained_run, tmp_path):
        _, out = trained_run
        src = tmp_path / "wide.csv"
        rng = np.random.default_rng(0)
        batch = dt.TimeSeriesBatch(
            rng.normal(size=(1, 32, 5)).astype(np.float32),
            np.ones((1, 32, 5), dtype=np.float32), np.arange(32, dtype=np.float64))
        dt.write_csv(batch, src)
        rc = cli.main(["impute", "--checkpoint", str(out / "checkpoint"),
                       "--data", str(src), "--out", str(tmp_path / "imp")])
        assert rc == 3


class TestEvalCommand:
    def setup_files(self, tmp_path, perturb):
        truth_path = tmp_path / "truth.csv"
        truth = write_series_csv(truth_path, seed=1)
        mask = np.zeros_like(truth.mask)
        mask[0, 5, 0] = 1
        mask[0, 12, 1] = 1
        mask_path = tmp_path / "mask.csv"
        dt.export_mask_csv(mask, mask_path)
        pred_vals = truth.values.copy()
        if perturb:
            pred_vals[0, 5, 0] += 1.0
            pred_vals[0, 12, 1] -= 2.0
        pred = dt.TimeSeriesBatch(pred_vals, truth.mask, truth.timestamps,
                                  truth.feature_names)
        pred_path = tmp_path / "pred.csv"
        dt.write_csv(pred, pred_path)
        return pred_path, truth_path, mask_path

    def test_perfect_prediction_zero_metrics(self, tmp_path):
        pred, truth, mask = self.setup_files(tmp_path, perturb=False)
        out = tmp_path / "report.json"
        rc = cli.main(["eval", "--pred", str(pred), "--truth", str(truth),
                       "--mask", str(mask), "--out", str(out)])
        assert rc == 0
        rep = json.loads(out.read_text())
        assert rep["mae"] == 0.0 and rep["rmse"] == 0.0
        assert rep["crps"] == rep["mae"]

    def test_hand_computed_metrics(self, tmp_path):
        pred, truth, mask = self.setup_files(tmp_path, perturb=True)
        out = tmp_path / "report.json"
        rc = cli.main(["eval", "--pred", str(pred), "--truth", str(truth),
                       "--mask", str(mask), "--out", str(out), "--with-baselines"])
        assert rc == 0
        rep = json.loads(out.read_text())
        assert abs(rep["mae"] - 1.5) < 1e-5
        assert abs(rep["rmse"] - np.sqrt((1 + 4) / 2)) < 1e-5
        assert "baselines" in rep["metadata"]
        assert "model_beats_mean_baseline" in rep["metadata"]

    def test_misaligned_files_data_error(self, tmp_path):
        pred, truth, mask = self.setup_files(tmp_path, perturb=False)
        short = tmp_path / "short.csv"
        write_series_csv(short, T=16, seed=2)
        rc = cli.main(["eval", "--pred", str(short), "--truth", str(truth),
                       "--mask", str(mask), "--out", str(tmp_path / "r.json")])
        assert rc == 3


class TestAblateCommand:
    def test_two_variant_grid(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(tiny_config_dict()))
        out = tmp_path / "grid"
        rc = cli.main(["ablate", "--config", str(cfg_path), "--out", str(out),
                       "--grid", "none-attention,dft-attention", "--quiet"])
        assert rc == 0
        lines = (out / "ablation.csv").read_text().strip().splitlines()
        assert len(lines) == 3
        assert lines[1].startswith("none-attention")

    def test_bad_grid_cell_is_config_error(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(tiny_config_dict()))
        rc = cli.main(["ablate", "--config", str(cfg_path),
                       "--out", str(tmp_path / "g"), "--grid", "dct-attention"])
        assert rc == 2


class TestSpectraDump:
    def test_dump_matches_direct_transform(self, tmp_path):
        src = tmp_path / "x.csv"
        write_series_csv(src, seed=3)
        out = tmp_path / "gram.csv"
        rc = cli.main(["spectra", "dump", "--input", str(src), "--out", str(out),
                       "--transform", "stft", "--feature", "0",
                       "--window-len", "16", "--hop", "8"])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "frame,bin,re,im"
        from specimpute import spectral as sp
        from specimpute.numerics import Tensor
        batch = dt.load_csv(src)
        gram = sp.stft(Tensor(batch.values[0, :, 0].astype(np.float64)),
                       sp.WindowSpec(16, 8)).coeffs.numpy()
        F, L = gram.shape
        assert len(lines) == 1 + F * L

    def test_unknown_feature_is_config_error(self, tmp_path):
        src = tmp_path / "x.csv"
        write_series_csv(src, seed=4)
        rc = cli.main(["spectra", "dump", "--input", str(src),
                       "--out", str(tmp_path / "g.csv"), "--feature", "zz"])
        assert rc == 2


class TestWorkflow:
    def test_train_mask_impute_eval_chain(self, trained_run, tmp_path):
        _, out = trained_run
        truth_path = tmp_path / "truth.csv"
        truth = write_series_csv(truth_path, seed=9)
        masked, m_eval = dt.apply_mask(truth, dt.MaskSpec("pointwise", 0.15, seed=2))
        masked_path = tmp_path / "masked.csv"
        dt.write_csv(masked, masked_path)
        mask_path = tmp_path / "mask.csv"
        dt.export_mask_csv(m_eval, mask_path)

        imp = tmp_path / "imp"
        rc = cli.main(["--seed", "3", "impute", "--checkpoint", str(out / "checkpoint"),
                       "--data", str(masked_path), "--out", str(imp), "--samples", "3",
                       "--save-samples"])
        assert rc == 0
        report_path = tmp_path / "report.json"
        rc = cli.main(["eval", "--pred", str(imp / "imputed.csv"),
                       "--truth", str(truth_path), "--mask", str(mask_path),
                       "--out", str(report_path), "--samples-npz",
                       str(imp / "samples.npz"), "--with-baselines"])
        assert rc == 0
        rep = json.loads(report_path.read_text())
        assert rep["n_eval"] == int(m_eval.sum())
        assert np.isfinite(rep["mae"]) and np.isfinite(rep["crps"])
        # observed entries were copied verbatim into the imputed file
        filled = dt.load_csv(imp / "imputed.csv")
        obs = masked.mask == 1
        np.testing.assert_array_equal(filled.values[obs], masked.values[obs])


class TestPlotCommand:
    def test_metric_vs_k_plot(self, tmp_path):
        paths = []
        for run in ("run_a", "run_b", "run_c"):
            for k, mae in ((1, 0.5), (4, 0.4), (16, 0.38)):
                d = tmp_path / run / f"k{k}"
                d.mkdir(parents=True)
                p = d / "report.json"
                p.write_text(json.dumps({"mae": mae + 0.01 * len(run),
                                         "metadata": {"num_samples": k}}))
                paths.append(str(p))
        out = tmp_path / "curve.png"
        rc = cli.main(["plot", "--kind", "metric-vs-k", "--out", str(out)] + paths)
        assert rc == 0
        assert out.exists() and out.stat().st_size > 0

    def test_empty_inputs_error_and_no_file(self, tmp_path):
        out = tmp_path / "nothing.png"
        rc = cli.main(["plot", "--kind", "metric-vs-k", "--out", str(out)])
        assert rc == 2
        assert not out.exists()

    def test_spectra_overlay(self, tmp_path):
        src = tmp_path / "x.csv"
        write_series_csv(src, seed=5)
        grams = []
        for name in ("true", "masked"):
            g = tmp_path / f"{name}.csv"
            rc = cli.main(["spectra", "dump", "--input", str(src), "--out", str(g),
                           "--transform", "dft", "--feature", "0"])
            assert rc == 0
            grams.append(str(g))
        out = tmp_path / "overlay.svg"
        rc = cli.main(["plot", "--kind", "spectra", "--out", str(out)] + grams)
        assert rc == 0
        assert out.exists()

    def test_plot_determinism(self, tmp_path):
        d = tmp_path / "runx"
        d.mkdir()
        p = d / "report.json"
        p.write_text(json.dumps({"mae": 0.5, "metadata": {"num_samples": 2}}))
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            rc = cli.main(["plot", "--kind", "metric-vs-k", "--out", str(out), str(p)])
            assert rc == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
