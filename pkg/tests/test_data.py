import numpy as np
import pytest

from specimpute import data as dt

from oracles import naive_rdft


def make_batch(B=2, T=12, D=3, seed=0, missing=0.0):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(B, T, D)).astype(np.float32)
    mask = np.ones((B, T, D), dtype=np.float32)
    if missing:
        mask = (rng.random((B, T, D)) >= missing).astype(np.float32)
    return dt.TimeSeriesBatch(values * mask, mask, np.arange(T, dtype=np.float64))


class TestBatchInvariants:
    def test_missing_must_be_zero_filled(self):
        with pytest.raises(dt.DataError):
            dt.TimeSeriesBatch(np.ones((1, 2, 1), dtype=np.float32),
                               np.zeros((1, 2, 1), dtype=np.float32),
                               np.arange(2, dtype=np.float64))

    def test_timestamps_strictly_increasing(self):
        with pytest.raises(dt.DataError):
            dt.TimeSeriesBatch(np.zeros((1, 3, 1), dtype=np.float32),
                               np.zeros((1, 3, 1), dtype=np.float32),
                               np.array([0.0, 1.0, 1.0]))


class TestCsv:
    def test_roundtrip_with_missing_cell(self, tmp_path):
        p = tmp_path / "series.csv"
        p.write_text("date,a,b\n0,1.5,\n1,2.5,3.5\n2,-0.25,4.5\n")
        batch = dt.load_csv(p)
        assert batch.shape == (1, 3, 2)
        assert batch.mask.sum() == 5
        assert batch.mask[0, 0, 1] == 0
        assert batch.values[0, 0, 1] == 0.0
        out = tmp_path / "copy.csv"
        dt.write_csv(batch, out)
        again = dt.load_csv(out)
        np.testing.assert_array_equal(again.values, batch.values)
        np.testing.assert_array_equal(again.mask, batch.mask)

    def test_value_exact_roundtrip_float32(self, tmp_path):
        rng = np.random.default_rng(1)
        batch = make_batch(B=1, T=20, D=4, missing=0.2)
        p = tmp_path / "x.csv"
        dt.write_csv(batch, p)
        again = dt.load_csv(p)
        np.testing.assert_array_equal(again.values, batch.values)
        _ = rng

    def test_unparseable_cell_reports_location(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("date,a\n0,1.0\n1,oops\n")
        with pytest.raises(dt.DataError, match="row 3.*'a'"):
            dt.load_csv(p)

    def test_duplicate_timestamps_rejected(self, tmp_path):
        p = tmp_path / "dup.csv"
        p.write_text("date,a\n0,1.0\n0,2.0\n")
        with pytest.raises(dt.DataError, match="strictly increasing"):
            dt.load_csv(p)

    def test_rows_sorted_by_timestamp(self, tmp_path):
        p = tmp_path / "shuffled.csv"
        p.write_text("date,a\n2,3.0\n0,1.0\n1,2.0\n")
        batch = dt.load_csv(p)
        np.testing.assert_array_equal(batch.values[0, :, 0], [1.0, 2.0, 3.0])

    def test_datetime_timestamps(self, tmp_path):
        p = tmp_path / "dtts.csv"
        p.write_text("date,a\n2016-07-01 00:00:00,1\n2016-07-01 00:15:00,2\n")
        batch = dt.load_csv(p)
        assert batch.timestamps[1] - batch.timestamps[0] == 900

    def test_ett_shaped_file_windows_to_96(self, tmp_path):
        # 7 features, long series, windowed into T=96 segments
        rng = np.random.default_rng(2)
        T, D = 200, 7
        lines = ["date," + ",".join(f"c{d}" for d in range(D))]
        for t in range(T):
            lines.append(f"{t}," + ",".join(f"{v:.4f}" for v in rng.normal(size=D)))
        p = tmp_path / "ett_like.csv"
        p.write_text("\n".join(lines) + "\n")
        batch = dt.load_csv(p)
        segs = dt.window(batch, 96, 96)
        assert segs.shape == (2, 96, 7)


class TestWindow:
    def test_counts(self):
        batch = make_batch(B=1, T=10)
        assert dt.window(batch, 4, 4).shape[0] == 2
        assert dt.window(batch, 4, 1).shape[0] == 7

    def test_too_long(self):
        with pytest.raises(dt.DataError):
            dt.window(make_batch(B=1, T=10), 11, 1)

    def test_no_aliasing(self):
        batch = make_batch(B=1, T=10)
        segs = dt.window(batch, 4, 4)
        segs.values[0, 0, 0] = 999.0
        assert batch.values[0, 0, 0] != 999.0

    def test_mask_alignment(self):
        batch = make_batch(B=1, T=12, missing=0.4, seed=3)
        segs = dt.window(batch, 5, 3)
        n = segs.shape[0]
        for i in range(n):
            np.testing.assert_array_equal(segs.mask[i], batch.mask[0, i * 3:i * 3 + 5])


class TestSynth:
    def test_single_sinusoid_spectrum(self):
        spec = dt.SynthSpec(num_features=1, length=64,
                            components=[[(5.0, 1.0, 0.0)]], trend=[[0.0]],
                            noise_std=0.0, seed=0)
        batch = dt.synth_dataset(spec)
        raw = naive_rdft(batch.values[0, :, 0].astype(np.float64))
        mags = np.abs(raw)
        assert np.argmax(mags) == 5
        others = np.delete(mags, 5)
        assert others.max() < 1e-6 * mags[5] + 1e-9

    def test_seed_determinism(self):
        spec = dt.SynthSpec(num_features=2, length=32,
                            components=[[(2.0, 1.0, 0.1)], [(3.0, 0.5, 0.2)]],
                            trend=[[0.0], [1.0, 2.0]], noise_std=0.3, seed=7)
        a = dt.synth_dataset(spec)
        b = dt.synth_dataset(spec)
        np.testing.assert_array_equal(a.values, b.values)

    def test_zero_amplitude_gives_trend_only(self):
        spec = dt.SynthSpec(num_features=1, length=16, components=[[]],
                            trend=[[2.5]], noise_std=0.0, seed=0)
        batch = dt.synth_dataset(spec)
        np.testing.assert_allclose(batch.values[0, :, 0], 2.5, atol=1e-6)

    def test_fully_observed(self):
        spec = dt.SynthSpec(num_features=1, length=8, components=[[]],
                            trend=[[0.0]], seed=0)
        assert dt.synth_dataset(spec).mask.all()


class TestNormalizer:
    def test_roundtrip(self):
        batch = make_batch(B=2, T=30, D=3, missing=0.3, seed=4)
        norm = dt.Normalizer.fit(batch)
        normed = norm.normalize(batch)
        back = norm.denormalize(normed.values)
        sel = batch.mask == 1
        assert np.max(np.abs(back[sel] - batch.values[sel])) < 1e-5

    def test_statistics_ignore_masked_entries(self):
        batch = make_batch(B=1, T=50, D=2, missing=0.4, seed=5)
        norm1 = dt.Normalizer.fit(batch)
        tampered = batch.copy()
        # values under mask=0 are zero by invariant; recompute on a batch
        # whose masked-out truth differs: stats must not change
        tampered_vals = tampered.values + 17.0 * (1 - tampered.mask)
        stats_input = dt.TimeSeriesBatch(
            (tampered_vals * tampered.mask).astype(np.float32), tampered.mask,
            tampered.timestamps, tampered.feature_names)
        norm2 = dt.Normalizer.fit(stats_input)
        np.testing.assert_array_equal(norm1.mean, norm2.mean)
        np.testing.assert_array_equal(norm1.std, norm2.std)

    def test_std_floor(self):
        values = np.ones((1, 10, 1), dtype=np.float32)
        batch = dt.TimeSeriesBatch(values, np.ones_like(values),
                                   np.arange(10, dtype=np.float64))
        norm = dt.Normalizer.fit(batch)
        assert norm.std[0] >= dt.Normalizer.STD_FLOOR


class TestApplyMask:
    def test_pointwise_exact_count(self):
        batch = make_batch(B=1, T=10, D=10, seed=6)
        masked, ev = dt.apply_mask(batch, dt.MaskSpec("pointwise", 0.5, seed=1))
        assert ev.sum() == 50
        assert masked.mask.sum() == 50

    def test_eval_mask_subset_of_observed(self):
        batch = make_batch(B=2, T=20, D=3, missing=0.3, seed=7)
        masked, ev = dt.apply_mask(batch, dt.MaskSpec("pointwise", 0.4, seed=2))
        assert np.all(ev <= batch.mask)
        np.testing.assert_array_equal(masked.mask, batch.mask - ev)
        # held-out truth recoverable from the caller's original batch
        assert np.all(masked.values[ev == 1] == 0)
        assert np.all(batch.values[ev == 1] == (batch.values * batch.mask)[ev == 1])

    def test_reproducibility(self):
        batch = make_batch(B=2, T=24, D=4, seed=8)
        spec = dt.MaskSpec("timewise", 0.3, seed=11)
        _, ev1 = dt.apply_mask(batch, spec)
        _, ev2 = dt.apply_mask(batch, spec)
        np.testing.assert_array_equal(ev1, ev2)

    def test_timewise_contiguous_runs(self):
        batch = make_batch(B=1, T=48, D=3, seed=9)
        spec = dt.MaskSpec("timewise", 0.25, seed=3)
        _, ev = dt.apply_mask(batch, spec)
        lo, hi = spec.blocks(48)
        for d in range(3):
            col = ev[0, :, d]
            assert col.sum() == round(0.25 * 48)
            runs = _run_lengths(col)
            assert all(r <= hi for r in runs)

    def test_timewise_exact_count_with_partial_observation(self):
        batch = make_batch(B=1, T=40, D=2, missing=0.3, seed=10)
        spec = dt.MaskSpec("timewise", 0.5, seed=4)
        _, ev = dt.apply_mask(batch, spec)
        for d in range(2):
            obs = batch.mask[0, :, d].sum()
            assert ev[0, :, d].sum() == round(0.5 * obs)

    def test_timewise_aligned(self):
        batch = make_batch(B=1, T=36, D=4, seed=11)
        spec = dt.MaskSpec("timewise", 0.25, aligned=True, seed=5)
        _, ev = dt.apply_mask(batch, spec)
        cols = ev[0].T
        for d in range(1, 4):
            np.testing.assert_array_equal(cols[d], cols[0])

    def test_invalid_rate(self):
        with pytest.raises(dt.DataError):
            dt.apply_mask(make_batch(), dt.MaskSpec("pointwise", 1.5))

    def test_mask_csv_roundtrip(self, tmp_path):
        batch = make_batch(B=2, T=10, D=3, seed=12)
        _, ev = dt.apply_mask(batch, dt.MaskSpec("pointwise", 0.3, seed=6))
        p = tmp_path / "mask.csv"
        dt.export_mask_csv(ev, p)
        again = dt.load_mask_csv(p, ev.shape)
        np.testing.assert_array_equal(ev, again)


def _run_lengths(col):
    runs, n = [], 0
    for v in col:
        if v:
            n += 1
        elif n:
            runs.append(n)
            n = 0
    if n:
        runs.append(n)
    return runs
