"""Dataset ingestion, normalization, windowing, synthesis, and eval masks.

Batches are plain numpy arrays: values (B,T,D) float32 zero-filled at
missing entries, a {0,1} observation mask of the same shape, per-step
timestamps, and feature names. Mask construction uses integer-only draws
from a seeded generator so masks reproduce across platforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataError", "TimeSeriesBatch", "Normalizer", "MaskSpec", "SynthSpec",
    "load_csv", "write_csv", "window", "synth_dataset", "apply_mask",
    "export_mask_csv", "load_mask_csv",
]


class DataError(Exception):
    """Malformed or inconsistent input data."""


@dataclass
class TimeSeriesBatch:
    values: np.ndarray                  # (B, T, D) float32, zero where missing
    mask: np.ndarray                    # (B, T, D) in {0, 1}
    timestamps: np.ndarray              # (T,) strictly increasing
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        v, m = self.values, self.mask
        if v.shape != m.shape or v.ndim != 3:
            raise DataError(f"values {v.shape} and mask {m.shape} must both be (B,T,D)")
        if len(self.timestamps) != v.shape[1]:
            raise DataError("timestamps length must equal T")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if not np.all((m == 0) | (m == 1)):
            raise DataError("mask entries must be 0 or 1")
        if not np.all(np.isfinite(v[m == 1])):
            raise DataError("observed values must be finite")
        if np.any(v[m == 0] != 0):
            raise DataError("missing entries must be stored as zero")
        if not self.feature_names:
            self.feature_names = [f"f{d}" for d in range(v.shape[2])]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def copy(self) -> "TimeSeriesBatch":
        return TimeSeriesBatch(self.values.copy(), self.mask.copy(),
                               self.timestamps.copy(), list(self.feature_names))


def _parse_timestamp(text: str, row: int):
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return np.datetime64(text).astype("datetime64[s]").astype(np.int64)
    except ValueError:
        raise DataError(f"row {row}: unparseable timestamp {text!r}") from None


def load_csv(path) -> TimeSeriesBatch:
    """Read a (T, D) series: first column timestamps (header 'date' or the
    first column as fallback), remaining columns numeric features, empty
    cells missing. Rows are sorted by timestamp."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    if len(header) < 2:
        raise DataError(f"{path}: need a timestamp column plus >= 1 feature")
    ts_col = 0
    if "date" in header:
        ts_col = header.index("date")
    feat_cols = [i for i in range(len(header)) if i != ts_col]
    names = [header[i] for i in feat_cols]
    T, D = len(rows), len(feat_cols)
    if T == 0:
        raise DataError(f"{path}: no data rows")
    values = np.zeros((T, D), dtype=np.float32)
    mask = np.zeros((T, D), dtype=np.float32)
    stamps = np.zeros(T, dtype=np.float64)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        stamps[r] = _parse_timestamp(row[ts_col].strip(), r + 2)
        for j, c in enumerate(feat_cols):
            cell = row[c].strip()
            if cell == "":
                continue
            try:
                values[r, j] = np.float32(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {r + 2}, column {header[c]!r}: "
                    f"unparseable numeric cell {cell!r}") from None
            mask[r, j] = 1.0
    order = np.argsort(stamps, kind="stable")
    stamps = stamps[order]
    values = values[order]
    mask = mask[order]
    if np.any(np.diff(stamps) <= 0):
        raise DataError(f"{path}: timestamps are not strictly increasing")
    values *= mask  # canonical zero fill
    return TimeSeriesBatch(values[None], mask[None], stamps, names)


def write_csv(batch: TimeSeriesBatch, path, batch_index: int = 0) -> None:
    """Write one batch element; missing entries become empty cells.

    Values are printed with 9 significant digits, enough for exact float32
    round trips.
    """
    v = batch.values[batch_index]
    m = batch.mask[batch_index]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(batch.feature_names))
        for t in range(v.shape[0]):
            row = [f"{batch.timestamps[t]:.9g}"]
            row += [f"{v[t, d]:.9g}" if m[t, d] else "" for d in range(v.shape[1])]
            writer.writerow(row)


def window(batch: TimeSeriesBatch, length: int, stride: int) -> TimeSeriesBatch:
    """Cut every batch element into the maximal set of length-T segments.

    The trailing remainder is dropped; segments own their storage and carry
    relative timestamps 0..length-1.
    """
    if stride < 1:
        raise DataError("stride must be >= 1")
    B, T, D = batch.shape
    if length > T:
        raise DataError(f"window length {length} exceeds series length {T}")
    n = (T - length) // stride + 1
    vals = np.stack([batch.values[b, i * stride:i * stride + length].copy()
                     for b in range(B) for i in range(n)])
    masks = np.stack([batch.mask[b, i * stride:i * stride + length].copy()
                      for b in range(B) for i in range(n)])
    return TimeSeriesBatch(vals, masks, np.arange(length, dtype=np.float64),
                           list(batch.feature_names))


@dataclass
class SynthSpec:
    """Sinusoid + polynomial-trend generator.

    components[d] is a list of (cycles, amplitude, phase) triples; the wave
    at feature d is sum_j a_j * sin(2*pi*f_j*t/period + phi_j). trend[d]
    holds polynomial coefficients in the normalized coordinate t/length
    (low order first). White Gaussian noise of sd noise_std is added.
    """

    num_features: int
    length: int
    components: list
    trend: list
    noise_std: float = 0.0
    period: int | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.num_features < 1 or self.length < 1:
            raise DataError("num_features and length must be >= 1")
        if len(self.components) != self.num_features:
            raise DataError("components must list one entry per feature")
        if len(self.trend) != self.num_features:
            raise DataError("trend must list one entry per feature")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")


def synth_dataset(spec: SynthSpec) -> TimeSeriesBatch:
    """Fully observed synthetic series from a seeded spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    T, D = spec.length, spec.num_features
    period = spec.period or T
    t = np.arange(T, dtype=np.float64)
    x = np.zeros((T, D), dtype=np.float64)
    for d in range(D):
        for (cycles, amp, phase) in spec.components[d]:
            x[:, d] += amp * np.sin(2.0 * np.pi * cycles * t / period + phase)
        for power, coef in enumerate(spec.trend[d]):
            x[:, d] += coef * (t / T) ** power
    if spec.noise_std > 0:
        x += spec.noise_std * rng.standard_normal((T, D))
    values = x.astype(np.float32)
    return TimeSeriesBatch(values[None], np.ones((1, T, D), dtype=np.float32),
                           t.copy(), [f"f{d}" for d in range(D)])


class Normalizer:
    """Per-feature standardization fitted on observed entries only."""

    STD_FLOOR = 1e-8

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = mean.astype(np.float64)
        self.std = np.maximum(std.astype(np.float64), self.STD_FLOOR)

    @classmethod
    def fit(cls, batch: TimeSeriesBatch) -> "Normalizer":
        v, m = batch.values.astype(np.float64), batch.mask
        count = np.maximum(m.sum(axis=(0, 1)), 1.0)
        mean = (v * m).sum(axis=(0, 1)) / count
        var = (((v - mean) * m) ** 2).sum(axis=(0, 1)) / count
        return cls(mean, np.sqrt(var))

    def normalize(self, batch: TimeSeriesBatch) -> TimeSeriesBatch:
        v = (batch.values.astype(np.float64) - self.mean) / self.std
        v = (v * batch.mask).astype(np.float32)
        return TimeSeriesBatch(v, batch.mask.copy(), batch.timestamps.copy(),
                               list(batch.feature_names))

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return (values.astype(np.float64) * self.std + self.mean).astype(np.float32)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


@dataclass
class MaskSpec:
    """Evaluation-time mask construction parameters."""

    pattern: str = "pointwise"
    rate: float = 0.1
    block_min: int | None = None
    block_max: int | None = None
    aligned: bool = False
    seed: int = 0

    def validate(self, T: int | None = None) -> None:
        if self.pattern not in ("pointwise", "timewise"):
            raise DataError(f"unknown mask pattern {self.pattern!r}")
        if not 0.0 < self.rate < 1.0:
            raise DataError(f"mask rate must be in (0,1), got {self.rate}")
        if (self.block_min is None) != (self.block_max is None):
            raise DataError("block_min and block_max must be given together")
        if self.block_min is not None and not 1 <= self.block_min <= self.block_max:
            raise DataError("need 1 <= block_min <= block_max")

    def blocks(self, T: int) -> tuple:
        if self.block_min is not None:
            return self.block_min, self.block_max
        return max(1, T // 12), max(1, T // 6)


def _pointwise_eval_mask(mask: np.ndarray, rate: float,
                         rng: np.random.Generator) -> np.ndarray:
    flat_obs = np.flatnonzero(mask.reshape(-1))
    count = int(round(rate * flat_obs.size))
    chosen = flat_obs[rng.permutation(flat_obs.size)[:count]]
    eval_mask = np.zeros(mask.size, dtype=np.float32)
    eval_mask[chosen] = 1.0
    return eval_mask.reshape(mask.shape)


def _timewise_column(obs_col: np.ndarray, target: int, lo: int, hi: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Mask ``target`` observed entries of one feature column with
    contiguous blocks (non-adjacent while space allows; final block trimmed
    to hit the count exactly)."""
    T = obs_col.shape[0]
    hit = np.zeros(T, dtype=bool)
    blocked = np.zeros(T, dtype=bool)      # chosen blocks plus adjacency guard
    remaining = target
    attempts = 0
    max_attempts = 200 * max(T, 1)
    while remaining > 0 and attempts < max_attempts:
        attempts += 1
        length = min(int(rng.integers(lo, hi + 1)), T)
        start = int(rng.integers(0, T - length + 1))
        if blocked[start:start + length].any():
            continue
        gain = obs_col[start:start + length] & ~hit[start:start + length]
        gained = int(gain.sum())
        if gained == 0:
            continue
        if gained > remaining:
            # trim from the right so the exact count is reached
            keep_idx = np.nonzero(gain)[0][:remaining]
            length = int(keep_idx.max()) + 1
            trimmed = np.zeros(length, dtype=bool)
            trimmed[keep_idx] = True
            gain = trimmed
        hit[start:start + length] |= gain
        remaining = target - int(hit.sum())
        blocked[max(0, start - 1):min(T, start + length + 1)] = True
    if remaining > 0:
        # deterministic fallback: sweep left to right over free observed cells
        for t in range(T):
            if remaining == 0:
                break
            if obs_col[t] and not hit[t]:
                hit[t] = True
                remaining -= 1
    return (hit & obs_col).astype(np.float32)


def _timewise_eval_mask(mask: np.ndarray, spec: MaskSpec,
                        rng: np.random.Generator) -> np.ndarray:
    B, T, D = mask.shape
    lo, hi = spec.blocks(T)
    out = np.zeros_like(mask, dtype=np.float32)
    for b in range(B):
        if spec.aligned:
            obs_any = mask[b].astype(bool).any(axis=1)
            target = int(round(spec.rate * obs_any.sum()))
            col = _timewise_column(obs_any, target, lo, hi, rng).astype(bool)
            out[b] = col[:, None] * mask[b]
        else:
            for d in range(D):
                obs = mask[b, :, d].astype(bool)
                target = int(round(spec.rate * obs.sum()))
                out[b, :, d] = _timewise_column(obs, target, lo, hi, rng)
    return out


def apply_mask(batch: TimeSeriesBatch, spec: MaskSpec):
    """Hide a fraction of the observed entries per ``spec``.

    Returns (masked batch, eval mask). The eval mask marks exactly the
    newly hidden entries; ground truth stays with the caller's original
    batch and is never placed in the returned values.
    """
    spec.validate(batch.shape[1])
    rng = np.random.default_rng(spec.seed)
    if spec.pattern == "pointwise":
        eval_mask = _pointwise_eval_mask(batch.mask, spec.rate, rng)
    else:
        eval_mask = _timewise_eval_mask(batch.mask, spec, rng)
    new_mask = batch.mask * (1.0 - eval_mask)
    masked = TimeSeriesBatch(batch.values * new_mask, new_mask,
                             batch.timestamps.copy(), list(batch.feature_names))
    return masked, eval_mask


def export_mask_csv(mask: np.ndarray, path) -> None:
    """Write the (b,t,d) triples of the set bits, for cross-method reuse."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["b", "t", "d"])
        for b, t, d in zip(*np.nonzero(mask)):
            writer.writerow([b, t, d])


def load_mask_csv(path, shape: tuple) -> np.ndarray:
    mask = np.zeros(shape, dtype=np.float32)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["b", "t", "d"]:
            raise DataError(f"{path}: expected header b,t,d")
        for row in reader:
            mask[int(row[0]), int(row[1]), int(row[2])] = 1.0
    return mask
