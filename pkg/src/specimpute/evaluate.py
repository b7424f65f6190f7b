"""Point and probabilistic imputation metrics plus reference imputers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import TimeSeriesBatch

__all__ = [
    "MetricReport", "mae", "rmse", "mape", "crps_samples",
    "reference_impute", "compute_report",
]

MAPE_DENOM_FLOOR = 1e-8


def _masked(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray):
    sel = mask.astype(bool)
    if not sel.any():
        raise ValueError("metric requires a nonempty evaluation mask")
    return pred[sel].astype(np.float64), truth[sel].astype(np.float64)


def mae(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    p, t = _masked(pred, truth, mask)
    return float(np.mean(np.abs(p - t)))


def rmse(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    p, t = _masked(pred, truth, mask)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mape(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray):
    """Mean absolute percentage error, in percent.

    Entries with |truth| < 1e-8 are skipped; returns (value, skipped count).
    Raises if every masked entry is skipped.
    """
    p, t = _masked(pred, truth, mask)
    ok = np.abs(t) >= MAPE_DENOM_FLOOR
    skipped = int((~ok).sum())
    if not ok.any():
        raise ValueError("mape: all masked entries have near-zero ground truth")
    value = float(100.0 * np.mean(np.abs(p[ok] - t[ok]) / np.abs(t[ok])))
    return value, skipped


def crps_samples(samples: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """Sample CRPS averaged over masked entries.

    Per entry: mean_i |x_i - y| - (1/(2K^2)) sum_ij |x_i - x_j|; the pairwise
    term includes the zero i == j pairs and is computed from sorted samples.
    """
    K = samples.shape[0]
    sel = mask.astype(bool)
    if not sel.any():
        raise ValueError("metric requires a nonempty evaluation mask")
    s = samples.reshape(K, -1)[:, sel.reshape(-1)].astype(np.float64)   # (K, n)
    y = truth.reshape(-1)[sel.reshape(-1)].astype(np.float64)
    term1 = np.mean(np.abs(s - y), axis=0)
    srt = np.sort(s, axis=0)
    weights = (2.0 * np.arange(K) + 1.0 - K)[:, None]
    term2 = (weights * srt).sum(axis=0) / (K * K)
    return float(np.mean(term1 - term2))


def reference_impute(batch: TimeSeriesBatch, kind: str) -> np.ndarray:
    """Fill missing entries with a global statistic or linear interpolation.

    Observed entries are returned untouched. Every feature needs >= 1
    observation (>= 2 for 'linear-interp').
    """
    if kind not in ("mean", "median", "linear-interp"):
        raise ValueError(f"unknown reference imputer {kind!r}")
    v = batch.values.astype(np.float64)
    m = batch.mask.astype(bool)
    out = v.copy()
    B, T, D = v.shape
    for d in range(D):
        obs = v[:, :, d][m[:, :, d]]
        if obs.size == 0:
            raise ValueError(f"feature {batch.feature_names[d]!r} has no observations")
        if kind == "mean":
            fill = obs.mean()
            out[:, :, d][~m[:, :, d]] = fill
        elif kind == "median":
            fill = np.median(obs)
            out[:, :, d][~m[:, :, d]] = fill
        else:
            for b in range(B):
                col = v[b, :, d]
                known = m[b, :, d]
                if known.sum() < 2:
                    raise ValueError(
                        f"linear-interp needs >= 2 observations in feature "
                        f"{batch.feature_names[d]!r}, batch element {b}")
                t = np.arange(T)
                out[b, ~known, d] = np.interp(t[~known], t[known], col[known])
    return out.astype(np.float32)


@dataclass
class MetricReport:
    mae: float
    rmse: float
    mape: float | None
    crps: float | None
    n_eval: int
    mape_skipped: int = 0
    per_feature: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mae": self.mae, "rmse": self.rmse, "mape": self.mape,
            "crps": self.crps, "n_eval": self.n_eval,
            "mape_skipped": self.mape_skipped,
            "per_feature": self.per_feature, "metadata": self.metadata,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, **kw)

    def to_table(self) -> str:
        """Aligned plain-text summary."""
        headers = ["feature", "n", "mae", "rmse", "mape", "crps"]
        rows = [["ALL", str(self.n_eval), _fmt(self.mae), _fmt(self.rmse),
                 _fmt(self.mape), _fmt(self.crps)]]
        for name, vals in self.per_feature.items():
            rows.append([name, str(vals["n_eval"]), _fmt(vals["mae"]),
                         _fmt(vals["rmse"]), _fmt(vals["mape"]), _fmt(vals["crps"])])
        widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        return "\n".join(lines)


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.6g}"


def compute_report(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray,
                   samples: np.ndarray | None = None,
                   feature_names: list | None = None,
                   metadata: dict | None = None) -> MetricReport:
    """All four metrics over the mask, plus a per-feature breakdown.

    CRPS comes from ``samples`` (K leading axis) when given, else from the
    point prediction (a point mass, so it equals the MAE).
    """
    mape_val: float | None
    try:
        mape_val, skipped = mape(pred, truth, mask)
    except ValueError:
        mape_val, skipped = None, int(mask.sum())
    if samples is None:
        samples = pred[None]
    report = MetricReport(
        mae=mae(pred, truth, mask),
        rmse=rmse(pred, truth, mask),
        mape=mape_val,
        crps=crps_samples(samples, truth, mask),
        n_eval=int(mask.sum()),
        mape_skipped=skipped,
        metadata=metadata or {},
    )
    D = pred.shape[-1]
    names = feature_names or [f"f{d}" for d in range(D)]
    for d in range(D):
        fm = mask[..., d]
        entry = {"n_eval": int(fm.sum()), "mae": None, "rmse": None,
                 "mape": None, "crps": None}
        if fm.any():
            entry["mae"] = mae(pred[..., d], truth[..., d], fm)
            entry["rmse"] = rmse(pred[..., d], truth[..., d], fm)
            try:
                entry["mape"], _ = mape(pred[..., d], truth[..., d], fm)
            except ValueError:
                pass
            entry["crps"] = crps_samples(samples[..., d], truth[..., d], fm)
        report.per_feature[names[d]] = entry
    return report
