"""Deterministic plot emission for metric curves and spectra overlays."""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "specimpute"

__all__ = ["PlotError", "plot_metric_vs_samples", "plot_spectra_overlay", "save_figure"]


class PlotError(Exception):
    pass


def save_figure(fig, out_path) -> None:
    """Write PNG or SVG with timestamp metadata scrubbed."""
    ext = os.path.splitext(str(out_path))[1].lower()
    if ext == ".svg":
        fig.savefig(out_path, metadata={"Date": None})
    else:
        fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_metric_vs_samples(report_paths, out_path, metric: str = "mae"):
    """One series per run directory: metric value against the sample count K.

    Each input is a report JSON carrying metadata.num_samples; reports from
    the same parent directory form one series sorted by K.
    """
    if not report_paths:
        raise PlotError("no input reports given")
    series: dict[str, list] = {}
    for path in report_paths:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise PlotError(f"cannot read report {path}: {exc}") from exc
        if metric not in doc or doc[metric] is None:
            raise PlotError(f"report {path} has no metric {metric!r}")
        k = doc.get("metadata", {}).get("num_samples")
        if k is None:
            raise PlotError(f"report {path} lacks metadata.num_samples")
        label = os.path.basename(os.path.dirname(os.path.abspath(path))) or "run"
        series.setdefault(label, []).append((int(k), float(doc[metric])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(series):
        pts = sorted(series[label])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel("samples K")
    ax.set_ylabel(metric)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    save_figure(fig, out_path)


def load_gram_csv(path):
    """Read a (frame, bin, re, im) dump back into a complex (F, L) array."""
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.size == 0:
        raise PlotError(f"gram dump {path} is empty")
    frames = rows[:, 0].astype(int)
    bins = rows[:, 1].astype(int)
    gram = np.zeros((bins.max() + 1, frames.max() + 1), dtype=np.complex128)
    gram[bins, frames] = rows[:, 2] + 1j * rows[:, 3]
    return gram


def plot_spectra_overlay(gram_paths, out_path, labels=None):
    """Overlay per-bin magnitudes (averaged over frames) of several dumps."""
    if not gram_paths:
        raise PlotError("no gram dumps given")
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, path in enumerate(gram_paths):
        gram = load_gram_csv(path)
        mag = np.abs(gram).mean(axis=1)
        label = labels[i] if labels and i < len(labels) else os.path.basename(str(path))
        ax.plot(np.arange(mag.size), mag, label=label)
    ax.set_xlabel("frequency bin")
    ax.set_ylabel("|coefficient|")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    save_figure(fig, out_path)
