"""Render training-dynamics and summary figures from selfmt CSV files.

This package reads only the documented CSV schemas (the stats CSV written by
the trainer and the summary CSV written by the evaluator); any schema drift
fails loudly instead of guessing.
"""

from __future__ import annotations

import csv
import logging
import math
import os

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "selfmt-plots"  # deterministic SVG ids

import matplotlib.pyplot as plt  # noqa: E402

log = logging.getLogger(__name__)

STATS_COLUMNS = [
    "epoch", "phase", "direction", "n_spe_accepted", "n_bt_generated",
    "n_bt_accepted", "n_wt", "n_noise_copies", "mean_train_loss", "dev_bleu",
]

SUMMARY_REQUIRED = [
    "run_id", "technique", "init", "direction", "epoch_of_best",
    "dev_bleu", "test_bleu",
]
SUMMARY_CI = ["ci_low", "ci_high"]


class PlotError(ValueError):
    """Malformed or schema-incompatible input."""


def _read_csv(path, required: list[str], optional: list[str] = ()) -> list[dict]:
    if not os.path.isfile(path):
        raise PlotError(f"no such file: {path}")
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise PlotError(f"{path}: empty file")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise PlotError(f"{path}: missing columns {missing}")
        rows = list(reader)
    if not rows:
        raise PlotError(f"{path}: no data rows")
    return rows


def _spe_pairs_per_epoch(rows: list[dict]) -> dict[int, float]:
    """Extracted pair counts per epoch. Each pair appears once per direction
    in the stats file, so the per-epoch sum is divided by two."""
    out: dict[int, float] = {}
    n_dirs: dict[int, int] = {}
    for r in rows:
        epoch = int(r["epoch"])
        out[epoch] = out.get(epoch, 0.0) + float(r["n_spe_accepted"])
        n_dirs[epoch] = n_dirs.get(epoch, 0) + 1
    return {e: v / 2.0 for e, v in out.items()}


def _sum_per_epoch(rows: list[dict], column: str) -> dict[int, float]:
    out: dict[int, float] = {}
    for r in rows:
        epoch = int(r["epoch"])
        out[epoch] = out.get(epoch, 0.0) + float(r[column])
    return out


def plot_dynamics(stats_csv, out_image, baseline_csv=None):
    """Per-epoch extraction/generation counts: one series per provenance
    (SPE, BT accepted, WT), plus the baseline run's SPE series as a dashed
    overlay when given. Returns the matplotlib figure."""
    rows = [r for r in _read_csv(stats_csv, STATS_COLUMNS) if r["phase"] == "train"]
    if not rows:
        raise PlotError(f"{stats_csv}: no rows with phase=train")
    try:
        series = {
            "SPE": _spe_pairs_per_epoch(rows),
            "BT": _sum_per_epoch(rows, "n_bt_accepted"),
            "WT": _sum_per_epoch(rows, "n_wt"),
        }
    except ValueError as e:
        raise PlotError(f"{stats_csv}: non-numeric cell ({e})") from e

    fig, ax = plt.subplots(figsize=(6, 4), dpi=110)
    for name, values in series.items():
        epochs = sorted(values)
        ax.plot(epochs, [values[e] for e in epochs], marker="o", markersize=3,
                label=name)
    if baseline_csv is not None:
        base_rows = [r for r in _read_csv(baseline_csv, STATS_COLUMNS)
                     if r["phase"] == "train"]
        base = _spe_pairs_per_epoch(base_rows)
        epochs = sorted(base)
        ax.plot(epochs, [base[e] for e in epochs], linestyle="--", color="black",
                label="SPE (baseline)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("sentence pairs")
    ax.set_title("Extracted (SPE) and generated (BT, WT) pairs per epoch")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_image, metadata=_clean_metadata(out_image))
    return fig


def plot_summary(summary_csv, out_image):
    """Test BLEU per technique, one panel per direction, with CI whiskers when
    the interval columns are present. Returns the matplotlib figure."""
    rows = _read_csv(summary_csv, SUMMARY_REQUIRED)
    have_ci = all(c in rows[0] for c in SUMMARY_CI)
    if not have_ci:
        log.warning("%s: no %s columns; whiskers omitted", summary_csv, SUMMARY_CI)

    directions = sorted({r["direction"] for r in rows})
    fig, axes = plt.subplots(1, len(directions), figsize=(4.5 * len(directions), 4),
                             dpi=110, squeeze=False)
    for ax, direction in zip(axes[0], directions):
        sub = sorted((r for r in rows if r["direction"] == direction),
                     key=lambda r: (r["technique"], r["init"], r["run_id"]))
        labels = [f'{r["technique"]}/{r["init"]}' for r in sub]
        try:
            scores = [float(r["test_bleu"]) for r in sub]
        except ValueError as e:
            raise PlotError(f"{summary_csv}: non-numeric test_bleu ({e})") from e
        xs = range(len(sub))
        yerr = None
        if have_ci:
            lows, highs = [], []
            for r, s in zip(sub, scores):
                try:
                    lo, hi = float(r["ci_low"]), float(r["ci_high"])
                except ValueError:
                    lo = hi = float("nan")
                lows.append(0.0 if math.isnan(lo) else max(0.0, s - lo))
                highs.append(0.0 if math.isnan(hi) else max(0.0, hi - s))
            yerr = (lows, highs)
        ax.bar(xs, scores, yerr=yerr, capsize=3)
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.set_title(direction)
        ax.set_ylabel("test BLEU")
    fig.tight_layout()
    fig.savefig(out_image, metadata=_clean_metadata(out_image))
    return fig


def _clean_metadata(out_image) -> dict | None:
    # SVG embeds a creation date by default; strip it so reruns are comparable.
    if str(out_image).endswith(".svg"):
        return {"Date": None}
    return None
