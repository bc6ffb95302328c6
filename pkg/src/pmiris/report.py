"""Distribution reports: histograms, ECDF tables, summary statistics and overlay plots.

Inputs are named score sets (split into genuine/impostor samples) or named
plain value columns (e.g. one quality metric). Everything is written as
CSV plus one SVG overlay per comparison group; all outputs are
byte-reproducible for identical inputs.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from pmiris.calibration import ks_distance, wasserstein1_distance
from pmiris.io import atomic_write_bytes, atomic_write_text, csv_text
from pmiris.matcher import Label, ScoreSet
from pmiris.stats import QUANTILE_LEVELS, d_prime, ecdf, summary_stats

SUMMARY_HEADER = ["sample", "n", "mean", "sd", "min", "max"] + [f"q{q}" for q in QUANTILE_LEVELS] + ["note"]
COMPARISON_HEADER = ["sample_a", "sample_b", "ks", "wasserstein1", "d_prime"]


@dataclass
class ReportSummary:
    samples: dict[str, np.ndarray]
    comparisons: list[dict]
    warnings: list[str]
    files: list[Path]


def _collect(sets: Mapping[str, object]) -> tuple[dict[str, np.ndarray], list[str], list[list[str]]]:
    """Flatten inputs into named samples plus overlay groups."""
    samples: dict[str, np.ndarray] = {}
    warnings: list[str] = []
    groups: list[list[str]] = []
    by_label: dict[str, list[str]] = {}
    plain: list[str] = []
    for name, data in sets.items():
        if isinstance(data, ScoreSet):
            own = []
            for label in (Label.GENUINE, Label.IMPOSTOR):
                key = f"{name}:{label.value}"
                vals = data.scores(label)
                if vals.size == 0:
                    warnings.append(f"{key}: no scores; omitted")
                    continue
                samples[key] = vals
                own.append(key)
                by_label.setdefault(label.value, []).append(key)
            if len(own) == 2:
                groups.append(own)
        else:
            vals = np.asarray(data, dtype=float).ravel()
            vals = vals[np.isfinite(vals)]
            if vals.size == 0:
                warnings.append(f"{name}: no values; omitted")
                continue
            samples[name] = vals
            plain.append(name)
    for keys in by_label.values():
        if len(keys) > 1:
            groups.append(keys)
    if len(plain) > 1:
        groups.append(plain)
    return samples, warnings, groups


def _svg(path: Path, samples: dict[str, np.ndarray], keys: list[str], edges: np.ndarray) -> None:
    import io

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "pmiris-report", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for key in keys:
            counts, _ = np.histogram(samples[key], bins=edges)
            density = counts / max(counts.sum(), 1)
            ax.step(edges[:-1], density, where="post", label=f"{key} (n={samples[key].size})")
        ax.set_xlabel("value")
        ax.set_ylabel("fraction")
        ax.legend(fontsize=8)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def distribution_report(
    sets: Mapping[str, object], out_dir: str | os.PathLike, bins: int = 50, plots: bool = True
) -> ReportSummary:
    """Write ``histograms.csv``, ``ecdf.csv``, ``summary.csv``, ``comparisons.csv`` and SVG overlays.

    Histograms share ``bins`` equal-width bins over the observed range of
    all samples. Empty samples are omitted and reported as warning rows in
    ``summary.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples, warnings, groups = _collect(sets)
    files: list[Path] = []

    if samples:
        allv = np.concatenate(list(samples.values()))
        lo, hi = float(allv.min()), float(allv.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
    else:
        edges = np.linspace(0.0, 1.0, bins + 1)

    hist_rows, ecdf_rows, summary_rows = [], [], []
    for key, vals in samples.items():
        counts, _ = np.histogram(vals, bins=edges)
        hist_rows += [[key, float(edges[i]), float(edges[i + 1]), int(c)] for i, c in enumerate(counts)]
        ecdf_rows += [[key, v, f] for v, f in ecdf(vals)]
        s = summary_stats(vals)
        summary_rows.append([key, s.n, s.mean, s.sd, s.min, s.max] + [s.quantiles[q] for q in QUANTILE_LEVELS] + [""])
    for w in warnings:
        summary_rows.append([w.rsplit(": ", 1)[0], 0] + [""] * (len(SUMMARY_HEADER) - 3) + [w])

    comparisons = []
    for a, b in itertools.combinations(samples, 2):
        va, vb = samples[a], samples[b]
        dp = d_prime(va, vb) if va.size >= 2 and vb.size >= 2 else math.nan
        comparisons.append(
            {
                "sample_a": a,
                "sample_b": b,
                "ks": ks_distance(va, vb).value,
                "wasserstein1": wasserstein1_distance(va, vb).value,
                "d_prime": dp,
            }
        )

    outputs = {
        "histograms.csv": csv_text(["sample", "bin_lower", "bin_upper", "count"], hist_rows),
        "ecdf.csv": csv_text(["sample", "value", "cumulative_fraction"], ecdf_rows),
        "summary.csv": csv_text(SUMMARY_HEADER, summary_rows),
        "comparisons.csv": csv_text(COMPARISON_HEADER, [[c[h] for h in COMPARISON_HEADER] for c in comparisons]),
    }
    for name, text in outputs.items():
        atomic_write_text(out / name, text)
        files.append(out / name)
    if plots:
        for keys in groups:
            path = out / ("overlay_" + "__".join(_safe(k) for k in keys) + ".svg")
            _svg(path, samples, keys, edges)
            files.append(path)
    return ReportSummary(samples, comparisons, warnings, files)
