"""Distribution summaries shared by score analysis, quality comparison and calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, TypeVar

import numpy as np

from pmiris.dataset import ManifestEntry, assign_pmi_class
from pmiris.errors import InvalidInputError

QUANTILE_LEVELS = (1, 5, 25, 50, 75, 95, 99)

T = TypeVar("T")


def _values(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise InvalidInputError("empty sample")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("sample contains non-finite values")
    return arr


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    sd: float
    min: float
    max: float
    quantiles: dict[int, float]


def summary_stats(values) -> SummaryStats:
    """Sample summary; ``sd`` uses the n-1 denominator (0 for a single value)."""
    arr = _values(values)
    qs = np.quantile(arr, [q / 100 for q in QUANTILE_LEVELS])
    return SummaryStats(
        n=int(arr.size),
        mean=float(arr.mean()),
        sd=float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        min=float(arr.min()),
        max=float(arr.max()),
        quantiles={q: float(v) for q, v in zip(QUANTILE_LEVELS, qs)},
    )


def ecdf(values) -> list[tuple[float, float]]:
    """Right-continuous ECDF as sorted ``(value, F(value))`` steps; last F is exactly 1."""
    arr = np.sort(_values(values))
    uniq, counts = np.unique(arr, return_counts=True)
    cum = np.cumsum(counts)
    n = int(cum[-1])
    return [(float(u), int(c) / n) for u, c in zip(uniq, cum)]


def ecdf_at(sample: np.ndarray, points: np.ndarray) -> np.ndarray:
    s = np.sort(np.asarray(sample, dtype=float))
    return np.searchsorted(s, points, side="right") / s.size


def histogram(values, bins: int = 50, value_range: tuple[float, float] | None = None):
    """Counts and edges; a degenerate range is widened by 0.5 on each side."""
    arr = _values(values)
    lo, hi = value_range if value_range is not None else (float(arr.min()), float(arr.max()))
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.histogram(arr, bins=bins, range=(lo, hi))


def d_prime(genuine, impostor) -> float:
    """``|mu_g - mu_i| / sqrt((var_g + var_i) / 2)`` with sample variances.

    Both variances zero: 0 for equal means, ``math.inf`` otherwise.
    """
    g, i = _values(genuine), _values(impostor)
    if g.size < 2 or i.size < 2:
        raise InvalidInputError("d' needs at least two values per sample")
    diff = abs(float(g.mean()) - float(i.mean()))
    pooled = 0.5 * (float(g.var(ddof=1)) + float(i.var(ddof=1)))
    if pooled <= 0:
        return 0.0 if diff == 0 else math.inf
    return diff / math.sqrt(pooled)


@dataclass
class Partition:
    groups: dict[int, list]
    exclusions: list


def partition_by_class(
    rows: Iterable[T], manifest: Mapping[str, ManifestEntry], key: Callable[[T], Hashable]
) -> Partition:
    """Group rows by the PMI class of the manifest entry ``key(row)`` names.

    For comparison scores pass the probe id as key, so cross-class genuine
    pairs land in the probe's class. Rows whose key is missing from the
    manifest (or whose PMI cannot be classed) are returned as exclusions.
    """
    groups: dict[int, list] = {}
    excluded = []
    for row in rows:
        entry = manifest.get(key(row))
        if entry is None:
            excluded.append(row)
            continue
        try:
            cls = assign_pmi_class(entry.pmi_hours).index
        except InvalidInputError:
            excluded.append(row)
            continue
        groups.setdefault(cls, []).append(row)
    return Partition(dict(sorted(groups.items())), excluded)
