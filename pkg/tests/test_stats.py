import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmiris.dataset import ManifestEntry
from pmiris.errors import InvalidInputError
from pmiris.stats import QUANTILE_LEVELS, d_prime, ecdf, histogram, partition_by_class, summary_stats

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_ecdf_examples():
    assert ecdf([2]) == [(2.0, 1.0)]
    assert ecdf([1, 1, 3]) == [(1.0, 2 / 3), (3.0, 1.0)]
    with pytest.raises(InvalidInputError):
        ecdf([])


def test_ecdf_dkw():
    # DKW: P(sup |F_n - F| > 0.06) <= 2 exp(-2 n 0.06^2) ~ 1.5e-3 at n = 1000
    x = np.random.default_rng(0).random(1000)
    steps = ecdf(x)
    vals = np.array([v for v, _ in steps])
    f = np.array([p for _, p in steps])
    left = np.r_[0.0, f[:-1]]
    assert max(np.abs(f - vals).max(), np.abs(left - vals).max()) < 0.06


@given(st.lists(finite, min_size=1, max_size=80))
def test_ecdf_properties(xs):
    steps = ecdf(xs)
    vals = [v for v, _ in steps]
    fs = [p for _, p in steps]
    assert vals == sorted(set(vals)) and fs == sorted(fs)
    assert fs[-1] == 1.0


def test_d_prime_examples():
    x = np.random.default_rng(0).normal(size=200)
    assert d_prime(x, x) == 0.0
    rng = np.random.default_rng(1)
    assert d_prime(rng.normal(0, 1, 10000), rng.normal(2, 1, 10000)) == pytest.approx(2.0, abs=0.05)
    assert math.isinf(d_prime([0, 0], [1, 1]))
    assert d_prime([3, 3], [3, 3]) == 0.0
    with pytest.raises(InvalidInputError):
        d_prime([1], [1, 2])


@given(st.lists(finite, min_size=2, max_size=30), st.lists(finite, min_size=2, max_size=30),
       st.floats(0.01, 100), st.floats(-100, 100))
def test_d_prime_affine_invariant(g, i, a, b):
    g, i = np.array(g), np.array(i)
    d0 = d_prime(g, i)
    d1 = d_prime(a * g + b, a * i + b)
    if math.isinf(d0) or d0 > 1e6:
        return
    assert d1 == pytest.approx(d0, rel=1e-9, abs=1e-9)


@given(st.lists(finite, min_size=1, max_size=60))
def test_summary_invariants(xs):
    s = summary_stats(xs)
    assert s.sd >= 0 and s.n == len(xs)
    assert all(s.min <= s.quantiles[q] <= s.max for q in QUANTILE_LEVELS)


def test_histogram_degenerate():
    counts, edges = histogram([5, 5, 5], bins=4)
    assert counts.sum() == 3 and edges[0] == 4.5 and edges[-1] == 5.5


def entry(sid, pmi):
    return ManifestEntry(f"{sid}.png", "s", pmi)


def test_partition_examples():
    manifest = {"a": entry("a", 10), "b": entry("b", 30), "c": entry("c", 20)}
    part = partition_by_class(["a", "b", "c"], manifest, key=lambda r: r)
    assert part.groups == {1: ["a", "c"], 2: ["b"]}
    single = partition_by_class(["a", "c"], manifest, key=lambda r: r)
    assert list(single.groups) == [1]
    orphan = partition_by_class(["a", "zz"], manifest, key=lambda r: r)
    assert orphan.exclusions == ["zz"]


def test_partition_probe_class():
    manifest = {"p": entry("p", 10), "g": entry("g", 500)}
    rows = [("p", "g"), ("g", "p")]
    part = partition_by_class(rows, manifest, key=lambda r: r[0])
    assert part.groups == {1: [("p", "g")], 18: [("g", "p")]}


@given(st.lists(st.tuples(st.sampled_from("abcdefx"), st.integers()), max_size=40))
def test_partition_disjoint_cover(rows):
    manifest = {k: entry(k, h) for k, h in zip("abcdef", (5, 30, 30, 100, 409, 0.5))}
    part = partition_by_class(rows, manifest, key=lambda r: r[0])
    grouped = [r for g in part.groups.values() for r in g]
    assert len(grouped) + len(part.exclusions) == len(rows)
    assert sorted(grouped + part.exclusions) == sorted(rows)
    assert all(r[0] == "x" for r in part.exclusions)
