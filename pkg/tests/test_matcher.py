import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_code_arrays
from oracles import naive_hamming
from pmiris.dataset import Eye, ManifestEntry
from pmiris.encoder import IrisCode, save_code
from pmiris.errors import InsufficientOverlapError, InvalidInputError, MatchError
from pmiris.matcher import (
    EXCLUSION_HEADER,
    SCORE_HEADER,
    Label,
    exclusions_csv,
    hamming,
    match,
    pair_label,
    read_scores,
    score_all,
    scores_csv,
    shift_order,
)

DIMS = (7, 64, 512)


def code(c, m=None):
    return IrisCode.from_arrays(c, np.ones_like(c) if m is None else m)


def roll(c, m, k):
    return IrisCode.from_arrays(np.roll(c, k, axis=2), np.roll(m, k, axis=2))


def test_packed_equals_naive():
    rng = np.random.default_rng(7)
    for _ in range(20):
        ca, ma = random_code_arrays(rng, (3, 8, 64), mask_p=rng.uniform(0.3, 1.0))
        cb, mb = random_code_arrays(rng, (3, 8, 64), mask_p=rng.uniform(0.3, 1.0))
        expect, valid = naive_hamming(ca, ma, cb, mb)
        assert hamming(code(ca, ma), code(cb, mb), min_valid_bits=1) == expect


def test_identity_and_complement():
    rng = np.random.default_rng(1)
    c, m = random_code_arrays(rng, DIMS, mask_p=0.6)
    assert hamming(code(c, m), code(c, m)) == 0.0
    assert hamming(code(c), code(~c)) == 1.0


def test_random_pairs_near_half():
    rng = np.random.default_rng(2)
    scores = [hamming(code(random_code_arrays(rng, DIMS)[0]), code(random_code_arrays(rng, DIMS)[0])) for _ in range(100)]
    assert all(0.47 <= s <= 0.53 for s in scores)
    assert abs(np.mean(scores) - 0.5) <= 0.005


def test_insufficient_overlap_and_dims():
    rng = np.random.default_rng(3)
    c, _ = random_code_arrays(rng, (1, 8, 64))
    m = np.zeros_like(c)
    m[0, :2, :50] = True
    with pytest.raises(InsufficientOverlapError):
        hamming(code(c, m), code(c, m))
    assert hamming(code(c, m), code(c, m), min_valid_bits=100) == 0.0
    with pytest.raises(MatchError):
        hamming(code(c), code(np.zeros((1, 8, 72), bool)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_symmetry_and_bounds(seed):
    rng = np.random.default_rng(seed)
    ca, ma = random_code_arrays(rng, (2, 16, 128), mask_p=0.8)
    cb, mb = random_code_arrays(rng, (2, 16, 128), mask_p=0.8)
    a, b = code(ca, ma), code(cb, mb)
    h = hamming(a, b)
    assert h == hamming(b, a)
    assert 0.0 <= h <= 1.0
    assert match(a, b, max_shift=8).score <= h


@pytest.mark.parametrize("k", [5, -5, 16, -16, 1])
def test_shift_recovery(k):
    rng = np.random.default_rng(abs(k))
    c, m = random_code_arrays(rng, DIMS, mask_p=0.9)
    res = match(code(c, m), roll(c, m, k), max_shift=16)
    assert res.score == 0.0 and res.best_shift == -k


def test_max_shift_zero_is_hamming():
    rng = np.random.default_rng(4)
    a, b = code(random_code_arrays(rng, DIMS)[0]), code(random_code_arrays(rng, DIMS)[0])
    res = match(a, b, max_shift=0)
    assert res.score == hamming(a, b) and res.best_shift == 0


def test_shift_outside_window():
    rng = np.random.default_rng(5)
    c, m = random_code_arrays(rng, (2, 8, 128))
    a, b = code(c, m), roll(c, m, 20)
    res = match(a, b, max_shift=16)
    # oracle: explicit minimum over the window via the naive reference
    window = [naive_hamming(c, m, np.roll(c, 20 + s, axis=2), m)[0] for s in range(-16, 17)]
    assert res.score == min(window) > 0


def test_tie_break():
    base = np.zeros((1, 4, 64), bool)
    base[..., ::4] = True  # period-4 columns
    a = code(base)
    assert match(a, code(np.roll(base, 2, axis=2)), max_shift=16, min_valid_bits=1).best_shift == -2
    per2 = np.zeros((1, 4, 64), bool)
    per2[..., ::2] = True
    assert match(code(per2), code(np.roll(per2, 1, axis=2)), max_shift=16, min_valid_bits=1).best_shift == -1
    assert shift_order(2) == [0, -1, 1, -2, 2]


def test_max_shift_limit():
    c = np.zeros((1, 4, 64), bool)
    with pytest.raises(InvalidInputError):
        match(code(c), code(c), max_shift=17, min_valid_bits=1)


# ---- batch scoring


def entry(sid, subject, eye=Eye.LEFT):
    return ManifestEntry(f"{sid}.png", subject, 10.0, eye)


def make_codes(ids, rng, dims=(2, 16, 128)):
    base = {}
    out = {}
    for sid in ids:
        subj = sid.split("_")[0]
        if subj not in base:
            base[subj] = random_code_arrays(rng, dims)[0]
        noise = rng.random(dims) < 0.05
        out[sid] = code(base[subj] ^ noise)
    return out


def test_two_by_two_counts():
    ids = ["a_1", "a_2", "b_1", "b_2"]
    codes = make_codes(ids, np.random.default_rng(0))
    manifest = {i: entry(i, i.split("_")[0]) for i in ids}
    ss = score_all(codes, codes, manifest, max_shift=4)
    assert len(ss.genuine()) == 2 and len(ss.impostor()) == 4
    assert [(r.probe_id, r.gallery_id) for r in ss.records] == [
        ("a_1", "a_2"), ("a_1", "b_1"), ("a_1", "b_2"), ("a_2", "b_1"), ("a_2", "b_2"), ("b_1", "b_2")
    ]
    assert ss.genuine().max() < ss.impostor().min()


def test_single_image_empty():
    codes = make_codes(["a_1"], np.random.default_rng(0))
    ss = score_all(codes, codes)
    assert ss.records == [] and ss.exclusions == []


def test_labels():
    assert pair_label(entry("x", "s"), entry("y", "s")) is Label.GENUINE
    assert pair_label(entry("x", "s", Eye.LEFT), entry("y", "s", Eye.RIGHT)) is Label.IMPOSTOR
    assert pair_label(entry("x", "s", Eye.UNKNOWN), entry("y", "s", Eye.RIGHT)) is Label.GENUINE
    assert pair_label(entry("x", "s"), entry("y", "t")) is Label.IMPOSTOR
    codes = make_codes(["a_1", "a_2"], np.random.default_rng(0))
    assert score_all(codes, codes).records[0].label is Label.UNKNOWN


def test_exclusions(tmp_path):
    rng = np.random.default_rng(1)
    codes = make_codes(["a_1", "a_2", "b_1"], rng)
    sparse = np.zeros((2, 16, 128), bool)
    sparse[0, 0, :10] = True
    codes["b_2"] = IrisCode.from_arrays(np.zeros((2, 16, 128), bool), sparse)
    paths = {}
    for k, v in codes.items():
        save_code(tmp_path / f"{k}.code", v)
        paths[k] = tmp_path / f"{k}.code"
    (tmp_path / "c_1.code").write_bytes(b"garbage")
    paths["c_1"] = tmp_path / "c_1.code"
    paths["d_1"] = tmp_path / "missing.code"
    manifest = {i: entry(i, i.split("_")[0]) for i in paths if i != "a_2"}
    ss = score_all(paths, paths, manifest, max_shift=4)
    reasons = {(e.probe_id, e.gallery_id): e.reason for e in ss.exclusions}
    assert reasons[("a_1", "b_2")] == "insufficient_overlap"
    assert reasons[("a_1", "c_1")] == "unreadable_code"
    assert reasons[("a_1", "d_1")] == "missing_code"
    assert reasons[("a_1", "a_2")] == "not_in_manifest"
    assert [(r.probe_id, r.gallery_id) for r in ss.records] == [("a_1", "b_1")]
    assert len(ss.records) + len(ss.exclusions) == 15


def test_threads_identical():
    ids = [f"{s}_{i}" for s in "abcd" for i in range(3)]
    codes = make_codes(ids, np.random.default_rng(2))
    manifest = {i: entry(i, i.split("_")[0]) for i in ids}
    one = scores_csv(score_all(codes, codes, manifest, max_shift=8, threads=1))
    four = scores_csv(score_all(codes, codes, manifest, max_shift=8, threads=4))
    assert one == four


def test_probe_gallery_disjoint():
    rng = np.random.default_rng(3)
    codes = make_codes(["a_1", "a_2", "b_1"], rng)
    ss = score_all({"b_1": codes["b_1"]}, {"a_1": codes["a_1"], "a_2": codes["a_2"]})
    assert [(r.probe_id, r.gallery_id) for r in ss.records] == [("b_1", "a_1"), ("b_1", "a_2")]


def test_csv_roundtrip(tmp_path):
    ids = ["a_1", "a_2", "b_1"]
    codes = make_codes(ids, np.random.default_rng(4))
    ss = score_all(codes, codes, {i: entry(i, i[0]) for i in ids}, max_shift=2)
    (tmp_path / "s.csv").write_text(scores_csv(ss))
    back = read_scores(tmp_path / "s.csv")
    assert back.records == ss.records
    assert scores_csv(ss).splitlines()[0] == ",".join(SCORE_HEADER) == "probe_id,gallery_id,score,best_shift,label"
    assert exclusions_csv(ss).splitlines() == [",".join(EXCLUSION_HEADER)]
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(InvalidInputError):
        read_scores(tmp_path / "bad.csv")
