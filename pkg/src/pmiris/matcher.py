"""Masked fractional Hamming distance with circular column-shift search.

Codes are compared on a word-packed layout: each (filter, row) line of
``cols`` bits is packed into bytes, so one column shift of the whole code
is a re-pack of rolled bits and a comparison is XOR/AND plus popcount.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from pmiris.dataset import Eye, ManifestEntry
from pmiris.encoder import IrisCode, load_code
from pmiris.errors import EncoderError, InsufficientOverlapError, InvalidInputError, MatchError
from pmiris.io import csv_text

DEFAULT_MAX_SHIFT = 16
DEFAULT_MIN_VALID_BITS = 512
SCORE_HEADER = ["probe_id", "gallery_id", "score", "best_shift", "label"]
EXCLUSION_HEADER = ["probe_id", "gallery_id", "reason", "detail"]


class Label(str, Enum):
    GENUINE = "genuine"
    IMPOSTOR = "impostor"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class ComparisonScore:
    score: float
    valid_bits: int
    best_shift: int


@dataclass(frozen=True)
class ScoreRecord:
    probe_id: str
    gallery_id: str
    score: float
    best_shift: int
    label: Label


@dataclass(frozen=True)
class Exclusion:
    probe_id: str
    gallery_id: str
    reason: str  # missing_code | unreadable_code | insufficient_overlap | dimension_mismatch | not_in_manifest
    detail: str = ""


@dataclass
class ScoreSet:
    records: list[ScoreRecord]
    exclusions: list[Exclusion]

    def scores(self, label: Label | None = None) -> np.ndarray:
        return np.array([r.score for r in self.records if label is None or r.label == label], dtype=float)

    def genuine(self) -> np.ndarray:
        return self.scores(Label.GENUINE)

    def impostor(self) -> np.ndarray:
        return self.scores(Label.IMPOSTOR)


def _popcount(arr: np.ndarray) -> int:
    return int(np.bitwise_count(arr).sum(dtype=np.int64))


def _check_dims(a: IrisCode, b: IrisCode) -> None:
    if a.dims != b.dims:
        raise MatchError(f"code dimensions differ: {a.dims} vs {b.dims}")


def hamming(a: IrisCode, b: IrisCode, min_valid_bits: int = DEFAULT_MIN_VALID_BITS) -> float:
    """Fraction of disagreeing bits among bits valid in both codes."""
    _check_dims(a, b)
    joint = a.mask_bits & b.mask_bits
    valid = _popcount(joint)
    if valid < max(min_valid_bits, 1):
        raise InsufficientOverlapError(f"only {valid} jointly valid bits (minimum {min_valid_bits})")
    return _popcount((a.bits ^ b.bits) & joint) / valid


def shift_order(max_shift: int) -> list[int]:
    """Shifts in tie-break order: 0, -1, +1, -2, +2, ..."""
    out = [0]
    for s in range(1, max_shift + 1):
        out += [-s, s]
    return out


class PreparedCode:
    """An iris code unpacked once, with packed copies at every column shift.

    ``shifted[s]`` holds the code (and mask) circularly rolled by ``s``
    columns, packed per (filter, row) line.
    """

    def __init__(self, code: IrisCode, shifts: Iterable[int] = (0,)):
        self.dims = code.dims
        self.code = code
        bits, mask = code.code_array(), code.mask_array()
        self.shifted = {}
        for s in shifts:
            self.shifted[s] = (
                np.packbits(np.roll(bits, s, axis=2), axis=2, bitorder="little"),
                np.packbits(np.roll(mask, s, axis=2), axis=2, bitorder="little"),
            )


def _match_prepared(pa: PreparedCode, pb: PreparedCode, shifts: list[int], min_valid_bits: int) -> ComparisonScore:
    if pa.dims != pb.dims:
        raise MatchError(f"code dimensions differ: {pa.dims} vs {pb.dims}")
    bits_a, mask_a = pa.shifted[0]
    best = None
    for s in shifts:
        bits_b, mask_b = pb.shifted[s]
        joint = mask_a & mask_b
        valid = _popcount(joint)
        if valid < max(min_valid_bits, 1):
            continue
        score = _popcount((bits_a ^ bits_b) & joint) / valid
        if best is None or score < best.score:
            best = ComparisonScore(score, valid, s)
    if best is None:
        raise InsufficientOverlapError(f"no shift in +/-{max(abs(s) for s in shifts)} reaches {min_valid_bits} jointly valid bits")
    return best


def match(
    a: IrisCode, b: IrisCode, max_shift: int = DEFAULT_MAX_SHIFT, min_valid_bits: int = DEFAULT_MIN_VALID_BITS
) -> ComparisonScore:
    """Minimum masked Hamming distance over circular column shifts of ``b``.

    ``best_shift`` is the roll (in columns) applied to ``b`` to align it with
    ``a``; if ``b`` is ``a`` rolled by ``k`` columns the result is ``-k``.
    Ties go to the smallest ``|shift|``, then to the negative shift.
    """
    _check_dims(a, b)
    cols = a.dims[2]
    if max_shift < 0 or max_shift > cols // 4:
        raise InvalidInputError(f"max_shift must be in [0, {cols // 4}] for {cols} columns, got {max_shift}")
    shifts = shift_order(max_shift)
    return _match_prepared(PreparedCode(a), PreparedCode(b, shifts), shifts, min_valid_bits)


def pair_label(a: ManifestEntry, b: ManifestEntry) -> Label:
    """Genuine when subjects agree and, where both eyes are known, eyes agree."""
    if a.subject_id != b.subject_id:
        return Label.IMPOSTOR
    if a.eye != Eye.UNKNOWN and b.eye != Eye.UNKNOWN and a.eye != b.eye:
        return Label.IMPOSTOR
    return Label.GENUINE


def comparison_pairs(probe_ids: Iterable[str], gallery_ids: Iterable[str]) -> list[tuple[str, str]]:
    """Ordered (probe, gallery) pairs without self-pairs or mirrored duplicates."""
    probes = sorted(set(probe_ids))
    gallery = sorted(set(gallery_ids))
    pset, gset = set(probes), set(gallery)
    pairs = []
    for p in probes:
        for g in gallery:
            if p == g:
                continue
            if p in gset and g in pset and g < p:
                continue  # the (g, p) orientation is scored instead
            pairs.append((p, g))
    return pairs


CodeSource = IrisCode | str | os.PathLike


def _load(src: CodeSource) -> IrisCode:
    return src if isinstance(src, IrisCode) else load_code(src)


def score_all(
    probes: Mapping[str, CodeSource],
    gallery: Mapping[str, CodeSource],
    manifest: Mapping[str, ManifestEntry] | None = None,
    max_shift: int = DEFAULT_MAX_SHIFT,
    min_valid_bits: int = DEFAULT_MIN_VALID_BITS,
    threads: int = 1,
) -> ScoreSet:
    """Score every probe/gallery pair; problems become exclusions, not errors.

    ``probes`` and ``gallery`` map sample ids to codes or code-file paths.
    When an id appears in both, the pair is scored once (lexicographically
    smaller id as probe). Labels come from ``manifest`` (``unknown``
    without one). Output order is (probe, gallery) lexicographic for any
    ``threads``.
    """
    if max_shift < 0:
        raise InvalidInputError("max_shift must be non-negative")
    shifts = shift_order(max_shift)
    pairs = comparison_pairs(probes, gallery)

    prepared: dict[str, PreparedCode] = {}
    failed: dict[str, Exclusion] = {}
    gallery_ids = set(gallery)
    sources = {**gallery, **probes}

    def prepare(sample_id):
        src = sources[sample_id]
        try:
            code = _load(src)
        except EncoderError as exc:
            reason = "missing_code" if not isinstance(src, IrisCode) and not Path(src).exists() else "unreadable_code"
            return sample_id, None, Exclusion("", "", reason, f"{sample_id}: {exc}")
        if code.dims[2] and max_shift > code.dims[2] // 4:
            return sample_id, None, Exclusion("", "", "invalid_shift", f"{sample_id}: max_shift exceeds cols/4")
        return sample_id, PreparedCode(code, shifts if sample_id in gallery_ids else (0,)), None

    ids = sorted(sources)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for sample_id, prep, exc in pool.map(prepare, ids):
            if prep is None:
                failed[sample_id] = exc
            else:
                prepared[sample_id] = prep

    def score_pair(pair):
        p, g = pair
        for sid in (p, g):
            if sid in failed:
                e = failed[sid]
                return None, Exclusion(p, g, e.reason, e.detail)
        label = Label.UNKNOWN
        if manifest is not None:
            if p not in manifest or g not in manifest:
                missing = p if p not in manifest else g
                return None, Exclusion(p, g, "not_in_manifest", missing)
            label = pair_label(manifest[p], manifest[g])
        try:
            res = _match_prepared(prepared[p], prepared[g], shifts, min_valid_bits)
        except InsufficientOverlapError as exc:
            return None, Exclusion(p, g, "insufficient_overlap", str(exc))
        except MatchError as exc:
            return None, Exclusion(p, g, "dimension_mismatch", str(exc))
        return ScoreRecord(p, g, res.score, res.best_shift, label), None

    records, exclusions = [], []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for rec, exc in pool.map(score_pair, pairs, chunksize=64):
            if rec is not None:
                records.append(rec)
            else:
                exclusions.append(exc)
    return ScoreSet(records, exclusions)


def scores_csv(scores: ScoreSet) -> str:
    rows = [[r.probe_id, r.gallery_id, r.score, r.best_shift, r.label.value] for r in scores.records]
    return csv_text(SCORE_HEADER, rows)


def exclusions_csv(scores: ScoreSet) -> str:
    rows = [[e.probe_id, e.gallery_id, e.reason, e.detail] for e in scores.exclusions]
    return csv_text(EXCLUSION_HEADER, rows)


def read_scores(path: str | os.PathLike) -> ScoreSet:
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORE_HEADER:
            raise InvalidInputError(f"{path}: score header must be {','.join(SCORE_HEADER)}")
        for n, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                records.append(ScoreRecord(row[0], row[1], float(row[2]), int(row[3]), Label(row[4])))
            except (ValueError, IndexError) as exc:
                raise InvalidInputError(f"{path}: row {n}: {exc}") from None
    return ScoreSet(records, [])
