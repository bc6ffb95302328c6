"""Manifest ingestion and post-mortem-interval (PMI) class assignment.

PMI classes are 24-hour bins: class ``k`` (1..17) holds PMIs in
``((k - 1) * 24, k * 24]`` and class 18 is open-ended above 408 hours.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from pmiris.errors import InvalidInputError, ManifestError
from pmiris.io import atomic_write_text, csv_text

N_CLASSES = 18
BIN_HOURS = 24.0
MANIFEST_HEADER = ["image_path", "subject_id", "pmi_hours", "eye", "session_id", "source_dataset"]
INVENTORY_HEADER = ["class_index", "lower_hours", "upper_hours", "count"]


class Eye(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    UNKNOWN = "unknown"


_EYE_CODES = {"L": Eye.LEFT, "R": Eye.RIGHT, "U": Eye.UNKNOWN}
_EYE_LETTERS = {v: k for k, v in _EYE_CODES.items()}


class SourceDataset(str, Enum):
    WARSAW_V2 = "warsaw_v2"
    WARSAW_V3 = "warsaw_v3"
    NIJ_DCMEO = "nij_dcmeo"
    SYNTHETIC = "synthetic"
    OTHER = "other"


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    subject_id: str
    pmi_hours: float
    eye: Eye = Eye.UNKNOWN
    source_dataset: SourceDataset = SourceDataset.OTHER
    session_id: str = ""

    def __post_init__(self):
        if not self.image_path:
            raise InvalidInputError("image_path must be non-empty")
        if not math.isfinite(self.pmi_hours) or self.pmi_hours < 0:
            raise InvalidInputError(f"pmi_hours must be finite and >= 0, got {self.pmi_hours!r}")
        try:
            object.__setattr__(self, "eye", Eye(self.eye))
            object.__setattr__(self, "source_dataset", SourceDataset(self.source_dataset))
        except ValueError as exc:
            raise InvalidInputError(str(exc)) from None

    @property
    def sample_id(self) -> str:
        """Identifier used to name per-image artifacts (the file stem)."""
        return Path(self.image_path).stem


@dataclass(frozen=True)
class PmiClass:
    index: int
    lower_hours: float
    upper_hours: float  # math.inf for the last class

    def contains(self, pmi_hours: float) -> bool:
        return self.lower_hours < pmi_hours <= self.upper_hours


PMI_CLASSES: tuple[PmiClass, ...] = tuple(
    PmiClass(k, (k - 1) * BIN_HOURS, k * BIN_HOURS if k < N_CLASSES else math.inf)
    for k in range(1, N_CLASSES + 1)
)


def pmi_class(index: int) -> PmiClass:
    if not 1 <= index <= N_CLASSES:
        raise InvalidInputError(f"PMI class index must be in [1, {N_CLASSES}], got {index}")
    return PMI_CLASSES[index - 1]


def assign_pmi_class(pmi_hours: float) -> PmiClass:
    """Return the PMI class holding ``pmi_hours`` (half-open bins, upper edge inclusive)."""
    try:
        h = float(pmi_hours)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"pmi_hours is not a number: {pmi_hours!r}") from exc
    if not math.isfinite(h) or h <= 0:
        raise InvalidInputError(f"pmi_hours must be finite and > 0, got {pmi_hours!r}")
    k = math.ceil(h / BIN_HOURS)
    return PMI_CLASSES[min(k, N_CLASSES) - 1]


def parse_manifest(lines: Iterable[str], source: str = "<manifest>") -> list[ManifestEntry]:
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError(f"{source}: missing header") from None
    header = [h.strip() for h in header]
    if header and header[0].startswith("﻿"):
        header[0] = header[0][1:]
    if header != MANIFEST_HEADER:
        raise ManifestError(f"{source}: header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}")

    entries = []
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise ManifestError(f"expected {len(MANIFEST_HEADER)} columns, got {len(row)}", row=row_no)
        rec = dict(zip(MANIFEST_HEADER, (c.strip() for c in row)))
        if not rec["image_path"]:
            raise ManifestError("empty image path", row=row_no, field="image_path")
        if not rec["subject_id"]:
            raise ManifestError("empty subject id", row=row_no, field="subject_id")
        try:
            pmi = float(rec["pmi_hours"])
        except ValueError:
            raise ManifestError(f"not a number: {rec['pmi_hours']!r}", row=row_no, field="pmi_hours") from None
        if not math.isfinite(pmi) or pmi < 0:
            raise ManifestError(f"must be finite and >= 0: {rec['pmi_hours']!r}", row=row_no, field="pmi_hours")
        eye = _EYE_CODES.get(rec["eye"].upper())
        if eye is None:
            raise ManifestError(f"must be one of L, R, U: {rec['eye']!r}", row=row_no, field="eye")
        try:
            source_ds = SourceDataset(rec["source_dataset"].lower())
        except ValueError:
            raise ManifestError(
                f"unknown dataset {rec['source_dataset']!r}", row=row_no, field="source_dataset"
            ) from None
        entries.append(
            ManifestEntry(
                image_path=rec["image_path"],
                subject_id=rec["subject_id"],
                pmi_hours=pmi,
                eye=eye,
                source_dataset=source_ds,
                session_id=rec["session_id"],
            )
        )
    return entries


def load_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    """Read a manifest CSV. Row order is preserved; row numbers in errors are 1-based data rows."""
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_manifest(fh, source=str(path))


def manifest_text(entries: Iterable[ManifestEntry]) -> str:
    rows = [
        [e.image_path, e.subject_id, repr(float(e.pmi_hours)), _EYE_LETTERS[e.eye], e.session_id, e.source_dataset.value]
        for e in entries
    ]
    return csv_text(MANIFEST_HEADER, rows)


def write_manifest(path: str | os.PathLike, entries: Iterable[ManifestEntry]) -> None:
    atomic_write_text(path, manifest_text(entries))


def index_manifest(entries: Iterable[ManifestEntry]) -> dict[str, ManifestEntry]:
    """Map sample ids to entries; duplicate ids are rejected."""
    out: dict[str, ManifestEntry] = {}
    for e in entries:
        if e.sample_id in out:
            raise ManifestError(f"duplicate sample id {e.sample_id!r} ({e.image_path})", field="image_path")
        out[e.sample_id] = e
    return out


def inventory(entries: Iterable[ManifestEntry]) -> dict[int, int]:
    counts = {c.index: 0 for c in PMI_CLASSES}
    for e in entries:
        counts[assign_pmi_class(e.pmi_hours).index] += 1
    return counts


def inventory_text(counts: dict[int, int]) -> str:
    rows = [[c.index, c.lower_hours, c.upper_hours, counts.get(c.index, 0)] for c in PMI_CLASSES]
    return csv_text(INVENTORY_HEADER, rows)
