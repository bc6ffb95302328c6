"""File helpers: atomic writes, 8-bit PGM rasters and image loading."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from pmiris.errors import InvalidInputError


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load any Pillow-readable image as an 8-bit grayscale array."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read image {path}: {exc}") from exc
    return arr.copy()


def pgm_bytes(raster: np.ndarray) -> bytes:
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise InvalidInputError("PGM raster must be 2-D")
    header = f"P5\n{raster.shape[1]} {raster.shape[0]}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(raster, dtype=np.uint8).tobytes()


def write_pgm(path: str | os.PathLike, raster: np.ndarray) -> None:
    atomic_write_bytes(path, pgm_bytes(raster))


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode != "L":
                raise InvalidInputError(f"{path} is not an 8-bit grayscale PGM")
            return np.asarray(im, dtype=np.uint8).copy()
    except OSError as exc:
        raise InvalidInputError(f"cannot read PGM {path}: {exc}") from exc


def fmt_float(x: float) -> str:
    """Shortest round-trip text for a float; ``inf``/``nan`` spelled plainly."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()
