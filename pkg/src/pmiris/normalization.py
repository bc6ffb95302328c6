"""Daugman rubber-sheet normalization of the iris annulus.

Row ``i`` of the output sits at radial fraction ``(i + 0.5) / rows`` on the
straight segment joining the pupil and iris boundary points at angle
``2 * pi * j / cols`` (column ``j``), so non-concentric boundaries are
handled per angle.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pmiris.errors import InvalidInputError, NormalizationError
from pmiris.io import atomic_write_text, read_pgm, write_pgm
from pmiris.segmentation import Circle, SegmentationQuality, SegmentationResult

DEFAULT_ROWS = 64
DEFAULT_COLS = 512
MIN_ROWS = 8
MIN_COLS = 64
MIN_ANNULUS_WIDTH = 2.0


@dataclass(frozen=True, eq=False)
class NormalizedIris:
    texture: np.ndarray = field(repr=False)  # float64, rows x cols, values in [0, 255]
    validity_mask: np.ndarray = field(repr=False)  # bool, same shape
    source_geometry: SegmentationResult | None = None

    def __post_init__(self):
        tex = np.asarray(self.texture, dtype=float)
        mask = np.asarray(self.validity_mask, dtype=bool)
        if tex.ndim != 2 or tex.shape != mask.shape:
            raise InvalidInputError(f"texture {tex.shape} and mask {mask.shape} must be equal 2-D shapes")
        object.__setattr__(self, "texture", tex)
        object.__setattr__(self, "validity_mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.texture.shape


def sample_points(seg: SegmentationResult, rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Image coordinates ``(x, y)``, each ``rows x cols``, of the rubber-sheet grid."""
    theta = 2 * np.pi * np.arange(cols) / cols
    frac = (np.arange(rows) + 0.5) / rows
    px, py = seg.pupil.point(theta)
    ix, iy = seg.iris.point(theta)
    width = np.hypot(ix - px, iy - py)
    if np.any(width < MIN_ANNULUS_WIDTH):
        raise NormalizationError(f"degenerate annulus: width {width.min():.3g} px at some angle")
    x = (1 - frac)[:, None] * px[None, :] + frac[:, None] * ix[None, :]
    y = (1 - frac)[:, None] * py[None, :] + frac[:, None] * iy[None, :]
    # sin(pi) etc. are ~1e-16 off; snap so exact grid points do not floor to the wrong pixel
    x = np.where(np.abs(x - np.rint(x)) < 1e-9, np.rint(x), x)
    y = np.where(np.abs(y - np.rint(y)) < 1e-9, np.rint(y), y)
    return x, y


def normalize(
    image: np.ndarray, seg: SegmentationResult, rows: int = DEFAULT_ROWS, cols: int = DEFAULT_COLS
) -> NormalizedIris:
    """Bilinear rubber-sheet sampling of ``image`` and of the occlusion mask.

    A sample is valid only when all four bilinear neighbours are inside the
    image and usable according to ``seg.occlusion_mask``.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise InvalidInputError("expected a 2-D grayscale image")
    if rows < MIN_ROWS or cols < MIN_COLS:
        raise InvalidInputError(f"grid must be at least {MIN_ROWS}x{MIN_COLS}, got {rows}x{cols}")
    if seg.shape != image.shape:
        raise InvalidInputError(f"segmentation mask {seg.shape} does not match image {image.shape}")
    h, w = image.shape
    x, y = sample_points(seg, rows, cols)

    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx, fy = x - x0, y - y0
    inside = (x0 >= 0) & (y0 >= 0) & (x0 + 1 <= w - 1) & (y0 + 1 <= h - 1)
    xa, ya = np.clip(x0, 0, w - 2), np.clip(y0, 0, h - 2)
    img = image.astype(float)
    tex = (
        img[ya, xa] * (1 - fx) * (1 - fy)
        + img[ya, xa + 1] * fx * (1 - fy)
        + img[ya + 1, xa] * (1 - fx) * fy
        + img[ya + 1, xa + 1] * fx * fy
    )
    usable = seg.occlusion_mask
    valid = inside & usable[ya, xa] & usable[ya, xa + 1] & usable[ya + 1, xa] & usable[ya + 1, xa + 1]
    tex = np.where(inside, np.clip(tex, 0.0, 255.0), 0.0)
    return NormalizedIris(tex, valid, seg)


def _geometry_dict(seg: SegmentationResult | None, shape) -> dict:
    out = {"rows": int(shape[0]), "cols": int(shape[1])}
    if seg is not None:
        out["pupil"] = [seg.pupil.center_x, seg.pupil.center_y, seg.pupil.radius]
        out["iris"] = [seg.iris.center_x, seg.iris.center_y, seg.iris.radius]
        out["image_shape"] = list(seg.shape)
        out["segmentation"] = seg.quality_flag.value
    return out


def save_normalized(stem: str | os.PathLike, norm: NormalizedIris) -> None:
    """Write ``<stem>.tex.pgm``, ``<stem>.mask.pgm`` and ``<stem>.json``."""
    stem = str(stem)
    write_pgm(stem + ".tex.pgm", np.clip(np.rint(norm.texture), 0, 255).astype(np.uint8))
    write_pgm(stem + ".mask.pgm", np.where(norm.validity_mask, 255, 0).astype(np.uint8))
    atomic_write_text(stem + ".json", json.dumps(_geometry_dict(norm.source_geometry, norm.shape), indent=1, sort_keys=True) + "\n")


def load_normalized(stem: str | os.PathLike) -> NormalizedIris:
    """Read the files written by :func:`save_normalized` (texture is 8-bit quantized)."""
    stem = str(stem)
    tex = read_pgm(stem + ".tex.pgm").astype(float)
    mask = read_pgm(stem + ".mask.pgm") > 127
    if tex.shape != mask.shape:
        raise InvalidInputError(f"{stem}: texture and mask sizes differ")
    seg = None
    meta_path = Path(stem + ".json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if "pupil" in meta:
            shape = tuple(meta["image_shape"])
            # geometry only; the image-space mask is not persisted with the normalized texture
            seg = SegmentationResult(
                Circle(*meta["pupil"]),
                Circle(*meta["iris"]),
                np.zeros(shape, dtype=bool),
                SegmentationQuality(meta["segmentation"]),
            )
    return NormalizedIris(tex, mask, seg)
