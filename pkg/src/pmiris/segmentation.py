"""Pupil/iris boundary detection and segmentation sidecar files.

Detection is a coarse-to-fine integro-differential search: for every
candidate centre the mean intensity along circles of increasing radius is
differentiated with respect to the radius, and the candidate with the
strongest positive (dark-to-bright) step wins. The pupil is searched first
around the darkest blob; the iris is then searched near the pupil centre on
two lateral arcs, which keeps upper/lower eyelids out of the contour.

Angles follow the image convention used across the package: 0 along +x,
increasing counter-clockwise as displayed (so a point at angle ``t`` is
``(cx + r cos t, cy - r sin t)`` with ``y`` pointing down).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from pmiris.errors import InvalidInputError, SegmentationError
from pmiris.io import atomic_write_text, read_pgm, write_pgm

MIN_IMAGE_SIZE = 64


class SegmentationQuality(str, Enum):
    DETECTED = "detected"
    INGESTED = "ingested"
    FAILED = "failed"


@dataclass(frozen=True)
class Circle:
    center_x: float
    center_y: float
    radius: float

    def __post_init__(self):
        vals = (self.center_x, self.center_y, self.radius)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"circle parameters must be finite: {vals}")
        if self.radius <= 0:
            raise InvalidInputError(f"circle radius must be positive, got {self.radius}")

    def check_bounds(self, shape: tuple[int, int]) -> None:
        h, w = shape
        r = self.radius
        if not (-r <= self.center_x <= w - 1 + r and -r <= self.center_y <= h - 1 + r):
            raise InvalidInputError(f"circle centre ({self.center_x}, {self.center_y}) too far outside a {w}x{h} image")

    def point(self, theta):
        return self.center_x + self.radius * np.cos(theta), self.center_y - self.radius * np.sin(theta)


def annulus_mask(shape: tuple[int, int], pupil: Circle, iris: Circle) -> np.ndarray:
    """Pixels whose centres lie outside the pupil disk and inside the iris disk."""
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    d_pupil = np.hypot(xx - pupil.center_x, yy - pupil.center_y)
    d_iris = np.hypot(xx - iris.center_x, yy - iris.center_y)
    return (d_pupil > pupil.radius) & (d_iris <= iris.radius)


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    pupil: Circle
    iris: Circle
    occlusion_mask: np.ndarray = field(repr=False)  # bool, True = usable iris texture
    quality_flag: SegmentationQuality = SegmentationQuality.DETECTED

    def __post_init__(self):
        if self.pupil.radius >= self.iris.radius:
            raise InvalidInputError(
                f"pupil radius {self.pupil.radius} must be smaller than iris radius {self.iris.radius}"
            )
        d = math.hypot(self.pupil.center_x - self.iris.center_x, self.pupil.center_y - self.iris.center_y)
        if d >= self.iris.radius:
            raise InvalidInputError("pupil centre lies outside the iris circle")
        mask = np.asarray(self.occlusion_mask)
        if mask.ndim != 2:
            raise InvalidInputError("occlusion mask must be 2-D")
        object.__setattr__(self, "occlusion_mask", mask.astype(bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.occlusion_mask.shape

    def annulus(self) -> np.ndarray:
        return annulus_mask(self.shape, self.pupil, self.iris)


# --------------------------------------------------------------------------
# detection


@dataclass(frozen=True)
class SegmenterConfig:
    pupil_radius_range: tuple[float, float] = (0.10, 0.40)  # fraction of min image dimension
    iris_to_pupil_range: tuple[float, float] = (1.5, 4.0)
    pupil_window: float = 0.15  # half-width of the pupil centre search, fraction of min dimension
    iris_window: float = 0.10  # half-width of the iris centre search, fraction of pupil radius
    smoothing_sigma: float = 1.5
    min_edge_strength: float = 2.0  # iris boundary, grey levels per pixel
    min_pupil_edge: float = 0.02  # pupil boundary, log-intensity per pixel
    occlusion_k: float = 2.5
    iris_arcs_deg: tuple[tuple[float, float], ...] = ((-45.0, 15.0), (165.0, 225.0))


DEFAULT_CONFIG = SegmenterConfig()


def _radial_derivative(img, cy, cx, radii, angles, log=False):
    """d/dr of circular-contour mean intensity for each centre.

    With ``log`` the derivative is taken of ``log(1 + mean)``, which rewards
    the relative step of a dark disk over a brighter surround.

    Returns an array ``(n_centres, len(radii) - 1)``; entry ``k`` belongs to
    radius ``(radii[k] + radii[k + 1]) / 2``.
    """
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    xs = cx[:, None, None] + radii[None, :, None] * cos_a[None, None, :]
    ys = cy[:, None, None] - radii[None, :, None] * sin_a[None, None, :]
    vals = ndimage.map_coordinates(img, [ys.ravel(), xs.ravel()], order=1, mode="nearest")
    means = vals.reshape(xs.shape).mean(axis=2)
    if log:
        means = np.log1p(means)
    deriv = np.diff(means, axis=1) / np.diff(radii)[None, :]
    return ndimage.gaussian_filter1d(deriv, 1.0, axis=1, mode="nearest")


def _best(scores, cy, cx, rmid):
    """Argmax with fixed tie-breaking: lowest (cy, cx, r) among equal scores."""
    n_c, n_r = scores.shape
    order = np.lexsort((np.broadcast_to(rmid, scores.shape).ravel(), np.repeat(cx, n_r), np.repeat(cy, n_r)))
    flat = scores.ravel()[order]
    k = order[int(np.argmax(flat))]
    ci, ri = divmod(int(k), n_r)
    return float(scores[ci, ri]), float(cy[ci]), float(cx[ci]), ci, ri


def _refine_radius(profile, rmid, k):
    """Parabolic peak interpolation along the radius axis."""
    if 0 < k < len(profile) - 1:
        a, b, c = profile[k - 1], profile[k], profile[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            off = 0.5 * (a - c) / denom
            step = rmid[k + 1] - rmid[k]
            return float(rmid[k] + np.clip(off, -0.5, 0.5) * step)
    return float(rmid[k])


def _grid(center, half, step, lo, hi):
    vals = np.arange(center - half, center + half + 1e-9, step)
    vals = vals[(vals >= lo) & (vals <= hi)]
    return vals if vals.size else np.array([float(np.clip(center, lo, hi))])


def _search(img, cy0, cx0, half, steps, radii, angles, log=False):
    """Coarse-to-fine search over (centre, radius).

    The first level samples every third contour angle; later levels narrow
    the radius range to a band around the previous best radius.
    """
    h, w = img.shape
    best = None
    for level, step in enumerate(steps):
        if best is not None:
            band = radii[np.abs(radii - best[3]) <= 6.0]
            if band.size >= 4:
                radii = band
        rmid = 0.5 * (radii[1:] + radii[:-1])
        ys = _grid(cy0, half, step, 0, h - 1)
        xs = _grid(cx0, half, step, 0, w - 1)
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        cy, cx = gy.ravel(), gx.ravel()
        scores = _radial_derivative(img, cy, cx, radii, angles[::3] if level == 0 else angles, log)
        score, cy0, cx0, ci, ri = _best(scores, cy, cx, rmid)
        best = (score, cy0, cx0, _refine_radius(scores[ci], rmid, ri))
        half = step
    return best


def _occlusion(image: np.ndarray, annulus: np.ndarray, k: float) -> np.ndarray:
    vals = image[annulus].astype(float)
    if vals.size == 0:
        return annulus.copy()
    med = float(np.median(vals))
    # spread from the lower half only: bright occluders inflate the upper tail
    robust_sd = max((med - float(np.percentile(vals, 25))) / 0.6745, 1.0)
    return annulus & (image.astype(float) <= med + k * robust_sd)


def segment(image: np.ndarray, config: SegmenterConfig = DEFAULT_CONFIG) -> SegmentationResult:
    """Detect pupil and iris circles plus an occlusion mask on an 8-bit image."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise InvalidInputError("expected a 2-D grayscale image")
    h, w = image.shape
    mind = min(h, w)
    if mind < MIN_IMAGE_SIZE:
        raise InvalidInputError(f"image too small for segmentation: {w}x{h}")
    img = ndimage.gaussian_filter(image.astype(float), config.smoothing_sigma)

    # pupil: darkest blob, then contour search
    blob = ndimage.gaussian_filter(image.astype(float), 0.04 * mind)
    gy, gx = np.unravel_index(int(np.argmin(blob)), blob.shape)
    r_lo, r_hi = config.pupil_radius_range[0] * mind, config.pupil_radius_range[1] * mind
    radii = np.arange(math.floor(r_lo) - 1.0, math.ceil(r_hi) + 2.0)
    angles = np.linspace(0, 2 * np.pi, 96, endpoint=False)
    p_score, pcy, pcx, pr = _search(img, float(gy), float(gx), config.pupil_window * mind, (4.0, 1.0, 0.5), radii, angles, log=True)
    if p_score < config.min_pupil_edge:
        raise SegmentationError(f"no pupil boundary found (edge strength {p_score:.3g})")
    # the log contrast biases the edge toward the dark side; re-peak on linear intensity
    band = np.arange(pr - 4.0, pr + 4.01, 0.5)
    prof = _radial_derivative(img, np.array([pcy]), np.array([pcx]), band, angles)[0]
    k = int(np.argmax(prof))
    pr = float(np.clip(_refine_radius(prof, 0.5 * (band[1:] + band[:-1]), k), r_lo, r_hi))

    lo, hi = config.iris_to_pupil_range
    radii = np.arange(math.floor(lo * pr) - 1.0, math.ceil(hi * pr) + 2.0)
    angles = np.concatenate(
        [np.deg2rad(np.linspace(a, b, 48, endpoint=False)) for a, b in config.iris_arcs_deg]
    )
    half = max(3.0, config.iris_window * pr)
    i_score, icy, icx, ir = _search(img, pcy, pcx, half, (2.0, 1.0, 0.5), radii, angles)
    if i_score < config.min_edge_strength:
        raise SegmentationError(f"no iris boundary found (edge strength {i_score:.3g})")

    try:
        pupil = Circle(pcx, pcy, pr)
        iris = Circle(icx, icy, float(np.clip(ir, lo * pr, hi * pr)))
        ann = annulus_mask(image.shape, pupil, iris)
        return SegmentationResult(pupil, iris, _occlusion(image, ann, config.occlusion_k), SegmentationQuality.DETECTED)
    except InvalidInputError as exc:
        raise SegmentationError(f"implausible circle pair: {exc}") from exc


# --------------------------------------------------------------------------
# sidecar files


def write_segmentation(path: str | os.PathLike, seg: SegmentationResult, mask_path: str | os.PathLike | None = None) -> None:
    """Write a sidecar plus its mask PGM (default: ``<path>.mask.pgm`` next to it)."""
    path = Path(path)
    mask_path = Path(mask_path) if mask_path is not None else path.with_name(path.name + ".mask.pgm")
    write_pgm(mask_path, np.where(seg.occlusion_mask, 255, 0).astype(np.uint8))
    try:
        ref = mask_path.relative_to(path.parent)
    except ValueError:
        ref = mask_path.resolve()
    p, i = seg.pupil, seg.iris
    text = (
        f"pupil {p.center_x!r} {p.center_y!r} {p.radius!r}\n"
        f"iris {i.center_x!r} {i.center_y!r} {i.radius!r}\n"
        f"mask {ref.as_posix()}\n"
    )
    atomic_write_text(path, text)


def _parse_circle(tokens, line_no):
    if len(tokens) != 4:
        raise InvalidInputError(f"line {line_no}: expected '{tokens[0]} cx cy r'")
    try:
        return Circle(*(float(t) for t in tokens[1:]))
    except ValueError:
        raise InvalidInputError(f"line {line_no}: non-numeric circle parameters") from None


def ingest_segmentation(image: np.ndarray, path: str | os.PathLike) -> SegmentationResult:
    """Load a segmentation sidecar and validate it against ``image``.

    The usable mask is intersected with the pupil/iris annulus so that no pixel
    inside the pupil or outside the iris is ever marked usable.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InvalidInputError(f"cannot read sidecar {path}: {exc}") from exc
    fields = {}
    for n, line in enumerate(lines, start=1):
        tokens = line.split(maxsplit=1 if line.startswith("mask") else -1)
        if not tokens:
            continue
        key = tokens[0]
        if key in fields:
            raise InvalidInputError(f"line {n}: duplicate '{key}' entry")
        if key in ("pupil", "iris"):
            fields[key] = _parse_circle(tokens, n)
        elif key == "mask":
            if len(tokens) != 2:
                raise InvalidInputError(f"line {n}: expected 'mask <path>'")
            fields[key] = tokens[1].strip()
        else:
            raise InvalidInputError(f"line {n}: unknown entry '{key}'")
    missing = {"pupil", "iris", "mask"} - fields.keys()
    if missing:
        raise InvalidInputError(f"sidecar {path} lacks {', '.join(sorted(missing))}")

    mask_path = Path(fields["mask"])
    if not mask_path.is_absolute():
        mask_path = path.parent / mask_path
    raw = read_pgm(mask_path)
    image = np.asarray(image)
    if raw.shape != image.shape:
        raise InvalidInputError(
            f"mask is {raw.shape[1]}x{raw.shape[0]} but image is {image.shape[1]}x{image.shape[0]}"
        )
    pupil, iris = fields["pupil"], fields["iris"]
    pupil.check_bounds(image.shape)
    iris.check_bounds(image.shape)
    usable = (raw > 127) & annulus_mask(image.shape, pupil, iris)
    return SegmentationResult(pupil, iris, usable, SegmentationQuality.INGESTED)
