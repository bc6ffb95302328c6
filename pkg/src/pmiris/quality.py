"""ISO/IEC 29794-6 style iris image quality metrics.

The twelve metric names, units and ranges follow the standard's naming;
the formulas are fixed substitutes documented per metric below. A metric
that cannot be computed is reported as the sentinel 255 with its computed
flag cleared.

Units: ``grey_scale_utilization`` is in bits (0..8), ``iris_radius`` in
pixels, ``motion_blur`` is an axis ratio (>= 1); everything else is on a
0..100 scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import ndimage

from pmiris.errors import InvalidInputError
from pmiris.io import csv_text
from pmiris.segmentation import SegmentationResult

SENTINEL = 255.0

METRICS = (
    "usable_iris_area",
    "iris_sclera_contrast",
    "iris_pupil_contrast",
    "pupil_boundary_circularity",
    "grey_scale_utilization",
    "iris_radius",
    "pupil_iris_ratio",
    "iris_pupil_concentricity",
    "margin_adequacy",
    "sharpness",
    "motion_blur",
    "overall_quality",
)
PERCENT_METRICS = (
    "usable_iris_area",
    "iris_sclera_contrast",
    "iris_pupil_contrast",
    "pupil_boundary_circularity",
    "pupil_iris_ratio",
    "iris_pupil_concentricity",
    "margin_adequacy",
    "sharpness",
)
QUALITY_HEADER = ["image_id"] + [m.upper() for m in METRICS]

MIN_BAND_PIXELS = 50
SHARPNESS_HALF_POWER = 1800.0
CIRCULARITY_ANGLES = 256
CIRCULARITY_HARMONICS = 8


def _log_kernel(size: int = 5, sigma: float = 1.4) -> np.ndarray:
    half = size // 2
    y, x = np.mgrid[-half : half + 1, -half : half + 1].astype(float)
    r2 = (x * x + y * y) / (2 * sigma * sigma)
    k = -(1 - r2) * np.exp(-r2)
    k -= k.mean()
    return k / np.abs(k).sum() * 16.0


# 5x5 Laplacian of Gaussian, sigma 1.4, sampled on the integer grid, made
# zero-sum and scaled to an L1 norm of 16 (centre weight ~ -4.2, i.e. the
# scale of a classic integer 5x5 LoG mask). Centre-negative.
LOG_KERNEL = _log_kernel()


@dataclass
class QualityRecord:
    usable_iris_area: float = SENTINEL
    iris_sclera_contrast: float = SENTINEL
    iris_pupil_contrast: float = SENTINEL
    pupil_boundary_circularity: float = SENTINEL
    grey_scale_utilization: float = SENTINEL
    iris_radius: float = SENTINEL
    pupil_iris_ratio: float = SENTINEL
    iris_pupil_concentricity: float = SENTINEL
    margin_adequacy: float = SENTINEL
    sharpness: float = SENTINEL
    motion_blur: float = SENTINEL
    overall_quality: float = SENTINEL
    computed: dict = field(default_factory=lambda: {m: False for m in METRICS})

    def set(self, name: str, value: float | None) -> None:
        if value is None or not math.isfinite(value):
            setattr(self, name, SENTINEL)
            self.computed[name] = False
        else:
            setattr(self, name, float(value))
            self.computed[name] = True

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "computed"}


def entropy_bits(histogram) -> float:
    """Shannon entropy (base 2) of a histogram of counts; ``0 log 0 = 0``."""
    h = np.asarray(histogram, dtype=float)
    if h.ndim != 1 or np.any(h < 0) or not np.all(np.isfinite(h)):
        raise InvalidInputError("histogram must be a 1-D array of non-negative counts")
    total = h.sum()
    if total <= 0:
        raise InvalidInputError("histogram is empty")
    p = h[h > 0] / total
    return float(max(0.0, -np.sum(p * np.log2(p))))


def grey_scale_utilization(image: np.ndarray) -> float:
    hist = np.bincount(np.asarray(image, dtype=np.uint8).ravel(), minlength=256)
    return entropy_bits(hist)


def _distances(shape, circle):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    return np.hypot(xx - circle.center_x, yy - circle.center_y)


def usable_iris_area(seg: SegmentationResult) -> float | None:
    ann = seg.annulus()
    total = int(ann.sum())
    if total == 0:
        return None
    return 100.0 * int((seg.occlusion_mask & ann).sum()) / total


def _contrast(bright: np.ndarray, dark: np.ndarray) -> float | None:
    if bright.size < MIN_BAND_PIXELS or dark.size < MIN_BAND_PIXELS:
        return None
    mb, md = float(np.median(bright)), float(np.median(dark))
    if mb + md <= 0:
        return None
    return float(np.clip(100.0 * (mb - md) / (mb + md), 0.0, 100.0))


def iris_sclera_contrast(image: np.ndarray, seg: SegmentationResult) -> float | None:
    """Outer iris band (90-100% of the iris radius, usable pixels) against a
    sclera band at 110-130% of the iris radius."""
    d = _distances(image.shape, seg.iris)
    r = seg.iris.radius
    iris_band = (d >= 0.9 * r) & (d <= r) & seg.occlusion_mask
    sclera_band = (d >= 1.1 * r) & (d <= 1.3 * r)
    return _contrast(image[sclera_band].astype(float), image[iris_band].astype(float))


def iris_pupil_contrast(image: np.ndarray, seg: SegmentationResult) -> float | None:
    d = _distances(image.shape, seg.pupil)
    r = seg.pupil.radius
    pupil = d < r
    iris_band = (d > r) & (d <= 1.1 * r) & seg.occlusion_mask
    return _contrast(image[iris_band].astype(float), image[pupil].astype(float))


def pupil_boundary_radii(image: np.ndarray, seg: SegmentationResult, n_angles: int = CIRCULARITY_ANGLES):
    """Strongest dark-to-bright radial step along rays from the pupil centre.

    Returns ``None`` when the search band leaves the image.
    """
    p = seg.pupil
    h, w = image.shape
    r_hi = min(1.5 * p.radius, 0.5 * (p.radius + seg.iris.radius))
    if p.center_x - r_hi < 0 or p.center_y - r_hi < 0 or p.center_x + r_hi > w - 1 or p.center_y + r_hi > h - 1:
        return None
    radii = np.arange(0.5 * p.radius, r_hi, 0.25)
    if radii.size < 8:
        return None
    theta = 2 * np.pi * np.arange(n_angles) / n_angles
    xs = p.center_x + radii[None, :] * np.cos(theta)[:, None]
    ys = p.center_y - radii[None, :] * np.sin(theta)[:, None]
    img = ndimage.gaussian_filter(image.astype(float), 1.0)
    prof = ndimage.map_coordinates(img, [ys.ravel(), xs.ravel()], order=1).reshape(xs.shape)
    deriv = np.diff(prof, axis=1)
    k = np.argmax(deriv, axis=1)
    rmid = 0.5 * (radii[1:] + radii[:-1])
    out = rmid[k].copy()
    inner = (k > 0) & (k < deriv.shape[1] - 1)
    rows = np.nonzero(inner)[0]
    a, b, c = deriv[rows, k[rows] - 1], deriv[rows, k[rows]], deriv[rows, k[rows] + 1]
    denom = a - 2 * b + c
    ok = denom < 0
    off = np.zeros_like(denom)
    off[ok] = np.clip(0.5 * (a[ok] - c[ok]) / denom[ok], -0.5, 0.5)
    out[rows] += off * 0.25
    return out


def pupil_boundary_circularity(image: np.ndarray, seg: SegmentationResult) -> float | None:
    """``100 * max(0, 1 - sum_{m=1..8} |c_m|^2 / |c_0|^2)`` over the DFT of r(theta)."""
    radii = pupil_boundary_radii(image, seg)
    if radii is None:
        return None
    c = np.fft.rfft(radii)
    c0 = abs(c[0]) ** 2
    if c0 <= 0:
        return None
    ratio = float(np.sum(np.abs(c[1 : CIRCULARITY_HARMONICS + 1]) ** 2) / c0)
    return 100.0 * max(0.0, 1.0 - ratio)


def margin_adequacy(shape: tuple[int, int], seg: SegmentationResult) -> float:
    h, w = shape
    c = seg.iris
    margins = (c.center_x - c.radius, (w - 1) - (c.center_x + c.radius), c.center_y - c.radius, (h - 1) - (c.center_y + c.radius))
    return 100.0 * min(1.0, max(0.0, min(margins)) / (0.6 * c.radius))


def sharpness(image: np.ndarray, seg: SegmentationResult, half_power: float = SHARPNESS_HALF_POWER) -> float | None:
    """``100 F / (F + c)``, F the mean squared LoG response over usable iris
    pixels at least two pixels (the kernel radius) away from any unusable one."""
    resp = ndimage.correlate(image.astype(float), LOG_KERNEL, mode="nearest")
    region = ndimage.binary_erosion(seg.occlusion_mask, structure=np.ones((5, 5), bool))
    if not region.any():
        return None
    f = float(np.mean(resp[region] ** 2))
    return 100.0 * f / (f + half_power)


def motion_blur(image: np.ndarray, window: int = 24) -> float | None:
    """Axis ratio of the half-maximum lobe of the gradient autocorrelation.

    The autocorrelation of the gradient field approximates that of the
    point-spread function's derivative; directional blur stretches its
    central lobe along the blur direction. The lobe (connected region >= 0.5
    of the peak around zero lag) is summarised by its second moments, each
    pixel counted as a unit square (variance 1/12 per axis), so a one-pixel
    lobe gives exactly 1.
    """
    img = np.asarray(image, dtype=float)
    gy, gx = np.gradient(img)
    gx -= gx.mean()
    gy -= gy.mean()
    h, w = img.shape
    shape = (2 * h, 2 * w)
    power = np.abs(np.fft.rfft2(gx, shape)) ** 2 + np.abs(np.fft.rfft2(gy, shape)) ** 2
    acf = np.fft.irfft2(power, shape)
    peak = acf[0, 0]
    if not peak > 1e-12 * h * w:
        return None
    acf = np.fft.fftshift(acf / peak)
    cy, cx = h, w
    win = acf[cy - window : cy + window + 1, cx - window : cx + window + 1]
    labels, _ = ndimage.label(win >= 0.5)
    lobe = labels == labels[window, window]
    ys, xs = np.nonzero(lobe)
    ys = ys - ys.mean()
    xs = xs - xs.mean()
    cov = np.array([[np.mean(xs * xs), np.mean(xs * ys)], [np.mean(xs * ys), np.mean(ys * ys)]]) + np.eye(2) / 12.0
    lo, hi = np.linalg.eigvalsh(cov)
    return float(math.sqrt(hi / lo))


def overall_quality(rec: QualityRecord) -> float | None:
    """100 x geometric mean of the computed 0..100 metrics (as fractions); needs >= 4."""
    parts = [getattr(rec, m) / 100.0 for m in PERCENT_METRICS if rec.computed[m]]
    if len(parts) < 4:
        return None
    parts = np.clip(parts, 0.0, 1.0)
    if np.any(parts == 0):
        return 0.0
    return float(100.0 * np.exp(np.mean(np.log(parts))))


def quality_record(image: np.ndarray, seg: SegmentationResult | None = None) -> QualityRecord:
    """All twelve metrics for one image; geometry metrics need ``seg``."""
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise InvalidInputError("expected a non-empty 2-D grayscale image")
    if seg is not None and seg.shape != image.shape:
        raise InvalidInputError(f"segmentation mask {seg.shape} does not match image {image.shape}")
    image = np.clip(image, 0, 255).astype(np.uint8)
    rec = QualityRecord()
    rec.set("grey_scale_utilization", grey_scale_utilization(image))
    rec.set("motion_blur", motion_blur(image))
    if seg is not None:
        p, i = seg.pupil, seg.iris
        rec.set("usable_iris_area", usable_iris_area(seg))
        rec.set("iris_sclera_contrast", iris_sclera_contrast(image, seg))
        rec.set("iris_pupil_contrast", iris_pupil_contrast(image, seg))
        rec.set("pupil_boundary_circularity", pupil_boundary_circularity(image, seg))
        rec.set("iris_radius", i.radius)
        rec.set("pupil_iris_ratio", 100.0 * p.radius / i.radius)
        d = math.hypot(p.center_x - i.center_x, p.center_y - i.center_y)
        rec.set("iris_pupil_concentricity", float(np.clip(100.0 * (1.0 - d / i.radius), 0.0, 100.0)))
        rec.set("margin_adequacy", margin_adequacy(image.shape, seg))
        rec.set("sharpness", sharpness(image, seg))
    rec.set("overall_quality", overall_quality(rec))
    return rec


def quality_csv(rows: list[tuple[str, QualityRecord]]) -> str:
    body = [[image_id] + [getattr(rec, m) for m in METRICS] for image_id, rec in rows]
    return csv_text(QUALITY_HEADER, body)
