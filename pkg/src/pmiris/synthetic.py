"""Rendered eye images with known geometry.

Used as ground-truth oracles by the test-suite and for small demo corpora.
Iris texture is defined in rubber-sheet coordinates (radial fraction,
angle) so that a subject's pattern survives pupil dilation, rotation and
small centre shifts the way real iris texture is expected to.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from pmiris.dataset import Eye, ManifestEntry, SourceDataset, write_manifest
from pmiris.segmentation import Circle, SegmentationQuality, SegmentationResult, annulus_mask


@dataclass(frozen=True)
class IrisTexture:
    """Sum of random sinusoids in (radial fraction, angle); periodic in angle."""

    amplitudes: np.ndarray
    angular_freq: np.ndarray
    radial_freq: np.ndarray
    phases: np.ndarray

    @classmethod
    def random(cls, seed: int, n_waves: int = 40, amplitude: float = 35.0, max_angular_freq: int = 48) -> "IrisTexture":
        rng = np.random.default_rng(seed)
        amps = rng.uniform(0.3, 1.0, n_waves)
        amps *= amplitude / np.sqrt(0.5 * np.sum(amps**2))
        return cls(
            amplitudes=amps,
            angular_freq=rng.integers(2, max_angular_freq + 1, n_waves).astype(float),
            radial_freq=rng.uniform(0.5, 4.0, n_waves),
            phases=rng.uniform(0, 2 * np.pi, n_waves),
        )

    def __call__(self, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
        out = np.zeros(np.broadcast(rho, theta).shape)
        for a, fa, fr, ph in zip(self.amplitudes, self.angular_freq, self.radial_freq, self.phases):
            out += a * np.cos(fa * theta + np.pi * fr * rho + ph)
        return out


def _coverage(dist: np.ndarray, radius: float) -> np.ndarray:
    return np.clip(radius - dist + 0.5, 0.0, 1.0)


def render_eye(
    shape: tuple[int, int] = (256, 256),
    pupil: Circle = Circle(128.0, 128.0, 40.0),
    iris: Circle = Circle(128.0, 128.0, 100.0),
    pupil_level: float = 30.0,
    iris_level: float = 110.0,
    sclera_level: float = 220.0,
    texture=None,
    rotation: float = 0.0,
    noise_sigma: float = 0.0,
    grain: float = 0.0,
    eyelid_rows: int = 0,
    eyelid_level: float = 240.0,
    seed: int = 0,
) -> np.ndarray:
    """Render an 8-bit eye image with anti-aliased circular boundaries.

    ``texture(rho, theta)`` adds to the iris level, with ``rho`` in [0, 1]
    from pupil to limbus and ``theta`` the package angle convention measured
    about the pupil centre, minus ``rotation`` (radians, counter-clockwise).
    ``grain`` adds a fine, high-pass random texture (white noise minus its
    3x3 local mean, scaled to standard deviation ``grain``) inside the iris
    only; ``noise_sigma`` adds white noise everywhere (sensor noise). The top
    ``eyelid_rows`` rows are painted ``eyelid_level``.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    dxp, dyp = xx - pupil.center_x, yy - pupil.center_y
    d_pupil = np.hypot(dxp, dyp)
    d_iris = np.hypot(xx - iris.center_x, yy - iris.center_y)

    iris_val = np.full(shape, float(iris_level))
    if texture is not None:
        theta = np.arctan2(-dyp, dxp)
        # distance from the pupil centre to the limbus along each ray
        ox, oy = pupil.center_x - iris.center_x, pupil.center_y - iris.center_y
        ux, uy = np.cos(theta), -np.sin(theta)
        b = ox * ux + oy * uy
        limbus = -b + np.sqrt(np.maximum(b * b - (ox * ox + oy * oy - iris.radius**2), 0.0))
        rho = np.clip((d_pupil - pupil.radius) / np.maximum(limbus - pupil.radius, 1e-6), 0.0, 1.0)
        iris_val = iris_val + texture(rho, theta - rotation)
    if grain > 0:
        n = rng.normal(0.0, 1.0, shape)
        n -= ndimage.uniform_filter(n, 3, mode="wrap")
        iris_val = iris_val + grain * n / n.std()

    a_iris = _coverage(d_iris, iris.radius)
    a_pupil = _coverage(d_pupil, pupil.radius)
    img = sclera_level * (1 - a_iris) + iris_val * a_iris
    img = img * (1 - a_pupil) + pupil_level * a_pupil
    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, shape)
    if eyelid_rows > 0:
        img[:eyelid_rows, :] = eyelid_level
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_polar(shape, center: tuple[float, float], func, rotation: float = 0.0) -> np.ndarray:
    """Render ``func(r, theta - rotation)`` about ``center``; no boundaries at all.

    Useful where interpolation across sharp edges would swamp the quantity
    under test (e.g. rotation equivariance of the rubber sheet).
    """
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    dx, dy = xx - center[0], yy - center[1]
    vals = func(np.hypot(dx, dy), np.arctan2(-dy, dx) - rotation)
    return np.clip(np.rint(vals), 0, 255).astype(np.uint8)


def truth_segmentation(shape: tuple[int, int], pupil: Circle, iris: Circle) -> SegmentationResult:
    """Ground-truth segmentation with a fully usable annulus."""
    return SegmentationResult(pupil, iris, annulus_mask(shape, pupil, iris), SegmentationQuality.INGESTED)


def random_geometry(rng: np.random.Generator, shape: tuple[int, int] = (256, 256)) -> tuple[Circle, Circle]:
    """Random pupil/iris pair that fits the detector's search ranges with margin."""
    h, w = shape
    mind = min(h, w)
    pr = rng.uniform(0.13, 0.2) * mind
    ir = rng.uniform(max(1.8 * pr, 0.3 * mind), min(3.2 * pr, 0.44 * mind))
    icx = rng.uniform(w / 2 - 0.04 * mind, w / 2 + 0.04 * mind)
    icy = rng.uniform(h / 2 - 0.04 * mind, h / 2 + 0.04 * mind)
    off = rng.uniform(0, 0.08 * pr)
    ang = rng.uniform(0, 2 * np.pi)
    return Circle(icx + off * np.cos(ang), icy + off * np.sin(ang), pr), Circle(icx, icy, ir)


def write_demo_corpus(
    out_dir, n_subjects: int = 3, per_subject: int = 4, shape: tuple[int, int] = (240, 320), seed: int = 0
) -> Path:
    """Write rendered PNGs plus ``manifest.csv``; returns the manifest path.

    Each subject has its own texture; captures differ in pupil dilation,
    centre, rotation (up to +-5 degrees) and sensor noise. Left eyes only;
    PMI grows with capture index so the corpus spans several classes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for s in range(n_subjects):
        tex = IrisTexture.random(seed * 1000 + s)
        for k in range(per_subject):
            h, w = shape
            mind = min(h, w)
            ir = rng.uniform(0.36, 0.40) * mind
            pr = rng.uniform(0.38, 0.48) * ir
            cx, cy = w / 2 + rng.uniform(-4, 4), h / 2 + rng.uniform(-4, 4)
            img = render_eye(
                shape,
                Circle(cx + rng.uniform(-1, 1), cy + rng.uniform(-1, 1), pr),
                Circle(cx, cy, ir),
                texture=tex,
                rotation=np.deg2rad(rng.uniform(-5, 5)),
                noise_sigma=2.0,
                seed=int(rng.integers(2**31)),
            )
            name = f"s{s:02d}_{k:02d}.png"
            Image.fromarray(img).save(out / name)
            entries.append(ManifestEntry(name, f"subj{s:02d}", 5.0 + 30.0 * k, Eye.LEFT, SourceDataset.SYNTHETIC, f"sess{k}"))
    path = out / "manifest.csv"
    write_manifest(path, entries)
    return path
