import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from conftest import IRIS, PUPIL, SHAPE
from oracles import fuzz_case
from pmiris.errors import InvalidInputError
from pmiris.quality import (
    LOG_KERNEL,
    METRICS,
    PERCENT_METRICS,
    QUALITY_HEADER,
    SENTINEL,
    QualityRecord,
    entropy_bits,
    grey_scale_utilization,
    motion_blur,
    overall_quality,
    pupil_boundary_circularity,
    quality_csv,
    quality_record,
    sharpness,
)
from pmiris.segmentation import Circle, SegmentationResult
from pmiris.synthetic import render_eye, truth_segmentation


def check_contracts(rec: QualityRecord):
    for m in METRICS:
        v = getattr(rec, m)
        assert (v == SENTINEL) == (not rec.computed[m]), m
        if not rec.computed[m]:
            continue
        if m in PERCENT_METRICS or m == "overall_quality":
            assert 0.0 <= v <= 100.0, (m, v)
        elif m == "grey_scale_utilization":
            assert 0.0 <= v <= 8.0
        elif m == "iris_radius":
            assert v > 0
        elif m == "motion_blur":
            assert v >= 1.0


# ---- entropy


@pytest.mark.parametrize(
    "hist, bits",
    [(np.eye(256)[17] * 1000, 0.0), (np.ones(256), 8.0), (np.r_[5, np.zeros(254), 5], 1.0)],
)
def test_entropy_exact(hist, bits):
    assert entropy_bits(hist) == bits


def test_entropy_errors():
    with pytest.raises(InvalidInputError):
        entropy_bits(np.zeros(256))
    with pytest.raises(InvalidInputError):
        entropy_bits([-1, 2])


@given(st.lists(st.integers(0, 255), min_size=1, max_size=400), st.randoms())
def test_gsu_permutation_invariant(values, rnd):
    img = np.array(values, np.uint8).reshape(1, -1)
    perm = list(values)
    rnd.shuffle(perm)
    assert grey_scale_utilization(img) == grey_scale_utilization(np.array(perm, np.uint8).reshape(-1, 1))


# ---- reference renders


def test_reference_render_values(oracle_eye, truth_seg):
    rec = quality_record(oracle_eye, truth_seg)
    assert rec.usable_iris_area == 100.0
    assert rec.iris_radius == 100.0 and rec.pupil_iris_ratio == 40.0
    assert rec.iris_pupil_concentricity == 100.0
    # tiers 220 / 110 / 30: (220-110)/(220+110) and (110-30)/(110+30)
    assert rec.iris_sclera_contrast == pytest.approx(100 / 3)
    assert rec.iris_pupil_contrast == pytest.approx(800 / 14)
    # iris spans x in [28, 228] of 0..255: nearest edge 27 px, over 0.6 * 100
    assert rec.margin_adequacy == pytest.approx(45.0)
    assert rec.motion_blur == pytest.approx(1.0)
    check_contracts(rec)


def test_geometry_example():
    pupil, iris = Circle(128, 128, 30), Circle(128, 128, 60)
    img = render_eye(SHAPE, pupil, iris)
    rec = quality_record(img, truth_segmentation(SHAPE, pupil, iris))
    assert rec.pupil_iris_ratio == 50.0
    assert rec.iris_pupil_concentricity == 100.0
    assert rec.iris_radius == 60.0
    assert rec.margin_adequacy == 100.0


def test_concentricity_offset():
    pupil, iris = Circle(138, 128, 30), Circle(128, 128, 80)
    rec = quality_record(render_eye(SHAPE, pupil, iris), truth_segmentation(SHAPE, pupil, iris))
    assert rec.iris_pupil_concentricity == pytest.approx(100 * (1 - 10 / 80))


def test_constant_image_no_seg():
    rec = quality_record(np.full(SHAPE, 90, np.uint8))
    assert rec.grey_scale_utilization == 0.0 and rec.computed["grey_scale_utilization"]
    for m in METRICS:
        if m != "grey_scale_utilization":
            assert getattr(rec, m) == 255 and not rec.computed[m]


def test_occluded_area(oracle_eye, truth_seg):
    mask = truth_seg.occlusion_mask.copy()
    mask[:128] = False
    seg = SegmentationResult(PUPIL, IRIS, mask)
    ann = truth_seg.annulus()
    assert quality_record(oracle_eye, seg).usable_iris_area == pytest.approx(100 * ann[128:].sum() / ann.sum())


def test_circularity_oracle(oracle_eye, truth_seg):
    assert pupil_boundary_circularity(oracle_eye, truth_seg) > 99.99
    # elliptical pupil, semi-axes 46 x 34: analytic r(theta) through the same spectral formula
    yy, xx = np.mgrid[0:256, 0:256]
    img = oracle_eye.copy()
    img[np.hypot(xx - 128, yy - 128) <= 60] = 110
    img[((xx - 128) / 46.0) ** 2 + ((yy - 128) / 34.0) ** 2 <= 1] = 30
    theta = 2 * np.pi * np.arange(256) / 256
    r = 1 / np.sqrt(np.cos(theta) ** 2 / 46**2 + np.sin(theta) ** 2 / 34**2)
    c = np.fft.rfft(r)
    expected = 100 * (1 - np.sum(np.abs(c[1:9]) ** 2) / abs(c[0]) ** 2)
    got = pupil_boundary_circularity(img, truth_seg)
    assert got == pytest.approx(expected, abs=0.1)
    assert got < 99.9


def test_log_kernel():
    assert LOG_KERNEL.shape == (5, 5)
    assert abs(LOG_KERNEL.sum()) < 1e-12
    assert np.abs(LOG_KERNEL).sum() == pytest.approx(16.0)
    assert LOG_KERNEL[2, 2] == LOG_KERNEL.min() < 0
    assert np.allclose(LOG_KERNEL, LOG_KERNEL.T) and np.allclose(LOG_KERNEL, LOG_KERNEL[::-1])


def test_sharpness_oracle(textured_eye, truth_seg):
    sharp = sharpness(textured_eye, truth_seg)
    blurred = sharpness(ndimage.uniform_filter(textured_eye.astype(float), 3), truth_seg)
    assert sharp > 80 and blurred < 40


def test_motion_blur_oracle(textured_eye):
    base = motion_blur(textured_eye)
    smeared = motion_blur(ndimage.correlate1d(textured_eye.astype(float), np.ones(9) / 9, axis=1))
    assert smeared > base >= 1.0
    assert base == pytest.approx(1.0)


def test_motion_blur_isotropic_noise():
    img = np.random.default_rng(0).integers(0, 256, (128, 128))
    assert motion_blur(img) == pytest.approx(1.0, abs=0.05)


@given(st.integers(-60, 60))
@settings(max_examples=15, deadline=None)
def test_geometry_metrics_brightness_invariant(delta):
    img = render_eye(SHAPE, Circle(126, 130, 35), Circle(128, 128, 90), iris_level=120, pupil_level=70, sclera_level=180)
    seg = truth_segmentation(SHAPE, Circle(126, 130, 35), Circle(128, 128, 90))
    a = quality_record(img, seg)
    b = quality_record(np.clip(img.astype(int) + delta, 0, 255), seg)
    assert a.pupil_iris_ratio == b.pupil_iris_ratio
    assert a.iris_pupil_concentricity == b.iris_pupil_concentricity


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_fuzz_contracts(seed):
    img, seg = fuzz_case(np.random.default_rng(seed))
    check_contracts(quality_record(img, seg))


def test_overall_quality_rule():
    rec = QualityRecord()
    for m, v in zip(PERCENT_METRICS[:3], (25.0, 100.0, 64.0)):
        rec.set(m, v)
    assert overall_quality(rec) is None
    rec.set("margin_adequacy", 100.0)
    assert overall_quality(rec) == pytest.approx(100 * math.prod([0.25, 1.0, 0.64, 1.0]) ** 0.25)
    rec.set("sharpness", 0.0)
    assert overall_quality(rec) == 0.0


def test_set_nonfinite_is_sentinel():
    rec = QualityRecord()
    rec.set("sharpness", float("nan"))
    assert rec.sharpness == 255 and not rec.computed["sharpness"]


def test_csv(oracle_eye, truth_seg):
    text = quality_csv([("a", quality_record(oracle_eye, truth_seg)), ("b", quality_record(np.zeros((80, 80), np.uint8)))])
    lines = text.splitlines()
    assert lines[0].split(",") == QUALITY_HEADER
    assert QUALITY_HEADER[1:] == [m.upper() for m in METRICS]
    assert lines[2].split(",")[1] == "255.0" and len(lines) == 3


def test_mismatched_seg_rejected(truth_seg):
    with pytest.raises(InvalidInputError):
        quality_record(np.zeros((64, 64), np.uint8), truth_seg)
