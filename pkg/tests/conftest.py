import numpy as np
import pytest

from pmiris.encoder import learn_filters_ica, sample_patches
from pmiris.normalization import normalize
from pmiris.segmentation import Circle
from pmiris.synthetic import IrisTexture, render_eye, truth_segmentation, write_demo_corpus

SHAPE = (256, 256)
PUPIL = Circle(128.0, 128.0, 40.0)
IRIS = Circle(128.0, 128.0, 100.0)


@pytest.fixture(scope="session")
def oracle_eye():
    """The reference render: pupil 30, iris 110, sclera 220, r = 40 / 100 at (128, 128)."""
    return render_eye(SHAPE, PUPIL, IRIS)


@pytest.fixture(scope="session")
def textured_eye():
    """Textured oracle: reference geometry plus fine high-pass iris grain."""
    return render_eye(SHAPE, PUPIL, IRIS, grain=35.0, seed=3)


@pytest.fixture(scope="session")
def truth_seg():
    return truth_segmentation(SHAPE, PUPIL, IRIS)


@pytest.fixture(scope="session")
def textured_norms():
    out = []
    for s in range(4):
        img = render_eye(SHAPE, PUPIL, IRIS, texture=IrisTexture.random(s), noise_sigma=2.0, seed=s)
        out.append(normalize(img, truth_segmentation(SHAPE, PUPIL, IRIS)))
    return out


@pytest.fixture(scope="session")
def small_bank(textured_norms):
    patches = sample_patches([n.texture for n in textured_norms], 9, 2000, seed=1, masks=[n.validity_mask for n in textured_norms])
    return learn_filters_ica(patches, n_filters=5, kernel_size=9, seed=0)


@pytest.fixture(scope="session")
def demo_manifest(tmp_path_factory):
    return write_demo_corpus(tmp_path_factory.mktemp("corpus"))


def random_code_arrays(rng, dims=(7, 64, 512), mask_p=1.0):
    code = rng.integers(0, 2, dims).astype(bool)
    mask = rng.random(dims) < mask_p if mask_p < 1 else np.ones(dims, bool)
    return code, mask
