import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from pmiris.encoder import (
    BankProvenance,
    FilterBank,
    IrisCode,
    bank_text,
    encode,
    filter_responses,
    learn_filters_ica,
    load_bank,
    load_code,
    sample_patches,
    save_bank,
    save_code,
)
from pmiris.errors import EncoderError, InvalidInputError
from pmiris.normalization import NormalizedIris


@pytest.fixture(scope="module")
def patches(textured_norms):
    return sample_patches([n.texture for n in textured_norms], 17, 4000, seed=5, masks=[n.validity_mask for n in textured_norms])


@pytest.fixture(scope="module")
def learned(patches):
    return learn_filters_ica(patches, n_filters=7, kernel_size=17, seed=11, return_diagnostics=True)


def test_whitened_covariance(learned):
    _, diag = learned
    z = diag.whitened
    cov = z.T @ z / z.shape[0]
    assert np.abs(cov - np.eye(7)).max() <= 1e-6


def test_unmixing_orthonormal(learned):
    _, diag = learned
    w = diag.unmixing
    assert np.abs(w.T @ w - np.eye(7)).max() <= 1e-6
    assert np.abs(w @ w.T - np.eye(7)).max() <= 1e-6


def test_bank_invariants(learned):
    bank, _ = learned
    assert bank.provenance is BankProvenance.LEARNED_ICA
    assert bank.coefficients.shape == (7, 17, 17)
    assert np.abs(bank.coefficients.mean(axis=(1, 2))).max() <= 1e-9
    bank.check_invariants()
    assert 1 <= bank.iterations <= 500


def test_ica_deterministic(patches, learned, tmp_path):
    again = learn_filters_ica(patches, n_filters=7, kernel_size=17, seed=11)
    save_bank(tmp_path / "a.txt", learned[0])
    save_bank(tmp_path / "b.txt", again)
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_ica_recovers_sources():
    """Classic oracle: two Laplacian sources mixed into 3x3 'patches' are separated."""
    rng = np.random.default_rng(0)
    n = 20000
    s = rng.laplace(size=(n, 2))
    basis = np.zeros((2, 9))
    basis[0, [0, 8]] = [1, -1]
    basis[1, [2, 6]] = [1, -1]
    x = s @ basis + 1e-3 * rng.standard_normal((n, 9))
    bank, diag = learn_filters_ica(x.reshape(n, 3, 3), n_filters=2, kernel_size=3, seed=0, return_diagnostics=True)
    assert bank.converged
    est = diag.whitened @ diag.unmixing.T
    corr = np.abs(np.corrcoef(est.T, s.T)[:2, 2:])
    assert np.sort(corr.max(axis=1)).min() > 0.99


def test_ica_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(EncoderError, match="rank"):
        learn_filters_ica(np.tile(rng.random((1, 9, 9)), (500, 1, 1)), n_filters=3, kernel_size=9)
    with pytest.raises(EncoderError, match="at least"):
        learn_filters_ica(rng.random((100, 9, 9)), n_filters=3, kernel_size=9)
    with pytest.raises(InvalidInputError):
        learn_filters_ica(rng.random((500, 8, 8)), n_filters=3, kernel_size=8)
    with pytest.raises(InvalidInputError):
        learn_filters_ica(rng.random((5000, 3, 3)), n_filters=9, kernel_size=3)


def test_nonconvergence_flagged():
    rng = np.random.default_rng(1)
    bank = learn_filters_ica(rng.standard_normal((2000, 5, 5)), n_filters=4, kernel_size=5, seed=0, max_iter=2)
    assert not bank.converged and bank.iterations == 2


# ---- bank files


def test_bank_roundtrip(small_bank, tmp_path):
    save_bank(tmp_path / "b.txt", small_bank)
    back = load_bank(tmp_path / "b.txt")
    assert np.array_equal(back.coefficients, small_bank.coefficients)
    assert back.provenance is BankProvenance.LOADED
    lines = (tmp_path / "b.txt").read_text().splitlines()
    assert lines[0] == "HDBIF-BANK 5 9 9" and len(lines) == 1 + 5 * 9


def test_bank_count_mismatch(small_bank, tmp_path):
    text = bank_text(small_bank).splitlines()
    (tmp_path / "b.txt").write_text("\n".join(["HDBIF-BANK 6 9 9"] + text[1:]) + "\n")
    with pytest.raises(EncoderError, match="coefficients"):
        load_bank(tmp_path / "b.txt")


def test_bank_nonzero_mean_rejected(tmp_path):
    coeffs = np.random.default_rng(0).standard_normal((2, 3, 3))
    coeffs -= coeffs.mean(axis=(1, 2), keepdims=True)
    coeffs[1] += 1e-5
    save_bank(tmp_path / "b.txt", FilterBank(coeffs))
    with pytest.raises(EncoderError, match="mean"):
        load_bank(tmp_path / "b.txt")


@pytest.mark.parametrize("head", ["BANK 1 3 3", "HDBIF-BANK 1 3", "HDBIF-BANK a 3 3"])
def test_bank_bad_header(tmp_path, head):
    (tmp_path / "b.txt").write_text(head + "\n" + " ".join(["0"] * 9) + "\n")
    with pytest.raises(EncoderError):
        load_bank(tmp_path / "b.txt")


# ---- encoding


def full_norm(texture):
    return NormalizedIris(texture, np.ones(texture.shape, bool))


def test_tiled_kernel_oracle(small_bank):
    k = small_bank.coefficients[2]
    tex = np.zeros((64, 512))
    tex[20:29, 100:109] = k
    resp = filter_responses(tex, small_bank)
    # direct correlation at the kernel centre is the sum of squared coefficients
    assert resp[2, 24, 104] == pytest.approx(np.sum(k * k))
    code = encode(full_norm(tex), small_bank)
    assert code.code_array()[2, 24, 104]


def test_responses_match_direct_correlation(small_bank):
    rng = np.random.default_rng(3)
    tex = rng.random((16, 64)) * 255
    resp = filter_responses(tex, small_bank)
    padded = np.pad(np.pad(tex, ((4, 4), (0, 0)), mode="edge"), ((0, 0), (4, 4)), mode="wrap")
    for f, r, c in [(0, 0, 0), (1, 7, 63), (4, 15, 30)]:
        window = padded[r : r + 9, c : c + 9]
        assert resp[f, r, c] == pytest.approx(np.sum(window * small_bank.coefficients[f]))


def test_zero_texture_all_zero_bits(small_bank):
    code = encode(full_norm(np.zeros((32, 128))), small_bank)
    assert not code.code_array().any()


def test_zero_validity_zero_mask(small_bank):
    code = encode(NormalizedIris(np.random.default_rng(0).random((32, 128)), np.zeros((32, 128), bool)), small_bank)
    assert not code.mask_array().any()


def test_too_small(small_bank):
    with pytest.raises(EncoderError):
        encode(full_norm(np.zeros((8, 128))), small_bank)


@given(st.integers(-200, 200), st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_shift_equivariance(small_bank, k, seed):
    rng = np.random.default_rng(seed)
    tex = ndimage.uniform_filter(rng.random((32, 256)) * 255, 3)
    mask = rng.random((32, 256)) > 0.02
    a = encode(NormalizedIris(tex, mask), small_bank)
    b = encode(NormalizedIris(np.roll(tex, k, axis=1), np.roll(mask, k, axis=1)), small_bank)
    assert np.array_equal(b.code_array(), np.roll(a.code_array(), k, axis=2))
    assert np.array_equal(b.mask_array(), np.roll(a.mask_array(), k, axis=2))


def test_erosion_soundness(small_bank):
    rng = np.random.default_rng(4)
    tex = rng.random((40, 128)) * 255
    mask = np.ones(tex.shape, bool)
    mask[10:14, 30:90] = False
    mask[:, 5] = False
    a = encode(NormalizedIris(tex, mask), small_bank)
    tampered = tex.copy()
    tampered[~mask] = rng.random(int((~mask).sum())) * 1e6 - 5e5
    b = encode(NormalizedIris(tampered, mask), small_bank)
    valid = a.mask_array()
    assert valid.any()
    assert np.array_equal(a.mask_array(), b.mask_array())
    assert np.array_equal(a.code_array()[valid], b.code_array()[valid])


def test_mask_replicated_per_filter(small_bank, textured_norms):
    code = encode(textured_norms[0], small_bank)
    m = code.mask_array()
    assert all(np.array_equal(m[0], m[i]) for i in range(1, m.shape[0]))


# ---- code files


def test_code_bit_order_and_roundtrip(tmp_path):
    code = np.zeros((1, 2, 8), bool)
    code[0, 0, 0] = True
    code[0, 1, 7] = True
    mask = np.ones_like(code)
    ic = IrisCode.from_arrays(code, mask)
    assert ic.bits.tolist() == [0x01, 0x80] and ic.mask_bits.tolist() == [0xFF, 0xFF]
    save_code(tmp_path / "c.code", ic)
    raw = (tmp_path / "c.code").read_bytes()
    assert raw == b"IRISCODE 1 2 8\n\x01\x80\xff\xff"
    back = load_code(tmp_path / "c.code")
    assert np.array_equal(back.code_array(), code) and back.dims == (1, 2, 8)


@pytest.mark.parametrize("data", [b"IRISCODE 1 2 8\n\x01", b"IRIS 1 2 8\n\x00\x00\x00\x00", b"IRISCODE 1 x 8\n\x00\x00\x00\x00"])
def test_code_malformed(tmp_path, data):
    (tmp_path / "c.code").write_bytes(data)
    with pytest.raises(EncoderError):
        load_code(tmp_path / "c.code")
