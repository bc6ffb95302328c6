"""ICA filter banks and binarized iris codes.

Filters are learned BSIF-style: patches are mean-subtracted, PCA-whitened
down to ``n_filters`` dimensions, unmixed by symmetric fixed-point ICA with
a ``tanh`` contrast, and mapped back to pixel space. Encoding correlates
each filter with a normalized iris (circular along the angular axis,
replicated along the radial axis) and keeps the sign bit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from pmiris.errors import EncoderError, InvalidInputError
from pmiris.io import atomic_write_bytes, atomic_write_text
from pmiris.normalization import NormalizedIris

BANK_MAGIC = "HDBIF-BANK"
CODE_MAGIC = "IRISCODE"
DEFAULT_N_FILTERS = 7
DEFAULT_KERNEL_SIZE = 17
MAX_ICA_ITER = 500
ICA_TOL = 1e-5
ZERO_MEAN_TOL = 1e-6
MIN_PATCHES_PER_FILTER = 50


class BankProvenance(str, Enum):
    LEARNED_ICA = "learned_ica"
    LOADED = "loaded"


@dataclass(frozen=True, eq=False)
class FilterBank:
    coefficients: np.ndarray = field(repr=False)  # (n_filters, h, w) float64
    provenance: BankProvenance = BankProvenance.LOADED
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64)
        if c.ndim != 3 or c.shape[0] < 1:
            raise InvalidInputError(f"coefficients must be (n, h, w), got {c.shape}")
        if c.shape[1] % 2 == 0 or c.shape[2] % 2 == 0:
            raise InvalidInputError(f"kernel dimensions must be odd, got {c.shape[1]}x{c.shape[2]}")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    @property
    def n_filters(self) -> int:
        return self.coefficients.shape[0]

    @property
    def kernel_shape(self) -> tuple[int, int]:
        return self.coefficients.shape[1:]

    def check_invariants(self, zero_mean_tol: float = ZERO_MEAN_TOL) -> None:
        means = np.abs(self.coefficients.reshape(self.n_filters, -1).mean(axis=1))
        if np.any(means > zero_mean_tol):
            raise EncoderError(f"filter {int(np.argmax(means))} has mean {means.max():.3g}, not zero")
        flat = self.coefficients.reshape(self.n_filters, -1)
        if np.linalg.matrix_rank(flat) < self.n_filters:
            raise EncoderError("filters are linearly dependent")


# --------------------------------------------------------------------------
# learning


def sample_patches(textures, kernel_size: int, n_patches: int, seed: int, masks=None) -> np.ndarray:
    """Draw ``n_patches`` square patches lying entirely on valid samples.

    ``textures`` is a sequence of 2-D arrays (e.g. normalized iris textures);
    ``masks`` optionally marks valid samples. Returns ``(n, k, k)``.
    """
    rng = np.random.default_rng(seed)
    k = kernel_size
    candidates = []
    for t, tex in enumerate(textures):
        tex = np.asarray(tex, dtype=float)
        if tex.shape[0] < k or tex.shape[1] < k:
            continue
        valid = np.ones(tex.shape, bool) if masks is None else np.asarray(masks[t], bool)
        full = ndimage.minimum_filter(valid.astype(np.uint8), size=k, mode="constant", cval=0)
        h = k // 2
        ys, xs = np.nonzero(full[h : tex.shape[0] - h, h : tex.shape[1] - h])
        candidates.extend((t, y, x) for y, x in zip(ys, xs))
    if not candidates:
        raise EncoderError("no fully valid patch positions")
    pick = rng.choice(len(candidates), size=n_patches, replace=len(candidates) < n_patches)
    out = np.empty((n_patches, k, k))
    for i, c in enumerate(pick):
        t, y, x = candidates[int(c)]
        out[i] = np.asarray(textures[t], dtype=float)[y : y + k, x : x + k]
    return out


@dataclass(frozen=True, eq=False)
class IcaDiagnostics:
    whitening: np.ndarray  # (n, k*k)
    unmixing: np.ndarray  # (n, n), orthonormal
    whitened: np.ndarray  # (N, n)


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    """``(W W^T)^{-1/2} W``."""
    s, u = np.linalg.eigh(w @ w.T)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def whiten(patches: np.ndarray, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean-subtract and PCA-whiten vectorized patches.

    Returns ``(whitening_matrix, whitened_data)`` with shapes ``(n, d)`` and
    ``(N, n)``.
    """
    x = patches.reshape(patches.shape[0], -1).astype(np.float64)
    x = x - x.mean(axis=1, keepdims=True)
    x = x - x.mean(axis=0, keepdims=True)
    cov = x.T @ x / x.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    evals, evecs = evals[order], evecs[:, order]
    top = evals[0] if evals.size else 0.0
    if top <= 1e-12 or evals[-1] <= 1e-10 * top:
        raise EncoderError(f"patch covariance has rank < {n_components}; patches lack variation")
    # fix eigenvector signs for reproducibility
    signs = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(evecs.shape[1])])
    evecs = evecs * signs
    wmat = (evecs / np.sqrt(evals)).T
    return wmat, x @ wmat.T


def learn_filters_ica(
    patches: np.ndarray,
    n_filters: int = DEFAULT_N_FILTERS,
    kernel_size: int = DEFAULT_KERNEL_SIZE,
    seed: int = 0,
    max_iter: int = MAX_ICA_ITER,
    tol: float = ICA_TOL,
    return_diagnostics: bool = False,
):
    """Learn a zero-mean filter bank with symmetric FastICA (``g = tanh``).

    Runs until the largest basis rotation between iterations drops below
    ``tol`` or ``max_iter`` is hit; in the latter case the bank is returned
    with ``converged=False``.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise InvalidInputError(f"kernel size must be odd and positive, got {kernel_size}")
    if patches.ndim != 3 or patches.shape[1:] != (kernel_size, kernel_size):
        raise InvalidInputError(f"patches must be (N, {kernel_size}, {kernel_size}), got {patches.shape}")
    if not 1 <= n_filters <= kernel_size * kernel_size - 1:
        raise InvalidInputError(f"n_filters must be in [1, {kernel_size * kernel_size - 1}]")
    if patches.shape[0] < MIN_PATCHES_PER_FILTER * n_filters:
        raise EncoderError(
            f"need at least {MIN_PATCHES_PER_FILTER * n_filters} patches for {n_filters} filters, got {patches.shape[0]}"
        )

    wmat, z = whiten(patches, n_filters)
    n_samples = z.shape[0]
    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((n_filters, n_filters)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        s = z @ w.T  # (N, n)
        g = np.tanh(s)
        g_prime = 1.0 - g * g
        w_new = _sym_decorrelate(g.T @ z / n_samples - g_prime.mean(axis=0)[:, None] * w)
        lim = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
        w = w_new
        if lim < tol:
            converged = True
            break

    filters = (w @ wmat).reshape(n_filters, kernel_size, kernel_size)
    filters = filters - filters.mean(axis=(1, 2), keepdims=True)
    bank = FilterBank(filters, BankProvenance.LEARNED_ICA, converged, it)
    if return_diagnostics:
        return bank, IcaDiagnostics(wmat, w, z)
    return bank


# --------------------------------------------------------------------------
# bank files


def bank_text(bank: FilterBank) -> str:
    n, h, w = bank.coefficients.shape
    lines = [f"{BANK_MAGIC} {n} {h} {w}"]
    for k in range(n):
        for row in bank.coefficients[k]:
            lines.append(" ".join(f"{c:.17g}" for c in row))
    return "\n".join(lines) + "\n"


def save_bank(path: str | os.PathLike, bank: FilterBank) -> None:
    atomic_write_text(path, bank_text(bank))


def load_bank(path: str | os.PathLike) -> FilterBank:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise EncoderError(f"cannot read filter bank {path}: {exc}") from exc
    head, _, body = text.partition("\n")
    parts = head.split()
    if len(parts) != 4 or parts[0] != BANK_MAGIC:
        raise EncoderError(f"{path}: header must be '{BANK_MAGIC} n h w'")
    try:
        n, h, w = (int(p) for p in parts[1:])
    except ValueError:
        raise EncoderError(f"{path}: non-integer dimensions in header") from None
    if min(n, h, w) < 1:
        raise EncoderError(f"{path}: dimensions must be positive")
    tokens = body.split()
    if len(tokens) != n * h * w:
        raise EncoderError(f"{path}: header declares {n}x{h}x{w} = {n * h * w} coefficients, file has {len(tokens)}")
    try:
        coeffs = np.array([float(t) for t in tokens]).reshape(n, h, w)
    except ValueError:
        raise EncoderError(f"{path}: non-numeric coefficient") from None
    try:
        bank = FilterBank(coeffs, BankProvenance.LOADED)
    except InvalidInputError as exc:
        raise EncoderError(f"{path}: {exc}") from exc
    bank.check_invariants()
    return bank


# --------------------------------------------------------------------------
# iris codes


@dataclass(frozen=True, eq=False)
class IrisCode:
    bits: np.ndarray = field(repr=False)  # packed uint8, little-endian bit order
    mask_bits: np.ndarray = field(repr=False)
    dims: tuple[int, int, int]  # (n_filters, rows, cols)

    def __post_init__(self):
        n_bytes = -(-int(np.prod(self.dims)) // 8)
        for name in ("bits", "mask_bits"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.uint8).ravel()
            if arr.size != n_bytes:
                raise InvalidInputError(f"{name} holds {arr.size} bytes, dims {self.dims} need {n_bytes}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @classmethod
    def from_arrays(cls, code: np.ndarray, mask: np.ndarray) -> "IrisCode":
        code = np.asarray(code, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if code.ndim != 3 or code.shape != mask.shape:
            raise InvalidInputError("code and mask must be equal-shaped (n, rows, cols) arrays")
        return cls(
            np.packbits(code.ravel(), bitorder="little"),
            np.packbits(mask.ravel(), bitorder="little"),
            code.shape,
        )

    def _unpack(self, packed):
        count = int(np.prod(self.dims))
        return np.unpackbits(packed, count=count, bitorder="little").astype(bool).reshape(self.dims)

    def code_array(self) -> np.ndarray:
        return self._unpack(self.bits)

    def mask_array(self) -> np.ndarray:
        return self._unpack(self.mask_bits)

    def to_bytes(self) -> bytes:
        n, r, c = self.dims
        return f"{CODE_MAGIC} {n} {r} {c}\n".encode("ascii") + self.bits.tobytes() + self.mask_bits.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "IrisCode":
        head, sep, body = data.partition(b"\n")
        parts = head.decode("ascii", errors="replace").split()
        if not sep or len(parts) != 4 or parts[0] != CODE_MAGIC:
            raise EncoderError(f"iris code header must be '{CODE_MAGIC} n r c'")
        try:
            dims = tuple(int(p) for p in parts[1:])
        except ValueError:
            raise EncoderError("non-integer iris code dimensions") from None
        if min(dims) < 1:
            raise EncoderError("iris code dimensions must be positive")
        n_bytes = -(-int(np.prod(dims)) // 8)
        if len(body) != 2 * n_bytes:
            raise EncoderError(f"iris code body is {len(body)} bytes, expected {2 * n_bytes}")
        raw = np.frombuffer(body, dtype=np.uint8)
        return cls(raw[:n_bytes].copy(), raw[n_bytes:].copy(), dims)


def save_code(path: str | os.PathLike, code: IrisCode) -> None:
    atomic_write_bytes(path, code.to_bytes())


def load_code(path: str | os.PathLike) -> IrisCode:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise EncoderError(f"cannot read iris code {path}: {exc}") from exc
    return IrisCode.from_bytes(data)


def _pad(arr: np.ndarray, kh: int, kw: int, radial_mode: str = "edge") -> np.ndarray:
    arr = np.pad(arr, ((kh // 2, kh // 2), (0, 0)), mode=radial_mode)
    return np.pad(arr, ((0, 0), (kw // 2, kw // 2)), mode="wrap")


def filter_responses(texture: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Correlation of every filter with ``texture``: ``(n, rows, cols)``."""
    kh, kw = bank.kernel_shape
    rows, cols = texture.shape
    padded = _pad(np.asarray(texture, dtype=np.float64), kh, kw)
    out = np.empty((bank.n_filters, rows, cols))
    for i, kernel in enumerate(bank.coefficients):
        full = ndimage.correlate(padded, kernel, mode="constant", cval=0.0)
        out[i] = full[kh // 2 : kh // 2 + rows, kw // 2 : kw // 2 + cols]
    return out


def encode(norm: NormalizedIris, bank: FilterBank) -> IrisCode:
    """Binarize filter responses (bit = response > 0) with an eroded mask.

    A code bit is valid only if every texture sample under the kernel
    footprint (after the same circular/replicate padding) was valid.
    """
    rows, cols = norm.shape
    kh, kw = bank.kernel_shape
    if rows < kh or cols < kw:
        raise EncoderError(f"normalized iris {rows}x{cols} is smaller than the {kh}x{kw} kernels")
    code = filter_responses(norm.texture, bank) > 0
    padded = _pad(norm.validity_mask.astype(np.uint8), kh, kw)
    eroded = ndimage.minimum_filter(padded, size=(kh, kw), mode="constant", cval=0)
    valid = eroded[kh // 2 : kh // 2 + rows, kw // 2 : kw // 2 + cols].astype(bool)
    mask = np.broadcast_to(valid, code.shape)
    return IrisCode.from_arrays(code, mask)
