"""Same-identity latent perturbation and perturbation-radius calibration.

Synthetic same-identity samples are produced by perturbing a latent vector
``w`` with a random magnitude ``eps`` drawn uniformly from ``(0, eps_max)``.
The radius ``eps_max`` is chosen from a candidate grid by comparing the
genuine comparison-score distribution of images generated at each candidate
with the authentic genuine-score distribution, globally and per PMI class.
The generator itself is external: candidates arrive as score sets.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from pmiris.dataset import ManifestEntry
from pmiris.errors import CalibrationError, InvalidInputError
from pmiris.matcher import Label, ScoreSet
from pmiris.stats import partition_by_class

log = logging.getLogger(__name__)

DEFAULT_CANDIDATES = (0.01, 0.03, 0.05, 0.07, 0.09, 0.11)
MIN_GENUINE_GLOBAL = 30
MIN_GENUINE_CLASS = 10


class PerturbationMode(str, Enum):
    MULTIPLICATIVE = "multiplicative"  # w' = eps * w
    ADDITIVE_HYPERSPHERE = "additive_hypersphere"  # w' = w + eps * u, |u| = 1


@dataclass(frozen=True, eq=False)
class LatentVector:
    components: np.ndarray = field(repr=False)
    identity_id: str = ""
    epsilon: float | None = None  # magnitude used to produce this vector, if perturbed

    def __post_init__(self):
        c = np.asarray(self.components, dtype=np.float64)
        if c.ndim != 1 or c.size == 0:
            raise InvalidInputError("latent vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("latent vector has non-finite components")
        object.__setattr__(self, "components", c)

    @property
    def dim(self) -> int:
        return self.components.size


@dataclass(frozen=True)
class PerturbationPolicy:
    epsilon_max: float
    mode: PerturbationMode = PerturbationMode.ADDITIVE_HYPERSPHERE
    rng_seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon_max) and self.epsilon_max > 0):
            raise InvalidInputError(f"epsilon_max must be positive, got {self.epsilon_max}")
        object.__setattr__(self, "mode", PerturbationMode(self.mode))

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def draw_epsilon(policy: PerturbationPolicy, rng: np.random.Generator) -> float:
    """Uniform draw on the open interval ``(0, epsilon_max)``."""
    while True:
        eps = float(rng.uniform(0.0, policy.epsilon_max))
        if 0.0 < eps < policy.epsilon_max:
            return eps


def perturb(
    w: LatentVector,
    policy: PerturbationPolicy,
    rng: np.random.Generator | None = None,
    epsilon: float | None = None,
) -> LatentVector:
    """One same-identity perturbation of ``w``.

    Without ``rng`` a fresh generator is seeded from ``policy.rng_seed``, so
    repeated calls return the same vector; pass a shared generator to draw a
    sequence. ``epsilon`` overrides the random magnitude. In additive mode
    the displacement is re-drawn in the (floating-point) event that its norm
    is not strictly below ``epsilon_max``.
    """
    if rng is None:
        rng = policy.rng()
    if epsilon is not None and not 0.0 < epsilon < policy.epsilon_max:
        raise InvalidInputError(f"epsilon must lie in (0, {policy.epsilon_max}), got {epsilon}")
    if policy.mode == PerturbationMode.MULTIPLICATIVE:
        eps = draw_epsilon(policy, rng) if epsilon is None else float(epsilon)
        return LatentVector(eps * w.components, w.identity_id, eps)
    while True:
        eps = draw_epsilon(policy, rng) if epsilon is None else float(epsilon)
        u = rng.standard_normal(w.dim)
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            continue
        out = w.components + eps * (u / norm)
        if np.linalg.norm(out - w.components) < policy.epsilon_max:
            return LatentVector(out, w.identity_id, eps)


def perturb_many(
    w: LatentVector, policy: PerturbationPolicy, n: int, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`perturb`: returns ``(vectors (n, D), epsilons (n,))``.

    Same distribution and guarantees as ``n`` calls of ``perturb``, but the
    draw order differs, so the sequences are not interchangeable.
    """
    if n < 0:
        raise InvalidInputError("n must be non-negative")
    if rng is None:
        rng = policy.rng()
    eps_max = policy.epsilon_max
    eps = rng.uniform(0.0, eps_max, n)
    while True:
        bad = ~((eps > 0.0) & (eps < eps_max))
        if not bad.any():
            break
        eps[bad] = rng.uniform(0.0, eps_max, int(bad.sum()))
    base = w.components
    if policy.mode == PerturbationMode.MULTIPLICATIVE:
        return eps[:, None] * base[None, :], eps
    out = np.empty((n, w.dim))
    todo = np.arange(n)
    while todo.size:
        u = rng.standard_normal((todo.size, w.dim))
        norms = np.linalg.norm(u, axis=1)
        ok = norms > 0
        rows = base[None, :] + eps[todo, None] * (u / np.where(ok, norms, 1.0)[:, None])
        ok &= np.linalg.norm(rows - base[None, :], axis=1) < eps_max
        out[todo[ok]] = rows[ok]
        todo = todo[~ok]
    return out, eps


def same_identity_samples(w: LatentVector, policy: PerturbationPolicy, n: int) -> list[LatentVector]:
    """``n`` perturbations of ``w`` from a generator seeded by the policy."""
    vecs, eps = perturb_many(w, policy, n)
    return [LatentVector(v, w.identity_id, float(e)) for v, e in zip(vecs, eps)]


# --------------------------------------------------------------------------
# distribution distances


class Statistic(str, Enum):
    KS = "ks"
    WASSERSTEIN1 = "wasserstein1"


@dataclass(frozen=True)
class DistributionDistance:
    statistic: Statistic
    value: float


def _sample(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite values")
    return np.sort(arr)


def ks_distance(sample_a, sample_b) -> DistributionDistance:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    a, b = _sample(sample_a, "sample_a"), _sample(sample_b, "sample_b")
    pts = np.concatenate([a, b])
    # integer cross-multiplication keeps equal distances exactly equal
    ca = np.searchsorted(a, pts, side="right").astype(np.int64) * b.size
    cb = np.searchsorted(b, pts, side="right").astype(np.int64) * a.size
    return DistributionDistance(Statistic.KS, int(np.max(np.abs(ca - cb))) / (a.size * b.size))


def wasserstein1_distance(sample_a, sample_b) -> DistributionDistance:
    """``integral |F_a - F_b| dx`` between the two ECDFs."""
    a, b = _sample(sample_a, "sample_a"), _sample(sample_b, "sample_b")
    pts = np.unique(np.concatenate([a, b]))
    if pts.size < 2:
        return DistributionDistance(Statistic.WASSERSTEIN1, 0.0)
    fa = np.searchsorted(a, pts[:-1], side="right") / a.size
    fb = np.searchsorted(b, pts[:-1], side="right") / b.size
    return DistributionDistance(Statistic.WASSERSTEIN1, float(np.sum(np.abs(fa - fb) * np.diff(pts))))


def distance(sample_a, sample_b, statistic: Statistic | str = Statistic.KS) -> DistributionDistance:
    statistic = Statistic(statistic)
    if statistic == Statistic.KS:
        return ks_distance(sample_a, sample_b)
    return wasserstein1_distance(sample_a, sample_b)


# --------------------------------------------------------------------------
# epsilon_max selection


@dataclass
class CalibrationResult:
    candidates: list[float]
    statistic: Statistic
    global_epsilon: float | None
    per_class: dict[int, float]
    table: list[dict]  # one row per (scope, candidate) evaluated
    warnings: list[str]
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "candidates": self.candidates,
            "statistic": self.statistic.value,
            "global": self.global_epsilon,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "table": self.table,
            "warnings": self.warnings,
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _select(scope, authentic, synthetic_by_eps, statistic, min_n, table, warnings):
    best_eps, best_d = None, None
    for eps in sorted(synthetic_by_eps):
        synth = synthetic_by_eps[eps]
        if synth.size < min_n:
            warnings.append(f"{scope}: candidate {eps!r} has {synth.size} genuine scores (< {min_n}); skipped")
            continue
        d = distance(authentic, synth, statistic).value
        table.append(
            {"scope": scope, "epsilon_max": eps, "distance": d, "n_authentic": int(authentic.size), "n_synthetic": int(synth.size)}
        )
        if best_d is None or d < best_d:
            best_eps, best_d = eps, d
    return best_eps


def calibrate_epsilon(
    authentic: ScoreSet,
    synthetic_by_eps: Mapping[float, ScoreSet],
    per_class: bool = False,
    manifest: Mapping[str, ManifestEntry] | None = None,
    statistic: Statistic | str = Statistic.KS,
    min_genuine_global: int = MIN_GENUINE_GLOBAL,
    min_genuine_class: int = MIN_GENUINE_CLASS,
) -> CalibrationResult:
    """Pick the candidate ``eps_max`` whose genuine scores best match the authentic ones.

    The global choice is the candidate minimizing ``statistic`` between the
    genuine-score samples (ties go to the smaller candidate). With
    ``per_class`` the same selection is repeated inside each PMI class, rows
    being assigned to the class of their probe image via ``manifest``;
    classes with fewer than ``min_genuine_class`` authentic genuine scores are
    skipped with a warning.
    """
    statistic = Statistic(statistic)
    if not synthetic_by_eps:
        raise CalibrationError("empty candidate set")
    cands = sorted(float(e) for e in synthetic_by_eps)
    if any(not (math.isfinite(e) and e > 0) for e in cands):
        raise CalibrationError("candidate epsilon_max values must be positive")
    auth = authentic.genuine()
    if auth.size == 0:
        raise CalibrationError("authentic score set has no genuine pairs")
    if auth.size < min_genuine_global:
        raise CalibrationError(f"authentic score set has {auth.size} genuine scores, need {min_genuine_global}")

    table: list[dict] = []
    warnings: list[str] = []
    synth = {float(e): s.genuine() for e, s in synthetic_by_eps.items()}
    global_eps = _select("global", auth, synth, statistic, min_genuine_global, table, warnings)
    if global_eps is None:
        raise CalibrationError("no candidate has enough genuine scores")

    chosen: dict[int, float] = {}
    if per_class:
        if manifest is None:
            raise CalibrationError("per-class calibration needs a manifest")

        def genuine_by_class(scores: ScoreSet):
            recs = [r for r in scores.records if r.label == Label.GENUINE]
            part = partition_by_class(recs, manifest, key=lambda r: r.probe_id)
            if part.exclusions:
                warnings.append(f"{len(part.exclusions)} genuine scores could not be joined to the manifest")
            return {k: np.array([r.score for r in v]) for k, v in part.groups.items()}

        auth_cls = genuine_by_class(authentic)
        synth_cls = {e: genuine_by_class(s) for e, s in sorted(synthetic_by_eps.items())}
        for cls, scores in auth_cls.items():
            if scores.size < min_genuine_class:
                warnings.append(f"class {cls}: {scores.size} authentic genuine scores (< {min_genuine_class}); skipped")
                continue
            per = {e: groups.get(cls, np.empty(0)) for e, groups in synth_cls.items()}
            eps = _select(f"class {cls}", scores, per, statistic, min_genuine_class, table, warnings)
            if eps is None:
                warnings.append(f"class {cls}: no candidate has enough genuine scores; skipped")
            else:
                chosen[cls] = eps
    for w in warnings:
        log.warning(w)
    return CalibrationResult(cands, statistic, global_eps, chosen, table, warnings)
