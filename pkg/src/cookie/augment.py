"""Modality-specific augmentations that produce positive views.

Count vectors (POI/AOI-like) get random add/remove/replace events, real
feature vectors (imagery-like) get a multiplicative jitter plus Gaussian
noise, and sets of per-building vectors get a random subset dropped before
mean aggregation. Every function is deterministic given its seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError


class AugmentKind(str, enum.Enum):
    COUNT_PERTURB = "count_perturb"
    FEATURE_NOISE = "feature_noise"
    BUILDING_DROP = "building_drop"


@dataclass(frozen=True)
class AugmentSpec:
    kind: AugmentKind
    probability: float = 0.1
    noise_sigma: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)
    drop_fraction: float = 0.10
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AugmentKind(self.kind))
        if not 0.0 <= self.probability <= 1.0:
            raise InputError(f"probability must be in [0, 1], got {self.probability}")
        if self.noise_sigma < 0:
            raise InputError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        lo, hi = self.scale_range
        if lo > hi:
            raise InputError(f"scale_range must be ordered, got {self.scale_range}")
        if not 0.0 <= self.drop_fraction <= 1.0:
            raise InputError(f"drop_fraction must be in [0, 1], got {self.drop_fraction}")


def _rng(spec: AugmentSpec, rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(spec.rng_seed)


def _require(spec: AugmentSpec, kind: AugmentKind) -> None:
    if spec.kind is not kind:
        raise InputError(f"expected a {kind.value} spec, got {spec.kind.value}")


def augment_counts(v, spec: AugmentSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Perturb a nonnegative count vector.

    Categories are visited in order. Each is triggered with probability
    ``spec.probability``; a triggered category gets exactly one of add (+1),
    remove (-1, clamped at zero) or replace (move one unit to a uniformly
    chosen other category), picked uniformly.

    Random draws, in order: one uniform per category for the trigger, then
    for a triggered category one integer in [0, 3) for the operation and,
    for replace, one integer in [0, len - 1) for the target.
    """
    _require(spec, AugmentKind.COUNT_PERTURB)
    out = np.array(v, dtype=np.int64, copy=True).reshape(-1)
    if out.size == 0:
        raise InputError("count vector is empty")
    if np.any(out < 0):
        raise InputError("count vector has negative entries")
    rng = _rng(spec, rng)
    n = out.size
    triggers = rng.random(n)
    for c in range(n):
        if triggers[c] >= spec.probability:
            continue
        op = int(rng.integers(3))
        if op == 0:
            out[c] += 1
        elif op == 1:
            out[c] = max(out[c] - 1, 0)
        else:
            if n == 1:
                continue
            target = int(rng.integers(n - 1))
            if target >= c:
                target += 1
            if out[c] > 0:
                out[c] -= 1
                out[target] += 1
    return out


def augment_features(v, spec: AugmentSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """``v * s + noise`` with one scale ``s ~ U(scale_range)`` per vector."""
    _require(spec, AugmentKind.FEATURE_NOISE)
    x = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise NumericError("feature vector has non-finite entries")
    rng = _rng(spec, rng)
    lo, hi = spec.scale_range
    scale = rng.uniform(lo, hi) if hi > lo else lo
    noise = rng.normal(0.0, spec.noise_sigma, size=x.size) if spec.noise_sigma > 0 else 0.0
    return x * scale + noise


def n_dropped(n: int, fraction: float) -> int:
    """``floor(fraction * n)`` capped so that one vector always survives."""
    # the epsilon keeps e.g. 0.29 * 100 from flooring to 28
    return min(int(math.floor(fraction * n + 1e-9)), n - 1)


def augment_building(features, spec: AugmentSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Drop a random subset of per-building vectors and average the rest."""
    _require(spec, AugmentKind.BUILDING_DROP)
    mat = np.asarray(features, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[:, None]
    n = mat.shape[0]
    if n == 0:
        raise InputError("building list is empty")
    rng = _rng(spec, rng)
    k = n_dropped(n, spec.drop_fraction)
    keep = np.ones(n, dtype=bool)
    if k > 0:
        keep[rng.choice(n, size=k, replace=False)] = False
    return mat[keep].mean(axis=0)


def augment_batch(x: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply a row-wise augmentation (counts or features) to every row of ``x``."""
    if spec.kind is AugmentKind.COUNT_PERTURB:
        rows = [augment_counts(row, spec, rng) for row in np.asarray(x)]
        return np.asarray(rows, dtype=np.float64)
    if spec.kind is AugmentKind.FEATURE_NOISE:
        return np.asarray([augment_features(row, spec, rng) for row in np.asarray(x)])
    raise InputError("building drop acts on building lists, not region rows")
