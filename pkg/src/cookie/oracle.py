"""Exact information quantities in nats.

Discrete mutual information, conditional mutual information and
interaction information are computed by enumerating a finite joint table;
Gaussian mutual information uses the log-determinant closed form.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError

MAX_ARITY = 4
MAX_ALPHABET = 4


@dataclass(frozen=True)
class DiscreteJoint:
    """Probability table with one axis per variable.

    At most four variables. The random generator and the text format stick
    to alphabets of at most four symbols; larger alphabets are accepted for
    grid discretizations.
    """

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim < 1 or p.ndim > MAX_ARITY:
            raise InputError(f"joint needs 1..{MAX_ARITY} variables, got {p.ndim}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InputError("joint has negative or non-finite entries")
        if abs(p.sum() - 1.0) > 1e-12:
            raise InputError(f"joint sums to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", p)

    @property
    def arity(self) -> int:
        return self.p.ndim

    @property
    def alphabet_sizes(self) -> tuple[int, ...]:
        return self.p.shape

    def marginal(self, keep: tuple[int, ...]) -> np.ndarray:
        """Marginal over ``keep``, axes ordered as given."""
        drop = tuple(ax for ax in range(self.arity) if ax not in keep)
        m = self.p.sum(axis=drop)
        order = sorted(keep)
        return np.transpose(m, [order.index(k) for k in keep])

    def to_text(self) -> str:
        lines = [" ".join(str(v) for v in (self.arity, *self.alphabet_sizes))]
        for idx in itertools.product(*(range(k) for k in self.alphabet_sizes)):
            lines.append(repr(float(self.p[idx])))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DiscreteJoint":
        rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not rows:
            raise InputError("empty joint text")
        header = [int(tok) for tok in rows[0].split()]
        arity, sizes = header[0], tuple(header[1:])
        if len(sizes) != arity:
            raise InputError(f"header declares arity {arity} but {len(sizes)} sizes")
        values = [float(tok) for tok in rows[1:]]
        if len(values) != int(np.prod(sizes)):
            raise InputError(f"expected {int(np.prod(sizes))} probabilities, got {len(values)}")
        return cls(np.array(values).reshape(sizes))


def random_joint(rng: np.random.Generator, arity: int = 3, max_alphabet: int = MAX_ALPHABET) -> DiscreteJoint:
    sizes = tuple(int(k) for k in rng.integers(2, max_alphabet + 1, size=arity))
    p = rng.dirichlet(np.full(int(np.prod(sizes)), 0.5)).reshape(sizes)
    p = p / p.sum()
    return DiscreteJoint(p)


def _xlogy_ratio(pxy: np.ndarray, px: np.ndarray, py: np.ndarray) -> float:
    denom = px[:, None] * py[None, :]
    mask = pxy > 0
    return float(np.sum(pxy[mask] * np.log(pxy[mask] / denom[mask])))


def _check_axes(joint: DiscreteJoint, *axes: int) -> None:
    if len(set(axes)) != len(axes):
        raise InputError(f"variable indices must be distinct, got {axes}")
    for ax in axes:
        if not 0 <= ax < joint.arity:
            raise InputError(f"variable {ax} out of range for arity {joint.arity}")


def discrete_mi(joint: DiscreteJoint, a: int, b: int) -> float:
    _check_axes(joint, a, b)
    pab = joint.marginal((a, b))
    return _xlogy_ratio(pab, pab.sum(axis=1), pab.sum(axis=0))


def discrete_cmi(joint: DiscreteJoint, a: int, b: int, c: int) -> float:
    """``sum_z p(z) I(a; b | c = z)``."""
    _check_axes(joint, a, b, c)
    pabc = joint.marginal((a, b, c))
    total = 0.0
    for z in range(pabc.shape[2]):
        pz = pabc[:, :, z].sum()
        if pz <= 0:
            continue
        sl = pabc[:, :, z] / pz
        total += pz * _xlogy_ratio(sl, sl.sum(axis=1), sl.sum(axis=0))
    return total


def interaction_info(joint: DiscreteJoint, a: int, b: int, c: int) -> float:
    """``I(a;b) - I(a;b|c)``; negative values indicate synergy."""
    return discrete_mi(joint, a, b) - discrete_cmi(joint, a, b, c)


@dataclass(frozen=True)
class InclusionTerms:
    pairwise: tuple[float, float, float]
    interaction: float
    conditional: tuple[float, float, float]

    @property
    def residual(self) -> float:
        return sum(self.pairwise) - (3.0 * self.interaction + sum(self.conditional))


def inclusion_terms(joint: DiscreteJoint) -> InclusionTerms:
    if joint.arity != 3:
        raise InputError(f"inclusion identity needs exactly 3 variables, got {joint.arity}")
    return InclusionTerms(
        (discrete_mi(joint, 0, 1), discrete_mi(joint, 0, 2), discrete_mi(joint, 1, 2)),
        interaction_info(joint, 0, 1, 2),
        (discrete_cmi(joint, 0, 1, 2), discrete_cmi(joint, 0, 2, 1), discrete_cmi(joint, 1, 2, 0)),
    )


def verify_inclusion_identity(joint: DiscreteJoint) -> float:
    """Residual of ``sum pairwise MI = 3 * I(1;2;3) + sum pairwise CMI``."""
    return inclusion_terms(joint).residual


@dataclass(frozen=True)
class GaussianPair:
    """Joint covariance of ``(a, b)`` with ``a`` occupying the first ``d_a`` coordinates."""

    cov: np.ndarray
    d_a: int

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise InputError(f"covariance must be square, got {cov.shape}")
        if not 0 < self.d_a < cov.shape[0]:
            raise InputError(f"d_a must split the covariance, got {self.d_a} of {cov.shape[0]}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise NumericError("covariance is not symmetric")
        object.__setattr__(self, "cov", cov)

    @property
    def d_b(self) -> int:
        return self.cov.shape[0] - self.d_a


def _logdet_spd(m: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError("covariance is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def gaussian_mi(pair: GaussianPair) -> float:
    """``0.5 * ln(det S_aa * det S_bb / det S)``."""
    d = pair.d_a
    full = _logdet_spd(pair.cov)
    return 0.5 * (_logdet_spd(pair.cov[:d, :d]) + _logdet_spd(pair.cov[d:, d:]) - full)


def gaussian_mi_from_rho(rho: float) -> float:
    return -0.5 * float(np.log1p(-rho * rho))


def discretized_gaussian_joint(rho: float, bins: int = 200, half_width: float = 6.0) -> DiscreteJoint:
    """Bivariate unit normal with correlation ``rho`` on a ``bins x bins`` midpoint grid."""
    edges = np.linspace(-half_width, half_width, bins + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x, y = np.meshgrid(mid, mid, indexing="ij")
    q = (x * x - 2 * rho * x * y + y * y) / (1 - rho * rho)
    dens = np.exp(-0.5 * q)
    return DiscreteJoint(dens / dens.sum())
