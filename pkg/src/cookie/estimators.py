"""Critic-based mutual-information bounds.

InfoNCE (lower bound) uses in-batch negatives over a full ``N x N`` score
matrix. CLUB (upper bound) is the score-difference form with one shuffled
negative per anchor; a full-pairwise variant averages over every
off-diagonal pair instead. Conditional variants append the conditioning
row of the anchor to every critic input.

Each estimator has a plain form returning an :class:`MiEstimate` and a
``*_grad`` form that also returns gradients of the estimate with respect to
the critic parameters and every input.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EstimatorError, DimensionError
from .numerics import (
    MlpParams,
    MlpSpec,
    backward_layers,
    forward_layers,
    init_mlp,
    logsumexp_rows,
    mlp_backward_cached,
    mlp_forward_cached,
    softmax_rows,
    AdamState,
    adam_step,
)


class EstimateKind(str, enum.Enum):
    NCE_LOWER = "nce_lower"
    CLUB_UPPER = "club_upper"


@dataclass(frozen=True)
class MiEstimate:
    value: float
    kind: EstimateKind
    n: int


@dataclass
class Critic:
    """Scalar scoring network over ``concat(z_a, z_b[, cond])``."""

    spec: MlpSpec
    params: MlpParams
    d_a: int
    d_b: int
    d_c: int = 0

    def __post_init__(self):
        if self.spec.d_in != self.d_a + self.d_b + self.d_c:
            raise DimensionError(
                f"critic input width {self.spec.d_in} != {self.d_a}+{self.d_b}+{self.d_c}"
            )
        if self.spec.d_out != 1:
            raise DimensionError(f"critic output width must be 1, got {self.spec.d_out}")
        self.params.check(self.spec)

    def with_params(self, params: MlpParams) -> "Critic":
        return Critic(self.spec, params, self.d_a, self.d_b, self.d_c)


def critic_spec(d_in: int, hidden: int | None = None) -> MlpSpec:
    """Two-layer ReLU critic; hidden width defaults to four times the input."""
    h = 4 * d_in if hidden is None else hidden
    return MlpSpec((d_in, h, 1))


def make_critic(d_a: int, d_b: int, d_c: int = 0, *, hidden: int | None = None,
                rng: np.random.Generator | None = None) -> Critic:
    spec = critic_spec(d_a + d_b + d_c, hidden)
    rng = rng if rng is not None else np.random.default_rng(0)
    return Critic(spec, init_mlp(spec, rng), d_a, d_b, d_c)


def constant_critic(d_a: int, d_b: int, d_c: int = 0, value: float = 0.0,
                    hidden: int | None = None) -> Critic:
    """A critic that outputs ``value`` for every input."""
    spec = critic_spec(d_a + d_b + d_c, hidden)
    params = init_mlp(spec, np.random.default_rng(0)).zeros_like()
    params.biases[-1][:] = value
    return Critic(spec, params, d_a, d_b, d_c)


@dataclass
class EstimatorGrads:
    """Gradients of an estimate; ``cond`` is ``None`` for unconditional estimators."""

    critic: MlpParams
    z_a: np.ndarray
    z_b: np.ndarray
    cond: np.ndarray | None


def _prepare(z_a, z_b, cond, critic: Critic):
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if z_a.ndim != 2 or z_b.ndim != 2:
        raise DimensionError("embeddings must be 2-D")
    n = z_a.shape[0]
    if z_b.shape[0] != n:
        raise DimensionError(f"row mismatch: {n} vs {z_b.shape[0]}")
    if n < 2:
        raise EstimatorError(f"need at least 2 rows for negatives, got {n}")
    if z_a.shape[1] != critic.d_a or z_b.shape[1] != critic.d_b:
        raise DimensionError(
            f"critic expects widths ({critic.d_a}, {critic.d_b}), got ({z_a.shape[1]}, {z_b.shape[1]})"
        )
    if cond is None:
        if critic.d_c:
            raise DimensionError("critic expects a conditioning input")
        cond = np.zeros((n, 0))
    else:
        cond = np.asarray(cond, dtype=np.float64)
        if cond.ndim != 2 or cond.shape[0] != n or cond.shape[1] != critic.d_c:
            raise DimensionError(f"conditioning shape {cond.shape} != ({n}, {critic.d_c})")
    return z_a, z_b, cond, n


# -- score evaluation --------------------------------------------------------

def _score_matrix(critic: Critic, z_a, z_b, cond):
    """``S[i, j] = f(z_a[i], z_b[j], cond[i])``.

    The first affine layer splits over the concatenation, so it is applied to
    each block once and broadcast to all ``N^2`` pairs.
    """
    w0, b0 = critic.params.weights[0], critic.params.biases[0]
    da, db = critic.d_a, critic.d_b
    wa, wb, wc = w0[:, :da], w0[:, da:da + db], w0[:, da + db:]
    a = z_a @ wa.T + cond @ wc.T + b0
    b = z_b @ wb.T
    n, h = a.shape
    pre = (a[:, None, :] + b[None, :, :]).reshape(n * n, h)
    out, cache = forward_layers(critic.spec, critic.params, pre, 0)
    return out.reshape(n, n), cache


def _score_matrix_backward(critic: Critic, z_a, z_b, cond, cache, d_s):
    n = z_a.shape[0]
    grads, dpre = backward_layers(critic.spec, critic.params, cache, d_s.reshape(n * n, 1))
    h = dpre.shape[1]
    dpre = dpre.reshape(n, n, h)
    d_a = dpre.sum(axis=1)
    d_b = dpre.sum(axis=0)
    w0 = critic.params.weights[0]
    da, db = critic.d_a, critic.d_b
    wa, wb, wc = w0[:, :da], w0[:, da:da + db], w0[:, da + db:]
    dw0 = np.concatenate([d_a.T @ z_a, d_b.T @ z_b, d_a.T @ cond], axis=1)
    grads[0] = (dw0, d_a.sum(axis=0))
    k = critic.spec.n_layers
    pgrad = MlpParams([grads[i][0] for i in range(k)], [grads[i][1] for i in range(k)])
    return pgrad, d_a @ wa, d_b @ wb, d_a @ wc


def _score_pairs(critic: Critic, z_a, z_b, cond):
    x = np.concatenate([z_a, z_b, cond], axis=1)
    out, cache = mlp_forward_cached(critic.spec, critic.params, x)
    return out[:, 0], cache


def _score_pairs_backward(critic: Critic, cache, d_out):
    pgrad, dx = mlp_backward_cached(critic.spec, critic.params, cache, d_out[:, None])
    da, db = critic.d_a, critic.d_b
    return pgrad, dx[:, :da], dx[:, da:da + db], dx[:, da + db:]


def _add_params(p: MlpParams, q: MlpParams) -> MlpParams:
    return MlpParams([a + b for a, b in zip(p.weights, q.weights)],
                     [a + b for a, b in zip(p.biases, q.biases)])


# -- InfoNCE -----------------------------------------------------------------

def _nce(z_a, z_b, cond, critic: Critic, want_grad: bool):
    z_a, z_b, c, n = _prepare(z_a, z_b, cond, critic)
    s, cache = _score_matrix(critic, z_a, z_b, c)
    lse = logsumexp_rows(s)
    value = float(np.mean(np.diag(s) - lse) + math.log(n))
    est = MiEstimate(value, EstimateKind.NCE_LOWER, n)
    if not want_grad:
        return est, None
    d_s = (np.eye(n) - softmax_rows(s)) / n
    pg, ga, gb, gc = _score_matrix_backward(critic, z_a, z_b, c, cache, d_s)
    return est, EstimatorGrads(pg, ga, gb, gc if cond is not None else None)


def info_nce(z_a, z_b, critic: Critic) -> MiEstimate:
    """``mean_i [f_ii - log(mean_j exp f_ij)]``; never exceeds ``ln N``."""
    return _nce(z_a, z_b, None, critic, False)[0]


def info_nce_grad(z_a, z_b, critic: Critic) -> tuple[MiEstimate, EstimatorGrads]:
    return _nce(z_a, z_b, None, critic, True)


def conditional_info_nce(z_a, z_b, cond, critic: Critic) -> MiEstimate:
    """InfoNCE with ``f(z_a_i, z_b_j, cond_i)``: negatives reuse the anchor's condition."""
    return _nce(z_a, z_b, cond, critic, False)[0]


def conditional_info_nce_grad(z_a, z_b, cond, critic: Critic) -> tuple[MiEstimate, EstimatorGrads]:
    return _nce(z_a, z_b, cond, critic, True)


# -- CLUB --------------------------------------------------------------------

def derangement(n: int, seed: int) -> np.ndarray:
    """A random permutation with no fixed points: a single ``n``-cycle in a shuffled order."""
    if n < 2:
        raise EstimatorError(f"need at least 2 rows for negatives, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    perm = np.empty(n, dtype=np.int64)
    perm[order] = np.roll(order, -1)
    return perm


def _club(z_a, z_b, cond, critic: Critic, want_grad: bool, perm, seed: int, pairwise: bool):
    z_a, z_b, c, n = _prepare(z_a, z_b, cond, critic)
    if pairwise:
        s, cache = _score_matrix(critic, z_a, z_b, c)
        off = ~np.eye(n, dtype=bool)
        value = float(np.mean(np.diag(s)) - s[off].mean())
        est = MiEstimate(value, EstimateKind.CLUB_UPPER, n)
        if not want_grad:
            return est, None
        d_s = np.where(off, -1.0 / (n * (n - 1)), 1.0 / n)
        pg, ga, gb, gc = _score_matrix_backward(critic, z_a, z_b, c, cache, d_s)
        return est, EstimatorGrads(pg, ga, gb, gc if cond is not None else None)

    perm = derangement(n, seed) if perm is None else np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,):
        raise DimensionError(f"permutation must have length {n}")
    pos, cache_p = _score_pairs(critic, z_a, z_b, c)
    neg, cache_n = _score_pairs(critic, z_a, z_b[perm], c)
    value = float(pos.mean() - neg.mean())
    est = MiEstimate(value, EstimateKind.CLUB_UPPER, n)
    if not want_grad:
        return est, None
    g = np.full(n, 1.0 / n)
    pg1, ga1, gb1, gc1 = _score_pairs_backward(critic, cache_p, g)
    pg2, ga2, gb2, gc2 = _score_pairs_backward(critic, cache_n, -g)
    gb = gb1.copy()
    np.add.at(gb, perm, gb2)
    return est, EstimatorGrads(_add_params(pg1, pg2), ga1 + ga2, gb,
                               gc1 + gc2 if cond is not None else None)


def club(z_a, z_b, critic: Critic, *, perm=None, seed: int = 0, pairwise: bool = False) -> MiEstimate:
    """``mean_i f(z_a_i, z_b_i) - mean_i f(z_a_i, z_b_perm(i))``.

    ``perm`` defaults to a derangement drawn from ``seed``. With
    ``pairwise=True`` the negative term averages every off-diagonal pair.
    """
    return _club(z_a, z_b, None, critic, False, perm, seed, pairwise)[0]


def club_grad(z_a, z_b, critic: Critic, *, perm=None, seed: int = 0,
              pairwise: bool = False) -> tuple[MiEstimate, EstimatorGrads]:
    return _club(z_a, z_b, None, critic, True, perm, seed, pairwise)


def conditional_club(z_a, z_b, cond, critic: Critic, *, perm=None, seed: int = 0,
                     pairwise: bool = False) -> MiEstimate:
    """CLUB where only ``z_b`` is shuffled; ``(z_a_i, cond_i)`` stay together."""
    return _club(z_a, z_b, cond, critic, False, perm, seed, pairwise)[0]


def conditional_club_grad(z_a, z_b, cond, critic: Critic, *, perm=None, seed: int = 0,
                          pairwise: bool = False) -> tuple[MiEstimate, EstimatorGrads]:
    return _club(z_a, z_b, cond, critic, True, perm, seed, pairwise)


# -- critic fitting ------------------------------------------------------------

Sampler = Callable[[np.random.Generator], tuple[np.ndarray, np.ndarray, np.ndarray | None]]


def fit_critic(critic: Critic, sampler: Sampler, *, steps: int, lr: float = 1e-3,
               seed: int = 0) -> Critic:
    """Train a critic by maximizing (conditional) InfoNCE on fresh batches.

    CLUB uses the same critic: it is fitted with the InfoNCE objective and
    then read out as a score difference.
    """
    rng = np.random.default_rng(seed)
    params = critic.params.arrays()
    state = AdamState.init(params, lr=lr)
    for _ in range(steps):
        z_a, z_b, cond = sampler(rng)
        current = critic.with_params(MlpParams.from_arrays(params))
        _, grads = _nce(z_a, z_b, cond, current, True)
        params, state = adam_step(params, [-g for g in grads.critic.arrays()], state)
    return critic.with_params(MlpParams.from_arrays(params))
