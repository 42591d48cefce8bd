"""Objective enumeration and loss assembly for the pairwise and factorized schemes.

An objective (``U(1)``, ``S(1,2)``, ``S(1,2|3)``, ``H(1,2,3)``...) expands into
signed estimator terms. Each term names its arguments symbolically: ``z_i``
is the embedding of modality ``i`` and ``z'_i`` the embedding of its
augmented view. Wherever the label ``y`` would appear, the augmented views
of the modalities the objective touches stand in for it.

Modality indices are 0-based in code and 1-based in the text form.
"""

from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .estimators import (
    Critic,
    EstimatorGrads,
    conditional_club_grad,
    conditional_info_nce_grad,
    critic_spec,
    club_grad,
    info_nce_grad,
    _nce,
)
from .numerics import MlpParams, MlpSpec, logsumexp_rows, softmax_rows

MAX_FACTORIZED_M = 6


class Scheme(str, enum.Enum):
    PAIRWISE = "pairwise"
    FACTORIZED = "factorized"


class ObjectiveKind(str, enum.Enum):
    UNIQUE = "U"
    SHARED = "S"
    COND_SHARED = "C"
    HIGH_ORDER = "H"


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: ObjectiveKind
    members: tuple[int, ...]
    given: tuple[int, ...] = ()
    scheme: Scheme = Scheme.PAIRWISE

    def __post_init__(self):
        idx = self.members + self.given
        if len(set(idx)) != len(idx) or any(i < 0 for i in idx):
            raise InputError(f"objective indices must be distinct and >= 0, got {idx}")
        if self.scheme is Scheme.PAIRWISE and self.kind in (ObjectiveKind.COND_SHARED, ObjectiveKind.HIGH_ORDER):
            raise InputError("the pairwise scheme has no conditional or high-order objectives")

    @property
    def touched(self) -> tuple[int, ...]:
        return tuple(sorted(self.members + self.given))

    @property
    def is_unique(self) -> bool:
        return self.kind is ObjectiveKind.UNIQUE

    @property
    def label(self) -> str:
        letter = "H" if self.kind is ObjectiveKind.HIGH_ORDER else self.kind.value
        if letter == "C":
            letter = "S"
        body = ",".join(str(i + 1) for i in self.members)
        if self.given:
            body += "|" + ",".join(str(i + 1) for i in self.given)
        return f"{letter}({body})"

    def __str__(self) -> str:
        return self.label


_LABEL_RE = re.compile(r"^([USH])\(([\d,]+)(?:\|([\d,]+))?\)$")


def parse_objective(text: str, scheme: Scheme = Scheme.PAIRWISE) -> ObjectiveSpec:
    """Inverse of :attr:`ObjectiveSpec.label`."""
    match = _LABEL_RE.match(text.strip())
    if not match:
        raise InputError(f"cannot parse objective {text!r}")
    letter, mem, giv = match.groups()
    members = tuple(int(t) - 1 for t in mem.split(","))
    given = tuple(int(t) - 1 for t in giv.split(",")) if giv else ()
    if letter == "U":
        kind = ObjectiveKind.UNIQUE
    elif letter == "H":
        kind = ObjectiveKind.HIGH_ORDER
    elif given:
        kind = ObjectiveKind.COND_SHARED
    else:
        kind = ObjectiveKind.SHARED
    return ObjectiveSpec(kind, members, given, scheme)


def enumerate_objectives(m: int, scheme: Scheme | str) -> list[ObjectiveSpec]:
    """All objectives of a scheme, in canonical order.

    Pairwise: every ``U(i)`` then every ``S(i,j)``, ``m(m+1)/2`` in total.
    Factorized: one objective per nonempty subset ``T`` of modalities, taken
    by size then lexicographically. Singletons are unique objectives, pairs
    are shared information conditioned on the remaining modalities, larger
    subsets are high-order terms conditioned on the rest. ``2^m - 1`` in
    total.
    """
    scheme = Scheme(scheme)
    if m < 2:
        raise InputError(f"need at least 2 modalities, got {m}")
    if scheme is Scheme.FACTORIZED and m > MAX_FACTORIZED_M:
        raise InputError(f"factorized enumeration is limited to m <= {MAX_FACTORIZED_M}")
    out = [ObjectiveSpec(ObjectiveKind.UNIQUE, (i,), (), scheme) for i in range(m)]
    if scheme is Scheme.PAIRWISE:
        out += [ObjectiveSpec(ObjectiveKind.SHARED, pair, (), scheme)
                for pair in itertools.combinations(range(m), 2)]
        return out
    for size in range(2, m + 1):
        for subset in itertools.combinations(range(m), size):
            rest = tuple(i for i in range(m) if i not in subset)
            if size == 2:
                kind = ObjectiveKind.COND_SHARED if rest else ObjectiveKind.SHARED
            else:
                kind = ObjectiveKind.HIGH_ORDER
            out.append(ObjectiveSpec(kind, subset, rest, scheme))
    return out


# -- estimator terms -----------------------------------------------------------

class EstimatorKind(str, enum.Enum):
    NCE = "NCE"
    COND_NCE = "CondNCE"
    CLUB = "CLUB"
    COND_CLUB = "CondCLUB"

    @property
    def is_club(self) -> bool:
        return self in (EstimatorKind.CLUB, EstimatorKind.COND_CLUB)


Ref = tuple[str, int]


def z(i: int) -> Ref:
    return ("z", i)


def zp(i: int) -> Ref:
    return ("zp", i)


def ref_text(ref: Ref) -> str:
    return f"z{ref[1] + 1}" + ("'" if ref[0] == "zp" else "")


def proxy_refs(modalities) -> tuple[Ref, ...]:
    """Label proxy: augmented views of the given modalities, in index order."""
    return tuple(zp(i) for i in sorted(modalities))


def proxy_label(views: list[np.ndarray], modalities) -> np.ndarray:
    """Concatenate the augmented embeddings of ``modalities`` column-wise."""
    return np.concatenate([views[i] for i in sorted(modalities)], axis=1)


@dataclass(frozen=True)
class Term:
    estimator: EstimatorKind
    a: Ref
    b: Ref
    cond: tuple[Ref, ...]
    sign: int
    critic_id: str = ""

    def describe(self) -> str:
        args = f"{ref_text(self.a)}; {ref_text(self.b)}"
        if self.cond:
            args += " | " + ", ".join(ref_text(r) for r in self.cond)
        return f"{'+' if self.sign > 0 else '-'}{self.estimator.value}({args})"


def _t(kind: EstimatorKind, a: Ref, b: Ref, cond=(), sign=1) -> Term:
    if cond and kind is EstimatorKind.NCE:
        kind = EstimatorKind.COND_NCE
    if cond and kind is EstimatorKind.CLUB:
        kind = EstimatorKind.COND_CLUB
    return Term(kind, a, b, tuple(cond), sign)


def unique_loss_terms(i: int, m: int) -> list[Term]:
    """``+NCE(z_i; z'_i) - CLUB(z_i; z_j) + CondNCE(z_i; z_j | z'_i, z'_j)`` for each ``j != i``."""
    if not 0 <= i < m:
        raise InputError(f"modality {i} out of range for m = {m}")
    terms = []
    for j in range(m):
        if j == i:
            continue
        terms += [
            _t(EstimatorKind.NCE, z(i), zp(i)),
            _t(EstimatorKind.CLUB, z(i), z(j), sign=-1),
            _t(EstimatorKind.NCE, z(i), z(j), proxy_refs((i, j))),
        ]
    return terms


def shared_pair_loss_terms(i: int, j: int) -> list[Term]:
    """``+NCE(z_i; z_j) - CondCLUB(z_i; z_j | z'_i, z'_j)``."""
    if i == j:
        raise InputError("shared objective needs two distinct modalities")
    return [
        _t(EstimatorKind.NCE, z(i), z(j)),
        _t(EstimatorKind.CLUB, z(i), z(j), proxy_refs((i, j)), sign=-1),
    ]


def _as_tuple(k) -> tuple[int, ...]:
    return (k,) if isinstance(k, (int, np.integer)) else tuple(k)


def cond_shared_loss_terms(i: int, j: int, given) -> list[Term]:
    """``+CondNCE(z_i; z_j | z_K) - CondCLUB(z_i; z_j | z_K, proxy)``."""
    given = _as_tuple(given)
    if len({i, j, *given}) != 2 + len(given) or not given:
        raise InputError("conditional shared objective needs distinct indices and a condition")
    zk = tuple(z(k) for k in given)
    return [
        _t(EstimatorKind.NCE, z(i), z(j), zk),
        _t(EstimatorKind.CLUB, z(i), z(j), zk + proxy_refs((i, j, *given)), sign=-1),
    ]


def high_order_loss_terms(i: int, j: int, rest, given=()) -> list[Term]:
    """Interaction-information objective over ``{i, j} + rest``, optionally conditioned on ``given``.

    Unconditioned three-way case: ``+NCE(z_i; z_j) - CondCLUB(.. | z_k)
    - CondCLUB(.. | proxy) + CondNCE(.. | z_k, proxy)``. A nonempty
    ``given`` is prepended to every conditioning set.
    """
    rest, given = _as_tuple(rest), _as_tuple(given)
    idx = (i, j, *rest, *given)
    if len(set(idx)) != len(idx) or not rest:
        raise InputError(f"high-order objective needs distinct indices, got {idx}")
    zg = tuple(z(k) for k in given)
    zr = tuple(z(k) for k in rest)
    px = proxy_refs(idx)
    return [
        _t(EstimatorKind.NCE, z(i), z(j), zg),
        _t(EstimatorKind.CLUB, z(i), z(j), zg + zr, sign=-1),
        _t(EstimatorKind.CLUB, z(i), z(j), zg + px, sign=-1),
        _t(EstimatorKind.NCE, z(i), z(j), zg + zr + px),
    ]


def objective_terms(obj: ObjectiveSpec, m: int) -> list[Term]:
    """Expand an objective into terms, each with its own critic id."""
    if obj.kind is ObjectiveKind.UNIQUE:
        raw = unique_loss_terms(obj.members[0], m)
    elif obj.kind is ObjectiveKind.SHARED:
        raw = shared_pair_loss_terms(*obj.members)
    elif obj.kind is ObjectiveKind.COND_SHARED:
        raw = cond_shared_loss_terms(obj.members[0], obj.members[1], obj.given)
    else:
        raw = high_order_loss_terms(obj.members[0], obj.members[1], obj.members[2:], obj.given)
    return [Term(t.estimator, t.a, t.b, t.cond, t.sign, f"{obj.label}#{k}") for k, t in enumerate(raw)]


def term_widths(term: Term, dims) -> tuple[int, int, int]:
    """Critic input blocks ``(d_a, d_b, d_c)`` for embedding widths ``dims``."""
    return dims[term.a[1]], dims[term.b[1]], sum(dims[r[1]] for r in term.cond)


@dataclass
class Assembly:
    """Objectives of a scheme with their expanded terms and critic architectures."""

    m: int
    scheme: Scheme
    dims: tuple[int, ...]
    objectives: list[ObjectiveSpec]
    terms: dict[str, list[Term]]
    critic_specs: dict[str, MlpSpec]
    critic_widths: dict[str, tuple[int, int, int]]

    @property
    def all_terms(self) -> list[Term]:
        return [t for obj in self.objectives for t in self.terms[obj.label]]


def assemble(m: int, scheme: Scheme | str, dims, *, critic_hidden: int | None = None,
             disable_unique: bool = False) -> Assembly:
    """Enumerate a scheme and size one critic per term.

    ``dims`` gives the embedding width of each modality (a single int is
    broadcast). ``disable_unique`` drops every unique objective.
    """
    scheme = Scheme(scheme)
    dims = (int(dims),) * m if isinstance(dims, (int, np.integer)) else tuple(int(d) for d in dims)
    if len(dims) != m:
        raise InputError(f"{len(dims)} embedding widths for {m} modalities")
    objs = [o for o in enumerate_objectives(m, scheme) if not (disable_unique and o.is_unique)]
    terms, specs, widths = {}, {}, {}
    for obj in objs:
        terms[obj.label] = objective_terms(obj, m)
        for t in terms[obj.label]:
            w = term_widths(t, dims)
            widths[t.critic_id] = w
            specs[t.critic_id] = critic_spec(sum(w), critic_hidden)
    return Assembly(m, scheme, dims, objs, terms, specs, widths)


# -- evaluation ----------------------------------------------------------------

@dataclass
class ObjectiveEval:
    """Values of every objective plus ascent directions.

    ``d_z``/``d_zp`` and ``d_critic`` are gradients of the sum of all
    objective values. When ``club_critics="fit"`` the entries for CLUB
    critics are instead the gradient of that critic's InfoNCE fitting
    objective; see :func:`evaluate_objectives`.
    """

    objective_values: dict[str, float]
    term_values: dict[str, float]
    d_z: list[np.ndarray] | None = None
    d_zp: list[np.ndarray] | None = None
    d_critic: dict[str, MlpParams] | None = None

    @property
    def total(self) -> float:
        return float(sum(self.objective_values.values()))


def _lookup(ref: Ref, zs, zps) -> np.ndarray:
    return zs[ref[1]] if ref[0] == "z" else zps[ref[1]]


def evaluate_objectives(assembly: Assembly, zs: list[np.ndarray], zps: list[np.ndarray],
                        critics: dict[str, Critic], *, grad: bool = False, club_seed: int = 0,
                        club_pairwise: bool = False, club_critics: str = "exact") -> ObjectiveEval:
    """Evaluate every objective of ``assembly`` on one batch.

    ``club_critics="exact"`` returns the true gradient of the objective sum.
    ``"fit"`` keeps the embedding gradients of CLUB terms but replaces the
    gradient for each CLUB critic with the gradient of InfoNCE under that
    critic (embeddings held fixed), so CLUB critics are fitted as density
    ratio scorers instead of being pushed to a constant.
    """
    if club_critics not in ("exact", "fit"):
        raise InputError(f"club_critics must be 'exact' or 'fit', got {club_critics!r}")
    obj_vals, term_vals = {}, {}
    d_z = [np.zeros_like(a) for a in zs] if grad else None
    d_zp = [np.zeros_like(a) for a in zps] if grad else None
    d_critic = {} if grad else None
    term_index = 0
    for obj in assembly.objectives:
        total = 0.0
        for t in assembly.terms[obj.label]:
            critic = critics[t.critic_id]
            za, zb = _lookup(t.a, zs, zps), _lookup(t.b, zs, zps)
            cond = np.concatenate([_lookup(r, zs, zps) for r in t.cond], axis=1) if t.cond else None
            seed = club_seed * 1_000_003 + term_index
            term_index += 1
            if t.estimator is EstimatorKind.NCE:
                est, g = info_nce_grad(za, zb, critic)
            elif t.estimator is EstimatorKind.COND_NCE:
                est, g = conditional_info_nce_grad(za, zb, cond, critic)
            elif t.estimator is EstimatorKind.CLUB:
                est, g = club_grad(za, zb, critic, seed=seed, pairwise=club_pairwise)
            else:
                est, g = conditional_club_grad(za, zb, cond, critic, seed=seed, pairwise=club_pairwise)
            term_vals[t.critic_id] = est.value
            total += t.sign * est.value
            if grad:
                _accumulate(t, g, d_z, d_zp, zs, zps)
                if t.estimator.is_club and club_critics == "fit":
                    _, fit = _nce(za, zb, cond, critic, True)
                    d_critic[t.critic_id] = fit.critic
                else:
                    d_critic[t.critic_id] = _scale(g.critic, t.sign)
        obj_vals[obj.label] = total
    return ObjectiveEval(obj_vals, term_vals, d_z, d_zp, d_critic)


def _scale(p: MlpParams, s: float) -> MlpParams:
    return MlpParams([s * w for w in p.weights], [s * b for b in p.biases])


def _accumulate(t: Term, g: EstimatorGrads, d_z, d_zp, zs, zps) -> None:
    def add(ref: Ref, val: np.ndarray):
        target = d_z if ref[0] == "z" else d_zp
        target[ref[1]] += t.sign * val

    add(t.a, g.z_a)
    add(t.b, g.z_b)
    if t.cond:
        offset = 0
        for r in t.cond:
            w = _lookup(r, zs, zps).shape[1]
            add(r, g.cond[:, offset:offset + w])
            offset += w


# -- intra-view and joint losses -----------------------------------------------

def _intra_logits(z: np.ndarray, z_pos: np.ndarray, tau: float) -> np.ndarray:
    logits = z @ z.T / tau
    np.fill_diagonal(logits, np.einsum("ij,ij->i", z, z_pos) / tau)
    return logits


def _check_intra(z, z_pos, tau):
    if tau <= 0:
        raise InputError(f"temperature must be > 0, got {tau}")
    z = np.asarray(z, dtype=np.float64)
    z_pos = np.asarray(z_pos, dtype=np.float64)
    if z.shape != z_pos.shape or z.ndim != 2:
        raise InputError(f"anchor {z.shape} and positive {z_pos.shape} shapes differ")
    if z.shape[0] < 2:
        raise InputError("intra-view loss needs at least 2 regions")
    return z, z_pos


def intra_loss(z, z_pos, tau: float = 0.07) -> float:
    """Mean NCE loss: the positive ``z_pos[i]`` against the other regions ``z[j], j != i``."""
    z, z_pos = _check_intra(z, z_pos, tau)
    logits = _intra_logits(z, z_pos, tau)
    return float(np.mean(logsumexp_rows(logits) - np.diag(logits)))


def intra_loss_grad(z, z_pos, tau: float = 0.07) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and its gradients with respect to ``z`` and ``z_pos``."""
    z, z_pos = _check_intra(z, z_pos, tau)
    n = z.shape[0]
    logits = _intra_logits(z, z_pos, tau)
    value = float(np.mean(logsumexp_rows(logits) - np.diag(logits)))
    d_l = (softmax_rows(logits) - np.eye(n)) / n
    diag = np.diag(d_l).copy()
    np.fill_diagonal(d_l, 0.0)
    d_z = (d_l @ z + d_l.T @ z + diag[:, None] * z_pos) / tau
    d_pos = diag[:, None] * z / tau
    return value, d_z, d_pos


def joint_loss(intra: float, inter_s: float, inter_u: float, alpha: float = 1.0,
               inter_h: float = 0.0) -> float:
    """``alpha * intra + inter_s + inter_u (+ inter_h)``; inter terms are already negated objectives."""
    if alpha < 0:
        raise InputError(f"alpha must be >= 0, got {alpha}")
    return alpha * intra + inter_s + inter_u + inter_h


def count_terms(m: int, scheme: Scheme | str, disable_unique: bool = False) -> int:
    return len(assemble(m, scheme, 1, disable_unique=disable_unique).all_terms)


def closed_form_counts(m: int) -> tuple[int, int]:
    """``(m(m+1)/2, 2^m - 1)`` objective counts."""
    return m * (m + 1) // 2, 2 ** m - 1

