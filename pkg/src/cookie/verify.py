"""Self-check suites: exact information identities, gradient checks, and the
InfoNCE/CLUB bracket on a Gaussian pair with known mutual information.

Each suite returns a list of :class:`Check` rows; a suite passes iff every
row passes.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimators import (
    Critic,
    club,
    club_grad,
    conditional_club_grad,
    conditional_info_nce_grad,
    fit_critic,
    info_nce,
    info_nce_grad,
    make_critic,
)
from .numerics import MlpParams, MlpSpec, grad_check, init_mlp
from .objectives import Scheme, intra_loss_grad
from .oracle import interaction_info, random_joint, verify_inclusion_identity
from .train import Encoders, StepResult, TrainConfig, _intra_terms, init_critics, joint_step, make_assembly

GRAD_TOL = 1e-4
IDENTITY_TOL = 1e-10
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    threshold: str
    passed: bool

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "passed", bool(self.passed))


def write_checks(checks: list[Check], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "check", "value", "threshold", "passed"])
        for c in checks:
            w.writerow([c.suite, c.name, repr(float(c.value)), c.threshold, int(c.passed)])
    return path


# -- oracle ---------------------------------------------------------------------

def oracle_suite(n_joints: int = 1000, seed: int = 0) -> list[Check]:
    """Inclusion identity and interaction-information symmetry on random 3-way joints."""
    rng = np.random.default_rng(seed)
    worst_res, worst_sym = 0.0, 0.0
    for _ in range(n_joints):
        j = random_joint(rng, arity=3, max_alphabet=4)
        worst_res = max(worst_res, abs(verify_inclusion_identity(j)))
        vals = [interaction_info(j, *p) for p in itertools.permutations(range(3))]
        worst_sym = max(worst_sym, max(vals) - min(vals))
    return [
        Check("oracle", f"inclusion_identity_{n_joints}_joints", worst_res, f"< {IDENTITY_TOL:g}",
              worst_res < IDENTITY_TOL),
        Check("oracle", f"interaction_symmetry_{n_joints}_joints", worst_sym, f"<= {SYMMETRY_TOL:g}",
              worst_sym <= SYMMETRY_TOL),
    ]


# -- gradients --------------------------------------------------------------------

def _estimator_loss(kind: str, critic: Critic, d_c: int, seed: int):
    """Loss closure over ``[z_a, z_b, (cond), *critic arrays]`` for one estimator."""
    n_head = 3 if d_c else 2

    def loss(arrays):
        c = critic.with_params(MlpParams.from_arrays(arrays[n_head:]))
        za, zb = arrays[0], arrays[1]
        if kind == "info_nce":
            est, g = info_nce_grad(za, zb, c)
        elif kind == "conditional_info_nce":
            est, g = conditional_info_nce_grad(za, zb, arrays[2], c)
        elif kind in ("club", "club_pairwise"):
            est, g = club_grad(za, zb, c, seed=seed, pairwise=kind == "club_pairwise")
        else:
            est, g = conditional_club_grad(za, zb, arrays[2], c, seed=seed, pairwise=kind.endswith("pairwise"))
        head = [g.z_a, g.z_b] + ([g.cond] if d_c else [])
        return est.value, head + g.critic.arrays()

    return loss


def _estimator_checks(seed: int) -> list[Check]:
    rng = np.random.default_rng([seed, 1])
    n, d_a, d_b, d_c = 8, 3, 2, 2
    out = []
    for kind in ("info_nce", "conditional_info_nce", "club", "club_pairwise",
                 "conditional_club", "conditional_club_pairwise"):
        dc = d_c if kind.startswith("conditional") else 0
        critic = make_critic(d_a, d_b, dc, hidden=6, rng=rng)
        head = [rng.normal(size=(n, d_a)), rng.normal(size=(n, d_b))]
        if dc:
            head.append(rng.normal(size=(n, dc)))
        err = grad_check(_estimator_loss(kind, critic, dc, seed), head + critic.params.arrays())
        out.append(Check("grad", kind, err, f"< {GRAD_TOL:g}", err < GRAD_TOL))
    return out


def _intra_checks(seed: int) -> list[Check]:
    rng = np.random.default_rng([seed, 2])
    z, zp = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))

    def raw(a):
        v, g1, g2 = intra_loss_grad(a[0], a[1], 0.5)
        return v, [g1, g2]

    def normalized(a):
        v, g1, g2 = _intra_terms(a[0], a[1], 0.5)
        return v, [g1, g2]

    out = []
    for name, fn in (("intra_loss", raw), ("intra_loss_normalized", normalized)):
        err = grad_check(fn, [z, zp])
        out.append(Check("grad", name, err, f"< {GRAD_TOL:g}", err < GRAD_TOL))
    return out


def _joint_checks(seed: int) -> list[Check]:
    out = []
    for scheme in (Scheme.PAIRWISE, Scheme.FACTORIZED):
        cfg = TrainConfig(scheme=scheme, embed_dim=2, encoder_hidden=(4,), critic_hidden=4, alpha=0.5,
                          tau=0.5, seed=seed)
        m, n, d = 3, 6, 3
        rng = np.random.default_rng([seed, 3])
        xs = [rng.normal(size=(n, d)) for _ in range(m)]
        xs_aug = [x + 0.1 * rng.normal(size=x.shape) for x in xs]
        specs = [MlpSpec((d, 4, 2)) for _ in range(m)]
        enc_params = [init_mlp(s, np.random.default_rng([seed, 4, i])) for i, s in enumerate(specs)]
        asm = make_assembly(m, cfg)
        critics = init_critics(asm, seed)
        ids = [t.critic_id for t in asm.all_terms]
        sizes = [len(p.arrays()) for p in enc_params] + [len(critics[c].params.arrays()) for c in ids]
        flat = [a for p in enc_params for a in p.arrays()] + [a for c in ids for a in critics[c].params.arrays()]
        # zero biases put dead-ReLU rows exactly at z = 0, where row normalization is singular
        flat = [a + 0.1 * rng.normal(size=a.shape) for a in flat]

        def loss(arrays, cfg=cfg, specs=specs, asm=asm, critics=critics, ids=ids, sizes=sizes, xs=xs,
                 xs_aug=xs_aug):
            chunks, pos = [], 0
            for k in sizes:
                chunks.append(MlpParams.from_arrays(arrays[pos:pos + k]))
                pos += k
            enc = Encoders(specs, chunks[:m], [np.zeros(d)] * m, [np.ones(d)] * m)
            crit = {c: critics[c].with_params(p) for c, p in zip(ids, chunks[m:])}
            res: StepResult = joint_step(enc, crit, asm, xs, xs_aug, cfg, club_seed=seed, club_critics="exact")
            grads = [a for g in res.encoder_grads for a in g.arrays()]
            grads += [a for c in ids for a in res.critic_grads[c].arrays()]
            return res.loss, grads

        err = grad_check(loss, flat)
        out.append(Check("grad", f"joint_loss_{scheme.value}_m3", err, f"< {GRAD_TOL:g}", err < GRAD_TOL))
    return out


def grad_suite(seed: int = 0) -> list[Check]:
    return _estimator_checks(seed) + _intra_checks(seed) + _joint_checks(seed)


# -- sandwich -----------------------------------------------------------------------

SANDWICH_RHO = 0.8
SANDWICH_BATCH = 128
SANDWICH_STEPS = 1000
SANDWICH_LR = 1e-2
SANDWICH_EVAL_BATCHES = 20


def gaussian_sampler(rho: float, n: int):
    def sample(rng: np.random.Generator):
        x = rng.normal(size=(n, 1))
        y = rho * x + math.sqrt(1.0 - rho ** 2) * rng.normal(size=(n, 1))
        return x, y, None

    return sample


@dataclass
class SandwichRun:
    seed: int
    nce_batches: list[float]
    club_batches: list[float]

    @property
    def nce(self) -> float:
        return float(np.mean(self.nce_batches))

    @property
    def club(self) -> float:
        return float(np.mean(self.club_batches))


def sandwich_run(seed: int, *, rho: float = SANDWICH_RHO, n: int = SANDWICH_BATCH, steps: int = SANDWICH_STEPS,
                 lr: float = SANDWICH_LR, eval_batches: int = SANDWICH_EVAL_BATCHES) -> SandwichRun:
    """Fit one critic on fresh batches, then read out both bounds on held-out batches."""
    sample = gaussian_sampler(rho, n)
    critic = make_critic(1, 1, rng=np.random.default_rng(seed))
    critic = fit_critic(critic, sample, steps=steps, lr=lr, seed=seed)
    rng = np.random.default_rng([seed, 1000])
    batches = [sample(rng) for _ in range(eval_batches)]
    nce = [info_nce(a, b, critic).value for a, b, _ in batches]
    cl = [club(a, b, critic, seed=k).value for k, (a, b, _) in enumerate(batches)]
    return SandwichRun(seed, nce, cl)


def sandwich_suite(seeds=range(10), rho: float = SANDWICH_RHO, n: int = SANDWICH_BATCH) -> list[Check]:
    true_mi = -0.5 * math.log(1.0 - rho ** 2)
    ceiling = math.log(n)
    runs = [sandwich_run(s, rho=rho, n=n) for s in seeds]
    out = []
    for r in runs:
        out.append(Check("sandwich", f"nce_in_range_seed{r.seed}", r.nce, f"[0.30, {ceiling:.6f}]",
                         0.30 <= r.nce <= ceiling))
        worst = max(r.nce_batches)
        out.append(Check("sandwich", f"nce_ceiling_every_batch_seed{r.seed}", worst, f"<= {ceiling:.6f}",
                         worst <= ceiling))
        out.append(Check("sandwich", f"club_in_range_seed{r.seed}", r.club, "[0.40, 1.20]",
                         0.40 <= r.club <= 1.20))
    nce_mean = float(np.mean([r.nce for r in runs]))
    club_mean = float(np.mean([r.club for r in runs]))
    out.append(Check("sandwich", "nce_mean_below_true_plus_0.10", nce_mean, f"<= {true_mi + 0.10:.6f}",
                     nce_mean <= true_mi + 0.10))
    out.append(Check("sandwich", "true_plus_0.10_below_club_mean_plus_0.20", club_mean + 0.20,
                     f">= {true_mi + 0.10:.6f}", true_mi + 0.10 <= club_mean + 0.20))
    return out


SUITES = {"oracle": oracle_suite, "grad": grad_suite, "sandwich": sandwich_suite}
