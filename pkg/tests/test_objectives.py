import math

import numpy as np
import pytest

from cookie.errors import InputError
from cookie.estimators import Critic, constant_critic, info_nce
from cookie.numerics import AdamState, MlpParams, adam_step
from cookie.objectives import (
    Assembly,
    EstimatorKind,
    ObjectiveKind,
    Scheme,
    assemble,
    closed_form_counts,
    cond_shared_loss_terms,
    count_terms,
    enumerate_objectives,
    evaluate_objectives,
    high_order_loss_terms,
    intra_loss,
    joint_loss,
    objective_terms,
    parse_objective,
    shared_pair_loss_terms,
    unique_loss_terms,
)
from cookie.synth import GaussianFactorModel, generate
from cookie.train import TrainConfig, init_critics, train
from cookie.verify import _joint_checks

P, F = Scheme.PAIRWISE, Scheme.FACTORIZED


def labels(m, scheme):
    return [o.label for o in enumerate_objectives(m, scheme)]


def test_enumeration_listings():
    assert labels(3, P) == ["U(1)", "U(2)", "U(3)", "S(1,2)", "S(1,3)", "S(2,3)"]
    assert labels(2, P) == ["U(1)", "U(2)", "S(1,2)"]
    assert labels(2, F) == ["U(1)", "U(2)", "S(1,2)"]
    assert labels(3, F) == ["U(1)", "U(2)", "U(3)", "S(1,2|3)", "S(1,3|2)", "S(2,3|1)", "H(1,2,3)"]
    four = labels(4, F)
    assert len(four) == 15
    for lb in ("H(1,2,3|4)", "H(1,2,4|3)", "H(1,3,4|2)", "H(2,3,4|1)", "H(1,2,3,4)", "S(1,2|3,4)"):
        assert lb in four


@pytest.mark.parametrize("m", range(2, 7))
def test_counts_match_closed_forms(m):
    assert len(enumerate_objectives(m, P)) == m * (m + 1) // 2
    assert len(enumerate_objectives(m, F)) == 2 ** m - 1
    assert closed_form_counts(m) == (m * (m + 1) // 2, 2 ** m - 1)


def test_enumeration_structure():
    for m in range(2, 7):
        pw = enumerate_objectives(m, P)
        assert all(len(o.touched) <= 2 for o in pw)
        assert all(o.kind in (ObjectiveKind.UNIQUE, ObjectiveKind.SHARED) for o in pw)
        fz = enumerate_objectives(m, F)
        assert any(len(o.touched) >= 3 for o in fz) == (m >= 3)
        for o in fz:
            assert len(set(o.touched)) == len(o.touched) and max(o.touched) < m
    with pytest.raises(InputError):
        enumerate_objectives(1, P)


def test_label_round_trip():
    for m in (2, 3, 4, 5):
        for scheme in (P, F):
            for o in enumerate_objectives(m, scheme):
                assert parse_objective(o.label, scheme) == o


def test_term_counts_and_shapes():
    assert len(unique_loss_terms(0, 2)) == 3
    assert len(unique_loss_terms(2, 4)) == 9
    assert len(shared_pair_loss_terms(0, 1)) == 2
    assert len(cond_shared_loss_terms(0, 1, 2)) == 2
    assert len(high_order_loss_terms(0, 1, 2)) == 4
    kinds = [t.estimator for t in high_order_loss_terms(0, 1, 2)]
    assert kinds == [EstimatorKind.NCE, EstimatorKind.COND_CLUB, EstimatorKind.COND_CLUB, EstimatorKind.COND_NCE]
    assert [t.sign for t in high_order_loss_terms(0, 1, 2)] == [1, -1, -1, 1]
    assert [t.sign for t in shared_pair_loss_terms(0, 1)] == [1, -1]


def test_assembled_term_counts():
    # hand expansion: 3 U objectives x 6 terms, 3 pair objectives x 2, one 3-way objective x 4
    assert count_terms(3, F) == 3 * 6 + 3 * 2 + 1 * 4 == 28
    assert count_terms(3, P) == 3 * 6 + 3 * 2 == 24
    assert count_terms(3, P, disable_unique=True) == 6


def test_every_term_owns_a_critic():
    for m in range(2, 6):
        for scheme in (P, F):
            asm = assemble(m, scheme, 4)
            ids = [t.critic_id for t in asm.all_terms]
            assert len(ids) == len(set(ids)) == len(asm.critic_specs)


def test_factorized_to_pairwise_ratio_increases():
    counts = {s: [count_terms(m, s) for m in range(2, 7)] for s in (P, F)}
    for s in (P, F):
        assert all(b > a for a, b in zip(counts[s], counts[s][1:]))
    ratios = [f / p for f, p in zip(counts[F], counts[P])]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


def test_proxy_widths():
    asm = assemble(3, F, (2, 3, 4))
    t = asm.terms["H(1,2,3)"][3]
    # z1; z2 | z3, z1', z2', z3'
    assert asm.critic_widths[t.critic_id] == (2, 3, 4 + 2 + 3 + 4)


def _constant_critics(asm: Assembly, value=0.3):
    out = {}
    for t in asm.all_terms:
        d_a, d_b, d_c = asm.critic_widths[t.critic_id]
        out[t.critic_id] = constant_critic(d_a, d_b, d_c, value=value)
    return out


@pytest.mark.parametrize("scheme", [P, F])
def test_constant_critics_zero_every_objective(scheme):
    rng = np.random.default_rng(0)
    asm = assemble(4, scheme, 3)
    zs = [rng.normal(size=(6, 3)) for _ in range(4)]
    zps = [rng.normal(size=(6, 3)) for _ in range(4)]
    ev = evaluate_objectives(asm, zs, zps, _constant_critics(asm))
    assert all(abs(v) < 1e-12 for v in ev.objective_values.values())
    # with a zero inter part the joint loss reduces to alpha * intra exactly
    intra = intra_loss(zs[0], zps[0])
    assert joint_loss(intra, -ev.total, 0.0, alpha=0.5) == pytest.approx(0.5 * intra, abs=1e-12)
    assert joint_loss(intra, 0.0, 0.0, alpha=0.5) == 0.5 * intra


def test_intra_loss_examples():
    z = np.ones((5, 3))
    assert intra_loss(z, z, tau=0.3) == pytest.approx(math.log(5), abs=1e-12)
    z = 10.0 * np.eye(4)
    assert intra_loss(z, z, tau=0.1) < 1e-12
    # N=2, tau=1: z1.z1+ = 1, z1.z2 = 0 and symmetric
    z = np.eye(2)
    assert intra_loss(z, z, tau=1.0) == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
    assert intra_loss(z, z, tau=1.0) == pytest.approx(0.3133, abs=1e-4)
    with pytest.raises(InputError):
        intra_loss(z, z, tau=0.0)


def test_joint_loss_arithmetic():
    assert joint_loss(2.0, 1.0, 0.5, alpha=0.5) == 2.5
    assert joint_loss(0.0, 0.0, 0.0) == 0.0
    assert joint_loss(3.0, 1.0, 2.0, alpha=0.0) == 3.0
    with pytest.raises(InputError):
        joint_loss(1.0, 0.0, 0.0, alpha=-1.0)


def test_joint_loss_gradients_m3():
    for check in _joint_checks(seed=1):
        assert check.passed, check


def test_joint_loss_gradient_two_modalities():
    from cookie.numerics import MlpSpec, grad_check, init_mlp
    from cookie.train import Encoders, joint_step, make_assembly

    cfg = TrainConfig(embed_dim=4, encoder_hidden=(5,), critic_hidden=6, tau=0.5, seed=3)
    rng = np.random.default_rng(3)
    xs = [rng.normal(size=(8, 4)) for _ in range(2)]
    xs_aug = [x + 0.1 * rng.normal(size=x.shape) for x in xs]
    specs = [MlpSpec((4, 5, 4))] * 2
    asm = make_assembly(2, cfg)
    critics = init_critics(asm, 3)
    ids = [t.critic_id for t in asm.all_terms]
    enc = [init_mlp(s, rng) for s in specs]
    flat = [a + 0.1 * rng.normal(size=a.shape) for p in enc for a in p.arrays()]
    flat += [a + 0.1 * rng.normal(size=a.shape) for c in ids for a in critics[c].params.arrays()]

    def loss(arrays):
        e = [MlpParams.from_arrays(arrays[0:4]), MlpParams.from_arrays(arrays[4:8])]
        crit = {c: critics[c].with_params(MlpParams.from_arrays(arrays[8 + 4 * k: 12 + 4 * k]))
                for k, c in enumerate(ids)}
        res = joint_step(Encoders(specs, e, [np.zeros(4)] * 2, [np.ones(4)] * 2), crit, asm, xs, xs_aug, cfg,
                         club_critics="exact")
        grads = [a for g in res.encoder_grads for a in g.arrays()]
        return res.loss, grads + [a for c in ids for a in res.critic_grads[c].arrays()]

    assert grad_check(loss, flat) < 1e-4


# -- trained behaviour ------------------------------------------------------------

def _only(asm: Assembly, label: str) -> Assembly:
    objs = [o for o in asm.objectives if o.label == label]
    return Assembly(asm.m, asm.scheme, asm.dims, objs, {label: asm.terms[label]}, asm.critic_specs,
                    asm.critic_widths)


def _fit_critics(asm, critics, sampler, steps, seed, lr=1e-2):
    ids = [t.critic_id for t in asm.all_terms]
    sizes = [len(critics[c].params.arrays()) for c in ids]
    arrays = [a for c in ids for a in critics[c].params.arrays()]
    state = AdamState.init(arrays, lr=lr)
    rng = np.random.default_rng(seed)

    def unpack(arrays):
        pos = 0
        for c, k in zip(ids, sizes):
            critics[c] = critics[c].with_params(MlpParams.from_arrays(arrays[pos:pos + k]))
            pos += k

    for step in range(steps):
        unpack(arrays)
        zs, zps = sampler(rng)
        ev = evaluate_objectives(asm, zs, zps, critics, grad=True, club_seed=step, club_critics="fit")
        arrays, state = adam_step(arrays, [-a for c in ids for a in ev.d_critic[c].arrays()], state)
    unpack(arrays)
    return critics


def _widen(c: Critic, spec, widths, cols) -> Critic:
    w0 = c.params.weights[0]
    wide = np.zeros((w0.shape[0], spec.d_in))
    wide[:, cols] = w0
    return Critic(spec, MlpParams([wide, *c.params.weights[1:]], list(c.params.biases)), *widths)


def _constant_third(rng, n=64):
    x = rng.normal(size=(n, 1))
    y = 0.8 * x + 0.6 * rng.normal(size=(n, 1))
    k = np.full((n, 1), 0.7)
    return [x, y, k], [x + rng.normal(size=(n, 1)), y + rng.normal(size=(n, 1)), k]


def test_constant_condition_matches_unconditioned_shared_value():
    diffs = []
    for seed in range(5):
        pa = _only(assemble(3, P, 1, critic_hidden=16), "S(1,2)")
        fa = _only(assemble(3, F, 1, critic_hidden=16), "S(1,2|3)")
        cp = init_critics(pa, seed)
        tp, tf = pa.terms["S(1,2)"], fa.terms["S(1,2|3)"]
        # start both from the same function: zero weights on the constant inputs
        # (z1, z2) -> (z1, z2, z3) and (z1, z2, z1', z2') -> (z1, z2, z3, z1', z2', z3')
        cf = {}
        for t_p, t_f, cols in ((tp[0], tf[0], [0, 1]), (tp[1], tf[1], [0, 1, 3, 4])):
            cf[t_f.critic_id] = _widen(cp[t_p.critic_id], fa.critic_specs[t_f.critic_id],
                                       fa.critic_widths[t_f.critic_id], cols)
        cp = _fit_critics(pa, dict(cp), _constant_third, 1500, seed)
        cf = _fit_critics(fa, cf, _constant_third, 1500, seed)
        rng = np.random.default_rng([seed, 9])
        vp, vf = [], []
        for k in range(20):
            zs, zps = _constant_third(rng)
            vp.append(evaluate_objectives(pa, zs, zps, cp, club_seed=k).total)
            vf.append(evaluate_objectives(fa, zs, zps, cf, club_seed=k).total)
        diffs.append(np.mean(vp) - np.mean(vf))
    assert abs(np.mean(diffs)) <= 0.05


def test_shared_objective_training_captures_shared_latent():
    model_def = GaussianFactorModel.random(m=2, dim=4, seed=0, count_modalities=())
    ds = generate(model_def, 512, 0)
    cfg = TrainConfig(encoder_hidden=(16,), critic_hidden=16, lr=1e-3, pretrain_epochs=50, joint_epochs=200,
                      disable_unique=True)
    model = train(ds, cfg)
    assert model.objective_labels == ["S(1,2)"]
    emb = [model.encoders.encode(i, x) for i, x in enumerate(ds.modalities)]
    critic = model.critics["S(1,2)#0"]
    nce = np.mean([info_nce(emb[0][i:i + 128], emb[1][i:i + 128], critic).value for i in range(0, 512, 128)])
    assert nce > 0.2


def test_objective_terms_describe():
    terms = objective_terms(parse_objective("S(1,2)"), 3)
    assert [t.describe() for t in terms] == ["+NCE(z1; z2)", "-CondCLUB(z1; z2 | z1', z2')"]
    assert terms[0].critic_id == "S(1,2)#0"
