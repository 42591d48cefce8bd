import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cookie.errors import InputError, NumericError
from cookie.oracle import (
    DiscreteJoint,
    GaussianPair,
    discrete_cmi,
    discrete_mi,
    discretized_gaussian_joint,
    gaussian_mi,
    gaussian_mi_from_rho,
    inclusion_terms,
    interaction_info,
    random_joint,
    verify_inclusion_identity,
)

LN2 = math.log(2.0)


def xor_triple() -> DiscreteJoint:
    p = np.zeros((2, 2, 2))
    for a, b in itertools.product(range(2), repeat=2):
        p[a, b, a ^ b] = 0.25
    return DiscreteJoint(p)


def copy_triple() -> DiscreteJoint:
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = p[1, 1, 1] = 0.5
    return DiscreteJoint(p)


def product_triple(seed=0) -> DiscreteJoint:
    rng = np.random.default_rng(seed)
    ps = [rng.dirichlet(np.ones(k)) for k in (2, 3, 4)]
    return DiscreteJoint(np.einsum("i,j,k->ijk", *ps))


def test_joint_validation():
    with pytest.raises(InputError):
        DiscreteJoint(np.array([0.5, 0.4]))
    with pytest.raises(InputError):
        DiscreteJoint(np.array([1.2, -0.2]))
    with pytest.raises(InputError):
        DiscreteJoint(np.full((2,) * 5, 1 / 32))


def test_product_has_zero_mi():
    j = product_triple()
    for a, b in ((0, 1), (0, 2), (1, 2)):
        assert abs(discrete_mi(j, a, b)) < 1e-12


def test_copy_channel_is_ln2():
    assert discrete_mi(DiscreteJoint(np.array([[0.5, 0], [0, 0.5]])), 0, 1) == pytest.approx(LN2, abs=1e-15)


def test_binary_symmetric_channel():
    e = 0.25
    j = DiscreteJoint(0.5 * np.array([[1 - e, e], [e, 1 - e]]))
    h = -e * math.log(e) - (1 - e) * math.log(1 - e)
    assert discrete_mi(j, 0, 1) == pytest.approx(LN2 - h, abs=1e-14)
    assert discrete_mi(j, 0, 1) == pytest.approx(0.1308, abs=1e-4)


def test_cmi_examples():
    j = product_triple(1)
    assert discrete_cmi(j, 0, 1, 2) == pytest.approx(discrete_mi(j, 0, 1), abs=1e-12)
    assert discrete_cmi(xor_triple(), 0, 1, 2) == pytest.approx(LN2, abs=1e-14)
    # c = a: conditioning removes all of a's variability
    rng = np.random.default_rng(2)
    pab = rng.dirichlet(np.ones(6)).reshape(2, 3)
    p = np.zeros((2, 3, 2))
    for a in range(2):
        p[a, :, a] = pab[a]
    assert abs(discrete_cmi(DiscreteJoint(p), 0, 1, 2)) < 1e-14


def test_interaction_examples():
    assert abs(interaction_info(product_triple(3), 0, 1, 2)) < 1e-12
    assert interaction_info(xor_triple(), 0, 1, 2) == pytest.approx(-LN2, abs=1e-14)
    assert interaction_info(copy_triple(), 0, 1, 2) == pytest.approx(LN2, abs=1e-14)


def test_inclusion_identity_examples():
    t = inclusion_terms(xor_triple())
    assert t.pairwise == pytest.approx((0, 0, 0), abs=1e-15)
    assert t.interaction == pytest.approx(-LN2, abs=1e-14)
    assert t.conditional == pytest.approx((LN2,) * 3, abs=1e-14)
    assert abs(t.residual) < 1e-14
    assert abs(verify_inclusion_identity(product_triple())) < 1e-12
    with pytest.raises(InputError):
        verify_inclusion_identity(DiscreteJoint(np.full((2, 2), 0.25)))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_joint_identities(seed):
    j = random_joint(np.random.default_rng(seed), arity=3)
    assert abs(verify_inclusion_identity(j)) < 1e-10
    vals = [interaction_info(j, *perm) for perm in itertools.permutations(range(3))]
    assert max(vals) - min(vals) <= 1e-12
    for a, b, c in itertools.permutations(range(3)):
        assert discrete_mi(j, a, b) == pytest.approx(interaction_info(j, a, b, c) + discrete_cmi(j, a, b, c),
                                                     abs=1e-12)
        assert discrete_mi(j, a, b) >= -1e-15 and discrete_cmi(j, a, b, c) >= -1e-15


def test_text_round_trip():
    j = random_joint(np.random.default_rng(9), arity=4)
    back = DiscreteJoint.from_text(j.to_text())
    assert np.array_equal(back.p, j.p)
    assert j.to_text().splitlines()[0] == " ".join(str(v) for v in (4, *j.alphabet_sizes))


def test_gaussian_examples():
    block = np.diag([1.0, 2.0, 3.0])
    assert abs(gaussian_mi(GaussianPair(block, 1))) < 1e-15
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    assert gaussian_mi(GaussianPair(cov, 1)) == pytest.approx(-0.5 * math.log(0.36), abs=1e-14)
    assert gaussian_mi_from_rho(0.8) == pytest.approx(0.5108, abs=1e-4)


def test_gaussian_grid_discretization_agrees():
    approx = discrete_mi(discretized_gaussian_joint(0.8, bins=200), 0, 1)
    assert abs(approx - gaussian_mi_from_rho(0.8)) < 0.01


def test_gaussian_errors():
    with pytest.raises(NumericError):
        gaussian_mi(GaussianPair(np.array([[1.0, 2.0], [2.0, 1.0]]), 1))
    with pytest.raises(NumericError):
        GaussianPair(np.array([[1.0, 0.5], [0.4, 1.0]]), 1)


def test_gaussian_mi_monotone_in_rho():
    grid = np.linspace(0.0, 0.999, 200)
    vals = [gaussian_mi(GaussianPair(np.array([[1, r], [r, 1]]), 1)) for r in grid]
    assert np.all(np.diff(vals) > 0)
    assert gaussian_mi_from_rho(-0.5) == gaussian_mi_from_rho(0.5)
    assert gaussian_mi_from_rho(1 - 1e-12) > 13
