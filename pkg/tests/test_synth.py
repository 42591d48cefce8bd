import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cookie.errors import InputError, UnsupportedError
from cookie.evaluation import ridge_fit
from cookie.synth import (
    GaussianFactorModel,
    SyntheticRegionDataset,
    generate,
    ground_truth_mi,
    quantile_classes,
    unique_latent_mi,
)


def scalar_model(a=1.0, b=0.5, sigma_obs=0.0, count=()):
    return GaussianFactorModel([[[a]], [[a]]], [[[b]], [[b]]], sigma_obs, [1.0], [[0.0], [0.0]], 0.1,
                               count_modalities=count)


# sha256 over the raw float64/int64 buffers of a small reference dataset
GOLDEN = "acba1a2a29a2a7693af562c32cf1e2d8286959b21a3e83ec43b23895694b0ac4"


def checksum(ds: SyntheticRegionDataset) -> str:
    h = hashlib.sha256()
    for x in ds.modalities + [ds.y, ds.classes]:
        h.update(np.ascontiguousarray(x).tobytes())
    return h.hexdigest()


def test_determinism_and_region_independence():
    model = GaussianFactorModel.random(m=3, dim=5, seed=2)
    a, b = generate(model, 40, 7), generate(model, 40, 7)
    assert checksum(a) == checksum(b)
    assert checksum(generate(model, 40, 8)) != checksum(a)
    # region r's draws do not depend on how many regions are generated
    head = generate(model, 20, 7)
    for i in (1, 2):
        assert np.array_equal(head.modalities[i], a.modalities[i][:20])


def test_reference_checksum():
    ds = generate(GaussianFactorModel.random(m=2, dim=3, seed=0, count_modalities=()), 8, 0)
    assert checksum(ds) == GOLDEN


def test_shapes_and_counts():
    ds = generate(GaussianFactorModel.random(m=4, dim=16, seed=1), 512, 0)
    assert ds.n == 512 and ds.m == 4 and ds.dims == (16,) * 4
    assert np.all(ds.modalities[0] >= 0) and np.all(ds.modalities[0] == np.round(ds.modalities[0]))
    assert set(np.unique(ds.classes)) == set(range(5))
    with pytest.raises(InputError):
        generate(GaussianFactorModel.random(seed=1), 1, 0)


def test_noiseless_linear_label_is_recoverable():
    model = GaussianFactorModel.random(m=3, dim=6, seed=4, sigma_obs=0.0, sigma_y=0.0, count_modalities=())
    ds = generate(model, 400, 0)
    x = np.concatenate(ds.modalities, axis=1)
    pred = ridge_fit(x, ds.y, lam=1e-10)(x)
    r2 = 1 - ((pred - ds.y) ** 2).sum() / ((ds.y - ds.y.mean()) ** 2).sum()
    assert abs(r2 - 1.0) < 1e-6


def test_zero_unique_loading_has_zero_unique_mi():
    model = GaussianFactorModel.random(m=2, dim=4, seed=0, count_modalities=())
    model.unique_loadings[1] = np.zeros_like(model.unique_loadings[1])
    assert unique_latent_mi(model, 1) == 0.0
    assert unique_latent_mi(model, 0) > 0


def test_disjoint_latents_have_zero_mi():
    model = GaussianFactorModel.random(m=2, dim=3, seed=0, count_modalities=())
    model.shared_loadings[0] = np.zeros_like(model.shared_loadings[0])
    assert abs(ground_truth_mi(model, 0, 1)) < 1e-12


def test_scalar_correlation_point_eight():
    # var = 1 + 0.25, cov = 1 -> corr 0.8
    mi = ground_truth_mi(scalar_model(), 0, 1)
    assert mi == pytest.approx(-0.5 * math.log(1 - 0.64), abs=1e-12)
    assert mi == pytest.approx(0.5108, abs=1e-4)


def test_mi_invariant_under_scaling():
    model = GaussianFactorModel.random(m=3, dim=3, seed=5, count_modalities=())
    base = ground_truth_mi(model, 1, 2)
    model.shared_loadings = [2 * a for a in model.shared_loadings]
    model.unique_loadings = [2 * b for b in model.unique_loadings]
    model.sigma_obs *= 2
    assert ground_truth_mi(model, 1, 2) == pytest.approx(base, abs=1e-10)


def test_count_modality_has_no_oracle():
    model = GaussianFactorModel.random(m=3, dim=3, seed=0)
    with pytest.raises(UnsupportedError):
        ground_truth_mi(model, 0, 1)
    with pytest.raises(InputError):
        ground_truth_mi(model, 1, 1)


def test_model_validation():
    with pytest.raises(InputError):
        scalar_model(sigma_obs=-1.0)
    with pytest.raises(InputError):
        GaussianFactorModel([[[1.0]]], [[[1.0, 2.0]]], 0.1, [1.0], [[0.0]], 0.1, count_modalities=())
    with pytest.raises(InputError):
        GaussianFactorModel([[[np.nan]]], [[[1.0]]], 0.1, [1.0], [[0.0]], 0.1, count_modalities=())
    with pytest.raises(InputError):
        scalar_model(count=(5,))


@pytest.mark.parametrize("a,b,s", [(1.0, 0.5, 0.0), (1.0, 1.0, 0.3), (0.6, 1.2, 0.5)])
def test_empirical_correlation_matches_model(a, b, s):
    model = scalar_model(a, b, s)
    ds = generate(model, 10_000, 3)
    cov = model.covariance(0, 1)[0, 0]
    implied = cov / model.covariance(0, 0)[0, 0]
    emp = np.corrcoef(ds.modalities[0][:, 0], ds.modalities[1][:, 0])[0, 1]
    assert abs(emp - implied) <= 0.05


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 2000), st.integers(0, 10_000))
def test_quantile_classes_balanced(n, seed):
    y = np.random.default_rng(seed).normal(size=n)
    counts = np.bincount(quantile_classes(y), minlength=5)
    assert counts.size == 5 and np.all(np.abs(counts - n / 5) <= 1)


def test_save_load_bit_exact(tmp_path):
    ds = generate(GaussianFactorModel.random(m=3, dim=4, seed=6), 50, 2)
    ds.save(tmp_path)
    back = SyntheticRegionDataset.load(tmp_path)
    assert checksum(back) == checksum(ds)
    assert back.count_modalities == ds.count_modalities and back.seed == ds.seed
    assert back.model.to_json() == ds.model.to_json()


def test_subset_reindexes_count_modalities():
    ds = generate(GaussianFactorModel.random(m=3, dim=2, seed=0), 10, 0)
    sub = ds.subset([2, 0])
    assert sub.count_modalities == (1,)
    assert np.array_equal(sub.modalities[1], ds.modalities[0])
