import numpy as np
import pytest

from conftest import gaussian_groups
from tsauc_lab.errors import InfeasibleError, ValidationError
from tsauc_lab.models.forest import LabeledDataset
from tsauc_lab.models.mmd import gaussian_kernel, median_bandwidth, mmd2_unbiased, mmd_test, standardize


def test_standardize_is_pooled():
    X = np.column_stack([np.arange(10.0), np.full(10, 3.0)])
    Z = standardize(X)
    assert Z[:, 0].mean() == pytest.approx(0.0, abs=1e-12)
    assert Z[:, 0].std() == pytest.approx(1.0)
    assert np.all(Z[:, 1] == 0.0)


def test_kernel_is_symmetric_psd():
    Z = standardize(np.random.default_rng(0).standard_normal((25, 4)))
    K = gaussian_kernel(Z, median_bandwidth(Z))
    np.testing.assert_allclose(K, K.T)
    np.testing.assert_allclose(np.diag(K), 1.0)
    assert np.linalg.eigvalsh(K).min() >= -1e-8


def test_statistic_is_symmetric_in_group_order():
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((20, 3))
    K = gaussian_kernel(Z, median_bandwidth(Z))
    labels = np.arange(20) < 8
    assert mmd2_unbiased(K, labels) == pytest.approx(mmd2_unbiased(K, ~labels), abs=1e-12)


def test_unbiased_under_random_split():
    rng = np.random.default_rng(2)
    values = []
    for _ in range(100):
        Z = standardize(rng.standard_normal((40, 5)))
        K = gaussian_kernel(Z, median_bandwidth(Z))
        values.append(mmd2_unbiased(K, rng.permutation(np.arange(40) < 20)))
    standard_error = np.std(values, ddof=1) / np.sqrt(len(values))
    assert abs(np.mean(values)) <= 2 * standard_error


def test_pvalue_floor_and_determinism(make_groups):
    ds = make_groups(12, 12, 4, shift=3.0, seed=3)
    a = mmd_test(ds, n_permutations=99, seed=5)
    b = mmd_test(ds, n_permutations=99, seed=5)
    assert a == b
    assert a.p_value >= 1 / 100
    assert a.p_value == pytest.approx(1 / 100)
    assert a.reject(0.05)
    assert a.bandwidth > 0


def test_same_distribution_is_usually_not_rejected(make_groups):
    ds = make_groups(15, 15, 3, shift=0.0, seed=4)
    result = mmd_test(ds, n_permutations=199, seed=0)
    assert 1 / 200 <= result.p_value <= 1.0


def test_identical_points_have_no_bandwidth():
    ds = LabeledDataset(ids="abcd", X=np.ones((4, 2)), y=[True, True, False, False])
    with pytest.raises(InfeasibleError):
        mmd_test(ds, n_permutations=99)


def test_argument_checks(make_groups):
    ds = make_groups(5, 5, 2, seed=6)
    with pytest.raises(ValidationError):
        mmd_test(ds, n_permutations=10)
    lopsided = LabeledDataset(ids="abcde", X=np.arange(10.0).reshape(5, 2), y=[True, False, False, False, False])
    with pytest.raises(InfeasibleError):
        mmd_test(lopsided, n_permutations=99)


@pytest.mark.slow
def test_null_pvalues_are_super_uniform():
    rejections = 0
    for seed in range(500):
        rejections += mmd_test(gaussian_groups(12, 30, 5, seed=seed), n_permutations=99, seed=seed).reject(0.05)
    assert rejections / 500 <= 0.07


@pytest.mark.slow
def test_power_against_a_five_coordinate_shift():
    rejections = 0
    for seed in range(20):
        ds = gaussian_groups(24, 99, 17, shift=1.0, shifted=5, seed=100 + seed)
        rejections += mmd_test(ds, n_permutations=1000, seed=seed).reject(0.05)
    assert rejections >= 16
