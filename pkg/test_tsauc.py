import logging

import numpy as np
import pytest

from conftest import gaussian_groups
from tsauc_lab.errors import InfeasibleError, ValidationError
from tsauc_lab.models.forest import Hyperparams, LabeledDataset, train
from tsauc_lab.models.mmd import mmd_test
from tsauc_lab.models.tsauc import (
    SearchSpace,
    _select,
    group_profile,
    importance_analysis,
    permutation_importance,
    select_model_size,
    ts_auc_test,
)
from tsauc_lab.utils.rank_stats import GroupedScores, auc, mww_pvalue

logger = logging.getLogger(__name__)


def test_default_search_space():
    space = SearchSpace()
    assert space.ls_values == tuple(range(8, 20))
    assert space.m_values == tuple(range(1, 9))
    assert space.n_trees == 200
    assert len(space.grid(17)) == 96
    assert len(space.grid(3)) == 12 * 3


def test_result_is_consistent(make_groups, small_space):
    ds = make_groups(20, 20, 4, shift=1.0, seed=1)
    result = ts_auc_test(ds, small_space)

    assert set(result.auc_grid) == {(2, 1), (2, 2), (4, 1), (4, 2)}
    assert result.auc_star == max(result.auc_grid.values())
    assert result.auc_grid[(result.best_hp.leaf_size, result.best_hp.features_per_tree)] == result.auc_star
    assert result.final_auc == auc(result.oob_scores.posterior, result.oob_scores.labels)
    g = GroupedScores.from_labels(result.oob_scores.posterior, result.oob_scores.labels)
    assert result.p_value == mww_pvalue(g, alternative="greater")
    assert result.reject(0.05) == (result.p_value < 0.05)


def test_grid_search_is_deterministic(make_groups, small_space):
    ds = make_groups(15, 15, 3, shift=0.8, seed=2)
    a = ts_auc_test(ds, small_space)
    b = ts_auc_test(ds, small_space, n_jobs=2)
    assert a.auc_grid == b.auc_grid
    assert a.best_hp == b.best_hp
    assert a.p_value == b.p_value
    np.testing.assert_array_equal(a.oob_scores.posterior, b.oob_scores.posterior)


def test_ties_go_to_smaller_m_then_larger_ls():
    grid = {(8, 1): 0.7, (12, 1): 0.7, (8, 2): 0.7, (19, 3): 0.6}
    assert _select(grid) == (12, 1)
    assert _select({(8, 2): 0.9, (19, 1): 0.8}) == (8, 2)


def test_auc_star_unchanged_by_increasing_affine_column_map(make_groups, small_space):
    ds = make_groups(20, 20, 3, shift=1.0, seed=3)
    X = np.array(ds.X)
    X[:, 1] = 2.0 * X[:, 1] + 1.0
    moved = LabeledDataset(ids=ds.ids, X=X, y=ds.y, feature_names=ds.feature_names)
    assert ts_auc_test(moved, small_space).auc_star == ts_auc_test(ds, small_space).auc_star


def test_empty_grid_and_small_groups(make_groups):
    ds = make_groups(10, 10, 3, seed=4)
    with pytest.raises(ValidationError):
        ts_auc_test(ds, SearchSpace(ls_values=(2,), m_values=(5,), n_trees=10))
    tiny = LabeledDataset(ids="abcde", X=np.arange(5.0)[:, None], y=[True, False, False, False, False])
    with pytest.raises(InfeasibleError):
        ts_auc_test(tiny, SearchSpace(ls_values=(1,), m_values=(1,), n_trees=10))


def test_identity_permutation_changes_nothing(make_groups):
    ds = make_groups(20, 20, 3, shift=1.0, seed=5)
    model = train(ds, Hyperparams(leaf_size=2, features_per_tree=2, n_trees=30, seed=0))
    report = permutation_importance(model, ds, permute=lambda indices, rng: indices)
    for imp in report.importances:
        if imp.n_trees >= 2:
            assert imp.d == 0.0
            assert imp.I == 0.0 and imp.degenerate


def test_threshold_feature_has_the_largest_importance():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((60, 4))
    y = X[:, 0] > 0
    ds = LabeledDataset(ids=[f"r{i}" for i in range(60)], X=X, y=y)
    model = train(ds, Hyperparams(leaf_size=2, features_per_tree=1, n_trees=120, seed=1))
    report = permutation_importance(model, ds, seed=3)
    assert report.ranking[0] == "f0"
    assert all(imp.n_trees >= 2 for imp in report.importances)


def test_noise_feature_ranks_below_signal(separable):
    model = train(separable, Hyperparams(leaf_size=2, features_per_tree=1, n_trees=80, seed=2))
    report = permutation_importance(model, separable, seed=0)
    assert report.ranking[0] == "signal"
    by_name = {imp.feature: imp for imp in report.importances}
    assert abs(by_name["noise1"].I) < by_name["signal"].I


def test_feature_in_fewer_than_two_trees_has_no_importance(make_groups):
    ds = make_groups(10, 10, 3, shift=1.0, seed=8)
    model = train(ds, Hyperparams(leaf_size=2, features_per_tree=1, n_trees=1, seed=0))
    report = permutation_importance(model, ds)
    assert sum(imp.I is None for imp in report.importances) == 3
    assert len(report.ranking) == 3


def test_model_size_with_one_feature(make_groups):
    ds = make_groups(15, 15, 1, shift=1.5, shifted=1, seed=9)
    hp = Hyperparams(leaf_size=2, features_per_tree=1, n_trees=30, seed=0)
    selected, curve = select_model_size(ds, hp, ("f0",), runs=3)
    assert selected == 1
    assert [point.k for point in curve] == [1]


def test_model_size_prefers_the_informative_feature(separable):
    hp = Hyperparams(leaf_size=2, features_per_tree=1, n_trees=40, seed=0)
    selected, curve = select_model_size(separable, hp, ("signal", "noise1", "noise2"), runs=4)
    assert selected == 1
    assert [point.k for point in curve] == [1, 2, 3]
    assert curve[0].mean_auc >= curve[-1].mean_auc


def test_duplicated_feature_needs_only_one_copy():
    rng = np.random.default_rng(10)
    column = np.concatenate([rng.uniform(1, 2, 20), rng.uniform(-2, -1, 20)])
    X = np.repeat(column[:, None], 4, axis=1)
    ds = LabeledDataset(ids=[f"d{i}" for i in range(40)], X=X, y=np.arange(40) < 20)
    hp = Hyperparams(leaf_size=2, features_per_tree=1, n_trees=40, seed=0)
    selected, curve = select_model_size(ds, hp, ds.feature_names, runs=3)
    assert selected == 1
    assert len(curve) == 4


def test_model_size_needs_full_ranking(separable):
    hp = Hyperparams(leaf_size=2, features_per_tree=1, n_trees=10)
    with pytest.raises(ValidationError):
        select_model_size(separable, hp, ("signal",), runs=2)


def test_importance_analysis_and_profile(separable):
    hp = Hyperparams(leaf_size=2, features_per_tree=1, n_trees=40, seed=1)
    report = importance_analysis(separable, hp, runs=3)
    assert report.selected_feature_count == 1
    assert report.top_features() == ("signal",)
    assert len(report.auc_by_model_size) == 3

    profile = group_profile(separable, report.top_features())
    assert [(row["feature"], row["group"]) for row in profile] == [("signal", "faller"), ("signal", "non_faller")]
    assert profile[0]["mean"] > 0 > profile[1]["mean"]


@pytest.mark.slow
def test_null_calibration():
    space = SearchSpace(n_trees=200, seed=0)
    aucs, rejections, replicates = [], 0, 100
    for seed in range(replicates):
        result = ts_auc_test(gaussian_groups(24, 99, 17, shift=0.0, seed=seed), space, n_jobs=-1)
        aucs.append(result.auc_star)
        rejections += result.reject(0.05)
    rate = rejections / replicates
    logger.info(f"Null rejection rate at alpha=0.05: {rate:.2f} over {replicates} replicates, mean AUC* {np.mean(aucs):.3f}")
    assert 0.45 <= np.mean(aucs[:20]) <= 0.70
    assert rate <= 0.10


@pytest.mark.slow
def test_power_matches_mmd_on_a_five_coordinate_shift():
    tsauc_hits, mmd_hits = 0, 0
    for seed in range(20):
        ds = gaussian_groups(24, 99, 17, shift=1.0, shifted=5, seed=100 + seed)
        tsauc_hits += ts_auc_test(ds, SearchSpace(seed=seed), n_jobs=-1).reject(0.05)
        mmd_hits += mmd_test(ds, n_permutations=1000, seed=seed).reject(0.05)
    assert tsauc_hits >= 16 and mmd_hits >= 16
    assert abs(tsauc_hits - mmd_hits) / 20 <= 0.15


@pytest.mark.slow
def test_noise_feature_ranked_below_signal_across_seeds():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        signal = np.concatenate([rng.uniform(1, 2, 20), rng.uniform(-2, -1, 20)])
        X = np.column_stack([signal, rng.standard_normal(40)])
        ds = LabeledDataset(ids=[f"s{i}" for i in range(40)], X=X, y=np.arange(40) < 20)
        model = train(ds, Hyperparams(leaf_size=2, features_per_tree=1, n_trees=200, seed=seed))
        wins += permutation_importance(model, ds, seed=seed).ranking[0] == "f0"
    assert wins >= 18


@pytest.mark.slow
def test_single_informative_feature_selected_across_seeds():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((60, 4))
        X[:30, 0] += 2.5
        ds = LabeledDataset(ids=[f"s{i}" for i in range(60)], X=X, y=np.arange(60) < 30)
        hp = Hyperparams(leaf_size=8, features_per_tree=1, n_trees=200, seed=seed)
        report = importance_analysis(ds, hp, runs=20, n_jobs=-1)
        hits += report.selected_feature_count == 1 and report.ranking[0] == "f0"
    assert hits >= 16


@pytest.mark.slow
def test_pvalue_falls_as_the_shift_grows():
    space = SearchSpace(n_trees=100, seed=0)
    medians = []
    for shift in (0.0, 0.5, 1.0, 2.0):
        pvalues = [
            ts_auc_test(gaussian_groups(24, 99, 17, shift=shift, shifted=5, seed=300 + seed), space, n_jobs=-1).p_value
            for seed in range(9)
        ]
        medians.append(np.median(pvalues))
    logger.info(f"Median p by shift: {medians}")
    assert all(later <= earlier for earlier, later in zip(medians, medians[1:]))
