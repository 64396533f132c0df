"""
ts-AUC two-sample test: pick the forest hyperparameters that maximise the
out-of-bag AUC, then apply a one-sided Mann-Whitney-Wilcoxon test to the OOB
scores of the retrained best forest. Also OOB permutation importance and the
nested-model feature-count selection used to interpret the result.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from tsauc_lab.errors import InfeasibleError, ValidationError
from tsauc_lab.models.forest import Hyperparams, aligned_rows, oob_posteriors, train
from tsauc_lab.utils.rank_stats import GroupedScores, auc_from_u, mww_pvalue, u_statistic
from tsauc_lab.utils.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

# Stream keys under the user seed
GRID_STREAM = 0
STAR_STREAM = 1
IMPORTANCE_STREAM = 2
MODEL_SIZE_STREAM = 3

DEFAULT_LS = tuple(range(8, 20))
DEFAULT_M = tuple(range(1, 9))
DEFAULT_TREES = 200
DEFAULT_RUNS = 20


@dataclass(frozen=True)
class SearchSpace:
    ls_values: tuple = DEFAULT_LS
    m_values: tuple = DEFAULT_M
    n_trees: int = DEFAULT_TREES
    seed: int = 0

    def __post_init__(self):
        ls_values = tuple(int(v) for v in self.ls_values)
        m_values = tuple(int(v) for v in self.m_values)
        if not ls_values or not m_values:
            raise ValidationError("search space is empty")
        if min(ls_values) < 1 or min(m_values) < 1:
            raise ValidationError("leaf sizes and feature counts must be >= 1")
        if self.n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {self.n_trees}")
        object.__setattr__(self, "ls_values", ls_values)
        object.__setattr__(self, "m_values", m_values)

    def grid(self, n_features):
        """(LS, M) pairs usable with n_features columns, in enumeration order."""
        return [(ls, m) for ls in self.ls_values for m in self.m_values if m <= n_features]


@dataclass(frozen=True)
class TsAucResult:
    auc_star: float
    best_hp: Hyperparams
    oob_scores: object
    p_value: float
    auc_grid: dict
    final_auc: float
    model: object = field(repr=False, default=None)

    def reject(self, alpha):
        return self.p_value < alpha


@dataclass(frozen=True)
class FeatureImportance:
    feature: str
    d: float | None
    sigma: float | None
    I: float | None
    n_trees: int
    degenerate: bool = False


@dataclass(frozen=True)
class ModelSizePoint:
    k: int
    mean_auc: float
    std: float


@dataclass(frozen=True)
class ImportanceReport:
    importances: tuple
    ranking: tuple
    selected_feature_count: int | None = None
    auc_by_model_size: tuple = ()

    def top_features(self, k=None):
        k = self.selected_feature_count if k is None else k
        return self.ranking[:k]


def oob_auc(model, ds):
    """OOB scores of a trained forest and their AUC against the labels."""
    scores = oob_posteriors(model, ds)
    g = GroupedScores.from_labels(scores.posterior, scores.labels)
    return scores, auc_from_u(u_statistic(g), g.n_pos, g.n_neg)


def _evaluate(ds, ls, m, n_trees, seed):
    hp = Hyperparams(leaf_size=ls, features_per_tree=m, n_trees=n_trees, seed=seed)
    _, value = oob_auc(train(ds, hp), ds)
    logger.debug(f"LS={ls} M={m}: AUC_OOB={value:.4f}")
    return value


def _select(auc_grid):
    """argmax AUC; ties go to the smaller M, then the larger LS."""
    return max(auc_grid, key=lambda key: (auc_grid[key], -key[1], key[0]))


def ts_auc_test(ds, space=None, n_jobs=1):
    """
    Run the ts-AUC test

    Every (LS, M) of the grid trains a forest with the same derived seed and is
    scored by its OOB AUC. The best pair is retrained with a fresh derived seed
    (RF*), and the one-sided MWW test is applied to RF*'s OOB posteriors.

    Args:
        ds (LabeledDataset): Two groups, each with at least 2 subjects
        space (SearchSpace, optional): Grid bounds, tree count, seed
        n_jobs (int): joblib workers over grid points

    Returns:
        TsAucResult: AUC*, best hyperparameters, RF* scores and p-value
    """
    space = space or SearchSpace()
    if ds.n_pos < 2 or ds.n_neg < 2:
        raise InfeasibleError(f"need at least 2 subjects per group, got {ds.n_pos} fallers / {ds.n_neg} non-fallers")
    grid = space.grid(ds.n_features)
    if not grid:
        raise ValidationError(f"no (LS, M) pair fits {ds.n_features} features")

    grid_seed = derive_seed(space.seed, GRID_STREAM)
    logger.info(f"Exploring {len(grid)} hyperparameter pairs with {space.n_trees} trees each")
    values = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate)(ds, ls, m, space.n_trees, grid_seed) for ls, m in grid
    )
    auc_grid = dict(zip(grid, values))

    best_ls, best_m = _select(auc_grid)
    best_hp = Hyperparams(
        leaf_size=best_ls,
        features_per_tree=best_m,
        n_trees=space.n_trees,
        seed=derive_seed(space.seed, STAR_STREAM),
    )
    model = train(ds, best_hp)
    scores, final_auc = oob_auc(model, ds)
    p_value = mww_pvalue(GroupedScores.from_labels(scores.posterior, scores.labels), alternative="greater")
    logger.info(f"AUC*={auc_grid[(best_ls, best_m)]:.4f} at LS={best_ls}, M={best_m}; p-value={p_value:.4g}")

    return TsAucResult(
        auc_star=auc_grid[(best_ls, best_m)],
        best_hp=best_hp,
        oob_scores=scores,
        p_value=p_value,
        auc_grid=auc_grid,
        final_auc=final_auc,
        model=model,
    )


def _oob_error(predictions, labels):
    return float(np.mean((predictions >= 0.5) != labels))


def permutation_importance(model, ds, seed=0, permute=None):
    """
    OOB permutation importance I_j = d_j / sigma_j

    For every tree that uses feature j, the 0-1 error (threshold 0.5) on the
    tree's OOB subjects is recomputed after permuting column j among those
    subjects; d_j and sigma_j are the mean and standard deviation of the
    increase over exactly those trees. sigma_j = 0 gives I_j = 0 flagged as
    degenerate; features used by fewer than 2 trees get no I_j.

    Args:
        model (ForestModel): Forest trained on ds
        ds (LabeledDataset): Training data
        seed (int): Seed of the permutation stream
        permute (callable, optional): permute(indices, rng) -> indices; defaults to rng.permutation

    Returns:
        ImportanceReport: Per-feature importances and the descending ranking
    """
    permute = permute or (lambda indices, rng: rng.permutation(indices))
    rows = aligned_rows(model, ds)
    X, y = ds.X[rows], ds.y[rows]
    increases = {j: [] for j in range(model.n_features)}

    for t, tree in enumerate(model.trees):
        oob = np.flatnonzero(tree.oob_mask)
        if oob.size == 0:
            continue
        rng = rng_for(seed, t)
        X_oob = X[oob]
        base = _oob_error(tree.predict(X_oob), y[oob])
        for j in tree.features:
            shuffled = X_oob.copy()
            shuffled[:, j] = X_oob[permute(np.arange(oob.size), rng), j]
            increases[int(j)].append(_oob_error(tree.predict(shuffled), y[oob]) - base)

    importances = []
    for j, name in enumerate(model.feature_names):
        values = np.asarray(increases[j])
        if values.size < 2:
            importances.append(FeatureImportance(name, None, None, None, int(values.size)))
            continue
        d = float(values.mean())
        sigma = float(values.std(ddof=1))
        if sigma == 0:
            logger.warning(f"Feature {name}: constant error increase over {values.size} trees, I_j set to 0")
            importances.append(FeatureImportance(name, d, sigma, 0.0, int(values.size), degenerate=True))
        else:
            importances.append(FeatureImportance(name, d, sigma, d / sigma, int(values.size)))

    return ImportanceReport(importances=tuple(importances), ranking=_rank(importances))


def _rank(importances):
    """Descending I_j; undefined I_j last, then by column order."""
    indexed = list(enumerate(importances))
    indexed.sort(key=lambda item: (item[1].I is None, -(item[1].I or 0.0), item[0]))
    return tuple(item.feature for _, item in indexed)


def _model_size_run(ds, hp, k, run):
    hp_k = Hyperparams(
        leaf_size=hp.leaf_size,
        features_per_tree=min(hp.features_per_tree, k),
        n_trees=hp.n_trees,
        seed=derive_seed(hp.seed, MODEL_SIZE_STREAM, k, run),
    )
    _, value = oob_auc(train(ds, hp_k), ds)
    return value


def select_model_size(ds, hp, ranking, runs=DEFAULT_RUNS, n_jobs=1):
    """
    Smallest nested model whose mean AUC_OOB reaches the best mean minus its std

    Forests are trained on the top-k ranked features for k = 1..D, `runs`
    times each with different seeds (M capped at k).

    Args:
        ds (LabeledDataset): Data
        hp (Hyperparams): LS, M, tree count and seed of the reference forest
        ranking (sequence): Feature names, most important first; must cover all features
        runs (int): Repetitions per model size
        n_jobs (int): joblib workers over (k, run)

    Returns:
        tuple: (selected_feature_count, tuple of ModelSizePoint)
    """
    ranking = tuple(ranking)
    if sorted(ranking) != sorted(ds.feature_names):
        raise ValidationError("ranking must list every feature exactly once")
    column = {name: j for j, name in enumerate(ds.feature_names)}
    subsets = {k: ds.select_features([column[name] for name in ranking[:k]]) for k in range(1, ds.n_features + 1)}

    jobs = [(k, run) for k in subsets for run in range(runs)]
    values = Parallel(n_jobs=n_jobs)(delayed(_model_size_run)(subsets[k], hp, k, run) for k, run in jobs)
    by_k = {k: [] for k in subsets}
    for (k, _), value in zip(jobs, values):
        by_k[k].append(value)

    curve = tuple(
        ModelSizePoint(k=k, mean_auc=float(np.mean(v)), std=float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
        for k, v in by_k.items()
    )
    best = max(curve, key=lambda point: (point.mean_auc, -point.k))
    threshold = best.mean_auc - best.std
    selected = min(point.k for point in curve if point.mean_auc >= threshold)
    logger.info(f"Model size selection: best k={best.k} (AUC {best.mean_auc:.4f}), selected k={selected}")
    return selected, curve


def importance_analysis(ds, hp, model=None, runs=DEFAULT_RUNS, n_jobs=1):
    """
    Permutation importance of the forest at hp, followed by model-size selection

    Args:
        ds (LabeledDataset): Data
        hp (Hyperparams): Usually the best hyperparameters found by ts_auc_test
        model (ForestModel, optional): Already trained forest at hp
        runs (int): Repetitions per model size
        n_jobs (int): joblib workers

    Returns:
        ImportanceReport: Importances, ranking, selected count and AUC curve
    """
    model = model or train(ds, hp, n_jobs=n_jobs)
    report = permutation_importance(model, ds, seed=derive_seed(hp.seed, IMPORTANCE_STREAM))
    selected, curve = select_model_size(ds, hp, report.ranking, runs=runs, n_jobs=n_jobs)
    return ImportanceReport(
        importances=report.importances,
        ranking=report.ranking,
        selected_feature_count=selected,
        auc_by_model_size=curve,
    )


def group_profile(ds, features):
    """
    Mean and standard deviation of each feature per group

    Returns:
        list: dicts with feature, group ('faller' / 'non_faller'), mean, std
    """
    column = {name: j for j, name in enumerate(ds.feature_names)}
    rows = []
    for name in features:
        values = ds.X[:, column[name]]
        for group, mask in (("faller", ds.y), ("non_faller", ~ds.y)):
            group_values = values[mask]
            rows.append(
                {
                    "feature": name,
                    "group": group,
                    "mean": float(group_values.mean()),
                    "std": float(group_values.std(ddof=1)) if group_values.size > 1 else 0.0,
                }
            )
    return rows
