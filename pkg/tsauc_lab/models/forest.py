"""Random forest for binary labels with per-tree feature subsets and out-of-bag bookkeeping."""

import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from tsauc_lab.errors import InfeasibleError, ValidationError
from tsauc_lab.utils.seeding import rng_for

logger = logging.getLogger(__name__)

LEAF = -1
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with binary labels (True = faller), one row per subject."""

    ids: tuple
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=bool).ravel()
        ids = tuple(str(i) for i in self.ids)
        if X.ndim != 2:
            raise ValidationError(f"X must be 2-D, got shape {X.shape}")
        if not (X.shape[0] == y.size == len(ids)):
            raise ValidationError(f"rows misaligned: X {X.shape[0]}, y {y.size}, ids {len(ids)}")
        if X.shape[1] < 1:
            raise ValidationError("need at least one feature")
        if not np.all(np.isfinite(X)):
            raise ValidationError("feature matrix contains non-finite values")
        if len(set(ids)) != len(ids):
            raise ValidationError("subject ids must be unique")
        names = self.feature_names
        if names is None:
            names = tuple(f"f{j}" for j in range(X.shape[1]))
        names = tuple(names)
        if len(names) != X.shape[1]:
            raise ValidationError(f"{len(names)} feature names for {X.shape[1]} columns")
        if len(ids) < 4:
            raise InfeasibleError(f"need at least 4 subjects, got {len(ids)}")
        if y.all() or not y.any():
            raise InfeasibleError("dataset holds a single class; both fallers and non-fallers are required")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "feature_names", names)

    @property
    def n_subjects(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def n_pos(self):
        return int(self.y.sum())

    @property
    def n_neg(self):
        return int((~self.y).sum())

    def subset(self, rows):
        rows = np.asarray(rows)
        return LabeledDataset(
            ids=tuple(self.ids[i] for i in rows),
            X=self.X[rows],
            y=self.y[rows],
            feature_names=self.feature_names,
        )

    def select_features(self, columns):
        columns = list(columns)
        return LabeledDataset(
            ids=self.ids,
            X=self.X[:, columns],
            y=self.y,
            feature_names=tuple(self.feature_names[j] for j in columns),
        )


@dataclass(frozen=True)
class Hyperparams:
    leaf_size: int
    features_per_tree: int
    n_trees: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.leaf_size < 1:
            raise ValidationError(f"leaf_size must be >= 1, got {self.leaf_size}")
        if self.features_per_tree < 1:
            raise ValidationError(f"features_per_tree must be >= 1, got {self.features_per_tree}")
        if self.n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {self.n_trees}")


@dataclass(frozen=True)
class DecisionTree:
    """
    Flat binary tree. Node i is a leaf when feature[i] == LEAF; otherwise rows
    with x[feature] < threshold go to left[i], the others to right[i].
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    features: np.ndarray
    in_bag: np.ndarray

    @property
    def oob_mask(self):
        return self.in_bag == 0

    def leaves(self):
        return np.flatnonzero(self.feature == LEAF)

    def apply(self, X):
        """Leaf index reached by every row of X."""
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            current = node[rows]
            go_left = X[rows, self.feature[current]] < self.threshold[current]
            node[rows] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[node] != LEAF
        return node

    def predict(self, X):
        return self.value[self.apply(X)]


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    hyperparams: Hyperparams
    ids: tuple
    feature_names: tuple

    @property
    def in_bag_counts(self):
        """(n_trees, n_subjects) bootstrap multiplicities, subjects in `ids` order."""
        return np.vstack([tree.in_bag for tree in self.trees])

    @property
    def n_features(self):
        return len(self.feature_names)


@dataclass(frozen=True)
class OobScores:
    ids: tuple
    labels: np.ndarray
    oob_tree_count: np.ndarray
    posterior: np.ndarray


def _gini(pos, total):
    q = pos / total
    return 2.0 * q * (1.0 - q)


def _best_split(X, y, w, rows, features, leaf_size):
    """
    Best Gini split of a node over the tree's features

    Ties go to the lowest feature index, then the lowest threshold.

    Returns:
        tuple: (feature, threshold) or None when no admissible split improves impurity
    """
    weights = w[rows]
    total = weights.sum()
    pos_weights = weights * y[rows]
    pos_total = pos_weights.sum()
    parent = _gini(pos_total, total)

    best_gain = MIN_GAIN
    best = None
    for f in features:
        values = X[rows, f]
        order = np.argsort(values, kind="stable")
        xs = values[order]
        cw = np.cumsum(weights[order])[:-1]
        cp = np.cumsum(pos_weights[order])[:-1]
        # Candidate cut after position i only between distinct values
        valid = (xs[:-1] < xs[1:]) & (cw >= leaf_size) & (total - cw >= leaf_size)
        if not valid.any():
            continue
        with np.errstate(invalid="ignore", divide="ignore"):
            child = (cw * _gini(cp, cw) + (total - cw) * _gini(pos_total - cp, total - cw)) / total
        gain = np.where(valid, parent - child, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = gain[i]
            best = (int(f), float((xs[i] + xs[i + 1]) / 2))
    return best


def _grow_tree(X, y, counts, features, leaf_size):
    """Greedy CART growth on the bootstrap sample given by `counts` (multiplicities)."""
    w = counts.astype(float)
    feature, threshold, left, right, value, n_samples = [], [], [], [], [], []

    def new_node(rows):
        total = w[rows].sum()
        feature.append(LEAF)
        threshold.append(np.nan)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float((w[rows] * y[rows]).sum() / total))
        n_samples.append(int(total))
        return len(feature) - 1

    root_rows = np.flatnonzero(counts > 0)
    stack = [(new_node(root_rows), root_rows)]
    while stack:
        node, rows = stack.pop()
        pure = value[node] in (0.0, 1.0)
        if pure or n_samples[node] < 2 * leaf_size:
            continue
        split = _best_split(X, y, w, rows, features, leaf_size)
        if split is None:
            continue
        f, t = split
        goes_left = X[rows, f] < t
        left_rows, right_rows = rows[goes_left], rows[~goes_left]
        feature[node], threshold[node] = f, t
        left[node] = new_node(left_rows)
        right[node] = new_node(right_rows)
        # Right pushed first so the left subtree is numbered first
        stack.append((right[node], right_rows))
        stack.append((left[node], left_rows))

    return (
        np.array(feature, dtype=np.intp),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(value, dtype=float),
        np.array(n_samples, dtype=np.intp),
    )


def _fit_tree(X, y, hp, tree_index):
    rng = rng_for(hp.seed, tree_index)
    n, d = X.shape
    counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
    # M features drawn once per tree, used for all of its splits
    features = np.sort(rng.choice(d, size=hp.features_per_tree, replace=False))
    arrays = _grow_tree(X, y.astype(float), counts, features, hp.leaf_size)
    return DecisionTree(*arrays, features=features, in_bag=counts)


def _canonical_order(ids):
    return np.array(sorted(range(len(ids)), key=lambda i: ids[i]), dtype=np.intp)


def train(ds, hp, n_jobs=1):
    """
    Train a forest of hp.n_trees trees on bootstrap samples of ds

    Rows are put in canonical subject-id order before any random draw, so the
    model does not depend on the row order of ds. Tree t draws its bootstrap
    and its feature subset from the stream (hp.seed, t): the result is the
    same for any n_jobs.

    Args:
        ds (LabeledDataset): Training data
        hp (Hyperparams): Leaf size, features per tree, tree count, seed
        n_jobs (int): joblib workers for tree construction

    Returns:
        ForestModel: Immutable trained model
    """
    if hp.features_per_tree > ds.n_features:
        raise ValidationError(
            f"features_per_tree={hp.features_per_tree} exceeds the {ds.n_features} available features"
        )
    if ds.y.all() or not ds.y.any():
        raise InfeasibleError("cannot train on a single-class dataset")

    order = _canonical_order(ds.ids)
    X, y = ds.X[order], ds.y[order]
    if n_jobs == 1:
        trees = [_fit_tree(X, y, hp, t) for t in range(hp.n_trees)]
    else:
        trees = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_fit_tree)(X, y, hp, t) for t in range(hp.n_trees)
        )
    logger.debug(
        f"Trained {hp.n_trees} trees (LS={hp.leaf_size}, M={hp.features_per_tree}) on {ds.n_subjects} subjects"
    )
    return ForestModel(
        trees=tuple(trees),
        hyperparams=hp,
        ids=tuple(ds.ids[i] for i in order),
        feature_names=ds.feature_names,
    )


def aligned_rows(model, ds):
    """Row index in ds of every subject of the model, model order."""
    position = {subject: i for i, subject in enumerate(ds.ids)}
    missing = [s for s in model.ids if s not in position]
    if missing or len(model.ids) != ds.n_subjects:
        raise ValidationError(f"model was not trained on this dataset (e.g. subject {missing[:1]})")
    if ds.n_features != model.n_features:
        raise ValidationError(f"model has {model.n_features} features, dataset {ds.n_features}")
    return np.array([position[s] for s in model.ids], dtype=np.intp)


def oob_posteriors(model, ds):
    """
    Average leaf posterior of every subject over the trees that left it out of bag

    Args:
        model (ForestModel): Forest trained on ds
        ds (LabeledDataset): The training data, any row order

    Returns:
        OobScores: Per-subject scores in ds row order
    """
    rows = aligned_rows(model, ds)
    X = ds.X[rows]
    total = np.zeros(len(rows))
    count = np.zeros(len(rows), dtype=np.intp)
    for tree in model.trees:
        oob = tree.oob_mask
        if oob.any():
            total[oob] += tree.predict(X[oob])
            count[oob] += 1

    if np.any(count == 0):
        never = [model.ids[i] for i in np.flatnonzero(count == 0)]
        raise InfeasibleError(
            f"subject {never[0]} was never out of bag ({len(never)} in total); train with more trees"
        )

    # Back to ds row order
    posterior = np.empty(ds.n_subjects)
    oob_count = np.empty(ds.n_subjects, dtype=np.intp)
    posterior[rows] = total / count
    oob_count[rows] = count
    return OobScores(ids=ds.ids, labels=ds.y.copy(), oob_tree_count=oob_count, posterior=posterior)


def predict_posterior(model, x):
    """
    Mean leaf posterior over all trees for one feature row

    Args:
        model (ForestModel): Trained forest
        x (array-like): D finite values

    Returns:
        float: Posterior of the positive class in [0, 1]
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(predict_posteriors(model, x)[0])


def predict_posteriors(model, X):
    """Row-wise predict_posterior for a matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValidationError(f"expected rows of {model.n_features} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("feature rows must be finite")
    return np.mean([tree.predict(X) for tree in model.trees], axis=0)
