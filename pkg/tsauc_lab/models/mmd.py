"""Unbiased squared MMD with a Gaussian kernel and a label-permutation null."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import distance

from tsauc_lab.errors import InfeasibleError, ValidationError
from tsauc_lab.utils.seeding import rng_for

logger = logging.getLogger(__name__)

DEFAULT_PERMUTATIONS = 1000


@dataclass(frozen=True)
class MmdResult:
    mmd2_u: float
    p_value: float
    bandwidth: float
    n_permutations: int

    def reject(self, alpha):
        return self.p_value < alpha


def standardize(X):
    """Pooled z-scores; constant columns are only centred."""
    X = np.asarray(X, dtype=float)
    scale = X.std(axis=0)
    constant = scale == 0
    if constant.any():
        logger.warning(f"{int(constant.sum())} constant feature column(s) left unscaled")
    scale[constant] = 1.0
    return (X - X.mean(axis=0)) / scale


def median_bandwidth(Z):
    """Median pairwise Euclidean distance of the pooled sample."""
    h = float(np.median(distance.pdist(Z, metric="euclidean")))
    if h <= 0:
        raise InfeasibleError("median pairwise distance is zero; the points are (mostly) identical")
    return h


def gaussian_kernel(Z, bandwidth):
    """k(a, b) = exp(-||a - b||^2 / (2 h^2)) over all pairs of rows."""
    sq = distance.squareform(distance.pdist(Z, metric="sqeuclidean"))
    return np.exp(-sq / (2.0 * bandwidth**2))


def mmd2_unbiased(K, labels):
    """
    Unbiased MMD^2 from a pooled kernel matrix

    Within-group sums exclude the diagonal; the cross term uses all pairs.

    Args:
        K (np.ndarray): (n, n) kernel matrix
        labels (np.ndarray): Boolean group membership per row

    Returns:
        float: MMD_u^2 (may be negative)
    """
    a = np.asarray(labels, dtype=bool)
    b = ~a
    n, m = int(a.sum()), int(b.sum())
    k_aa = K[np.ix_(a, a)]
    k_bb = K[np.ix_(b, b)]
    k_ab = K[np.ix_(a, b)]
    term_aa = (k_aa.sum() - np.trace(k_aa)) / (n * (n - 1))
    term_bb = (k_bb.sum() - np.trace(k_bb)) / (m * (m - 1))
    term_ab = k_ab.sum() / (n * m)
    return float(term_aa + term_bb - 2.0 * term_ab)


def mmd_test(ds, n_permutations=DEFAULT_PERMUTATIONS, seed=0):
    """
    Kernel two-sample test between fallers and non-fallers

    Args:
        ds (LabeledDataset): Both groups with at least 2 subjects
        n_permutations (int): Label permutations for the null, >= 99
        seed (int): Permutation stream seed

    Returns:
        MmdResult: Statistic, add-one smoothed p-value, bandwidth
    """
    if n_permutations < 99:
        raise ValidationError(f"n_permutations must be >= 99, got {n_permutations}")
    if ds.n_pos < 2 or ds.n_neg < 2:
        raise InfeasibleError(f"need at least 2 subjects per group, got {ds.n_pos} / {ds.n_neg}")

    Z = standardize(ds.X)
    bandwidth = median_bandwidth(Z)
    K = gaussian_kernel(Z, bandwidth)
    observed = mmd2_unbiased(K, ds.y)

    rng = rng_for(seed, 0)
    exceed = 0
    labels = np.array(ds.y)
    for _ in range(n_permutations):
        if mmd2_unbiased(K, rng.permutation(labels)) >= observed:
            exceed += 1
    p_value = (1 + exceed) / (1 + n_permutations)
    logger.info(f"MMD_u^2={observed:.5f} (h={bandwidth:.3f}), p-value={p_value:.4g}")
    return MmdResult(mmd2_u=observed, p_value=p_value, bandwidth=bandwidth, n_permutations=n_permutations)
