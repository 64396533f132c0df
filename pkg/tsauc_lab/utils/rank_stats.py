"""Mann-Whitney U, AUC, MWW p-values and family-wise corrections."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from tsauc_lab.errors import ValidationError

logger = logging.getLogger(__name__)

# Exact null distribution only for small tie-free samples
EXACT_MAX_N = 12
ALTERNATIVES = ("greater", "two_sided")
CORRECTIONS = ("bonferroni", "holm", "sidak")


@dataclass(frozen=True)
class GroupedScores:
    """Scores of the positive group (fallers) and the negative group."""

    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.pos, dtype=float).ravel()
        neg = np.asarray(self.neg, dtype=float).ravel()
        if pos.size == 0 or neg.size == 0:
            raise ValidationError("both groups need at least one score")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise ValidationError("scores must be finite")
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "neg", neg)

    @classmethod
    def from_labels(cls, scores, labels):
        scores = np.asarray(scores, dtype=float)
        labels = np.asarray(labels, dtype=bool)
        return cls(scores[labels], scores[~labels])

    @property
    def n_pos(self):
        return self.pos.size

    @property
    def n_neg(self):
        return self.neg.size


@dataclass(frozen=True)
class CorrectionResult:
    method: str
    pvalues: tuple
    levels: tuple
    decisions: tuple

    @property
    def any_significant(self):
        return any(self.decisions)


@dataclass(frozen=True)
class UnivariateResult:
    feature: str
    p_value: float
    significant_raw: bool
    significant_bonferroni: bool
    significant_holm: bool
    significant_sidak: bool
    level_bonferroni: float
    level_holm: float
    level_sidak: float


def u_statistic(g):
    """
    Mann-Whitney U of the positive group: pairs pos > neg, ties count one half

    Returns:
        float: U in [0, n_pos * n_neg]
    """
    diff = g.pos[:, None] - g.neg[None, :]
    return float(np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0))


def auc_from_u(u, n_pos, n_neg):
    """Empirical AUC, U / (n_pos * n_neg)."""
    if n_pos < 1 or n_neg < 1:
        raise ValidationError("group sizes must be >= 1")
    if not 0 <= u <= n_pos * n_neg:
        raise ValidationError(f"U={u} outside [0, {n_pos * n_neg}]")
    return u / (n_pos * n_neg)


def auc(scores, labels):
    """AUC of scores against boolean labels (True = positive)."""
    g = GroupedScores.from_labels(scores, labels)
    return auc_from_u(u_statistic(g), g.n_pos, g.n_neg)


def mww_pvalue(g, alternative="greater", method="auto"):
    """
    Mann-Whitney-Wilcoxon p-value for the positive group scoring higher

    With method='auto': exact enumeration when n_pos + n_neg <= 12 and there
    are no ties, otherwise the normal approximation with tie-corrected
    variance and continuity correction. 'exact' and 'normal' force one path.

    Args:
        g (GroupedScores): The two samples
        alternative (str): 'greater' or 'two_sided'
        method (str): 'auto', 'exact' or 'normal'

    Returns:
        float: p-value in (0, 1]
    """
    if alternative not in ALTERNATIVES:
        raise ValidationError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")
    pooled = np.concatenate([g.pos, g.neg])
    has_ties = np.unique(pooled).size < pooled.size
    if method == "auto":
        method = "exact" if pooled.size <= EXACT_MAX_N and not has_ties else "normal"
    if method == "exact" and has_ties:
        raise ValidationError("exact enumeration requires tie-free scores")
    if method not in ("exact", "normal"):
        raise ValidationError(f"method must be 'auto', 'exact' or 'normal', got {method!r}")
    if np.unique(pooled).size == 1:
        # Every score tied: no evidence either way
        return 1.0

    result = stats.mannwhitneyu(
        g.pos,
        g.neg,
        alternative=alternative.replace("_", "-"),
        method="exact" if method == "exact" else "asymptotic",
        use_continuity=True,
    )
    return max(float(result.pvalue), np.finfo(float).tiny)


def correct(pvalues, alpha=0.05, method="bonferroni"):
    """
    Per-test significance levels and decisions under a family-wise correction

    Args:
        pvalues (array-like): Raw p-values in [0, 1]
        alpha (float): Family-wise level
        method (str): 'bonferroni', 'holm' (step-down) or 'sidak'

    Returns:
        CorrectionResult: Levels and decisions in the input order
    """
    p = np.asarray(pvalues, dtype=float).ravel()
    if p.size == 0:
        raise ValidationError("need at least one p-value to correct")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValidationError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    m = p.size

    if method == "bonferroni":
        levels = np.full(m, alpha / m)
        decisions = p < levels
    elif method == "sidak":
        levels = np.full(m, 1 - (1 - alpha) ** (1 / m))
        decisions = p < levels
    elif method == "holm":
        order = np.argsort(p, kind="stable")
        levels = np.empty(m)
        levels[order] = alpha / (m - np.arange(m))
        decisions = np.zeros(m, dtype=bool)
        for i in order:
            if p[i] >= levels[i]:
                break
            decisions[i] = True
    else:
        raise ValidationError(f"method must be one of {CORRECTIONS}, got {method!r}")

    return CorrectionResult(
        method=method,
        pvalues=tuple(float(v) for v in p),
        levels=tuple(float(v) for v in levels),
        decisions=tuple(bool(d) for d in decisions),
    )


def univariate_tests(ds, alpha=0.05):
    """
    Two-sided MWW per feature with raw and corrected decisions

    Args:
        ds (LabeledDataset): Feature matrix and labels
        alpha (float): Level for every decision

    Returns:
        list: UnivariateResult per feature, dataset column order
    """
    pvalues = [
        mww_pvalue(GroupedScores.from_labels(ds.X[:, j], ds.y), alternative="two_sided")
        for j in range(ds.n_features)
    ]
    corrections = {method: correct(pvalues, alpha, method) for method in CORRECTIONS}
    results = []
    for j, name in enumerate(ds.feature_names):
        results.append(
            UnivariateResult(
                feature=name,
                p_value=pvalues[j],
                significant_raw=bool(pvalues[j] < alpha),
                significant_bonferroni=corrections["bonferroni"].decisions[j],
                significant_holm=corrections["holm"].decisions[j],
                significant_sidak=corrections["sidak"].decisions[j],
                level_bonferroni=corrections["bonferroni"].levels[j],
                level_holm=corrections["holm"].levels[j],
                level_sidak=corrections["sidak"].levels[j],
            )
        )
    logger.debug(f"Univariate MWW: {sum(r.significant_raw for r in results)} raw rejections")
    return results
