"""Population-reduction studies: how often each testing approach still separates the groups."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from tsauc_lab.config import DEFAULT_FRACTIONS
from tsauc_lab.errors import InfeasibleError, ValidationError
from tsauc_lab.models.mmd import DEFAULT_PERMUTATIONS, mmd_test
from tsauc_lab.models.tsauc import SearchSpace, ts_auc_test
from tsauc_lab.utils.rank_stats import univariate_tests
from tsauc_lab.utils.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

MODES = ("uniform_population", "nonfaller_only")
METHODS = ("ts_auc", "mmd", "mww", "mww_bonferroni", "mww_holm", "mww_sidak")
MAX_REDRAWS = 100
MIN_PER_GROUP = 2


@dataclass(frozen=True)
class ReductionProtocol:
    mode: str = "uniform_population"
    fractions: tuple = DEFAULT_FRACTIONS
    repeats: int = 12
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        fractions = tuple(float(f) for f in self.fractions)
        if not fractions or any(not 0 < f <= 1 for f in fractions):
            raise ValidationError(f"fractions must lie in (0, 1], got {fractions}")
        if any(a <= b for a, b in zip(fractions, fractions[1:])):
            raise ValidationError(f"fractions must be strictly decreasing, got {fractions}")
        if self.repeats < 1:
            raise ValidationError(f"repeats must be >= 1, got {self.repeats}")
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        object.__setattr__(self, "fractions", fractions)


@dataclass(frozen=True)
class RepeatOutcome:
    method: str
    fraction: float
    repeat: int
    decision: bool
    p_value: float
    n_subjects: int
    n_fallers: int


@dataclass(frozen=True)
class ReductionCurve:
    mode: str
    outcomes: tuple = field(repr=False)

    def runs_frame(self):
        """One row per (method, fraction, repeat)."""
        return pd.DataFrame(
            [
                {
                    "method": o.method,
                    "mode": self.mode,
                    "fraction": o.fraction,
                    "repeat": o.repeat,
                    "decision": int(o.decision),
                    "p_value": o.p_value,
                }
                for o in self.outcomes
            ],
            columns=["method", "mode", "fraction", "repeat", "decision", "p_value"],
        )

    def summary_frame(self):
        """fraction_significant per (method, fraction), methods in METHODS order."""
        runs = self.runs_frame()
        grouped = runs.groupby(["method", "fraction"], sort=False)["decision"].mean().reset_index()
        grouped = grouped.rename(columns={"decision": "fraction_significant"})
        grouped.insert(1, "mode", self.mode)
        order = {m: i for i, m in enumerate(METHODS)}
        grouped["_order"] = grouped["method"].map(order)
        grouped = grouped.sort_values(["_order", "fraction"], ascending=[True, False], kind="stable")
        return grouped.drop(columns="_order").reset_index(drop=True)

    def fraction_significant(self, method, fraction):
        decisions = [o.decision for o in self.outcomes if o.method == method and o.fraction == fraction]
        return float(np.mean(decisions))


def _draw_subset(ds, proto, fraction, rng):
    """Row indices retained at this fraction."""
    if proto.mode == "nonfaller_only":
        fallers = np.flatnonzero(ds.y)
        nonfallers = np.flatnonzero(~ds.y)
        keep = int(round(fraction * nonfallers.size))
        chosen = rng.choice(nonfallers, size=keep, replace=False)
        return np.sort(np.concatenate([fallers, chosen]))

    size = int(round(fraction * ds.n_subjects))
    for attempt in range(MAX_REDRAWS):
        rows = np.sort(rng.choice(ds.n_subjects, size=size, replace=False))
        n_fallers = int(ds.y[rows].sum())
        if n_fallers >= MIN_PER_GROUP and size - n_fallers >= MIN_PER_GROUP:
            if attempt:
                logger.warning(f"Fraction {fraction}: subsample redrawn {attempt} time(s) to keep both groups")
            return rows
    raise InfeasibleError(
        f"no subsample of {size} subjects with >= {MIN_PER_GROUP} per group after {MAX_REDRAWS} draws"
    )


def _run_repeat(ds, proto, fraction_index, fraction, repeat, space, n_permutations):
    rng = rng_for(proto.seed, fraction_index, repeat)
    rows = _draw_subset(ds, proto, fraction, rng)
    sub = ds.subset(rows)
    repeat_seed = derive_seed(proto.seed, fraction_index, repeat, 1)

    tsauc = ts_auc_test(sub, SearchSpace(space.ls_values, space.m_values, space.n_trees, repeat_seed))
    mmd = mmd_test(sub, n_permutations=n_permutations, seed=repeat_seed)
    univariate = univariate_tests(sub, alpha=proto.alpha)
    min_p = min(r.p_value for r in univariate)

    decisions = {
        "ts_auc": (tsauc.reject(proto.alpha), tsauc.p_value),
        "mmd": (mmd.reject(proto.alpha), mmd.p_value),
        "mww": (any(r.significant_raw for r in univariate), min_p),
        "mww_bonferroni": (any(r.significant_bonferroni for r in univariate), min_p),
        "mww_holm": (any(r.significant_holm for r in univariate), min_p),
        "mww_sidak": (any(r.significant_sidak for r in univariate), min_p),
    }
    return [
        RepeatOutcome(
            method=method,
            fraction=fraction,
            repeat=repeat,
            decision=bool(decision),
            p_value=float(p_value),
            n_subjects=sub.n_subjects,
            n_fallers=sub.n_pos,
        )
        for method, (decision, p_value) in decisions.items()
    ]


def run_reduction(ds, proto, space=None, n_permutations=DEFAULT_PERMUTATIONS, n_jobs=1):
    """
    Subsample the cohort at every retained fraction and record each method's decision

    The univariate approaches reject when any feature is significant (raw MWW)
    or survives the correction. Repeat r at fraction index i draws from the
    stream (seed, i, r), so results do not depend on n_jobs.

    Args:
        ds (LabeledDataset): Full cohort
        proto (ReductionProtocol): Mode, fractions, repeats, alpha, seed
        space (SearchSpace, optional): ts-AUC grid used on every subsample
        n_permutations (int): MMD permutations per subsample
        n_jobs (int): joblib workers over repeats

    Returns:
        ReductionCurve: All per-repeat outcomes
    """
    space = space or SearchSpace()
    if proto.mode == "nonfaller_only":
        smallest = int(round(min(proto.fractions) * ds.n_neg))
        if smallest < MIN_PER_GROUP or ds.n_pos < MIN_PER_GROUP:
            raise InfeasibleError(
                f"nonfaller_only keeps {smallest} non-fallers at fraction {min(proto.fractions)}; need >= {MIN_PER_GROUP}"
            )

    jobs = [
        (i, fraction, repeat) for i, fraction in enumerate(proto.fractions) for repeat in range(proto.repeats)
    ]
    logger.info(f"Population reduction ({proto.mode}): {len(proto.fractions)} fractions x {proto.repeats} repeats")
    batches = Parallel(n_jobs=n_jobs)(
        delayed(_run_repeat)(ds, proto, i, fraction, repeat, space, n_permutations) for i, fraction, repeat in jobs
    )
    outcomes = tuple(o for batch in batches for o in batch)
    curve = ReductionCurve(mode=proto.mode, outcomes=outcomes)
    for fraction in proto.fractions:
        rate = curve.fraction_significant("ts_auc", fraction)
        se = standard_error(rate, proto.repeats)
        logger.info(f"fraction={fraction:.2f}: ts-AUC significant in {rate:.0%} of repeats (SE {se:.2f})")
    return curve


def standard_error(rate, n):
    """Binomial standard error of a rejection rate over n repeats."""
    return math.sqrt(max(rate * (1 - rate), 0.0) / n) if n else float("nan")
