"""
Command-line entry point

    python -m tsauc_lab.cli extract TRAJECTORY_DIR LABELS.csv --out features.csv
    python -m tsauc_lab.cli test features.csv --out report.json
    python -m tsauc_lab.cli importance features.csv --out importance.json
    python -m tsauc_lab.cli experiment features.csv --mode nonfaller_only --out reduction.json
"""

import argparse
import glob
import logging
import os
import sys

import pandas as pd
from joblib import Parallel, delayed

from tsauc_lab.config import load_config, log_level
from tsauc_lab.errors import InputError, TsAucError, ValidationError
from tsauc_lab.models.experiments import ReductionProtocol, run_reduction
from tsauc_lab.models.mmd import mmd_test
from tsauc_lab.models.tsauc import (
    IMPORTANCE_STREAM,
    group_profile,
    importance_analysis,
    permutation_importance,
    ts_auc_test,
)
from tsauc_lab.utils.features import FeatureExtractor, read_feature_matrix, write_feature_matrix
from tsauc_lab.utils.rank_stats import univariate_tests
from tsauc_lab.utils.reporting import (
    atomic_write_frame,
    atomic_write_json,
    envelope,
    path_sha256,
    sibling_path,
)
from tsauc_lab.utils.seeding import derive_seed
from tsauc_lab.utils.signal_ingest import read_labels

# Configure logging
logging.basicConfig(level=log_level(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1

MMD_STREAM = 4


def cmd_extract(trajectory_dir, labels_path, out_path, config):
    """
    Turn a directory of trajectory CSVs into the feature matrix

    Args:
        trajectory_dir (str): Directory of `t,x,y` CSVs (or its `condition` subdirectory)
        labels_path (str): `subject_id,label` CSV
        out_path (str): Feature matrix destination
        config (RunConfig): Resampling settings, condition, n_jobs

    Returns:
        dict: The extraction report (also written next to out_path)
    """
    directory = os.path.join(trajectory_dir, config.condition) if config.condition else trajectory_dir
    if not os.path.isdir(directory):
        raise InputError(f"no recordings found: {directory} is not a directory")
    paths = sorted(glob.glob(os.path.join(directory, "*.csv")))
    if not paths:
        raise InputError(f"no recordings found in {directory}")

    labels = {label.subject_id: label.is_faller for label in read_labels(labels_path)}
    logger.info(f"Extracting features from {len(paths)} recordings in {directory}")
    extractor = FeatureExtractor(config.rate_hz, config.effective_window_s)
    vectors = Parallel(n_jobs=config.n_jobs)(delayed(extractor.from_file)(path) for path in paths)

    seen = set()
    kept, skipped = [], []
    for vector in vectors:
        if vector.subject_id in seen:
            raise ValidationError(f"subject {vector.subject_id} appears in more than one recording")
        seen.add(vector.subject_id)
        if vector.subject_id in labels:
            kept.append(vector)
        else:
            skipped.append(vector.subject_id)
    if skipped:
        logger.warning(f"Skipped {len(skipped)} recording(s) without a label: {', '.join(skipped)}")
    if not kept:
        raise InputError("no recording matches a labelled subject")

    write_feature_matrix(kept, labels, out_path)
    report = envelope(
        "extract",
        config,
        directory,
        labels={"path": labels_path, "sha256": path_sha256(labels_path)},
        output=out_path,
        n_subjects=len(kept),
        n_fallers=sum(1 for v in kept if labels[v.subject_id]),
        skipped=skipped,
    )
    atomic_write_json(report, sibling_path(out_path, "_extract.json"))
    return report


def _importance_rows(report):
    return [
        {"feature": imp.feature, "d": imp.d, "sigma": imp.sigma, "I": imp.I, "degenerate": imp.degenerate}
        for imp in report.importances
    ]


def _tsauc_section(result, alpha, importance, curve=(), selected=None):
    scores = result.oob_scores
    return {
        "auc_star": result.auc_star,
        "best_ls": result.best_hp.leaf_size,
        "best_m": result.best_hp.features_per_tree,
        "p_value": result.p_value,
        "alpha": alpha,
        "reject": result.reject(alpha),
        "auc_grid": [{"ls": ls, "m": m, "auc": value} for (ls, m), value in result.auc_grid.items()],
        "oob_scores": [
            {"subject_id": subject, "posterior": float(p), "label": int(label)}
            for subject, p, label in zip(scores.ids, scores.posterior, scores.labels)
        ],
        "importance": _importance_rows(importance),
        "model_size_curve": [{"k": pt.k, "mean_auc": pt.mean_auc, "std": pt.std} for pt in curve],
        "selected_feature_count": selected,
    }


def cmd_test(matrix_path, config, out_path):
    """
    ts-AUC, MMD and univariate MWW (raw and corrected) on one feature matrix

    Returns:
        dict: The combined report, also written to out_path
    """
    ds = read_feature_matrix(matrix_path)
    logger.info(f"Testing {ds.n_pos} fallers against {ds.n_neg} non-fallers on {ds.n_features} features")

    result = ts_auc_test(ds, config.search_space(), n_jobs=config.n_jobs)
    importance = permutation_importance(
        result.model, ds, seed=derive_seed(result.best_hp.seed, IMPORTANCE_STREAM)
    )
    mmd = mmd_test(ds, n_permutations=config.n_permutations, seed=derive_seed(config.seed, MMD_STREAM))
    univariate = univariate_tests(ds, alpha=config.alpha)

    report = envelope(
        "test",
        config,
        matrix_path,
        tsauc=_tsauc_section(result, config.alpha, importance),
        mmd={
            "mmd2_u": mmd.mmd2_u,
            "p_value": mmd.p_value,
            "bandwidth": mmd.bandwidth,
            "n_permutations": mmd.n_permutations,
            "reject": mmd.reject(config.alpha),
        },
        univariate=[
            {
                "feature": r.feature,
                "p_value": r.p_value,
                "significant_raw": r.significant_raw,
                "significant_bonferroni": r.significant_bonferroni,
                "significant_holm": r.significant_holm,
                "significant_sidak": r.significant_sidak,
                "level_bonferroni": r.level_bonferroni,
                "level_holm": r.level_holm,
                "level_sidak": r.level_sidak,
            }
            for r in univariate
        ],
    )
    atomic_write_json(report, out_path)
    return report


def cmd_importance(matrix_path, config, out_path):
    """
    Permutation importance at the ts-AUC best hyperparameters plus model-size selection

    Writes the JSON report, `<stem>_bars.csv` (importance bar chart data) and
    `<stem>_profile.csv` (per-group mean and std of the selected features).

    Returns:
        dict: The importance report
    """
    ds = read_feature_matrix(matrix_path)
    result = ts_auc_test(ds, config.search_space(), n_jobs=config.n_jobs)
    analysis = importance_analysis(ds, result.best_hp, model=result.model, runs=config.runs, n_jobs=config.n_jobs)
    profile = group_profile(ds, analysis.top_features())

    by_name = {imp.feature: imp for imp in analysis.importances}
    bars = pd.DataFrame(
        [
            {
                "rank": rank,
                "feature": name,
                "I": by_name[name].I,
                "d": by_name[name].d,
                "sigma": by_name[name].sigma,
                "n_trees": by_name[name].n_trees,
                "degenerate": int(by_name[name].degenerate),
            }
            for rank, name in enumerate(analysis.ranking, start=1)
        ],
        columns=["rank", "feature", "I", "d", "sigma", "n_trees", "degenerate"],
    )
    atomic_write_frame(bars, sibling_path(out_path, "_bars.csv"))
    atomic_write_frame(
        pd.DataFrame(profile, columns=["feature", "group", "mean", "std"]), sibling_path(out_path, "_profile.csv")
    )

    tsauc = _tsauc_section(
        result,
        config.alpha,
        analysis,
        curve=analysis.auc_by_model_size,
        selected=analysis.selected_feature_count,
    )
    report = envelope(
        "importance",
        config,
        matrix_path,
        best_ls=tsauc["best_ls"],
        best_m=tsauc["best_m"],
        auc_star=tsauc["auc_star"],
        importance=tsauc["importance"],
        ranking=list(analysis.ranking),
        model_size_curve=tsauc["model_size_curve"],
        selected_feature_count=tsauc["selected_feature_count"],
        group_profile=profile,
    )
    atomic_write_json(report, out_path)
    return report


def cmd_experiment(matrix_path, config, mode, out_path):
    """
    Population-reduction study; writes `<stem>_runs.csv`, `<stem>_summary.csv` and the JSON envelope

    Returns:
        dict: The experiment report
    """
    ds = read_feature_matrix(matrix_path)
    proto = ReductionProtocol(
        mode=mode, fractions=config.fractions, repeats=config.repeats, alpha=config.alpha, seed=config.seed
    )
    curve = run_reduction(
        ds, proto, space=config.search_space(), n_permutations=config.n_permutations, n_jobs=config.n_jobs
    )
    summary = curve.summary_frame()
    atomic_write_frame(curve.runs_frame(), sibling_path(out_path, "_runs.csv"))
    atomic_write_frame(summary, sibling_path(out_path, "_summary.csv"))

    report = envelope("experiment", config, matrix_path, mode=mode, summary=summary.to_dict(orient="records"))
    atomic_write_json(report, out_path)
    return report


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this tool reserves 2 for validation errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fractions(text):
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output file (JSON report or feature CSV)")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--trees", type=int, dest="n_trees")
    common.add_argument("--ls-min", type=int)
    common.add_argument("--ls-max", type=int)
    common.add_argument("--m-min", type=int)
    common.add_argument("--m-max", type=int)
    common.add_argument("--permutations", type=int, dest="n_permutations")
    common.add_argument("--jobs", type=int, dest="n_jobs", help="parallel workers (-1 = all cores)")
    common.add_argument("--condition", help="acquisition condition, e.g. eyes_open")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="tsauc", description="ts-AUC multivariate two-sample testing of posturographic features")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    extract = sub.add_parser("extract", parents=[common], help="trajectories -> feature matrix")
    extract.add_argument("trajectory_dir")
    extract.add_argument("labels_path")
    extract.add_argument("--rate-hz", type=float)
    extract.add_argument("--window", type=float, dest="window_s", help="resampling window in seconds")

    test = sub.add_parser("test", parents=[common], help="ts-AUC, MMD and univariate tests")
    test.add_argument("matrix_path")

    importance = sub.add_parser("importance", parents=[common], help="feature importance and model size")
    importance.add_argument("matrix_path")
    importance.add_argument("--runs", type=int)

    experiment = sub.add_parser("experiment", parents=[common], help="population-reduction study")
    experiment.add_argument("matrix_path")
    experiment.add_argument("--mode", choices=["uniform_population", "nonfaller_only"], default="uniform_population")
    experiment.add_argument("--repeats", type=int)
    experiment.add_argument("--fractions", type=_fractions)
    return parser


CONFIG_FLAGS = (
    "seed", "alpha", "n_trees", "ls_min", "ls_max", "m_min", "m_max", "n_permutations",
    "n_jobs", "condition", "rate_hz", "window_s", "runs", "repeats", "fractions",
)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config()
        logging.getLogger().setLevel(args.log_level or log_level())
        config = config.with_overrides(**{k: getattr(args, k, None) for k in CONFIG_FLAGS})
        if args.command == "extract":
            cmd_extract(args.trajectory_dir, args.labels_path, args.out, config)
        elif args.command == "test":
            cmd_test(args.matrix_path, config, args.out)
        elif args.command == "importance":
            cmd_importance(args.matrix_path, config, args.out)
        else:
            cmd_experiment(args.matrix_path, config, args.mode, args.out)
        return EXIT_OK
    except TsAucError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
