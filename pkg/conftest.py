"""
Shared pytest fixtures: synthetic two-group datasets, trajectory CSV writers
and the --runslow switch for the Monte-Carlo checks.
"""

import os

import numpy as np
import pandas as pd
import pytest

from tsauc_lab.models.forest import LabeledDataset
from tsauc_lab.models.tsauc import SearchSpace

# Reference material, not part of the suite
collect_ignore = ["examples"]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte-Carlo tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte-Carlo check that needs minutes")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def gaussian_groups(n_pos, n_neg, n_features, shift=0.0, shifted=5, seed=0, names=None):
    """Fallers drawn from N(shift on the first `shifted` coordinates, I), non-fallers from N(0, I)."""
    rng = np.random.default_rng(seed)
    pos = rng.standard_normal((n_pos, n_features))
    pos[:, :shifted] += shift
    neg = rng.standard_normal((n_neg, n_features))
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(n_pos, dtype=bool), np.zeros(n_neg, dtype=bool)])
    ids = [f"s{i:03d}" for i in range(n_pos + n_neg)]
    return LabeledDataset(ids=ids, X=X, y=y, feature_names=names)


@pytest.fixture
def make_groups():
    return gaussian_groups


@pytest.fixture
def separable():
    """One perfectly separating feature plus two noise columns."""
    rng = np.random.default_rng(7)
    n = 20
    informative = np.concatenate([rng.uniform(1.0, 2.0, n), rng.uniform(-2.0, -1.0, n)])
    X = np.column_stack([informative, rng.standard_normal(2 * n), rng.standard_normal(2 * n)])
    y = np.concatenate([np.ones(n, dtype=bool), np.zeros(n, dtype=bool)])
    return LabeledDataset(ids=[f"p{i:02d}" for i in range(2 * n)], X=X, y=y, feature_names=("signal", "noise1", "noise2"))


@pytest.fixture
def small_space():
    return SearchSpace(ls_values=(2, 4), m_values=(1, 2), n_trees=40, seed=0)


def sway(n_samples, rate_hz=100.0, seed=0, amplitude=1.0):
    """Random-walk-like CoP trajectory sampled at rate_hz."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / rate_hz
    x = amplitude * np.cumsum(rng.standard_normal(n_samples)) * 0.05
    y = amplitude * np.cumsum(rng.standard_normal(n_samples)) * 0.05
    return t, x, y


@pytest.fixture
def write_trajectory():
    def _write(directory, subject_id, t, x, y):
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, f"{subject_id}.csv")
        pd.DataFrame({"t": t, "x": x, "y": y}).to_csv(path, index=False)
        return path

    return _write


@pytest.fixture
def cohort_dir(tmp_path, write_trajectory):
    """Ten 4-second recordings at 100 Hz, fallers swaying twice as much, plus their labels file."""
    trajectories = tmp_path / "trajectories"
    rows = []
    for i in range(10):
        subject_id = f"subj{i:02d}"
        faller = i % 2 == 0
        t, x, y = sway(400, seed=i, amplitude=2.0 if faller else 1.0)
        write_trajectory(str(trajectories), subject_id, t, x, y)
        rows.append({"subject_id": subject_id, "label": int(faller)})
    labels = tmp_path / "labels.csv"
    pd.DataFrame(rows).to_csv(labels, index=False)
    return str(trajectories), str(labels)
