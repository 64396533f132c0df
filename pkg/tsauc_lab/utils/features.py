"""Posturographic features of a statokinesigram and the feature-matrix CSV format."""

import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import signal, stats

from tsauc_lab.errors import InputError, ParseError, ValidationError
from tsauc_lab.utils.signal_ingest import DEFAULT_RATE_HZ, read_recording, resample

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "RangeX",
    "MaxX",
    "MinX",
    "VarianceX",
    "VelocityX",
    "AccelerationX",
    "F95X",
    "RangeY",
    "MaxY",
    "MinY",
    "VarianceY",
    "VelocityY",
    "AccelerationY",
    "F95Y",
    "DistC",
    "EllArea",
    "AngularDeviation",
)

MIN_SAMPLES = 16
# chi-square quantile with 2 dof at 0.95 (~5.991): 95% coverage ellipse
ELLIPSE_CHI2 = float(stats.chi2.ppf(0.95, df=2))
SPECTRAL_ENERGY = 0.95


@dataclass(frozen=True)
class FeatureVector:
    subject_id: str
    values: OrderedDict

    def __post_init__(self):
        if tuple(self.values) != FEATURE_NAMES:
            raise ValidationError(f"{self.subject_id}: feature names/order mismatch")
        for name, value in self.values.items():
            if not math.isfinite(value):
                raise ValidationError(f"{self.subject_id}: feature {name} is not finite")

    def __getitem__(self, name):
        return self.values[name]

    def as_array(self):
        return np.array([self.values[n] for n in FEATURE_NAMES], dtype=float)


def f95(series, rate_hz):
    """
    Frequency below which 95% of the spectral energy lies

    De-meaned series, one-sided periodogram (rectangular window, no padding),
    DC bin excluded. Constant series have no energy and return 0.

    Args:
        series (array-like): Samples, at least 16
        rate_hz (float): Sampling rate

    Returns:
        float: Smallest bin frequency whose cumulative power reaches 95%
    """
    series = np.asarray(series, dtype=float)
    if series.size < MIN_SAMPLES:
        raise ValidationError(f"f95 needs at least {MIN_SAMPLES} samples, got {series.size}")
    if np.ptp(series) == 0:
        return 0.0

    freqs, power = signal.periodogram(
        series, fs=rate_hz, window="boxcar", detrend="constant", scaling="spectrum"
    )
    freqs, power = freqs[1:], power[1:]
    total = power.sum()
    if total <= 0:
        return 0.0
    cumulative = np.cumsum(power)
    # Small relative slack: a pure tone's cumulative power can land 1 ulp below target
    index = int(np.searchsorted(cumulative, SPECTRAL_ENERGY * total * (1 - 1e-12), side="left"))
    return float(freqs[min(index, freqs.size - 1)])


def _positional(values, rate_hz):
    centred = values - values.mean()
    first = np.diff(values)
    second = np.diff(values, n=2)
    return {
        "Max": float(centred.max()),
        "Min": float(centred.min()),
        "Variance": float(values.var(ddof=1)),
        "Velocity": float(np.abs(first).mean() * rate_hz),
        "Acceleration": float(np.abs(second).mean() * rate_hz**2),
        "F95": f95(values, rate_hz),
    }


def extract_features(s):
    """
    Compute the 17 features for one resampled recording

    Args:
        s (Statokinesigram): Uniform trajectory with at least 16 samples

    Returns:
        FeatureVector: Features in FEATURE_NAMES order
    """
    if len(s) < MIN_SAMPLES:
        raise ValidationError(f"{s.subject_id}: need at least {MIN_SAMPLES} samples, got {len(s)}")

    per_axis = {"X": _positional(s.x, s.rate_hz), "Y": _positional(s.y, s.rate_hz)}
    values = OrderedDict()
    for axis in ("X", "Y"):
        a = per_axis[axis]
        # Range from the centred extremes so that Range == Max - Min holds exactly
        values[f"Range{axis}"] = a["Max"] - a["Min"]
        for key in ("Max", "Min", "Variance", "Velocity", "Acceleration", "F95"):
            values[f"{key}{axis}"] = a[key]

    dx = s.x - s.x.mean()
    dy = s.y - s.y.mean()
    radius = np.hypot(dx, dy)
    values["DistC"] = float(radius.mean())

    cov = np.cov(s.x, s.y, ddof=1)
    det = max(float(np.linalg.det(cov)), 0.0)
    values["EllArea"] = float(math.pi * ELLIPSE_CHI2 * math.sqrt(det))

    # Angle between centroid->point and +AP axis, in [0, 180]; points on the centroid carry no direction
    moving = radius > 0
    if moving.any():
        angles = np.degrees(np.arctan2(np.abs(dx[moving]), dy[moving]))
        values["AngularDeviation"] = float(angles.mean())
    else:
        values["AngularDeviation"] = 0.0

    return FeatureVector(s.subject_id, values)


class FeatureExtractor:
    def __init__(self, rate_hz=DEFAULT_RATE_HZ, window_s=None):
        """Read, resample and summarise trajectory files at one output rate"""
        self.rate_hz = rate_hz
        self.window_s = window_s
        logger.info(f"Feature extractor initialized ({rate_hz} Hz, window {window_s or 2.0 / rate_hz:.3f} s)")

    def from_file(self, path):
        """
        Features of one trajectory CSV

        Args:
            path (str): `t,x,y` CSV

        Returns:
            FeatureVector: Features of the resampled recording
        """
        recording = read_recording(path)
        return extract_features(resample(recording, self.rate_hz, self.window_s))


def write_feature_matrix(vectors, labels, path):
    """
    Write the feature matrix CSV (`subject_id,<17 features>,label`)

    Args:
        vectors (list): FeatureVector per subject
        labels (dict): subject_id -> bool (True = faller)
        path (str): Destination; written atomically
    """
    from tsauc_lab.utils.reporting import atomic_write_frame

    rows = []
    for vector in vectors:
        row = {"subject_id": vector.subject_id}
        row.update(vector.values)
        row["label"] = int(bool(labels[vector.subject_id]))
        rows.append(row)
    frame = pd.DataFrame(rows, columns=["subject_id", *FEATURE_NAMES, "label"])
    atomic_write_frame(frame, path)
    logger.info(f"Wrote feature matrix with {len(frame)} subjects to {path}")


def read_feature_matrix(path):
    """
    Load a feature matrix CSV into a LabeledDataset

    Args:
        path (str): CSV with header `subject_id,RangeX,...,AngularDeviation,label`

    Returns:
        LabeledDataset: Rows in file order
    """
    from tsauc_lab.models.forest import LabeledDataset

    if not os.path.exists(path):
        raise InputError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={"subject_id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"malformed feature matrix ({e})", path=path) from e
    frame.columns = [c.strip() for c in frame.columns]
    for column in ("subject_id", *FEATURE_NAMES, "label"):
        if column not in frame.columns:
            raise ValidationError(f"{path}: missing column '{column}'")

    X = frame[list(FEATURE_NAMES)].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad_rows = np.flatnonzero(~np.isfinite(X).all(axis=1))
    if bad_rows.size:
        raise ValidationError(f"{path} line {bad_rows[0] + 2}: non-numeric or non-finite feature value")
    label_text = frame["label"].astype(str).str.strip()
    bad_labels = np.flatnonzero(~label_text.isin(["0", "1"]).to_numpy())
    if bad_labels.size:
        raise ValidationError(f"{path} line {bad_labels[0] + 2}: label must be 0 or 1")

    return LabeledDataset(
        ids=tuple(frame["subject_id"].astype(str).str.strip()),
        X=X,
        y=(label_text == "1").to_numpy(),
        feature_names=FEATURE_NAMES,
    )
