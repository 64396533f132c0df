"""Load center-of-pressure recordings and resample them onto a uniform grid."""

import logging
import math
import os
import re
from dataclasses import dataclass

import numpy as np
import pandas as pd

from tsauc_lab.errors import InputError, ParseError, ValidationError

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "x", "y")
DEFAULT_RATE_HZ = 25.0


@dataclass(frozen=True)
class RawRecording:
    """Timestamped CoP samples as read from disk (seconds, cm)."""

    subject_id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        t, x, y = (np.asarray(a, dtype=float) for a in (self.t, self.x, self.y))
        if not (t.ndim == x.ndim == y.ndim == 1 and len(t) == len(x) == len(y)):
            raise ValidationError(f"{self.subject_id}: t, x, y must be 1-D of equal length")
        if len(t) < 2:
            raise ValidationError(f"{self.subject_id}: need at least 2 samples, got {len(t)}")
        for name, values in (("t", t), ("x", x), ("y", y)):
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                raise ValidationError(f"{self.subject_id}: non-finite {name} at sample {bad[0]}")
        steps = np.diff(t)
        if np.any(steps <= 0):
            first = int(np.flatnonzero(steps <= 0)[0]) + 1
            raise ValidationError(f"{self.subject_id}: non-increasing timestamps at sample {first}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class Statokinesigram:
    """CoP trajectory on a uniform time grid."""

    subject_id: str
    rate_hz: float
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x, y = np.asarray(self.x, dtype=float), np.asarray(self.y, dtype=float)
        if not self.rate_hz > 0:
            raise ValidationError(f"{self.subject_id}: rate_hz must be positive")
        if x.ndim != 1 or x.shape != y.shape:
            raise ValidationError(f"{self.subject_id}: x and y must be 1-D of equal length")
        if len(x) < 2:
            raise ValidationError(f"{self.subject_id}: need at least 2 samples")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError(f"{self.subject_id}: non-finite coordinates")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def t(self):
        return np.arange(len(self.x)) / self.rate_hz

    def as_recording(self):
        """View the uniform trajectory as a raw recording starting at t = 0."""
        return RawRecording(self.subject_id, self.t, self.x, self.y)

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True)
class FallLabel:
    subject_id: str
    is_faller: bool


def _read_csv(path, required):
    """Read a CSV as strings and check the header; numeric parsing is done by the caller."""
    if not os.path.exists(path):
        raise InputError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as e:
        # pandas only reports the offending line inside its message
        found = re.search(r"line (\d+)", str(e))
        line = int(found.group(1)) if found else None
        raise ParseError(f"malformed CSV ({e})", path=path, line=line) from e
    except pd.errors.EmptyDataError as e:
        raise ParseError("empty file", path=path) from e
    frame.columns = [c.strip() for c in frame.columns]
    for column in required:
        if column not in frame.columns:
            raise ValidationError(f"{path}: missing column '{column}'")
    return frame


def _parse_float(frame, column, path):
    """Parse a string column; 'nan'/'inf' parse but non-numbers raise ParseError with a line number."""
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
    text = frame[column].str.strip().str.lower()
    unparsed = values.isna() & ~text.isin(["nan", "inf", "-inf", "+inf", "infinity", "-infinity"])
    if unparsed.any():
        row = int(np.flatnonzero(unparsed.to_numpy())[0])
        # header is line 1
        raise ParseError(f"cannot parse {column}={frame[column].iloc[row]!r}", path=path, line=row + 2)
    return values.to_numpy(dtype=float)


def read_recording(path, subject_id=None):
    """
    Read one trajectory CSV (`t,x,y` header, seconds and cm)

    Args:
        path (str): CSV file
        subject_id (str, optional): Overrides the id taken from the file stem

    Returns:
        RawRecording: Validated recording
    """
    frame = _read_csv(path, TRAJECTORY_COLUMNS)
    if subject_id is None and "subject_id" in frame.columns and len(frame):
        # Optional column; its first value names the subject
        subject_id = frame["subject_id"].iloc[0].strip() or None
    if subject_id is None:
        subject_id = os.path.splitext(os.path.basename(path))[0]
    columns = {c: _parse_float(frame, c, path) for c in TRAJECTORY_COLUMNS}

    for name in TRAJECTORY_COLUMNS:
        bad = np.flatnonzero(~np.isfinite(columns[name]))
        if bad.size:
            raise ValidationError(f"{path} line {bad[0] + 2}: non-finite value in column '{name}'")
    steps = np.diff(columns["t"])
    if np.any(steps <= 0):
        line = int(np.flatnonzero(steps <= 0)[0]) + 3
        raise ValidationError(f"{path} line {line}: non-increasing timestamps")

    recording = RawRecording(subject_id, columns["t"], columns["x"], columns["y"])
    logger.debug(f"Read {len(recording)} samples for {subject_id} ({recording.duration:.2f} s)")
    return recording


def read_labels(path):
    """
    Read a `subject_id,label` CSV (label 1 = faller, 0 = non-faller)

    Returns:
        list: FallLabel per subject, file order
    """
    frame = _read_csv(path, ("subject_id", "label"))
    labels = []
    seen = set()
    for row, (subject_id, raw) in enumerate(zip(frame["subject_id"], frame["label"])):
        subject_id = subject_id.strip()
        if raw.strip() not in ("0", "1"):
            raise ParseError(f"label must be 0 or 1, got {raw!r}", path=path, line=row + 2)
        if subject_id in seen:
            raise ValidationError(f"{path} line {row + 2}: duplicate subject_id '{subject_id}'")
        seen.add(subject_id)
        labels.append(FallLabel(subject_id, raw.strip() == "1"))
    return labels


def _cell_weights(t):
    """Time span each sample stands for: half the gap to each neighbour."""
    gaps = np.diff(t)
    weights = np.empty_like(t)
    weights[0] = gaps[0] / 2
    weights[-1] = gaps[-1] / 2
    weights[1:-1] = (gaps[:-1] + gaps[1:]) / 2
    return weights


def resample(rec, rate_hz=DEFAULT_RATE_HZ, window_s=None):
    """
    Sliding-window weighted average onto the grid t0 + k / rate_hz

    Every grid point averages the samples strictly inside +/- window_s / 2,
    each weighted by the time span it represents. Grid points whose window
    holds no sample are filled by linear interpolation between the nearest
    filled neighbours (nearest value at the edges).

    Args:
        rec (RawRecording): Validated input
        rate_hz (float): Output rate
        window_s (float, optional): Window width, default 2 / rate_hz

    Returns:
        Statokinesigram: Uniformly sampled trajectory
    """
    if rate_hz <= 0:
        raise ValidationError(f"rate_hz must be positive, got {rate_hz}")
    if window_s is None:
        window_s = 2.0 / rate_hz
    if window_s <= 0:
        raise ValidationError(f"window_s must be positive, got {window_s}")
    if rec.duration < 1.0 / rate_hz:
        raise ValidationError(
            f"{rec.subject_id}: recording too short ({rec.duration:.4f} s < {1.0 / rate_hz:.4f} s)"
        )

    # Work on time since the first sample; absolute (epoch) clocks only add rounding
    t = rec.t - rec.t[0]
    # Float noise in t (one spacing of the absolute clock) must not move a grid point or an edge
    eps = max(1e-9 * max(1.0, t[-1]), 4 * float(np.spacing(abs(rec.t[-1]))))
    n_out = math.floor(t[-1] * rate_hz + eps * rate_hz) + 1
    grid = np.arange(n_out) / rate_hz
    half = window_s / 2
    # Samples sitting exactly on a window edge stay outside it
    slack = min(eps, half / 4)

    lo = np.searchsorted(t, grid - half + slack, side="left")
    hi = np.searchsorted(t, grid + half - slack, side="right")
    weights = _cell_weights(t)
    cum_w = np.concatenate(([0.0], np.cumsum(weights)))
    cum_wx = np.concatenate(([0.0], np.cumsum(weights * rec.x)))
    cum_wy = np.concatenate(([0.0], np.cumsum(weights * rec.y)))

    filled = hi > lo
    total = cum_w[hi] - cum_w[lo]
    x = np.full(n_out, np.nan)
    y = np.full(n_out, np.nan)
    x[filled] = (cum_wx[hi] - cum_wx[lo])[filled] / total[filled]
    y[filled] = (cum_wy[hi] - cum_wy[lo])[filled] / total[filled]

    # Prefix sums can leave averages a few ulps outside the window's range
    for out, values in ((x, rec.x), (y, rec.y)):
        np.clip(out, values.min(), values.max(), out=out)

    if not filled.all():
        gaps = int((~filled).sum())
        logger.debug(f"{rec.subject_id}: {gaps} empty windows filled by interpolation")
        x[~filled] = np.interp(grid[~filled], grid[filled], x[filled])
        y[~filled] = np.interp(grid[~filled], grid[filled], y[filled])

    return Statokinesigram(rec.subject_id, float(rate_hz), x, y)
