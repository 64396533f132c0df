"""Report envelopes and atomic JSON/CSV writers."""

import hashlib
import json
import logging
import os
import tempfile
from datetime import datetime, timezone

import numpy as np

from tsauc_lab import TOOL_NAME, __version__

logger = logging.getLogger(__name__)


def file_sha256(path):
    """Hex SHA-256 of a file's bytes, read in chunks."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(8192), b""):
            digest.update(chunk)
    return digest.hexdigest()


def path_sha256(path):
    """
    Content hash of an input: the file itself, or every CSV of a directory

    Args:
        path (str): File or directory

    Returns:
        str or None: Hex digest, None when the path does not exist
    """
    if os.path.isfile(path):
        return file_sha256(path)
    if not os.path.isdir(path):
        return None
    digest = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if os.path.isfile(full) and name.lower().endswith(".csv"):
            digest.update(name.encode("utf-8"))
            digest.update(file_sha256(full).encode("ascii"))
    return digest.hexdigest()


def _atomic_write_text(text, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    # Temporary file in the destination directory so os.replace stays on one filesystem
    with tempfile.NamedTemporaryFile(
        "w", delete=False, dir=directory, suffix=".tmp", encoding="utf-8", newline=""
    ) as tmp_file:
        tmp_file.write(text)
        tmp_path = tmp_file.name
    try:
        os.replace(tmp_path, path)
    except OSError:
        try:
            os.unlink(tmp_path)
        except OSError:
            logger.warning(f"Failed to delete temporary file {tmp_path}")
        raise


def _to_jsonable(value):
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def atomic_write_json(payload, path):
    text = json.dumps(_to_jsonable(payload), indent=2, allow_nan=False) + "\n"
    _atomic_write_text(text, path)
    logger.info(f"Wrote report to {path}")


def atomic_write_frame(frame, path):
    """Write a pandas DataFrame as CSV (no index) atomically."""
    _atomic_write_text(frame.to_csv(index=False, lineterminator="\n"), path)
    logger.info(f"Wrote {len(frame)} rows to {path}")


def envelope(command, config, input_path, **payload):
    """
    Common report header followed by the command's payload

    Args:
        command (str): Subcommand name
        config (RunConfig): Echoed verbatim
        input_path (str): Input file whose content hash is recorded
        **payload: Command-specific sections, in order

    Returns:
        dict: Insertion-ordered report
    """
    report = {
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "tool": {"name": TOOL_NAME, "version": __version__},
        "command": command,
        "config": config.to_dict(),
        "seed": config.seed,
        "input": {"path": input_path, "sha256": path_sha256(input_path)},
        "condition": config.condition,
    }
    report.update(payload)
    return report


def sibling_path(path, suffix):
    """`out/report.json` + `_runs.csv` -> `out/report_runs.csv`."""
    stem, _ = os.path.splitext(path)
    return f"{stem}{suffix}"
