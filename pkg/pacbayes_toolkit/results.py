"""Result persistence: JSON reports, CSV tables and the run manifest.

All JSON is written with ``indent=2`` and sorted keys; floats keep full
``repr`` precision so artifacts re-load into equal values.  CSV goes through
pandas with ``%.17g``.  Nothing written here carries a timestamp, so equal
manifests mean byte-identical result files.
"""

import hashlib
import json
import logging
import os
from importlib import metadata

import numpy as np
import pandas as pd

from pacbayes_toolkit import config as cfg

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


def package_version() -> str:
    try:
        return metadata.version("pac-bayes-toolkit")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serialisable")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_to_jsonable) + "\n"


def write_json(path: str, obj) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(dumps(obj))
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: str):
    with open(path) as f:
        return json.load(f)


def write_csv(path: str, df: pd.DataFrame) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {path} ({len(df)} rows)")
    return path


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path)


# ── Reports ──────────────────────────────────────────────────────────────

def write_bound_reports(out_dir: str, reports) -> list[str]:
    """Write one or more BoundReports as JSON (list) and CSV (stable columns)."""
    from pacbayes_toolkit.bounds import CSV_COLUMNS

    reports = list(reports)
    json_path = write_json(os.path.join(out_dir, cfg.BOUND_REPORT_JSON), [r.to_dict() for r in reports])
    csv_path = write_csv(
        os.path.join(out_dir, cfg.BOUND_REPORT_CSV),
        pd.DataFrame([r.to_row() for r in reports], columns=CSV_COLUMNS),
    )
    return [json_path, csv_path]


def load_bound_reports(path: str) -> list:
    from pacbayes_toolkit.bounds import BoundReport

    data = read_json(path)
    if isinstance(data, dict):
        data = [data]
    return [BoundReport.from_dict(d) for d in data]


# ── Manifest ─────────────────────────────────────────────────────────────

def config_hash(run_config: dict) -> str:
    """SHA-256 of the canonical JSON form of a run configuration."""
    return hashlib.sha256(json.dumps(run_config, sort_keys=True, default=_to_jsonable).encode()).hexdigest()


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: str, run_config: dict, seeds: dict, files: list[str]) -> str:
    """Record config hash, seeds, version and a digest per result file."""
    manifest = {
        "config": run_config,
        "config_hash": config_hash(run_config),
        "seeds": seeds,
        "version": package_version(),
        "files": {
            os.path.relpath(p, out_dir): file_digest(p) for p in sorted(files)
        },
    }
    path = write_json(os.path.join(out_dir, cfg.MANIFEST_FILE), manifest)
    logger.info(f"Manifest written to {path} ({len(files)} files, config {manifest['config_hash'][:12]})")
    return path
