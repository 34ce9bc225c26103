"""Writing run outputs: CSV tables, JSON documents and the run manifest."""

from __future__ import annotations

import csv
import json
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__

MAX_CSV_ROWS = 5000


def downsample_index(n_rows: int, max_rows: int | None = MAX_CSV_ROWS) -> np.ndarray:
    """Evenly strided row indices (first row kept), at most ``max_rows`` of them."""
    if max_rows is None or n_rows <= max_rows:
        return np.arange(n_rows)
    stride = -(-n_rows // max_rows)
    return np.arange(0, n_rows, stride)


def write_csv(path: Path, header: list[str], columns: list[np.ndarray], max_rows: int | None = MAX_CSV_ROWS) -> Path:
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("CSV columns differ in length")
    idx = downsample_index(n, max_rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in idx:
            w.writerow([_fmt(c[i]) for c in cols])
    return path


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def write_manifest(out_dir: Path, config: dict, argv: list[str], outputs: list[Path], extra: dict | None = None) -> Path:
    """Everything needed to rerun: the resolved config (with seed), the
    command line, package and interpreter versions, and the files written."""
    doc = {
        "config": config,
        "argv": argv,
        "package_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": sorted(str(p.relative_to(out_dir)) for p in outputs),
    }
    if extra:
        doc.update(extra)
    return write_json(out_dir / "manifest.json", doc)
