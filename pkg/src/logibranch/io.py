"""CSV/JSON artifact helpers.

All floats are rendered with 17 significant digits (`%.17g`) so that a
re-run with the same seed reproduces byte-identical data files on any
platform with IEEE-754 doubles.  RFC-4180 style: comma separator, `.`
decimal point, `\n` line endings, no locale dependence.
"""

from __future__ import annotations

import json
import platform
import time
from pathlib import Path

import numpy as np

__all__ = ["fmt", "write_csv", "write_json", "manifest"]


def fmt(value) -> str:
    """Render a cell: floats with 17 significant digits, ints verbatim."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    """Write rows (iterables of cells) under a header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(c) for c in row) + "\n")


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def manifest(config: dict, seed, wall_time_s: float) -> dict:
    """Run provenance written next to every artifact."""
    import logibranch

    return {
        "config": {k: config[k] for k in sorted(config)},
        "seed": seed,
        "versions": {
            "logibranch": logibranch.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": wall_time_s,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
