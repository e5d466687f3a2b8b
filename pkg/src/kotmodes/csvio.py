"""CSV emit/parse with embedded provenance headers, plus a series differ.

Header lines start with '#' and carry the package version, config hash, RNG
identifier and seed, and the column list.  No timestamps: identical inputs
must produce byte-identical files.
"""

from __future__ import annotations

import numpy as np

from . import __version__
from ._kernels import backend


def header_lines(config_hash: str = "-", seed=None, rng: str | None = None,
                 extra: dict | None = None) -> list:
    lines = [f"# kotmodes {__version__}",
             f"# kernel_backend={backend()}",
             f"# config_hash={config_hash or '-'}"]
    if rng is not None:
        lines.append(f"# rng={rng} seed={seed}")
    for k, v in (extra or {}).items():
        lines.append(f"# {k}={v}")
    return lines


def write_csv(path, columns: dict, config_hash: str = "-", seed=None,
              rng: str | None = None, extra: dict | None = None):
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    n = len(arrays[0])
    with open(path, "w") as fh:
        for line in header_lines(config_hash, seed, rng, extra):
            fh.write(line + "\n")
        fh.write("# columns=" + ",".join(names) + "\n")
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(_fmt(a[i]) for a in arrays) + "\n")


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_csv(path):
    meta = {}
    names = None
    rows = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if names is None:
                names = line.split(",")
                continue
            rows.append([float(x) for x in line.split(",")])
    if names is None:
        raise ValueError(f"{path}: no data")
    data = np.array(rows) if rows else np.zeros((0, len(names)))
    return {name: data[:, j] for j, name in enumerate(names)}, meta


def diff_series(path_a, path_b) -> dict:
    """Column-wise max/mean absolute deviation of two series files."""
    a, _ = read_csv(path_a)
    b, _ = read_csv(path_b)
    shared = [k for k in a if k in b]
    if not shared:
        raise ValueError("no shared columns to compare")
    report = {}
    for k in shared:
        x, y = a[k], b[k]
        if len(x) != len(y):
            raise ValueError(f"column {k!r}: length mismatch {len(x)} vs {len(y)}")
        d = np.abs(x - y)
        report[k] = {"max": float(d.max() if len(d) else 0.0),
                     "mean": float(d.mean() if len(d) else 0.0)}
    return report
