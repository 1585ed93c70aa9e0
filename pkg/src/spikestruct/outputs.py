"""Deterministic CSV / JSON emission with a run-manifest hash.

The manifest hash covers the canonical config echo (not timing), so two
runs with identical configuration and seeds produce byte-identical CSV
bodies while the JSON manifest still records wall-clock metadata.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import scipy


def manifest_hash(echo: dict) -> str:
    canonical = json.dumps(echo, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def write_manifest(out_dir: Path, echo: dict, timing_s: float, extra: dict | None = None) -> str:
    digest = manifest_hash(echo)
    payload = {
        "manifest_hash": digest,
        "config": echo,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "timing_s": round(timing_s, 3),
    }
    if extra:
        payload.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))
    return digest


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, columns: list[str], rows, digest: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest={digest}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, payload, digest: str) -> None:
    wrapped = {"manifest": digest, "records": payload}
    Path(path).write_text(json.dumps(wrapped, indent=2, sort_keys=True, default=str))
