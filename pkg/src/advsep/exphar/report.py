"""Experiment reports and their on-disk forms.

``report.json`` is the complete record.  The CSV form is a flat two-column
table (``key``, ``value``) where the key is the JSON-encoded path into the
report and the value is the JSON-encoded scalar, so a json -> csv -> json
round trip is lossless.  Per-seed rows, criteria and theory checks are also
written as ordinary tables for tabulation, and ``plotdata`` writes one
two-column CSV per curve.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics import RNG_ALGORITHM

NO_TRIALS = "no trials"


def clean(obj):
    """Convert numpy scalars and arrays to plain Python; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def criterion(name, value, threshold, comparator):
    """A declared pass/fail line; ``comparator`` is ``>=`` or ``<=``."""
    if comparator not in (">=", "<="):
        raise ValueError("comparator must be '>=' or '<='")
    if value is None:
        passed = False
    else:
        passed = value >= threshold if comparator == ">=" else value <= threshold
    return {"name": name, "value": value, "threshold": threshold, "comparator": comparator, "passed": bool(passed)}


def aggregate(rows, keys):
    """Means of ``keys`` over per-seed rows, with an explicit marker when there are none."""
    if not rows:
        return {**{f"mean_{k}": 0.0 for k in keys}, "n_seeds": 0, "status": NO_TRIALS}
    out = {"n_seeds": len(rows), "status": "ok"}
    for k in keys:
        vals = [float(r[k]) for r in rows if r.get(k) is not None]
        out[f"mean_{k}"] = float(np.mean(vals)) if vals else 0.0
    return out


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    per_seed: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    fingerprints: list = field(default_factory=list)
    rng_algorithm: str = RNG_ALGORITHM
    created: str = ""

    @property
    def passed(self):
        return all(c["passed"] for c in self.criteria)

    def to_dict(self):
        return clean({
            "kind": self.kind,
            "config": self.config,
            "per_seed": self.per_seed,
            "aggregates": self.aggregates,
            "criteria": self.criteria,
            "checks": self.checks,
            "curves": self.curves,
            "artifacts": self.artifacts,
            "fingerprints": self.fingerprints,
            "rng_algorithm": self.rng_algorithm,
            "created": self.created,
            "passed": self.passed,
        })

    def results(self):
        """Everything a replay must reproduce: the dict minus timestamp and file paths."""
        out = self.to_dict()
        for key in ("created", "artifacts"):
            out.pop(key)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data.pop("passed", None)
        return cls(**data)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_report(path):
    """Read a report from ``report.json`` or from a run directory containing it."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return ExperimentReport.from_dict(json.loads(path.read_text()))


# -- flat CSV ----------------------------------------------------------------


def flatten(obj, prefix=()):
    """Yield ``(path, scalar)`` pairs; empty containers are kept as leaves."""
    if isinstance(obj, dict) and obj:
        for k in sorted(obj):
            yield from flatten(obj[k], prefix + (k,))
    elif isinstance(obj, list) and obj:
        for i, v in enumerate(obj):
            yield from flatten(v, prefix + (i,))
    else:
        yield prefix, obj


def unflatten(pairs):
    """Inverse of :func:`flatten` (integer path components rebuild lists)."""
    root = {}
    for path, value in pairs:
        if not path:
            return value
        node = root
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    def listify(node):
        if not isinstance(node, dict) or not node:
            return node
        if all(isinstance(k, int) for k in node):
            return [listify(node[i]) for i in sorted(node)]
        return {k: listify(v) for k, v in node.items()}

    return listify(root)


def write_flat_csv(data, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for key, value in flatten(data):
            w.writerow([json.dumps(list(key)), json.dumps(value, allow_nan=False)])
    return path


def read_flat_csv(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        next(r)
        pairs = [(tuple(json.loads(k)), json.loads(v)) for k, v in r]
    return unflatten(pairs)


def _write_table(rows, path):
    path = Path(path)
    cols = []
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols or ["status"])
        w.writeheader()
        if not rows:
            w.writerow({"status": NO_TRIALS})
        for row in rows:
            w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in row.items()})
    return path


def curve_filename(name):
    return "plot_" + re.sub(r"[^A-Za-z0-9_.-]+", "_", name) + ".csv"


def emit_report(report, formats, out_dir):
    """Write the requested formats under ``out_dir``; returns ``{format: [paths]}``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    data = report.to_dict()
    written = {}
    try:
        for fmt in sorted(set(formats)):
            if fmt == "json":
                p = out_dir / "report.json"
                p.write_text(report.to_json())
                written["json"] = [p]
            elif fmt == "csv":
                paths = [write_flat_csv(data, out_dir / "report.csv"),
                         _write_table(data["per_seed"], out_dir / "per_seed.csv"),
                         _write_table(data["criteria"], out_dir / "criteria.csv")]
                if data["checks"]:
                    paths.append(_write_table(data["checks"], out_dir / "checks.csv"))
                written["csv"] = paths
            elif fmt == "plotdata":
                paths = []
                for name, curve in sorted(data["curves"].items()):
                    p = out_dir / curve_filename(name)
                    with p.open("w", newline="") as fh:
                        w = csv.writer(fh)
                        w.writerow([curve["x_label"], curve["y_label"]])
                        for x, y in zip(curve["x"], curve["y"]):
                            w.writerow([x, y])
                    paths.append(p)
                written["plotdata"] = paths
            else:
                raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"failed writing report under {out_dir}: {exc}") from exc
    return written
