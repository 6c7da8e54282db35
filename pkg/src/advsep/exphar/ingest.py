"""Read noise sets produced elsewhere.

The CSV schema is the one written by :func:`advsep.attack.write_noise_csv`:
a header ``r_1..r_d,y,sample_id`` and one noise per row.  A JSON sidecar
next to the file is optional; when present its spec and fingerprint are kept.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..attack import AttackSpec, NoiseSet
from ..exceptions import IngestError


def _parse_header(path, header, expected_dim):
    header = [h.strip() for h in header]
    if len(header) < 3 or header[-2:] != ["y", "sample_id"]:
        raise IngestError(path, "header must be r_1..r_d,y,sample_id", row=1)
    d = len(header) - 2
    if header[:d] != [f"r_{j + 1}" for j in range(d)]:
        raise IngestError(path, "noise columns must be named r_1..r_d in order", row=1)
    if expected_dim is not None and d != expected_dim:
        raise IngestError(path, f"dimension mismatch: expected {expected_dim}, file has {d}", row=1)
    return d


def _parse_int(path, text, what, lineno):
    try:
        value = float(text)
    except ValueError:
        raise IngestError(path, f"{what} {text!r} is not a number", row=lineno) from None
    if not math.isfinite(value) or value != int(value):
        raise IngestError(path, f"{what} {text!r} is not an integer", row=lineno)
    return int(value)


def _read_sidecar(path):
    sidecar = path.with_name(path.name + ".json")
    if not sidecar.exists():
        return None, {}
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(sidecar, f"sidecar is not valid JSON: {exc}") from None
    spec = AttackSpec(**meta["spec"]) if meta.get("spec") else None
    return spec, meta.get("fingerprint", {})


def ingest_noise_csv(path, expected_dim=None):
    """Parse a noise CSV into a :class:`NoiseSet` marked as external.

    Labels must either all be in ``{-1, +1}`` (binary theory path) or all be
    integers ``>= 0`` (multiclass probe path).  Row numbers in errors count
    the header as row 1.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(path, "file does not exist")
    rows, labels, ids = [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(path, "empty file") from None
        d = _parse_header(path, header, expected_dim)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise IngestError(path, f"malformed row: expected {d + 2} fields, got {len(row)}", row=lineno)
            try:
                r = np.array(row[:d], dtype=np.float64)
            except ValueError:
                raise IngestError(path, "malformed row: non-numeric noise value", row=lineno) from None
            if not np.all(np.isfinite(r)):
                j = int(np.flatnonzero(~np.isfinite(r))[0])
                raise IngestError(path, f"non-finite value in column r_{j + 1}", row=lineno)
            rows.append(r)
            labels.append(_parse_int(path, row[d], "label", lineno))
            ids.append(_parse_int(path, row[d + 1], "sample_id", lineno))
    if not rows:
        raise IngestError(path, "no data rows")
    y = np.array(labels, dtype=np.int64)
    if not (np.all(np.isin(y, (-1, 1))) or np.all(y >= 0)):
        raise IngestError(path, "labels must all be -1/+1 or all be non-negative class indices")
    spec, source_fp = _read_sidecar(path)
    fingerprint = {"source": "external", "path": path.name, "upstream": source_fp}
    return NoiseSet(np.vstack(rows), y, np.array(ids, dtype=np.int64), spec, None, fingerprint)
