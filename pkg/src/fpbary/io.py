"""Reading and writing measures as JSON or CSV."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import DiscreteMeasure

WEIGHT_HEADERS = {"w", "weight", "weights", "mass"}


class MeasureFormatError(ValueError):
    """A measure file could not be parsed; the message names file and line."""


def _json_line(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def load_measure(path, weights_column: bool | None = None) -> DiscreteMeasure:
    """Load a measure from ``.json`` or ``.csv``.

    JSON holds ``{"points": [[...], ...], "weights": [...]}`` with weights
    optional (uniform by default).  CSV has one point per row; a header row
    is allowed, and a last header named ``w``, ``weight``, ``weights`` or
    ``mass`` marks a weight column.  Without a header, pass
    ``weights_column=True`` to read the last column as weights.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        return _load_json(path)
    if path.suffix.lower() in (".csv", ".txt"):
        return _load_csv(path, weights_column)
    raise MeasureFormatError(f"{path}: unsupported measure file type {path.suffix!r}")


def _load_json(path: Path) -> DiscreteMeasure:
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeasureFormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict) or "points" not in data:
        raise MeasureFormatError(f"{path}:1: expected an object with a 'points' array")
    unknown = set(data) - {"points", "weights"}
    if unknown:
        raise MeasureFormatError(f"{path}:1: unknown keys {sorted(unknown)}")
    try:
        pts = np.asarray(data["points"], dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if "weights" in data and data["weights"] is not None:
            return DiscreteMeasure(pts, np.asarray(data["weights"], dtype=float))
        return DiscreteMeasure.uniform(pts)
    except (ValueError, TypeError) as exc:
        raise MeasureFormatError(f"{path}:{_json_line(text, text.find('points'))}: {exc}") from None


def _load_csv(path: Path, weights_column: bool | None) -> DiscreteMeasure:
    rows = []
    header = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if header is None and not rows:
                    header = [c.strip().lower() for c in row]
                    continue
                raise MeasureFormatError(f"{path}:{lineno}: non-numeric entry in {row!r}") from None
            if len(rows[-1]) != len(rows[0]):
                raise MeasureFormatError(
                    f"{path}:{lineno}: expected {len(rows[0])} columns, found {len(rows[-1])}"
                )
    if not rows:
        raise MeasureFormatError(f"{path}: no data rows")
    data = np.asarray(rows)
    if weights_column is None:
        weights_column = header is not None and header[-1] in WEIGHT_HEADERS
    try:
        if weights_column:
            if data.shape[1] < 2:
                raise MeasureFormatError(f"{path}: a weight column needs at least one coordinate column")
            return DiscreteMeasure.from_unnormalised(data[:, :-1], data[:, -1])
        return DiscreteMeasure.uniform(data)
    except MeasureFormatError:
        raise
    except ValueError as exc:
        raise MeasureFormatError(f"{path}: {exc}") from None


def measure_to_dict(mu: DiscreteMeasure) -> dict:
    return {"points": mu.points.tolist(), "weights": mu.weights.tolist()}


def save_measure(path, mu: DiscreteMeasure):
    """Write ``mu`` as JSON with full double precision."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(mu.dim)] + ["weight"])
            for p, a in zip(mu.points, mu.weights):
                w.writerow([repr(float(v)) for v in p] + [repr(float(a))])
        return
    path.write_text(json.dumps(measure_to_dict(mu)) + "\n")
