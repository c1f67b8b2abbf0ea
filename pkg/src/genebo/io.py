"""CSV/JSON readers and writers shared by the command line tools."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from .errors import DimensionMismatch, GeneBOError
from .genome import FEATURE_NAMES, feature_matrix
from .surrogate import Dataset

RATE_COLUMNS = ("id", "y_alpha", "y_beta")


def fmt(x):
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def atomic_write(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def json_text(doc):
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def features_csv(seqs):
    X = feature_matrix(seqs)
    return csv_text(("id",) + FEATURE_NAMES, ([s.id, *map(float, x)] for s, x in zip(seqs, X)))


def read_features_csv(path):
    """Return ``(ids, X)`` from a feature CSV written by :func:`features_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise GeneBOError(f"{path}: empty feature file")
    header = tuple(rows[0])
    if header != ("id",) + FEATURE_NAMES:
        raise DimensionMismatch(
            f"{path}: feature columns do not match the {len(FEATURE_NAMES)}-feature layout"
        )
    ids = [r[0] for r in rows[1:]]
    try:
        X = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise GeneBOError(f"{path}: {exc}") from None
    return ids, X.reshape(len(ids), len(FEATURE_NAMES))


def read_rates_csv(path):
    """Map id -> (y_alpha, y_beta); extra columns are ignored."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(RATE_COLUMNS) <= set(reader.fieldnames):
            raise GeneBOError(f"{path}: expected columns id,y_alpha,y_beta")
        try:
            return {r["id"]: (float(r["y_alpha"]), float(r["y_beta"])) for r in reader}
        except (TypeError, ValueError) as exc:
            raise GeneBOError(f"{path}: bad rate value ({exc})") from None


def rates_csv(ids, rates):
    return csv_text(RATE_COLUMNS, ([i, float(a), float(b)] for i, (a, b) in zip(ids, rates)))


def join_dataset(ids, X, rates):
    """Inner join of feature rows and rates on id, in feature-file order.

    Returns the dataset and the ids present on only one side.
    """
    keep = [j for j, i in enumerate(ids) if i in rates]
    unmatched = sorted((set(ids) ^ set(rates)))
    if not keep:
        raise GeneBOError("no ids in common between features and rates")
    Y = np.array([rates[ids[j]] for j in keep])
    return Dataset(X[keep], Y, tuple(ids[j] for j in keep)), unmatched
