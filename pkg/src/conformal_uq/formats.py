"""Text file formats used by the command-line tool.

All files are UTF-8, ``\\n``-terminated, comma-delimited. Floats are written
with :func:`repr`, which round-trips ``float64`` exactly. See ``FORMATS.md``
for the full description.
"""

import hashlib
import json
import os
import tempfile

import numpy as np

from .conformal import PredictionSet
from .scores import DataValidationError, validate_labels, validate_scores


class FormatError(DataValidationError):
    pass


def atomic_write(path, text):
    """Write ``text`` to a temp file next to ``path``, then rename over it."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _f(x):
    return repr(float(x))


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def _header(lines, path, *keys):
    if not lines or not lines[0].startswith("#"):
        raise FormatError(f"{path}: missing '# k=...' header line")
    fields = dict(tok.split("=", 1) for tok in lines[0][1:].split() if "=" in tok)
    try:
        return [int(fields[k]) for k in keys]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: header must declare {', '.join(keys)}") from exc


# -- scores / labels --------------------------------------------------------

def format_scores(scores):
    scores = np.asarray(scores)
    lines = [f"# k={scores.shape[1]}"]
    lines += [",".join(_f(v) for v in row) for row in scores]
    return "\n".join(lines) + "\n"


def parse_scores(text, path="<scores>"):
    lines = text.splitlines()
    (k,) = _header(lines, path, "k")
    rows = []
    for i, line in enumerate(lines[1:], 2):
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise FormatError(f"{path}:{i}: {exc}") from exc
        if len(rows[-1]) != k:
            raise FormatError(f"{path}:{i}: expected {k} values, got {len(rows[-1])}")
    return validate_scores(np.array(rows, dtype=np.float64).reshape(-1, k))


def read_scores(path):
    with open(path, encoding="utf-8") as f:
        return parse_scores(f.read(), path)


def format_labels(labels, k):
    return "\n".join([f"# k={k}"] + [str(int(y)) for y in labels]) + "\n"


def parse_labels(text, path="<labels>"):
    lines = text.splitlines()
    (k,) = _header(lines, path, "k")
    try:
        labels = [int(line) for line in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return validate_labels(np.array(labels, dtype=np.int64), k), k


def read_labels(path):
    with open(path, encoding="utf-8") as f:
        return parse_labels(f.read(), path)


# -- MC dropout stacks -------------------------------------------------------

def format_stacks(stacks):
    stacks = np.asarray(stacks)
    n, t, k = stacks.shape
    lines = [f"# k={k} t={t} n={n}"]
    lines += [",".join(_f(v) for v in row) for row in stacks.reshape(n * t, k)]
    return "\n".join(lines) + "\n"


def read_stacks(path):
    lines = _read_lines(path)
    k, t, n = _header(lines, path, "k", "t", "n")
    if len(lines) - 1 != n * t:
        raise FormatError(f"{path}: expected {n * t} rows, got {len(lines) - 1}")
    flat = parse_scores("\n".join([f"# k={k}"] + lines[1:]), path)
    return flat.reshape(n, t, k)


# -- prediction sets ----------------------------------------------------------

PREDICTION_COLUMNS = "k_star,uncertainty,predicted,members"


def format_predictions(sets, predicted):
    k = sets[0].k_classes if sets else 0
    lines = [f"# k={k}", PREDICTION_COLUMNS]
    for s, p in zip(sets, predicted):
        members = ";".join(str(m) for m in s.members)
        lines.append(f"{s.k_star},{_f(s.uncertainty)},{int(p)},{members}")
    return "\n".join(lines) + "\n"


def parse_predictions(text, path="<predictions>"):
    """Return ``(sets, predicted_labels)``; checks ``k_star`` and uncertainty agree."""
    lines = text.splitlines()
    (k,) = _header(lines, path, "k")
    if len(lines) < 2 or lines[1] != PREDICTION_COLUMNS:
        raise FormatError(f"{path}: expected column header {PREDICTION_COLUMNS!r}")
    sets, predicted = [], []
    for i, line in enumerate(lines[2:], 3):
        parts = line.split(",")
        if len(parts) != 4:
            raise FormatError(f"{path}:{i}: expected 4 fields")
        try:
            k_star, u, p = int(parts[0]), float(parts[1]), int(parts[2])
            members = tuple(int(m) for m in parts[3].split(";")) if parts[3] else ()
        except ValueError as exc:
            raise FormatError(f"{path}:{i}: {exc}") from exc
        s = PredictionSet(members, k)
        if (s.k_star != k_star or s.uncertainty != u or len(set(members)) != len(members)
                or any(not 0 <= m < k for m in members) or not 0 <= p < k):
            raise FormatError(f"{path}:{i}: inconsistent prediction row")
        sets.append(s)
        predicted.append(p)
    return sets, np.array(predicted, dtype=np.int64)


def read_predictions(path):
    with open(path, encoding="utf-8") as f:
        return parse_predictions(f.read(), path)


# -- result tables ------------------------------------------------------------

def format_table(title, run_id, columns, rows):
    """Comment block (title and manifest hash), CSV header, then rows."""
    lines = [f"# {title}", f"# manifest_sha256={run_id}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(_f(v) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row))
    return "\n".join(lines) + "\n"


def parse_table(text):
    """Return ``(meta, columns, rows)`` with cells left as strings."""
    lines = text.splitlines()
    meta, body = {}, []
    for line in lines:
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key] = value
            else:
                meta.setdefault("title", line[1:].strip())
        else:
            body.append(line)
    if not body:
        raise FormatError("table has no column header")
    return meta, body[0].split(","), [r.split(",") for r in body[1:]]


def read_table(path):
    with open(path, encoding="utf-8") as f:
        return parse_table(f.read())


# -- manifests ----------------------------------------------------------------

def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def format_manifest(manifest):
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def read_manifest(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)
