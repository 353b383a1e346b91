"""Validated containers for classifier score matrices, labels, MC dropout
stacks and evidential outputs.

Everything downstream consumes plain read-only ``float64`` arrays; the
validators here are the single gate that guarantees the row invariants
(non-negative, finite, summing to one).
"""

from dataclasses import dataclass

import numpy as np

#: Raw rows whose sum is further than this from 1 are rejected.
ROW_SUM_TOLERANCE = 1e-3

# Rows already this close to 1 are left bit-for-bit untouched, which makes
# renormalization idempotent (a second division could flip the last ulp).
_EXACT_SUM_TOLERANCE = 1e-12


class DataValidationError(ValueError):
    """Base class for rejected input data."""


class NonRectangular(DataValidationError):
    pass


class NegativeEntry(DataValidationError):
    def __init__(self, row, col, value=None):
        self.row, self.col = int(row), int(col)
        super().__init__(f"negative entry {value!r} at row {self.row}, column {self.col}")


class NonFiniteEntry(DataValidationError):
    def __init__(self, row, col):
        self.row, self.col = int(row), int(col)
        super().__init__(f"non-finite entry at row {self.row}, column {self.col}")


class RowSumOutOfTolerance(DataValidationError):
    def __init__(self, row, total):
        self.row, self.sum = int(row), float(total)
        super().__init__(
            f"row {self.row} sums to {self.sum!r}, more than "
            f"{ROW_SUM_TOLERANCE} away from 1"
        )


class LabelOutOfRange(DataValidationError):
    pass


class NegativeEvidence(DataValidationError):
    pass


class EmptyStack(DataValidationError):
    pass


def _freeze(arr):
    arr.setflags(write=False)
    return arr


def _as_matrix(raw):
    if isinstance(raw, np.ndarray):
        arr = raw
    else:
        rows = list(raw)
        if rows and not all(np.ndim(r) == 1 for r in rows):
            raise NonRectangular("score matrix rows must be one-dimensional")
        if len({len(r) for r in rows}) > 1:
            raise NonRectangular("score matrix rows have differing lengths")
        arr = np.asarray(rows)
    if arr.ndim != 2:
        raise NonRectangular(f"expected a 2-d matrix, got {arr.ndim} dimension(s)")
    return np.array(arr, dtype=np.float64)


def validate_scores(raw):
    """Validate a matrix of class probabilities and renormalize its rows.

    Parameters
    ----------
    raw : array-like of shape (n_samples, n_classes)
        SoftMax outputs. Each row must be finite, non-negative and sum to 1
        within ``ROW_SUM_TOLERANCE``.

    Returns
    -------
    numpy.ndarray
        Read-only ``float64`` copy with every row divided by its sum.

    Raises
    ------
    NonRectangular, NegativeEntry, NonFiniteEntry, RowSumOutOfTolerance
    """
    m = _as_matrix(raw)
    n, k = m.shape
    if n < 1:
        raise NonRectangular("score matrix has no rows")
    if k < 2:
        raise NonRectangular(f"need at least 2 classes, got {k}")

    bad = ~np.isfinite(m)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise NonFiniteEntry(r, c)
    neg = m < 0
    if neg.any():
        r, c = np.argwhere(neg)[0]
        raise NegativeEntry(r, c, m[r, c])

    sums = m.sum(axis=1)
    off = np.abs(sums - 1.0)
    if (off > ROW_SUM_TOLERANCE).any():
        r = int(np.argmax(off > ROW_SUM_TOLERANCE))
        raise RowSumOutOfTolerance(r, sums[r])

    fix = off > _EXACT_SUM_TOLERANCE
    if fix.any():
        m[fix] /= sums[fix, None]
    return _freeze(m)


def validate_labels(labels, n_classes, n_samples=None):
    """Zero-based integer labels, each in ``[0, n_classes)``."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise NonRectangular("labels must be one-dimensional")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise LabelOutOfRange("labels must be integers")
        arr = as_int
    arr = np.array(arr, dtype=np.int64)
    if n_samples is not None and arr.shape[0] != n_samples:
        raise NonRectangular(f"{arr.shape[0]} labels for {n_samples} score rows")
    out = (arr < 0) | (arr >= n_classes)
    if out.any():
        i = int(np.argmax(out))
        raise LabelOutOfRange(f"label {arr[i]} at row {i} outside [0, {n_classes})")
    return _freeze(arr)


@dataclass(frozen=True, eq=False)
class LabeledScores:
    """Score matrix paired with ground-truth labels (one calibration or test split)."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = validate_scores(self.scores)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(
            self, "labels", validate_labels(self.labels, scores.shape[1], scores.shape[0])
        )

    @property
    def n(self):
        return self.scores.shape[0]

    @property
    def k(self):
        return self.scores.shape[1]

    def __len__(self):
        return self.n

    def subset(self, index):
        """Rows selected by an integer index array, as a new LabeledScores."""
        index = np.asarray(index)
        return LabeledScores(_freeze(self.scores[index]), self.labels[index])

    def __eq__(self, other):
        if not isinstance(other, LabeledScores):
            return NotImplemented
        return (np.array_equal(self.scores, other.scores)
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


def validate_stack(raw):
    """Validate a ``(T, K)`` stack of MC dropout passes; rows obey score-row rules."""
    arr = np.asarray(raw, dtype=np.float64) if not isinstance(raw, np.ndarray) else raw
    if arr.ndim == 2 and arr.shape[0] == 0:
        raise EmptyStack("sample stack has no passes")
    return validate_scores(arr)


def validate_evidence(raw):
    """Validate evidence: a vector of length K or a matrix of shape (n, K), all >= 0."""
    arr = np.array(raw, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] < 1:
        raise NonRectangular("evidence must be a K-vector or an (n, K) matrix")
    if not np.isfinite(arr).all():
        raise NegativeEvidence("evidence must be finite")
    if (arr < 0).any():
        raise NegativeEvidence("evidence must be non-negative")
    return _freeze(arr)


def predicted_label(row):
    """Index of the largest probability; ties go to the lowest index."""
    return int(np.argmax(np.asarray(row)))


def predicted_labels(scores):
    return np.argmax(np.asarray(scores), axis=1)
