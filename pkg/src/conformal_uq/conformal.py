"""Split conformal prediction for classifiers with APS and RAPS scores.

The nonconformity score of a labeled sample is the cumulative probability
mass of the classes ranked at or above its true class (APS), optionally
plus a penalty ``lam`` for every included rank beyond ``k_reg`` (RAPS).
Calibration takes the ``ceil((n + 1)(1 - alpha))``-th smallest score as the
threshold ``q_hat``; a test prediction set is the longest prefix of the
descending-sorted classes whose (penalized) cumulative mass stays
``<= q_hat``.

Classes are always sorted by descending probability with ties broken by
the lower class index, both when scoring and when building sets, so that a
test label is in its set exactly when its own score is ``<= q_hat``.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scores import (
    DataValidationError,
    LabeledScores,
    LabelOutOfRange,
    validate_scores,
)

APS = "aps"
RAPS = "raps"

RECORD_VERSION = 1


class EmptyCalibration(DataValidationError):
    pass


class ClassCountMismatch(DataValidationError):
    pass


class CorruptRecord(DataValidationError):
    pass


class VersionMismatch(CorruptRecord):
    pass


@dataclass(frozen=True)
class ScoringConfig:
    """Which nonconformity score to use.

    ``lam`` and ``k_reg`` are ``None`` for APS and required for RAPS.
    """

    variant: str = APS
    lam: Optional[float] = None
    k_reg: Optional[int] = None

    def __post_init__(self):
        if self.variant == APS:
            if self.lam is not None or self.k_reg is not None:
                raise ValueError("APS takes no lam/k_reg; use ScoringConfig.raps()")
        elif self.variant == RAPS:
            if self.lam is None or self.k_reg is None:
                raise ValueError("RAPS requires both lam and k_reg")
            lam = float(self.lam)
            if not (lam >= 0 and math.isfinite(lam)):
                raise ValueError(f"lam must be finite and >= 0, got {self.lam!r}")
            if int(self.k_reg) != self.k_reg or self.k_reg < 1:
                raise ValueError(f"k_reg must be an integer >= 1, got {self.k_reg!r}")
            object.__setattr__(self, "lam", lam)
            object.__setattr__(self, "k_reg", int(self.k_reg))
        else:
            raise ValueError(f"unknown scoring variant {self.variant!r}")

    @classmethod
    def aps(cls):
        return cls(APS)

    @classmethod
    def raps(cls, lam, k_reg):
        return cls(RAPS, lam, k_reg)


@dataclass(frozen=True)
class Calibrator:
    """Fitted conformal state. ``q_hat`` is ``math.inf`` when every label is kept."""

    alpha: float
    config: ScoringConfig
    q_hat: float
    n_calib: int
    k_classes: int

    @property
    def rank(self):
        """Order-statistic index ``ceil((n + 1)(1 - alpha))`` behind ``q_hat``."""
        return quantile_rank(self.n_calib, self.alpha)


@dataclass(frozen=True)
class PredictionSet:
    members: tuple
    k_classes: int

    @property
    def k_star(self):
        return len(self.members)

    @property
    def uncertainty(self):
        return set_uncertainty(self.k_star, self.k_classes)

    @property
    def is_empty(self):
        return not self.members

    def __contains__(self, label):
        return label in self.members

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class CoverageBound:
    lower: float
    upper: float

    def __contains__(self, value):
        return self.lower <= value <= self.upper


def _check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    return alpha


def _ranked(scores, config):
    """Class order and (penalized) cumulative mass per row.

    ``order[i, j]`` is the class at rank ``j + 1`` of row ``i``.
    """
    order = np.argsort(-scores, axis=1, kind="stable")
    cum = np.cumsum(np.take_along_axis(scores, order, axis=1), axis=1)
    if config.variant == RAPS:
        ranks = np.arange(1, scores.shape[1] + 1)
        cum = cum + config.lam * np.maximum(0, ranks - config.k_reg)
    return order, cum


def label_ranks(scores, labels):
    """Zero-based rank of each label under the descending, index-tie-broken sort."""
    order = np.argsort(-np.asarray(scores), axis=1, kind="stable")
    return np.argmax(order == np.asarray(labels)[:, None], axis=1)


def conformity_scores(scores, labels, config):
    """True-label APS/RAPS score for every row of a score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if ((labels < 0) | (labels >= scores.shape[1])).any():
        raise LabelOutOfRange(f"labels must lie in [0, {scores.shape[1]})")
    order, cum = _ranked(scores, config)
    pos = np.argmax(order == labels[:, None], axis=1)
    return cum[np.arange(len(labels)), pos]


def _single(row, label, config):
    row = validate_scores(np.asarray(row, dtype=np.float64)[None, :])
    if not 0 <= label < row.shape[1]:
        raise LabelOutOfRange(f"label {label} outside [0, {row.shape[1]})")
    return float(conformity_scores(row, np.array([label]), config)[0])


def aps_score(row, label):
    """Mass of the classes ranked at or above ``label``, its own probability included.

    >>> aps_score([0.5, 0.3, 0.2], 1)
    0.8
    """
    return _single(row, label, ScoringConfig.aps())


def raps_score(row, label, lam, k_reg):
    """APS score plus ``lam`` for every included rank strictly above ``k_reg``."""
    return _single(row, label, ScoringConfig.raps(lam, k_reg))


def quantile_rank(n, alpha):
    """``ceil((n + 1)(1 - alpha))``, guarded against float noise at exact integers."""
    alpha = _check_alpha(alpha)
    return math.ceil(round((n + 1) * (1.0 - alpha), 9))


def conformal_quantile(cal_scores, alpha):
    """Calibration threshold from ``n`` nonconformity scores.

    Returns the ``k``-th smallest score with ``k = ceil((n + 1)(1 - alpha))``,
    ``math.inf`` when ``k > n`` and ``0.0`` when ``k <= 0``.

    >>> conformal_quantile([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0], 0.5)
    0.6
    """
    cal = np.asarray(cal_scores, dtype=np.float64).ravel()
    n = cal.size
    if n == 0:
        raise EmptyCalibration("no calibration scores")
    k = quantile_rank(n, alpha)
    if k > n:
        return math.inf
    if k <= 0:
        return 0.0
    return float(np.partition(cal, k - 1)[k - 1])


def calibrate(cal, alpha, config=None):
    """Fit a :class:`Calibrator` on a labeled calibration split.

    Parameters
    ----------
    cal : LabeledScores
        Held-out calibration pairs, exchangeable with future test pairs.
    alpha : float
        Target miscoverage rate in ``[0, 1]``.
    config : ScoringConfig, optional
        APS when omitted.
    """
    if config is None:
        config = ScoringConfig.aps()
    alpha = _check_alpha(alpha)
    if not isinstance(cal, LabeledScores):
        cal = LabeledScores(*cal)
    if cal.n == 0:
        raise EmptyCalibration("calibration set is empty")
    s = conformity_scores(cal.scores, cal.labels, config)
    return Calibrator(
        alpha=alpha,
        config=config,
        q_hat=conformal_quantile(s, alpha),
        n_calib=cal.n,
        k_classes=cal.k,
    )


def _check_classes(scores, calibrator):
    if scores.shape[1] != calibrator.k_classes:
        raise ClassCountMismatch(
            f"scores have {scores.shape[1]} classes, calibrator expects "
            f"{calibrator.k_classes}"
        )


def set_sizes(scores, calibrator):
    """Prediction-set size ``k*`` for every row (vectorized :func:`predict_set`)."""
    scores = np.asarray(scores, dtype=np.float64)
    _check_classes(scores, calibrator)
    _, cum = _ranked(scores, calibrator.config)
    return np.count_nonzero(cum <= calibrator.q_hat, axis=1)


def predict_sets(scores, calibrator):
    scores = validate_scores(scores)
    _check_classes(scores, calibrator)
    order, cum = _ranked(scores, calibrator.config)
    sizes = np.count_nonzero(cum <= calibrator.q_hat, axis=1)
    k = calibrator.k_classes
    return [
        PredictionSet(tuple(int(c) for c in order[i, :sizes[i]]), k)
        for i in range(scores.shape[0])
    ]


def predict_set(row, calibrator):
    """Prediction set for one probability row, members in inclusion order."""
    return predict_sets(np.asarray(row, dtype=np.float64)[None, :], calibrator)[0]


def set_uncertainty(k_star, k_classes):
    """Set-size uncertainty ``k* / K``; ``k_star`` may be a mean size."""
    if not 0 <= k_star <= k_classes:
        raise ValueError(f"k_star={k_star} outside [0, {k_classes}]")
    return k_star / k_classes


def coverage_bound(alpha, n_calib):
    """Finite-sample marginal coverage band ``[1 - alpha, 1 - alpha + 1/(n + 1)]``."""
    alpha = _check_alpha(alpha)
    if n_calib < 1:
        raise ValueError("n_calib must be >= 1")
    return CoverageBound(1.0 - alpha, 1.0 - alpha + 1.0 / (1 + n_calib))


# -- persistence ----------------------------------------------------------

_FIELDS = ("version", "variant", "alpha", "lambda", "k_reg", "q_hat", "n_calib", "k_classes")


def _fmt_float(x):
    return "inf" if x == math.inf else repr(float(x))


def save_calibrator(calibrator):
    """Serialize to the flat ``key=value`` text record (see ``FORMATS.md``)."""
    c = calibrator.config
    values = {
        "version": str(RECORD_VERSION),
        "variant": c.variant,
        "alpha": repr(calibrator.alpha),
        "lambda": "none" if c.lam is None else repr(c.lam),
        "k_reg": "none" if c.k_reg is None else str(c.k_reg),
        "q_hat": _fmt_float(calibrator.q_hat),
        "n_calib": str(calibrator.n_calib),
        "k_classes": str(calibrator.k_classes),
    }
    lines = ["# conformal-uq calibrator"] + [f"{k}={values[k]}" for k in _FIELDS]
    return "\n".join(lines) + "\n"


def load_calibrator(record):
    """Parse a record written by :func:`save_calibrator`.

    Raises :class:`CorruptRecord` on missing, unknown or mutually
    inconsistent fields and :class:`VersionMismatch` on a foreign version.
    """
    fields = {}
    for lineno, line in enumerate(record.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in _FIELDS:
            raise CorruptRecord(f"line {lineno}: unrecognised entry {line!r}")
        if key in fields:
            raise CorruptRecord(f"duplicate field {key!r}")
        fields[key] = value
    missing = [k for k in _FIELDS if k not in fields]
    if missing:
        raise CorruptRecord(f"missing field(s): {', '.join(missing)}")
    if fields["version"] != str(RECORD_VERSION):
        raise VersionMismatch(
            f"record version {fields['version']!r}, expected {RECORD_VERSION}"
        )

    try:
        variant = fields["variant"]
        lam = None if fields["lambda"] == "none" else float(fields["lambda"])
        k_reg = None if fields["k_reg"] == "none" else int(fields["k_reg"])
        config = ScoringConfig(variant, lam, k_reg)
        alpha = _check_alpha(float(fields["alpha"]))
        q_hat = float(fields["q_hat"])
        n_calib = int(fields["n_calib"])
        k_classes = int(fields["k_classes"])
    except ValueError as exc:
        raise CorruptRecord(str(exc)) from exc

    if n_calib < 1 or k_classes < 2:
        raise CorruptRecord("n_calib must be >= 1 and k_classes >= 2")
    if math.isnan(q_hat) or q_hat < 0:
        raise CorruptRecord(f"q_hat must be >= 0 or inf, got {fields['q_hat']!r}")
    k = quantile_rank(n_calib, alpha)
    if (k > n_calib) != (q_hat == math.inf):
        raise CorruptRecord("q_hat sentinel disagrees with alpha and n_calib")
    if k <= 0 and q_hat != 0.0:
        raise CorruptRecord("alpha and n_calib imply q_hat == 0")
    return Calibrator(alpha, config, q_hat, n_calib, k_classes)
