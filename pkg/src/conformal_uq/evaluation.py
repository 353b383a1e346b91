"""Metrics and experiment drivers.

Coverage, correctness-stratified uncertainty, set-size summaries, the
``alpha`` and calibration-size sweeps, histogram binning and the
three-method (CP / MC dropout / evidential) comparison.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .baselines import edl_uncertainty_batch, mcd_summarize
from .conformal import (
    PredictionSet,
    calibrate,
    label_ranks,
    set_sizes,
)
from .scores import DataValidationError, LabeledScores, predicted_labels


class LengthMismatch(DataValidationError):
    pass


class AlignmentMismatch(LengthMismatch):
    pass


class InsufficientPool(ValueError):
    pass


class ValueOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class StratifiedStats:
    mean_correct: float
    std_correct: float
    mean_wrong: float
    std_wrong: float
    n_correct: int
    n_wrong: int
    excluded_empty: int = 0

    @property
    def n_total(self):
        return self.n_correct + self.n_wrong + self.excluded_empty


class SetSizeStats(NamedTuple):
    c_correct: float
    c_wrong: float
    c_average: float


@dataclass(frozen=True)
class AlphaSweepPoint:
    alpha: float
    certain: int
    uncertain: int
    empty: int
    coverage: float


@dataclass(frozen=True, eq=False)
class CoveragePoint:
    n_calib: int
    mean: float
    std: float
    coverages: np.ndarray


@dataclass(frozen=True, eq=False)
class MethodComparison:
    cp: StratifiedStats
    mcd: StratifiedStats
    edl: StratifiedStats
    #: (n, 3) per-sample uncertainties in column order cp, mcd, edl
    uncertainties: np.ndarray
    #: (n, 3) predicted labels per method
    predicted: np.ndarray
    empty: np.ndarray

    METHODS = ("cp", "mcd", "edl")


def _same_length(*arrays):
    n = {len(a) for a in arrays}
    if len(n) != 1:
        raise LengthMismatch(f"inputs have differing lengths {sorted(n)}")


def _members(s):
    return s.members if isinstance(s, PredictionSet) else s


def empirical_coverage(sets, labels):
    """Fraction of samples whose label is in its prediction set; empty sets miss."""
    sets = list(sets)
    labels = np.asarray(labels)
    _same_length(sets, labels)
    if not sets:
        raise LengthMismatch("no samples")
    hits = sum(int(y) in _members(s) for s, y in zip(sets, labels))
    return hits / len(sets)


def coverage_from_sizes(sizes, ranks):
    """Coverage when sets are top-``k*`` prefixes: label covered iff its rank < ``k*``."""
    sizes, ranks = np.asarray(sizes), np.asarray(ranks)
    _same_length(sizes, ranks)
    return float(np.mean(ranks < sizes))


def _stats(x):
    # shifting by the minimum keeps a constant stratum at exactly zero spread
    if x.size == 0:
        return float("nan"), float("nan")
    low = x.min()
    mean = low + np.mean(x - low)
    return float(mean), float(np.sqrt(np.mean((x - mean) ** 2)))


def stratify_uncertainty(uncertainties, predicted, true, empty_mask=None):
    """Population mean/std of uncertainty over correct vs wrong predictions.

    Samples flagged in ``empty_mask`` are left out of both strata and counted
    in ``excluded_empty`` instead.
    """
    u = np.asarray(uncertainties, dtype=np.float64)
    predicted, true = np.asarray(predicted), np.asarray(true)
    empty = np.zeros(u.shape, bool) if empty_mask is None else np.asarray(empty_mask, bool)
    _same_length(u, predicted, true, empty)
    correct = (predicted == true) & ~empty
    wrong = (predicted != true) & ~empty
    mc, sc = _stats(u[correct])
    mw, sw = _stats(u[wrong])
    return StratifiedStats(
        mc, sc, mw, sw,
        int(correct.sum()), int(wrong.sum()), int(empty.sum()),
    )


def _sizes_of(sets):
    if isinstance(sets, np.ndarray):
        return sets
    return np.array([len(_members(s)) for s in sets])


def set_size_stats(sets, predicted, true):
    """Mean set size over correct, wrong and all samples.

    ``sets`` is a sequence of prediction sets or an array of sizes.
    """
    sizes = _sizes_of(sets).astype(np.float64)
    predicted, true = np.asarray(predicted), np.asarray(true)
    _same_length(sizes, predicted, true)
    ok = predicted == true
    mean = lambda x: float(x.mean()) if x.size else float("nan")  # noqa: E731
    return SetSizeStats(mean(sizes[ok]), mean(sizes[~ok]), mean(sizes))


def _strictly_increasing(values, name):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0 or (np.diff(v) <= 0).any():
        raise ValueError(f"{name} must be a non-empty strictly increasing sequence")
    return v


def alpha_sweep(cal, test, alphas, config=None):
    """Recalibrate at each ``alpha`` and count certain / uncertain / empty sets.

    Certain means a singleton set, uncertain two or more members.
    """
    alphas = _strictly_increasing(alphas, "alphas")
    if alphas[0] < 0 or alphas[-1] > 1:
        raise ValueError("alphas must lie in [0, 1]")
    ranks = label_ranks(test.scores, test.labels)
    out = []
    for a in alphas:
        c = calibrate(cal, float(a), config)
        k = set_sizes(test.scores, c)
        out.append(AlphaSweepPoint(
            alpha=float(a),
            certain=int(np.sum(k == 1)),
            uncertain=int(np.sum(k >= 2)),
            empty=int(np.sum(k == 0)),
            coverage=coverage_from_sizes(k, ranks),
        ))
    return out


def _split_coverage(pool, ranks, size, n_test, alpha, config, seed, r):
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(size), r)))
    perm = rng.permutation(pool.n)
    cal_idx, test_idx = perm[:size], perm[size:size + n_test]
    c = calibrate(pool.subset(cal_idx), alpha, config)
    k = set_sizes(pool.scores[test_idx], c)
    return coverage_from_sizes(k, ranks[test_idx])


def calibration_size_sweep(pool, sizes, resamples, alpha, config=None, seed=0,
                           n_test=None, jobs=None):
    """Empirical coverage over random disjoint calibration/test splits per size.

    Parameters
    ----------
    pool : LabeledScores
        Labeled data to split from.
    sizes : sequence of int
        Strictly increasing calibration sizes.
    resamples : int
        Splits per size (at least 2).
    n_test : int, optional
        Held-out test size per split; defaults to ``pool.n - max(sizes)``.
    jobs : int, optional
        Worker threads. Results do not depend on it: split ``r`` of size
        ``s`` is seeded from ``(seed, s, r)``.
    """
    sizes = [int(s) for s in _strictly_increasing(sizes, "sizes")]
    if resamples < 2:
        raise ValueError("resamples must be >= 2")
    if sizes[0] < 1:
        raise ValueError("calibration sizes must be >= 1")
    if n_test is None:
        n_test = pool.n - sizes[-1]
    if n_test < 1 or sizes[-1] + n_test > pool.n:
        raise InsufficientPool(
            f"pool of {pool.n} cannot supply {sizes[-1]} calibration + {n_test} test samples"
        )
    ranks = label_ranks(pool.scores, pool.labels)
    tasks = [(s, r) for s in sizes for r in range(resamples)]

    def run(task):
        s, r = task
        return _split_coverage(pool, ranks, s, n_test, alpha, config, seed, r)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            cov = list(ex.map(run, tasks))
    else:
        cov = [run(t) for t in tasks]
    cov = np.array(cov).reshape(len(sizes), resamples)
    return [
        CoveragePoint(s, float(c.mean()), float(c.std()), c)
        for s, c in zip(sizes, cov)
    ]


def histogram(values, n_bins):
    """Counts over ``n_bins`` equal-width bins of ``[0, 1]``.

    Bins are half-open ``[lo, hi)`` except the last, which includes 1.
    """
    if int(n_bins) != n_bins or n_bins < 1:
        raise ValueError("n_bins must be a positive integer")
    v = np.asarray(values, dtype=np.float64).ravel()
    if ((v < 0) | (v > 1) | ~np.isfinite(v)).any():
        raise ValueOutOfRange("histogram values must lie in [0, 1]")
    counts, _ = np.histogram(v, bins=int(n_bins), range=(0.0, 1.0))
    return counts


def compare_methods(data, stacks, evidence, calibrator):
    """Stratified uncertainty for CP, MC dropout and evidential outputs on one split.

    Each method is stratified by its own argmax prediction: the score row
    for CP, the stack mean for MC dropout, the evidence for the evidential
    model. Empty conformal sets are excluded from the CP statistics.
    """
    if not isinstance(data, LabeledScores):
        data = LabeledScores(*data)
    stacks = np.asarray(stacks, dtype=np.float64)
    evidence = np.asarray(evidence, dtype=np.float64)
    n, k = data.n, data.k
    if stacks.ndim != 3 or stacks.shape[0] != n or stacks.shape[2] != k:
        raise AlignmentMismatch(f"expected stacks of shape ({n}, T, {k}), got {stacks.shape}")
    if evidence.shape != (n, k):
        raise AlignmentMismatch(f"expected evidence of shape ({n}, {k}), got {evidence.shape}")

    sizes = set_sizes(data.scores, calibrator)
    empty = sizes == 0
    u_cp = sizes / k
    pred_cp = predicted_labels(data.scores)

    summaries = [mcd_summarize(s) for s in stacks]
    u_mcd = np.array([s.uncertainty for s in summaries])
    pred_mcd = np.array([s.predicted for s in summaries])

    u_edl = edl_uncertainty_batch(evidence)
    pred_edl = np.argmax(evidence, axis=1)

    y = data.labels
    return MethodComparison(
        cp=stratify_uncertainty(u_cp, pred_cp, y, empty),
        mcd=stratify_uncertainty(u_mcd, pred_mcd, y),
        edl=stratify_uncertainty(u_edl, pred_edl, y),
        uncertainties=np.column_stack([u_cp, u_mcd, u_edl]),
        predicted=np.column_stack([pred_cp, pred_mcd, pred_edl]),
        empty=empty,
    )
