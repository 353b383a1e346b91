"""Synthetic classifier oracle.

Stands in for a trained network: every sample draws a true label uniformly
and a Dirichlet probability vector, then moves ``signal`` extra mass onto
the true label before renormalizing. Samples are i.i.d., so calibration and
test splits drawn from the same config are exchangeable.

Randomness comes from fixed-size blocks of samples, each with its own
``SeedSequence(seed, spawn_key=(stream, block))``. Sample ``i`` therefore
depends only on ``(seed, i)``: the output is independent of ``n`` beyond
truncation and of how many threads produce the blocks.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .scores import LabeledScores, validate_scores

BLOCK_SIZE = 1024

_GENERATE, _SHIFT, _MCD = 0, 1, 2


class InvalidConfig(ValueError):
    pass


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def _map_blocks(fn, n_blocks, jobs):
    if jobs is None or jobs <= 1 or n_blocks <= 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(n_blocks)))


@dataclass(frozen=True)
class OracleConfig:
    k_classes: int
    concentration: float = 1.0
    signal: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.k_classes) != self.k_classes or self.k_classes < 2:
            raise InvalidConfig(f"k_classes must be an integer >= 2, got {self.k_classes!r}")
        if not (self.concentration > 0 and math.isfinite(self.concentration)):
            raise InvalidConfig(f"concentration must be > 0, got {self.concentration!r}")
        if not self.signal >= 0:
            raise InvalidConfig(f"signal must be >= 0, got {self.signal!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InvalidConfig(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")


@dataclass(frozen=True)
class ShiftConfig:
    temperature: float = 1.0
    label_corruption: float = 0.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidConfig(f"temperature must be > 0, got {self.temperature!r}")
        if not 0.0 <= self.label_corruption <= 1.0:
            raise InvalidConfig(
                f"label_corruption must lie in [0, 1], got {self.label_corruption!r}"
            )


def generate(config, n, jobs=None):
    """Draw ``n`` labeled score rows from the oracle.

    ``signal=math.inf`` gives exact one-hot rows at the true label.
    """
    if int(n) != n or n < 1:
        raise InvalidConfig(f"n must be a positive integer, got {n!r}")
    k = config.k_classes
    conc = np.full(k, float(config.concentration))

    def block(b):
        rng = _rng(config.seed, _GENERATE, b)
        labels = rng.integers(k, size=BLOCK_SIZE)
        p = rng.dirichlet(conc, size=BLOCK_SIZE)
        rows = np.arange(BLOCK_SIZE)
        if math.isinf(config.signal):
            p = np.zeros_like(p)
            p[rows, labels] = 1.0
        else:
            p[rows, labels] += config.signal
            p /= p.sum(axis=1, keepdims=True)
        return p, labels

    parts = _map_blocks(block, -(-n // BLOCK_SIZE), jobs)
    scores = np.concatenate([p for p, _ in parts])[:n]
    labels = np.concatenate([y for _, y in parts])[:n]
    return LabeledScores(scores, labels)


def temper(scores, temperature):
    """Raise rows to the power ``1 / temperature`` and renormalize.

    Temperatures above 1 flatten rows toward uniform, below 1 sharpen them.
    """
    scores = validate_scores(scores)
    if temperature == 1:
        return scores
    rel = scores / scores.max(axis=1, keepdims=True)
    out = rel ** (1.0 / temperature)
    return validate_scores(out / out.sum(axis=1, keepdims=True))


def shift(data, config, seed=0):
    """Covariate-shift a labeled split in score space.

    Rows are tempered by ``config.temperature``; each stored label is
    independently resampled uniformly with probability
    ``config.label_corruption``.
    """
    scores = temper(data.scores, config.temperature)
    labels = np.array(data.labels)
    if config.label_corruption > 0:
        n, k = data.n, data.k
        for b in range(-(-n // BLOCK_SIZE)):
            rng = _rng(seed, _SHIFT, b)
            flip = rng.random(BLOCK_SIZE) < config.label_corruption
            fresh = rng.integers(k, size=BLOCK_SIZE)
            lo, hi = b * BLOCK_SIZE, min(n, (b + 1) * BLOCK_SIZE)
            m = flip[: hi - lo]
            labels[lo:hi][m] = fresh[: hi - lo][m]
    return LabeledScores(scores, labels)


def generate_mcd_stack(row, passes, jitter, seed=0, index=0):
    """``passes`` noisy copies of ``row`` mimicking dropout at inference.

    Each copy adds i.i.d. ``N(0, jitter**2)`` noise to the log-probabilities
    and applies a softmax; zero-probability classes stay at zero. ``index``
    selects the substream, so stacks for different samples are independent.
    """
    if int(passes) != passes or passes < 1:
        raise InvalidConfig(f"passes must be a positive integer, got {passes!r}")
    if not (jitter >= 0 and math.isfinite(jitter)):
        raise InvalidConfig(f"jitter must be finite and >= 0, got {jitter!r}")
    row = validate_scores(np.asarray(row, dtype=np.float64)[None, :])[0]
    if jitter == 0:
        return validate_scores(np.tile(row, (passes, 1)))
    rng = _rng(seed, _MCD, index)
    with np.errstate(divide="ignore"):
        logits = np.log(row)
    z = logits + jitter * rng.standard_normal((passes, row.size))
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    return validate_scores(w / w.sum(axis=1, keepdims=True))


def generate_mcd_stacks(scores, passes, jitter, seed=0):
    """Stacks for every row; ``out[i]`` equals ``generate_mcd_stack(scores[i], ..., index=i)``."""
    return np.stack([
        generate_mcd_stack(r, passes, jitter, seed, index=i)
        for i, r in enumerate(np.asarray(scores))
    ])


def generate_evidence(data, scale):
    """Evidence ``scale * p`` per row; ``u = K / (scale + K)`` for every row."""
    if not (scale >= 0 and math.isfinite(scale)):
        raise InvalidConfig(f"scale must be finite and >= 0, got {scale!r}")
    scores = data.scores if isinstance(data, LabeledScores) else validate_scores(data)
    e = scale * scores
    e.setflags(write=False)
    return e
