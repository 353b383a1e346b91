"""Monte Carlo dropout aggregation and evidential (Dirichlet) uncertainty.

All functions are pure and work on a single sample; the ``*_batch``
helpers vectorize the scalar uncertainty over many samples.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .scores import DataValidationError, validate_evidence, validate_stack


class InvalidAlpha(DataValidationError):
    pass


class BoundaryPoint(DataValidationError):
    pass


class InvalidOneHot(DataValidationError):
    pass


@dataclass(frozen=True, eq=False)
class McdSummary:
    mean: np.ndarray
    variance: np.ndarray

    @property
    def predicted(self):
        return int(np.argmax(self.mean))

    @property
    def uncertainty(self):
        """Variance of the class with the largest mean probability."""
        return float(self.variance[self.predicted])


@dataclass(frozen=True, eq=False)
class EdlSummary:
    belief: np.ndarray
    uncertainty: float
    dirichlet_alpha: np.ndarray
    strength: float
    expected_probs: np.ndarray


def mcd_summarize(stack):
    """Mean and population variance over ``T`` stochastic passes.

    Column sums use :func:`math.fsum` after shifting by the column minimum,
    so the result does not depend on pass order and a constant stack gives
    exactly zero variance.
    """
    stack = validate_stack(stack)
    t = stack.shape[0]
    low = stack.min(axis=0)
    shifted = stack - low
    mean = low + np.array([math.fsum(col) for col in shifted.T]) / t
    dev2 = (stack - mean) ** 2
    var = np.array([math.fsum(col) for col in dev2.T]) / t
    mean.setflags(write=False)
    var.setflags(write=False)
    return McdSummary(mean, var)


def mcd_uncertainty_batch(stacks):
    """Predicted-class variance for an ``(n, T, K)`` array of stacks."""
    return np.array([mcd_summarize(s).uncertainty for s in stacks])


def edl_summarize(evidence):
    """Belief masses, uncertainty ``u = K / S`` and Dirichlet mean from evidence.

    >>> s = edl_summarize([9.0, 0.0, 0.0])
    >>> s.strength, s.uncertainty
    (12.0, 0.25)
    """
    e = validate_evidence(evidence)
    if e.ndim != 1:
        raise ValueError("edl_summarize takes a single evidence vector")
    k = e.size
    alpha = e + 1.0
    strength = math.fsum(alpha)
    return EdlSummary(
        belief=e / strength,
        uncertainty=k / strength,
        dirichlet_alpha=alpha,
        strength=strength,
        expected_probs=alpha / strength,
    )


def edl_uncertainty_batch(evidence):
    """``K / S`` for each row of an ``(n, K)`` evidence matrix."""
    e = validate_evidence(evidence)
    return e.shape[1] / (e.sum(axis=1) + e.shape[1])


def _check_alpha(alpha, minimum=0.0, strict=True):
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or a.size < 1 or not np.isfinite(a).all():
        raise InvalidAlpha("alpha must be a finite K-vector")
    if (a <= minimum).any() if strict else (a < minimum).any():
        op = ">" if strict else ">="
        raise InvalidAlpha(f"alpha entries must be {op} {minimum}")
    return a


def dirichlet_log_density(p, alpha):
    """Log Dirichlet density at an interior point of the simplex."""
    a = _check_alpha(alpha)
    p = np.asarray(p, dtype=np.float64)
    if p.shape != a.shape:
        raise ValueError("p and alpha must have the same length")
    if (p <= 0).any():
        raise BoundaryPoint("p must lie strictly inside the simplex")
    log_norm = gammaln(a.sum()) - gammaln(a).sum()
    return float(log_norm + np.sum((a - 1.0) * np.log(p)))


def edl_kl_to_uniform(alpha_tilde):
    """KL divergence from ``Dir(alpha_tilde)`` to the uniform ``Dir(1, ..., 1)``."""
    a = _check_alpha(alpha_tilde, minimum=1.0, strict=False)
    k = a.size
    s = a.sum()
    kl = (gammaln(s) - gammaln(k) - gammaln(a).sum()
          + np.sum((a - 1.0) * (digamma(a) - digamma(s))))
    # rounding can leave a -1e-16 residue near alpha == 1
    return max(float(kl), 0.0)


def _check_onehot(onehot, k):
    y = np.asarray(onehot, dtype=np.float64)
    if y.shape != (k,) or not np.isin(y, (0.0, 1.0)).all() or y.sum() != 1.0:
        raise InvalidOneHot(f"expected a one-hot vector of length {k}")
    return y


def _loss_parts(evidence, onehot):
    e = validate_evidence(evidence)
    if e.ndim != 1:
        raise ValueError("edl_loss takes a single evidence vector")
    y = _check_onehot(onehot, e.size)
    alpha = e + 1.0
    return e, y, alpha, alpha.sum()


def edl_loss(evidence, onehot, kl_weight=1.0):
    """Evidential squared-error loss plus a weighted KL penalty.

    The squared-error part is the expected Brier score under
    ``Dir(alpha)``; the penalty is :func:`edl_kl_to_uniform` applied to the
    Dirichlet with the true class's evidence removed.
    """
    if kl_weight < 0:
        raise ValueError("kl_weight must be >= 0")
    _, y, alpha, s = _loss_parts(evidence, onehot)
    p = alpha / s
    mse = np.sum((y - p) ** 2 + alpha * (s - alpha) / (s * s * (s + 1.0)))
    alpha_tilde = y + (1.0 - y) * alpha
    return float(mse) + kl_weight * edl_kl_to_uniform(alpha_tilde)


def edl_loss_grad(evidence, onehot, kl_weight=1.0):
    """Analytic gradient of :func:`edl_loss` with respect to the evidence."""
    _, y, alpha, s = _loss_parts(evidence, onehot)
    p = alpha / s
    sum_p2 = np.dot(p, p)
    r = y - p
    d_err = (-2.0 / s) * (r - np.dot(r, p))
    d_var = -2.0 * (p - sum_p2) / (s * (s + 1.0)) - (1.0 - sum_p2) / (s + 1.0) ** 2

    at = y + (1.0 - y) * alpha
    st = at.sum()
    d_kl = (1.0 - y) * ((at - 1.0) * polygamma(1, at) - polygamma(1, st) * (st - at.size))
    return d_err + d_var + kl_weight * d_kl
