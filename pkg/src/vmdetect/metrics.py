"""Uncertainty scores of an MC batch and the threshold test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CLEAN = "clean"
ADVERSARIAL = "adversarial"


def _outputs(batch) -> np.ndarray:
    y = getattr(batch, "outputs", batch)
    return np.atleast_2d(np.asarray(y, dtype=float))


def entropy(y) -> np.ndarray | float:
    """Natural-log entropy ``-sum y ln y`` with ``0 ln 0 = 0``.

    Works on a single probability vector or on rows of a matrix.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("probability vector has negative entries")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(y > 0, y * np.log(y), 0.0)
    h = -np.sum(terms, axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def _mean_rows(Y: np.ndarray) -> np.ndarray:
    # shifted by the first row so identical rows give that row back exactly
    return Y[0] + np.mean(Y - Y[0], axis=0)


def mutual_information(batch) -> float:
    """Entropy of the mean output minus the mean per-pass entropy.

    Evaluated as the mean KL divergence of each pass from the mean output,
    which is the same quantity but is exactly zero when all passes agree.
    """
    Y = _outputs(batch)
    if Y.shape[0] < 2:
        raise ValueError("need at least two MC outputs")
    if np.any(Y < 0):
        raise ValueError("probability vector has negative entries")
    ybar = _mean_rows(Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(Y > 0, Y * (np.log(Y) - np.log(ybar)), 0.0)
    return float(np.mean(np.sum(terms, axis=1)))


def variance_trace(batch) -> float:
    """Trace of the (biased) sample covariance of the outputs."""
    Y = _outputs(batch)
    if Y.shape[0] < 2:
        raise ValueError("need at least two MC outputs")
    D = Y - _mean_rows(Y)
    return float(np.mean(np.sum(D * D, axis=1)))


@dataclass(frozen=True)
class UncertaintyScore:
    mi: float
    var_trace: float
    mean_output: np.ndarray

    def get(self, statistic: str) -> float:
        if statistic == "mi":
            return self.mi
        if statistic in ("var", "var-trace", "var_trace"):
            return self.var_trace
        raise ValueError(f"unknown statistic {statistic!r}")


def score_batch(batch) -> UncertaintyScore:
    Y = _outputs(batch)
    return UncertaintyScore(mutual_information(Y), variance_trace(Y), _mean_rows(Y))


@dataclass(frozen=True)
class DetectorThreshold:
    tau0: float

    def __post_init__(self):
        if not math.isfinite(self.tau0):
            raise ValueError("threshold must be finite")


def decide(score: float, tau: DetectorThreshold | float) -> str:
    """``adversarial`` iff ``score > tau0``; equality counts as clean."""
    if math.isnan(score):
        raise ValueError("score is NaN")
    t = tau.tau0 if isinstance(tau, DetectorThreshold) else float(tau)
    return ADVERSARIAL if score > t else CLEAN


def threshold_at_fpr(clean_scores, target_fpr: float) -> DetectorThreshold:
    """Smallest observed threshold whose false-positive rate on ``clean_scores``
    does not exceed ``target_fpr``.

    Operational convenience for picking tau0 from validation data.
    """
    s = np.sort(np.asarray(clean_scores, dtype=float))
    if s.size == 0:
        raise ValueError("no clean scores")
    if not 0 <= target_fpr <= 1:
        raise ValueError("target_fpr must lie in [0, 1]")
    for t in np.unique(s):
        if np.mean(s > t) <= target_fpr:
            return DetectorThreshold(float(t))
    return DetectorThreshold(float(s[-1]))
