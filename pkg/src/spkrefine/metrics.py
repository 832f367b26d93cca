"""Speaker-verification scoring: cosine scores, EER and normalised minDCF.

A trial is accepted when ``score >= threshold``. Both metrics sweep the
thresholds ``-inf``, every distinct score, and ``+inf``, so the
accept-all and reject-all operating points are always included.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Trial:
    enroll: np.ndarray
    test: np.ndarray
    label: bool


@dataclass(frozen=True)
class DcfParams:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0 < self.p_target < 1:
            raise ValueError("p_target must be in (0, 1)")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("costs must be positive")


def score_trials(trials) -> np.ndarray:
    """Cosine similarity of each enroll/test pair."""
    out = np.empty(len(trials))
    for i, t in enumerate(trials):
        a = np.asarray(t.enroll, dtype=np.float64)
        b = np.asarray(t.test, dtype=np.float64)
        out[i] = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return out


def error_rates(scores, labels):
    """Return ``(thresholds, p_miss, p_fa)`` over the full threshold sweep."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one target and one non-target trial")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    thresholds = np.concatenate([[-np.inf], np.unique(scores), [np.inf]])
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    pos_below = np.searchsorted(pos, thresholds, side="left")          # rejected targets
    neg_at_or_above = n_neg - np.searchsorted(neg, thresholds, side="left")  # accepted non-targets
    return thresholds, pos_below / n_pos, neg_at_or_above / n_neg


def eer(scores, labels):
    """Return ``(eer, threshold)``.

    At the first sweep point where the miss rate reaches the false-alarm
    rate, the two rates are either equal or the crossing is found by linear
    interpolation with the previous point.
    """
    thr, p_miss, p_fa = error_rates(scores, labels)
    i = int(np.argmax(p_miss >= p_fa))
    if p_miss[i] == p_fa[i]:
        return float(p_miss[i]), float(thr[i])
    d0 = p_fa[i - 1] - p_miss[i - 1]
    d1 = p_miss[i] - p_fa[i]
    lam = d0 / (d0 + d1)
    value = p_miss[i - 1] + lam * (p_miss[i] - p_miss[i - 1])
    lo, hi = thr[i - 1], thr[i]
    if np.isfinite(lo) and np.isfinite(hi):
        threshold = lo + lam * (hi - lo)
    else:
        threshold = lo if np.isfinite(lo) else hi
    return float(value), float(threshold)


def min_dcf(scores, labels, params: DcfParams = DcfParams()):
    """Return ``(min normalised DCF, threshold)``."""
    thr, p_miss, p_fa = error_rates(scores, labels)
    dcf = params.c_miss * params.p_target * p_miss + params.c_fa * (1 - params.p_target) * p_fa
    c_def = min(params.c_miss * params.p_target, params.c_fa * (1 - params.p_target))
    i = int(np.argmin(dcf))
    return float(dcf[i] / c_def), float(thr[i])
