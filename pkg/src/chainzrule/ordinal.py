"""Ordinal readout: thresholds, quadratic weighted kappa, coordinate search."""

from __future__ import annotations

import numpy as np


class DegenerateInputError(ValueError):
    pass


def check_thresholds(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise ValueError(f"thresholds must be strictly increasing, got {t}")
    return t


def map_to_class(y, thresholds) -> np.ndarray | int:
    """Class ``1 + #{T_i <= y}``; a score equal to a threshold goes to the upper class."""
    t = check_thresholds(thresholds)
    out = np.searchsorted(t, np.asarray(y, dtype=np.float64), side="right") + 1
    return int(out) if np.ndim(out) == 0 else out


def confusion(pred, truth, K: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64) - 1
    truth = np.asarray(truth, dtype=np.int64) - 1
    return np.bincount(pred * K + truth, minlength=K * K).reshape(K, K).astype(np.float64)


def qwk(pred, truth, K: int) -> float:
    """Quadratic weighted kappa between ratings in 1..K."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("qwk needs at least one rating")
    O = confusion(pred, truth, K)
    i = np.arange(K)
    w = (i[:, None] - i[None, :]) ** 2 / (K - 1) ** 2
    E = np.outer(O.sum(axis=1), O.sum(axis=0)) / O.sum()
    den = float(np.sum(w * E))
    if den == 0.0:
        return 0.0
    return 1.0 - float(np.sum(w * O)) / den


def equal_quantile_thresholds(scores, K: int) -> np.ndarray:
    s = np.sort(np.asarray(scores, dtype=np.float64))
    t = np.quantile(s, np.arange(1, K) / K)
    # break ties so the vector is strictly increasing
    for i in range(1, len(t)):
        if t[i] <= t[i - 1]:
            t[i] = np.nextafter(t[i - 1], np.inf)
    return t


def threshold_search(scores, truth, K: int = 5, grid_step: float = 0.05,
                     max_cycles: int = 100) -> np.ndarray:
    """Cyclic coordinate ascent on QWK.

    Each threshold in turn is scanned on a grid of spacing ``grid_step``
    anchored at its current value and confined to the open interval between
    its neighbours (outermost bounds: score range padded by one step). A
    threshold moves only on strict improvement; among improving values the
    smallest wins. Cycles repeat until nothing moves.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if len(np.unique(scores)) < K:
        raise DegenerateInputError(f"need at least {K} distinct scores")
    t = equal_quantile_thresholds(scores, K)
    lo_bound = scores.min() - grid_step
    hi_bound = scores.max() + grid_step
    best = qwk(map_to_class(scores, t), truth, K)
    for _ in range(max_cycles):
        moved = False
        for i in range(K - 1):
            lo = t[i - 1] if i > 0 else lo_bound
            hi = t[i + 1] if i < K - 2 else hi_bound
            k_lo = int(np.floor((lo - t[i]) / grid_step))
            k_hi = int(np.ceil((hi - t[i]) / grid_step))
            cand = t[i] + grid_step * np.arange(k_lo, k_hi + 1)
            cand = cand[(cand > lo) & (cand < hi)]
            best_val, best_score = t[i], best
            trial = t.copy()
            for c in cand:
                trial[i] = c
                score = qwk(map_to_class(scores, trial), truth, K)
                if score > best_score:
                    best_val, best_score = c, score
            if best_val != t[i]:
                t[i] = best_val
                best = best_score
                moved = True
        if not moved:
            break
    return t
