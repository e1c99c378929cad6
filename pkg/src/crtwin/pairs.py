"""Win/loss/tie counting between one treated and one control cluster.

``brute_force_counts`` is the literal double loop and is kept as the test
oracle. ``fast_counts`` produces the same numbers through category
histograms (small integer ranks) or sorted binary search (anything else).
``count_matrices`` does the histogram path for every treated/control pair
at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import WinTriple
from .errors import ValidationError

# Histogram path is used when the rank span is at most this many times the
# combined vector length.
_HIST_SPAN_FACTOR = 4


@dataclass(frozen=True)
class PairCounts:
    wins: int
    losses: int
    ties: int
    n_pairs: int

    def __post_init__(self):
        if self.wins + self.losses + self.ties != self.n_pairs:
            raise ValidationError(f"counts do not add up: {self}")

    def __add__(self, other: "PairCounts") -> "PairCounts":
        return PairCounts(
            self.wins + other.wins,
            self.losses + other.losses,
            self.ties + other.ties,
            self.n_pairs + other.n_pairs,
        )

    def swapped(self) -> "PairCounts":
        return PairCounts(self.losses, self.wins, self.ties, self.n_pairs)


def _check(treated, control):
    t = np.asarray(treated).reshape(-1)
    c = np.asarray(control).reshape(-1)
    if t.size == 0 or c.size == 0:
        raise ValidationError("both outcome vectors must be nonempty")
    return t, c


def brute_force_counts(treated, control) -> PairCounts:
    t, c = _check(treated, control)
    wins = losses = ties = 0
    for y1 in t.tolist():
        for y0 in c.tolist():
            if y1 > y0:
                wins += 1
            elif y1 < y0:
                losses += 1
            else:
                ties += 1
    return PairCounts(wins, losses, ties, len(t) * len(c))


def fast_counts(treated, control) -> PairCounts:
    t, c = _check(treated, control)
    n, m = len(t), len(c)
    if np.issubdtype(t.dtype, np.integer) and np.issubdtype(c.dtype, np.integer):
        lo = min(int(t.min()), int(c.min()))
        span = max(int(t.max()), int(c.max())) - lo + 1
        if span <= _HIST_SPAN_FACTOR * (n + m) + 16:
            return _histogram_counts(t - lo, c - lo, span)
    return _sorted_counts(t, c)


def _histogram_counts(t: np.ndarray, c: np.ndarray, D: int) -> PairCounts:
    ht = np.bincount(t, minlength=D).astype(np.int64)
    hc = np.bincount(c, minlength=D).astype(np.int64)
    below = np.concatenate(([0], np.cumsum(hc)[:-1]))  # control strictly below each rank
    wins = int(ht @ below)
    ties = int(ht @ hc)
    n_pairs = len(t) * len(c)
    return PairCounts(wins, n_pairs - wins - ties, ties, n_pairs)


def _sorted_counts(t: np.ndarray, c: np.ndarray) -> PairCounts:
    cs = np.sort(c)
    left = np.searchsorted(cs, t, side="left")
    right = np.searchsorted(cs, t, side="right")
    wins = int(left.sum())
    ties = int((right - left).sum())
    n_pairs = len(t) * len(c)
    return PairCounts(wins, n_pairs - wins - ties, ties, n_pairs)


def pair_fractions(counts: PairCounts, exact: bool = True) -> WinTriple:
    if counts.n_pairs <= 0:
        raise ValidationError("n_pairs must be positive")
    if exact:
        n = counts.n_pairs
        return WinTriple(Fraction(counts.wins, n), Fraction(counts.losses, n), Fraction(counts.ties, n))
    return WinTriple.from_counts(counts.wins, counts.losses, counts.ties, exact=False)


def histograms(outcome_vectors, D: int) -> np.ndarray:
    """Stack per-cluster category counts into an ``(n_clusters, D)`` array."""
    out = np.zeros((len(outcome_vectors), D), dtype=np.int64)
    for row, y in zip(out, outcome_vectors):
        row += np.bincount(y, minlength=D)
    return out


def count_matrices(hist_treated: np.ndarray, hist_control: np.ndarray):
    """Win, loss and tie counts for every treated x control cluster pair.

    Returns three int64 arrays of shape ``(n_treated, n_control)``.
    """
    ht = np.asarray(hist_treated, dtype=np.int64)
    hc = np.asarray(hist_control, dtype=np.int64)
    cum = np.cumsum(hc, axis=1)
    below = np.concatenate([np.zeros((hc.shape[0], 1), dtype=np.int64), cum[:, :-1]], axis=1)
    above = cum[:, -1:] - cum
    wins = ht @ below.T
    losses = ht @ above.T
    ties = ht @ hc.T
    return wins, losses, ties
