"""Per-class difficulty anchors driven by score histograms.

For multi-epoch workloads the Gaussian weight's center mu can track each
class's difficulty: scores observed during an epoch land in 25 fixed-width
bins over [0, 1], and the next epoch's anchor for a class is the left edge
of the smallest prefix of bins holding at least a fraction b of the class's
scores. Single-pass online runs keep mu static and never touch this module.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

NUM_BINS = 25
BIN_WIDTH = 0.04


class MuValue(NamedTuple):
    mu: float
    degenerate: bool  # True when the class saw no scores this epoch


class ScoreHistogram:
    """Fixed-bin score counts per class for one epoch."""

    def __init__(self, num_classes: int, b: float = 0.25):
        if num_classes < 1:
            raise InvalidConfigError(f"num_classes must be positive, got {num_classes}")
        if not 0.0 < b < 1.0:
            raise InvalidConfigError(f"b must lie in (0, 1), got {b}")
        self.num_classes = num_classes
        self.b = b
        self.bins = np.zeros((num_classes, NUM_BINS), dtype=np.int64)
        self.cnt = np.zeros(num_classes, dtype=np.int64)

    def _check_class(self, cls: int) -> None:
        if not 0 <= cls < self.num_classes:
            raise InvalidInputError(f"class {cls} out of range")


def bin_index(score: float) -> int:
    """Bin holding a score: [i*0.04, (i+1)*0.04), with 1.0 folded into bin 24."""
    if not 0.0 <= score <= 1.0:
        raise InvalidInputError(f"score must lie in [0, 1], got {score}")
    return min(int(score * NUM_BINS), NUM_BINS - 1)


def record_scores(hist: ScoreHistogram, cls: int, scores) -> ScoreHistogram:
    """Add one class's observed target probabilities to the histogram."""
    hist._check_class(cls)
    for s in np.atleast_1d(np.asarray(scores, dtype=np.float64)):
        hist.bins[cls, bin_index(float(s))] += 1
        hist.cnt[cls] += 1
    return hist


def compute_mu(hist: ScoreHistogram, cls: int) -> MuValue:
    """Anchor for the class: left edge of the smallest prefix covering b.

    M is the least bin index whose cumulative count reaches cnt * b; the
    anchor is M * 0.04. A class with no recorded scores yields mu 0 with the
    degenerate flag set.
    """
    hist._check_class(cls)
    total = int(hist.cnt[cls])
    if total == 0:
        return MuValue(mu=0.0, degenerate=True)
    threshold = total * hist.b
    cumulative = 0
    for m in range(NUM_BINS):
        cumulative += int(hist.bins[cls, m])
        if cumulative >= threshold:
            return MuValue(mu=m * BIN_WIDTH, degenerate=False)
    # unreachable: the full prefix holds every score
    return MuValue(mu=(NUM_BINS - 1) * BIN_WIDTH, degenerate=False)


def reset_epoch(hist: ScoreHistogram) -> ScoreHistogram:
    """Clear all counts for the next epoch."""
    hist.bins[:] = 0
    hist.cnt[:] = 0
    return hist


class MuSchedule:
    """Per-class anchors; all zeros on the first epoch before any scores."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise InvalidConfigError(f"num_classes must be positive, got {num_classes}")
        self.mu_k = np.zeros(num_classes, dtype=np.float64)
        self.degenerate = np.zeros(num_classes, dtype=bool)

    def update_from(self, hist: ScoreHistogram) -> "MuSchedule":
        if hist.num_classes != len(self.mu_k):
            raise InvalidInputError("histogram and schedule class counts differ")
        for cls in range(hist.num_classes):
            value = compute_mu(hist, cls)
            self.mu_k[cls] = value.mu
            self.degenerate[cls] = value.degenerate
        return self
