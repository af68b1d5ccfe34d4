"""Evaluation metric and paired significance test used by the harness.

Both functions follow fixed, documented conventions so that results are
reproducible and comparable across runs:

* ``f1_score`` returns 0.0 whenever precision or recall is undefined.
* ``wilcoxon_signed_rank`` drops zero differences, uses average ranks for
  ties, and switches from the exact null distribution to a tie- and
  continuity-corrected normal approximation above ``EXACT_LIMIT``
  remaining pairs.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from scipy.stats import norm, rankdata

# Largest post-drop sample size for which the exact null distribution of the
# signed-rank statistic is enumerated. 2^25 sign patterns are never listed
# explicitly; the distribution is built by convolution over the ranks.
EXACT_LIMIT = 25


def f1_score(y_true: Sequence, y_pred: Sequence, positive) -> float:
    """Harmonic mean of precision and recall for the ``positive`` class.

    Degenerate cases (no predicted positives, no true positives, or
    precision + recall = 0) return 0.0 rather than raising.
    """
    yt = np.asarray(y_true)
    yp = np.asarray(y_pred)
    if yt.shape != yp.shape or yt.ndim != 1:
        raise ValueError(
            f"label sequences must be 1-d and equal length, got {yt.shape} and {yp.shape}"
        )
    if yt.size == 0:
        raise ValueError("label sequences must be non-empty")
    true_pos = yt == positive
    pred_pos = yp == positive
    tp = int(np.sum(true_pos & pred_pos))
    fp = int(np.sum(~true_pos & pred_pos))
    fn = int(np.sum(true_pos & ~pred_pos))
    if tp + fp == 0 or tp + fn == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def wilcoxon_signed_rank(diffs: Sequence[float], alternative: str = "greater") -> float:
    """One-sided p-value of the Wilcoxon signed-rank test on paired differences.

    Parameters
    ----------
    diffs:
        Paired differences. Exact zeros are dropped before ranking; if all
        differences are zero the test carries no evidence and p = 1.0.
    alternative:
        ``"greater"`` tests whether differences tend to be positive,
        ``"less"`` whether they tend to be negative.

    Notes
    -----
    The statistic is W+, the sum of average ranks of ``|d|`` over positive
    differences. For at most ``EXACT_LIMIT`` non-zero differences the p-value
    is exact: the null distribution over all 2^n sign patterns is computed by
    convolving the (doubled, hence integral) ranks, so ties are handled
    without approximation. Larger samples use the normal approximation with
    the usual tie correction of the variance and a 0.5 continuity correction.
    """
    if alternative not in ("greater", "less"):
        raise ValueError(f"alternative must be 'greater' or 'less', got {alternative!r}")
    d = np.asarray(diffs, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("diffs must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(d)):
        raise ValueError("diffs must be finite")

    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return 1.0

    ranks = rankdata(np.abs(d))
    w_plus = float(np.sum(ranks[d > 0]))

    if n <= EXACT_LIMIT:
        return _exact_p(ranks, w_plus, alternative)
    return _normal_p(d, ranks, w_plus, alternative)


def _exact_p(ranks: np.ndarray, w_plus: float, alternative: str) -> float:
    # Average ranks are multiples of 1/2; doubling makes every rank an
    # integer, so the null distribution lives on {0, ..., sum(2r)}.
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.uint64)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    w2 = int(np.rint(2.0 * w_plus))
    n = ranks.size
    if alternative == "greater":
        favorable = int(counts[w2:].sum())
    else:
        favorable = int(counts[: w2 + 1].sum())
    return favorable / 2**n


def _normal_p(d: np.ndarray, ranks: np.ndarray, w_plus: float, alternative: str) -> float:
    n = d.size
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(float) ** 3 - tie_counts)) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    sd = np.sqrt(var)
    if alternative == "greater":
        z = (w_plus - 0.5 - mean) / sd
        return float(norm.sf(z))
    z = (w_plus + 0.5 - mean) / sd
    return float(norm.cdf(z))


def percentile_band(values: Sequence[float], lo: float = 10.0, hi: float = 90.0) -> tuple[float, float]:
    """Percentile pair using linear interpolation between closest ranks."""
    arr = np.asarray(values, dtype=float)
    p = np.percentile(arr, [lo, hi], method="linear")
    return float(p[0]), float(p[1])
