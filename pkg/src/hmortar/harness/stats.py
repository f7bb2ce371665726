"""Lobe-switching statistics for Lorenz-type trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


class TooFewSwitches(ValueError):
    pass


@dataclass
class SwitchingStats:
    intervals: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    rate: float
    threshold: float
    ks_statistic: float
    ks_pvalue: float
    n_fit: int

    def passes(self, alpha: float = 0.01) -> bool:
        return bool(self.ks_pvalue > alpha)

    def as_dict(self) -> dict:
        return {"n_intervals": int(self.intervals.size), "n_fit": self.n_fit,
                "rate": self.rate, "threshold": self.threshold,
                "ks_statistic": self.ks_statistic, "ks_pvalue": self.ks_pvalue,
                "bin_edges": self.bin_edges.tolist(), "counts": self.counts.tolist(),
                "intervals": self.intervals.tolist()}


def switch_intervals(t, x) -> np.ndarray:
    """Sorted durations between consecutive sign changes of ``x``.

    Crossing times are located by linear interpolation; the partial
    residences before the first and after the last crossing are dropped.
    Exact zeros are given the sign of the preceding sample.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    s = np.sign(x)
    for i in range(1, s.size):
        if s[i] == 0:
            s[i] = s[i - 1]
    flip = np.flatnonzero(s[1:] * s[:-1] < 0)
    if flip.size == 0:
        return np.zeros(0)
    x0, x1 = x[flip], x[flip + 1]
    frac = np.where(x1 != x0, x0 / (x0 - x1), 0.5)
    tc = t[flip] + frac * (t[flip + 1] - t[flip])
    return np.sort(np.diff(tc))


def switching_statistics(t, x, threshold: float = 0.0, bins: int = 30,
                         min_switches: int = 10) -> SwitchingStats:
    """Interval histogram, exponential rate fit and Kolmogorov-Smirnov check.

    Intervals shorter than ``threshold`` are excluded from the fit; the rest
    are shifted by ``threshold`` and fitted with a one-parameter exponential
    by maximum likelihood.  The KS test is one-sided: it rejects when the
    empirical CDF lies above the fitted CDF, i.e. an excess of short
    residences.
    """
    iv = switch_intervals(t, x)
    if iv.size + 1 < min_switches:
        raise TooFewSwitches(f"only {iv.size + 1} sign changes; need at least {min_switches}")
    tail = iv[iv >= threshold] - threshold
    if tail.size < 2:
        raise TooFewSwitches("too few intervals above the threshold to fit")
    rate = 1.0 / float(np.mean(tail))
    res = stats.kstest(tail, stats.expon(scale=1.0 / rate).cdf, alternative="greater")
    lo, hi = float(iv.min()), float(iv.max())
    if hi - lo <= 1e-9 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(iv, bins=bins, range=(lo, hi))
    return SwitchingStats(iv, edges, counts, rate, float(threshold), float(res.statistic),
                          float(res.pvalue), int(tail.size))
