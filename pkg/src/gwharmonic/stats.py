"""Estimates with confidence intervals: block jackknife, batch means, paired differences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st

Z95 = float(_st.norm.ppf(0.975))
METHODS = ("closed_form_pool", "ergodic_walk", "ergodic_ray", "exact", "monte_carlo")


@dataclass(frozen=True, eq=False)
class EstimateWithCI:
    mean: float
    std_error: float
    ci_low: float
    ci_high: float
    n: int
    method: str
    bias: float = 0.0
    # leave-one-out block replicates, kept so paired differences can be formed
    loo: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @classmethod
    def from_mean_se(cls, mean, se, n, method, bias=0.0, loo=None) -> "EstimateWithCI":
        mean, se = float(mean), float(se)
        half = Z95 * se + abs(bias)
        return cls(mean, se, mean - half, mean + half, int(n), method, float(bias), loo)

    @classmethod
    def exact(cls, value: float) -> "EstimateWithCI":
        return cls(float(value), 0.0, float(value), float(value), 0, "exact")

    @classmethod
    def from_samples(cls, x, method: str = "monte_carlo") -> "EstimateWithCI":
        x = np.asarray(x, dtype=float)
        se = x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else 0.0
        return cls.from_mean_se(x.mean(), se, x.size, method)

    def z_against(self, value: float, floor: float = 0.0) -> float:
        """(mean - value) / se, with ``floor`` guarding a zero standard error."""
        se = max(self.std_error, floor)
        d = self.mean - value
        if se == 0.0:
            return 0.0 if d == 0.0 else math.copysign(math.inf, d)
        return d / se

    def to_dict(self) -> dict:
        return {
            "mean": self.mean, "se": self.std_error, "ci_low": self.ci_low,
            "ci_high": self.ci_high, "n": self.n, "method": self.method,
        }


def block_ratio(num: np.ndarray, den: np.ndarray, n_blocks: int = 100):
    """Ratio of sums with delete-one-block jackknife.

    ``num`` and ``den`` are per-draw values; draws are split into contiguous
    blocks. Returns (ratio, se, loo replicates).
    """
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = num.size
    b = max(2, min(n_blocks, n))
    edges = -((-np.arange(b + 1, dtype=np.int64) * n) // b)
    a = np.add.reduceat(num, edges[:-1])
    w = np.add.reduceat(den, edges[:-1])
    A, W = a.sum(), w.sum()
    ratio = A / W
    loo = (A - a) / (W - w)
    se = math.sqrt((b - 1) / b * np.sum((loo - loo.mean()) ** 2))
    return float(ratio), float(se), loo


def jackknife_ratio(num, den, n_blocks: int = 100, method: str = "closed_form_pool") -> EstimateWithCI:
    r, se, loo = block_ratio(num, den, n_blocks)
    return EstimateWithCI.from_mean_se(r, se, np.asarray(num).size, method, loo=loo)


def jackknife_mean(x, n_blocks: int = 100, method: str = "closed_form_pool") -> EstimateWithCI:
    x = np.asarray(x, dtype=float)
    return jackknife_ratio(x, np.ones_like(x), n_blocks, method)


def batch_means(x, n_batches: int = 100, method: str = "ergodic_walk") -> EstimateWithCI:
    """Mean of an autocorrelated series with a non-overlapping batch-means standard error."""
    x = np.asarray(x, dtype=float)
    size = x.size // n_batches
    if size < 1:
        raise ValueError("series shorter than the number of batches")
    y = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return EstimateWithCI.from_mean_se(y.mean(), y.std(ddof=1) / math.sqrt(n_batches), x.size, method)


def batch_means_multi(series, n_batches: int = 100, method: str = "ergodic_walk",
                      bias: float = 0.0) -> EstimateWithCI:
    """Batch means over several independent series; every series contributes ``n_batches`` batches."""
    means = []
    total = 0
    for x in series:
        x = np.asarray(x, dtype=float)
        size = x.size // n_batches
        if size < 1:
            raise ValueError("series shorter than the number of batches")
        means.append(x[: size * n_batches].reshape(n_batches, size).mean(axis=1))
        total += x.size
    y = np.concatenate(means)
    se = y.std(ddof=1) / math.sqrt(y.size) if y.size > 1 else 0.0
    return EstimateWithCI.from_mean_se(y.mean(), se, total, method, bias=bias)


def paired_difference(a: EstimateWithCI, b: EstimateWithCI) -> EstimateWithCI:
    """a - b; uses matched jackknife replicates when both carry them."""
    d = a.mean - b.mean
    if a.loo is not None and b.loo is not None and a.loo.size == b.loo.size:
        dl = a.loo - b.loo
        nb = dl.size
        se = math.sqrt((nb - 1) / nb * np.sum((dl - dl.mean()) ** 2))
        return EstimateWithCI.from_mean_se(d, se, min(a.n, b.n), a.method, loo=dl)
    se = math.hypot(a.std_error, b.std_error)
    return EstimateWithCI.from_mean_se(d, se, min(a.n, b.n), a.method)


def combined_z(a: EstimateWithCI, b: EstimateWithCI, floor: float = 0.0) -> float:
    se = max(math.hypot(a.std_error, b.std_error), floor)
    d = a.mean - b.mean
    if se == 0.0:
        return 0.0 if d == 0.0 else math.copysign(math.inf, d)
    return d / se


def ks_2samp(x, y):
    """Two-sample Kolmogorov-Smirnov test; returns (statistic, p-value)."""
    r = _st.ks_2samp(np.asarray(x), np.asarray(y))
    return float(r.statistic), float(r.pvalue)
