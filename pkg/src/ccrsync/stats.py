"""Distribution tables and the interval estimates used by campaigns and reports."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import stats as _st

Z95 = float(_st.norm.ppf(0.975))


@dataclass(frozen=True)
class DistributionTable:
    """A PMF over integer counts or a PDF sampled on a real grid."""

    kind: Literal["pmf", "pdf"]
    support: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support)
        values = np.asarray(self.values, dtype=float)
        if self.kind not in ("pmf", "pdf"):
            raise ValueError(f"unknown table kind {self.kind!r}")
        if support.shape != values.shape or support.ndim != 1:
            raise ValueError("support and values must be 1-D arrays of equal length")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("table entries must be finite and non-negative")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "values", values)

    def total(self) -> float:
        if self.kind == "pmf":
            return float(self.values.sum())
        return float(np.trapezoid(self.values, self.support))

    def is_normalized(self, tol: float = 1e-3) -> bool:
        return abs(self.total() - 1.0) <= tol

    def mean(self) -> float:
        if self.kind == "pmf":
            return float(self.support @ self.values / self.values.sum())
        return float(np.trapezoid(self.support * self.values, self.support) / self.total())

    def var(self) -> float:
        mu = self.mean()
        if self.kind == "pmf":
            return float(((self.support - mu) ** 2) @ self.values / self.values.sum())
        return float(np.trapezoid((self.support - mu) ** 2 * self.values, self.support) / self.total())

    def pmf_at(self, n) -> np.ndarray:
        """PMF lookup for integer counts; zero outside the stored support."""
        if self.kind != "pmf":
            raise TypeError("pmf_at requires a pmf table")
        n = np.asarray(n)
        out = np.zeros(n.shape)
        lo = int(self.support[0])
        idx = n - lo
        ok = (idx >= 0) & (idx < len(self.values))
        out[ok] = self.values[idx[ok]]
        return out


def pmf_from_counts(counts) -> DistributionTable:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise ValueError("no samples")
    if counts.min() < 0:
        raise ValueError("counts must be non-negative")
    hist = np.bincount(counts)
    return DistributionTable("pmf", np.arange(len(hist)), hist / counts.size)


def tv_distance(p: DistributionTable, q: DistributionTable) -> float:
    """Total-variation distance between two count PMFs (missing support counts as 0)."""
    if p.kind != "pmf" or q.kind != "pmf":
        raise TypeError("tv_distance compares pmf tables")
    hi = int(max(p.support[-1], q.support[-1]))
    n = np.arange(hi + 1)
    return 0.5 * float(np.abs(p.pmf_at(n) - q.pmf_at(n)).sum())


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return (0.0, 1.0)
    phat = successes / n
    denom = 1.0 + z**2 / n
    centre = (phat + z**2 / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z**2 / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return (lo, hi)


def mean_interval(x: np.ndarray, z: float = Z95) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    if x.size < 2:
        return (m, m)
    half = z * float(x.std(ddof=1)) / math.sqrt(x.size)
    return (m - half, m + half)


def std_interval(x: np.ndarray, z: float = Z95) -> tuple[float, float]:
    """Asymptotic interval for the standard deviation.

    Uses the fourth central moment rather than a chi-square law, since
    timing errors are a scale mixture and far from Gaussian in the tails.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        s = float(x.std()) if x.size else 0.0
        return (s, s)
    d = x - x.mean()
    s2 = float(d @ d) / (x.size - 1)
    m4 = float((d**4).mean())
    se_s2 = math.sqrt(max(m4 - s2 * s2, 0.0) / x.size)
    s = math.sqrt(s2)
    if s == 0.0:
        return (0.0, 0.0)
    half = z * se_s2 / (2.0 * s)
    return (max(0.0, s - half), s + half)
