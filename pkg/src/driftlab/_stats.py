"""Small statistics helpers shared by the estimators and the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TooFewCycles


@dataclass
class EstimateWithCI:
    """Point estimate with a standard error; acceptance uses value +- 3 se."""

    value: float
    se: float
    n: int
    method: str = "PlainMean"

    @property
    def half_width(self) -> float:
        return 3.0 * self.se

    def consistent_with(self, other: float, k: float = 3.0) -> bool:
        return abs(self.value - other) <= k * self.se


@dataclass
class ScalingFit:
    lambdas: np.ndarray
    values: np.ndarray
    ses: np.ndarray
    slope: float
    slope_se: float


def plain_mean(samples: np.ndarray) -> EstimateWithCI:
    x = np.asarray(samples, dtype=float)
    n = len(x)
    se = x.std(ddof=1) / math.sqrt(n) if n > 1 else math.inf
    return EstimateWithCI(float(x.mean()), float(se), n, "PlainMean")


def batch_means(series: np.ndarray) -> EstimateWithCI:
    """Mean of a (possibly correlated) sequence with batch-means SE,
    using ceil(sqrt(n)) batches."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    nb = max(2, math.ceil(math.sqrt(n)))
    size = n // nb
    if size < 1:
        return plain_mean(x)
    trimmed = x[: nb * size].reshape(nb, size)
    bm = trimmed.mean(axis=1)
    se = bm.std(ddof=1) / math.sqrt(nb)
    return EstimateWithCI(float(x.mean()), float(se), n, "BatchMeans")


def ratio_of_means(num: np.ndarray, den: np.ndarray,
                   min_n: int = 30) -> EstimateWithCI:
    """Delta-method CI for mean(num)/mean(den) over paired samples."""
    y = np.asarray(num, dtype=float)
    x = np.asarray(den, dtype=float)
    n = len(x)
    if n < min_n:
        raise TooFewCycles(f"need at least {min_n} cycles, have {n}")
    r = y.mean() / x.mean()
    resid = y - r * x
    se = resid.std(ddof=1) / (abs(x.mean()) * math.sqrt(n))
    return EstimateWithCI(float(r), float(se), n, "DeltaRatio")


def loglog_fit(lambdas, values, ses=None) -> ScalingFit:
    """Least-squares slope of log(value) against log(lambda)."""
    lam = np.asarray(lambdas, dtype=float)
    val = np.asarray(values, dtype=float)
    if len(lam) < 3:
        raise ValueError("need at least 3 points for a scaling fit")
    lx = np.log(lam)
    ly = np.log(np.abs(val))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    dof = max(len(lam) - 2, 1)
    resid = ly - A @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    ses = np.zeros_like(val) if ses is None else np.asarray(ses, dtype=float)
    return ScalingFit(lambdas=lam, values=val, ses=ses,
                      slope=float(coef[0]), slope_se=float(math.sqrt(cov[0, 0])))


def combined_se(a: EstimateWithCI, b: EstimateWithCI) -> float:
    return math.hypot(a.se, b.se)
