"""Summary statistics over repeated randomized solves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    sd: float
    ci95: float  # half-width of the two-sided 95% t-interval on the mean


def summarize(values: Sequence[float]) -> Summary:
    """Mean, sample SD (ddof=1) and 95% t half-width.

    SD and half-width are NaN with fewer than two values.
    """
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n == 0:
        return Summary(0, math.nan, math.nan, math.nan)
    mean = float(x.mean())
    if n < 2:
        return Summary(1, mean, math.nan, math.nan)
    sd = float(x.std(ddof=1))
    half = float(stats.t.ppf(0.975, n - 1) * sd / math.sqrt(n))
    return Summary(n, mean, sd, half)
