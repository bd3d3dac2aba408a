"""Local linear regression (LOESS without robustness iterations).

At each evaluation point the ``k = ceil(span * n)`` nearest observations get
tricube weights ``(1 - (d / h)^3)^3``, where ``h`` is the distance to the k-th
nearest observation, and a weighted least-squares line is fit. The band is the
weighted residual standard deviation of that local fit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DEFAULT_SPAN = 0.75
DEFAULT_N_EVAL = 100


@dataclass(frozen=True)
class LoessFit:
    eval_points: list
    fitted_mean: list
    sigma_band: list
    span: float
    fallback: list  # True where the local fit degenerated to a weighted mean

    def __post_init__(self):
        if not (len(self.eval_points) == len(self.fitted_mean) == len(self.sigma_band) == len(self.fallback)):
            raise ValueError("LoessFit lists must have equal length")

    @property
    def lower(self) -> list:
        return [m - s for m, s in zip(self.fitted_mean, self.sigma_band)]

    @property
    def upper(self) -> list:
        return [m + s for m, s in zip(self.fitted_mean, self.sigma_band)]


def _local_fit(x: np.ndarray, y: np.ndarray, x0: float, k: int) -> tuple[float, float, bool]:
    d = np.abs(x - x0)
    h = np.partition(d, k - 1)[k - 1]
    degenerate = False
    inside = d < h
    if h > 0 and inside.any():
        w = (1.0 - (d[inside] / h) ** 3) ** 3
    else:
        # all k neighbours tie at distance h (zero tricube weight): use them unweighted
        inside = d <= h
        w = np.ones(np.count_nonzero(inside))
        degenerate = True
    xs, ys = x[inside], y[inside]
    pos = w > 0
    xs, ys, w = xs[pos], ys[pos], w[pos]

    if np.all(ys == ys[0]):
        return float(ys[0]), 0.0, degenerate

    sw = w.sum()
    xbar = (w * xs).sum() / sw
    ybar = (w * ys).sum() / sw
    dx = xs - xbar
    sxx = (w * dx * dx).sum()
    if np.unique(xs).size < 2 or sxx <= 0:
        resid = ys - ybar
        return float(ybar), float(math.sqrt((w * resid * resid).sum() / sw)), True
    slope = (w * dx * (ys - ybar)).sum() / sxx
    resid = ys - (ybar + slope * dx)
    sigma = math.sqrt(max((w * resid * resid).sum() / sw, 0.0))
    return float(ybar + slope * (x0 - xbar)), sigma, degenerate


def loess_fit(x: Sequence[float], y: Sequence[float], span: float = DEFAULT_SPAN,
              eval_points: Optional[Sequence[float]] = None) -> LoessFit:
    """Fit correctness ``y`` (0/1, though any reals work) against ``x``.

    ``eval_points`` defaults to 100 evenly spaced values over ``[min(x), max(x)]``.
    Fitted values are not clamped to [0, 1].
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d sequences of equal length")
    n = x.size
    if n < 3:
        raise ValueError(f"loess_fit needs at least 3 points, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("loess_fit: non-finite input")
    if not (0 < span <= 1):
        raise ValueError(f"span must lie in (0, 1], got {span!r}")
    if np.unique(x).size < 2:
        raise ValueError("loess_fit needs at least 2 distinct x values")

    # canonical order makes the floating-point sums independent of input order
    order = np.lexsort((y, x))
    x, y = x[order], y[order]

    if eval_points is None:
        eval_points = np.linspace(x[0], x[-1], DEFAULT_N_EVAL)
    ev = [float(v) for v in eval_points]
    k = max(2, math.ceil(span * n))

    means, sigmas, flags = [], [], []
    for x0 in ev:
        m, s, fb = _local_fit(x, y, x0, k)
        means.append(m)
        sigmas.append(s)
        flags.append(fb)
    return LoessFit(ev, means, sigmas, float(span), flags)


def loess_to_csv(fit: LoessFit, clamp: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eval_point", "fitted_mean", "lower", "upper", "fallback"])
    for x0, m, lo, hi, fb in zip(fit.eval_points, fit.fitted_mean, fit.lower, fit.upper, fit.fallback):
        if clamp:
            m, lo, hi = (min(1.0, max(0.0, v)) for v in (m, lo, hi))
        w.writerow([repr(x0), repr(m), repr(lo), repr(hi), str(fb).lower()])
    return buf.getvalue()
