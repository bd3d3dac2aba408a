"""Threshold calibration for the Ask and Fail-Fast-or-Ask systems.

Every threshold is an observed value (lower order statistic, no
interpolation), so realized rates can be bounded exactly:

* Ask: the token threshold ``T`` is the ``(1 - r)`` quantile of the reasoning
  model's output-token counts; queries with more than ``T`` tokens go to the
  human.
* Fail fast, or Ask: with ``n`` calibration queries sorted by ``p_true``, the
  lowest ``k_ff = round(u * r * n)`` fail fast, the next ``k_pass = round((1 - u) * n)``
  are passed to the reasoning model, and the rest are answered directly. The
  reasoning model's token threshold is then calibrated on the passed subset
  at the same target ``r`` (so its conditional rejection rate matches the
  system's).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from fractions import Fraction
from typing import Optional

import numpy as np

from ._exact import exact, round_half_up
from .trace_store import Trace, TraceError

FAIL_FAST, PASS, RESPOND = 0, 1, 2


class InfeasibleConfiguration(ValueError):
    pass


def _check_unit(name, value, *, upper_open=False):
    v = float(value)
    if not math.isfinite(v) or v < 0 or v > 1 or (upper_open and v >= 1):
        interval = "[0, 1)" if upper_open else "[0, 1]"
        raise ValueError(f"{name} must lie in {interval}, got {value!r}")


def empirical_quantile(values, level):
    """Smallest observed ``v`` with ``fraction(values <= v) >= level``.

    That is the ``ceil(level * n)``-th order statistic (1-indexed), or the
    minimum when ``level == 0``.

    >>> empirical_quantile([1, 2, 3, 4, 5], 0.8)
    4
    """
    arr = np.asarray(values)
    if arr.size == 0:
        raise ValueError("empirical_quantile of an empty sequence")
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise ValueError("empirical_quantile: non-finite value in input")
    _check_unit("level", level)
    n = arr.size
    k = max(1, math.ceil(exact(level) * n))
    return np.sort(arr, kind="stable")[k - 1].item()


def classify(p_true: np.ndarray, c_fail_fast: Optional[float], c_pass: Optional[float]) -> np.ndarray:
    """Vectorized non-reasoning policy: FAIL_FAST / PASS / RESPOND codes.

    fail fast iff ``p <= c_fail_fast``; pass iff ``c_fail_fast < p <= c_pass``;
    respond iff ``p > c_pass``. A missing threshold disables that branch.
    """
    p = np.asarray(p_true, dtype=float)
    codes = np.full(p.shape, RESPOND, dtype=np.int8)
    if c_pass is not None:
        codes[p <= c_pass] = PASS
    if c_fail_fast is not None:
        codes[p <= c_fail_fast] = FAIL_FAST
    return codes


@dataclass(frozen=True)
class AskPolicy:
    token_threshold: int
    target_rejection: float
    realized_rejection: float

    def to_dict(self) -> dict:
        return {"system": "ask", **asdict(self)}


@dataclass(frozen=True)
class RealizedRates:
    fail_fast_rate: float
    pass_rate: float
    respond_rate: float
    n_fail_fast: int
    n_pass: int
    n_respond: int

    @classmethod
    def from_codes(cls, codes: np.ndarray) -> "RealizedRates":
        n = codes.size
        counts = [int(np.count_nonzero(codes == c)) for c in (FAIL_FAST, PASS, RESPOND)]
        return cls(*(c / n for c in counts), *counts)


@dataclass(frozen=True)
class PolicyConfig:
    """Calibrated Fail-Fast-or-Ask thresholds.

    ``c_fail_fast`` is None when nothing should fail fast; ``c_pass`` is None
    only when nothing passes and nothing fails fast (``u = 1, r = 0``).
    ``r_token_threshold`` is None when the passed subset is empty (``u = 1``).
    """

    utilization: float
    target_rejection: float
    c_fail_fast: Optional[float]
    c_pass: Optional[float]
    r_token_threshold: Optional[int]
    realized: RealizedRates
    n_calibration: int

    def __post_init__(self):
        if self.c_fail_fast is not None and self.c_pass is not None and self.c_fail_fast > self.c_pass:
            raise ValueError("c_fail_fast must not exceed c_pass")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system"] = "ffoa"
        return d


def _token_threshold(tokens: np.ndarray, r) -> int:
    return int(empirical_quantile(tokens, 1 - exact(r)))


def calibrate_ask(trace: Trace, r: float) -> AskPolicy:
    trace.require_nonempty()
    _check_unit("r", r, upper_open=True)
    tokens = trace.r_tokens
    t = _token_threshold(tokens, r)
    realized = float(np.count_nonzero(tokens > t)) / tokens.size
    return AskPolicy(token_threshold=t, target_rejection=float(r), realized_rejection=realized)


def fail_fast_rate(u, r, r_cond):
    """Fail-fast share implied by overall rejection ``r`` and the reasoning
    model's conditional rejection ``r_cond``: ``r - (1 - u) * r_cond``.

    Evaluated in exact decimal arithmetic; returns a Fraction when any input is
    a Fraction, else a float.
    """
    for name, v in (("u", u), ("r", r), ("r_cond", r_cond)):
        _check_unit(name, v)
    ue, re_, rc = exact(u), exact(r), exact(r_cond)
    out = re_ - (1 - ue) * rc
    if out < 0:
        raise InfeasibleConfiguration(
            f"infeasible configuration: r - (1-u)*r_cond = {float(out):.6g} < 0 "
            f"(u={u}, r={r}, r_cond={r_cond})"
        )
    if any(isinstance(v, Fraction) for v in (u, r, r_cond)):
        return out
    return float(out)


def target_counts(n: int, u, r) -> tuple[int, int]:
    """(k_fail_fast, k_pass) for ``n`` calibration queries, round-half-up,
    with ``k_fail_fast`` reduced if the two would exceed ``n``."""
    ue, re_ = exact(u), exact(r)
    k_ff = round_half_up(fail_fast_rate(ue, re_, re_) * n)
    k_pass = round_half_up((1 - ue) * n)
    k_ff = min(k_ff, n - k_pass)
    return k_ff, k_pass


def calibrate_ffoa(trace: Trace, u: float, r: float) -> PolicyConfig:
    trace.require_nonempty()
    _check_unit("u", u)
    _check_unit("r", r, upper_open=True)
    n = len(trace)
    k_ff, k_pass = target_counts(n, u, r)

    p_sorted = np.sort(trace.p_true, kind="stable")
    c_ff = float(p_sorted[k_ff - 1]) if k_ff > 0 else None
    c_pass = float(p_sorted[k_ff + k_pass - 1]) if k_ff + k_pass > 0 else None

    codes = classify(trace.p_true, c_ff, c_pass)
    passed = codes == PASS
    if passed.any():
        t = _token_threshold(trace.r_tokens[passed], r)
    elif exact(u) < 1:
        raise TraceError(f"no query passes to the reasoning model at u={u} (n={n}); "
                         "cannot calibrate the token threshold")
    else:
        t = None

    return PolicyConfig(
        utilization=float(u),
        target_rejection=float(r),
        c_fail_fast=c_ff,
        c_pass=c_pass,
        r_token_threshold=t,
        realized=RealizedRates.from_codes(codes),
        n_calibration=n,
    )


def split_trace(trace: Trace, calibration_fraction: float, seed: int) -> tuple[Trace, Trace]:
    """Deterministic calibration/evaluation split (PCG64 permutation).

    Both halves keep the original record order.
    """
    if not 0 < calibration_fraction < 1:
        raise ValueError("calibration_fraction must lie in (0, 1)")
    n = len(trace)
    rng = np.random.Generator(np.random.PCG64(seed))
    k = round_half_up(exact(calibration_fraction) * n)
    chosen = np.zeros(n, dtype=bool)
    chosen[rng.permutation(n)[:k]] = True
    return trace.subset(chosen), trace.subset(~chosen)
