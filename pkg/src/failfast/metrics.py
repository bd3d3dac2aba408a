"""Selective-prediction and latency metrics over simulated cascades."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, asdict
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from ._exact import exact
from .calibrate import PASS, PolicyConfig, calibrate_ask, calibrate_ffoa, classify
from .cascade_sim import Outcome, RoutedArrays, route_ask, route_ffoa
from .trace_store import Trace

GRID_STOP = 0.2
GRID_STEP = 0.005


def default_grid(stop: float = GRID_STOP, step: float = GRID_STEP) -> list[float]:
    """Evenly spaced rejection levels ``0, step, ..., stop`` (inclusive).

    Values are built from exact decimals so ``default_grid()[7] == 0.035``.
    """
    stop_e, step_e = exact(stop), exact(step)
    if step_e <= 0 or stop_e < 0:
        raise ValueError("grid step must be > 0 and stop >= 0")
    count = math.floor(stop_e / step_e)
    return [float(i * step_e) for i in range(count + 1)]


@dataclass(frozen=True)
class CurvePoint:
    rejection_rate: float
    realized_rejection: float
    conditional_accuracy: float
    n_answered: int
    mean_latency_seconds: float
    mean_cost_usd: float

    @property
    def conditional_error(self) -> float:
        return 1.0 - self.conditional_accuracy


@dataclass(frozen=True)
class AuarcSummary:
    grid: list
    auarc: float
    mean_latency: float
    mean_cost: float

    def to_dict(self) -> dict:
        return asdict(self)


def conditional_accuracy(outcomes: Sequence[Outcome]) -> float:
    answered = [o.counted_correct for o in outcomes if o.counted_correct is not None]
    if not answered:
        raise ValueError("conditional accuracy undefined: no machine-answered outcomes")
    return sum(answered) / len(answered)


def _point(r: float, routed: RoutedArrays) -> CurvePoint:
    answered = routed.answered
    n_answered = int(np.count_nonzero(answered))
    if n_answered == 0:
        raise ValueError(f"conditional accuracy undefined at r={r}: every query was deferred")
    n = routed.route.size
    return CurvePoint(
        rejection_rate=float(r),
        realized_rejection=(n - n_answered) / n,
        conditional_accuracy=int(np.count_nonzero(routed.correct & answered)) / n_answered,
        n_answered=n_answered,
        mean_latency_seconds=math.fsum(routed.latency.tolist()) / n,
        mean_cost_usd=math.fsum(routed.cost.tolist()) / n,
    )


def _routed(trace: Trace, system: str, r: float, u: Optional[float]) -> RoutedArrays:
    if system == "ask":
        return route_ask(trace, calibrate_ask(trace, r))
    if system == "ffoa":
        if u is None:
            raise ValueError("system 'ffoa' requires a utilization u")
        return route_ffoa(trace, calibrate_ffoa(trace, u, r))
    raise ValueError(f"unknown system {system!r} (expected 'ask' or 'ffoa')")


def accuracy_rejection_curve(trace: Trace, system: str = "ask", grid: Optional[Sequence[float]] = None,
                             u: Optional[float] = None) -> list[CurvePoint]:
    """Calibrate and simulate at each target rejection rate in ``grid``.

    ``system`` is ``"ask"`` or ``"ffoa"`` (the latter needs ``u``). Thresholds
    are calibrated in-sample on ``trace``.
    """
    trace.require_nonempty()
    grid = default_grid() if grid is None else list(grid)
    for r in grid:
        if not 0 <= r < 1:
            raise ValueError(f"grid values must lie in [0, 1), got {r!r}")
    return [_point(r, _routed(trace, system, r, u)) for r in grid]


def auarc(curve: Sequence[CurvePoint]) -> AuarcSummary:
    if not curve:
        raise ValueError("auarc of an empty curve")
    k = len(curve)
    return AuarcSummary(
        grid=[p.rejection_rate for p in curve],
        auarc=math.fsum(p.conditional_accuracy for p in curve) / k,
        mean_latency=math.fsum(p.mean_latency_seconds for p in curve) / k,
        mean_cost=math.fsum(p.mean_cost_usd for p in curve) / k,
    )


def ideal_latency(u: float, mean_l_nr: float, mean_l_r: float) -> float:
    """Expected latency if passed queries had the reasoning model's average
    latency: ``u*L_nr + (1-u)*(L_nr + L_r)``, rounded once from exact decimals."""
    if not 0 <= u <= 1:
        raise ValueError(f"u must lie in [0, 1], got {u!r}")
    if mean_l_nr < 0 or mean_l_r < 0:
        raise ValueError("latencies must be nonnegative")
    ue, a, b = exact(u), exact(mean_l_nr), exact(mean_l_r)
    return float(ue * a + (1 - ue) * (a + b))


def _passed_mask(trace: Trace, config: PolicyConfig) -> np.ndarray:
    return classify(trace.p_true, config.c_fail_fast, config.c_pass) == PASS


def _drag_parts(trace: Trace, passed: np.ndarray):
    """Exact rational (actual, ideal, utilization) for a given passed set.

    actual = mean(L_nr) + sum_{passed} L_r / n; ideal uses the realized
    utilization so the two agree whenever passing is uncorrelated with L_r.
    """
    n = len(trace)
    sum_nr = sum(map(Fraction, trace.nr_latency.tolist()))
    r_lat = trace.r_latency.tolist()
    sum_r_all = sum(map(Fraction, r_lat))
    sum_r_passed = sum(Fraction(x) for x, p in zip(r_lat, passed.tolist()) if p)
    k = int(np.count_nonzero(passed))
    mean_nr = sum_nr / n
    actual = mean_nr + sum_r_passed / n
    pass_share = Fraction(k, n)
    ideal = mean_nr + pass_share * (sum_r_all / n)
    return actual, ideal, 1 - pass_share


def latency_drag(trace: Trace, config: PolicyConfig) -> dict:
    """Mean system latency minus the latency predicted by :func:`ideal_latency`.

    ``actual`` equals the mean Outcome latency of :func:`simulate_ffoa`
    (computed exactly rather than by summing rounded per-query totals), and
    ``ideal`` is evaluated at the realized utilization. ``drag`` is exactly 0
    when ``u = 0`` or when all reasoning latencies are equal.
    """
    trace.require_nonempty()
    actual, ideal, util = _drag_parts(trace, _passed_mask(trace, config))
    return {
        "actual": float(actual),
        "ideal": float(ideal),
        "drag": float(actual - ideal),
        "utilization": float(util),
        "target_utilization": config.utilization,
    }


def drag_permutation_test(trace: Trace, config: PolicyConfig, n_permutations: int = 1000,
                          seed: int = 0) -> dict:
    """Null distribution of drag with L_r shuffled across queries.

    Shuffling breaks any dependence between the routing decision and the
    reasoning model's latency; the routing itself is held fixed. Returns the
    observed drag, the permutation standard error, its z-score and a two-sided
    p-value (with the +1 correction).
    """
    trace.require_nonempty()
    passed = _passed_mask(trace, config)
    observed = latency_drag(trace, config)["drag"]
    n = len(trace)
    share = np.count_nonzero(passed) / n
    lat = trace.r_latency
    overall = lat.mean()
    rng = np.random.Generator(np.random.PCG64(seed))
    null = np.empty(n_permutations)
    for i in range(n_permutations):
        perm = lat[rng.permutation(n)]
        null[i] = share * (perm[passed].mean() - overall) if share else 0.0
    se = float(null.std(ddof=1)) if n_permutations > 1 else 0.0
    extreme = int(np.count_nonzero(np.abs(null) >= abs(observed)))
    return {
        "drag": observed,
        "null_mean": float(null.mean()),
        "null_se": se,
        "z": observed / se if se > 0 else (0.0 if observed == 0 else math.inf),
        "p_value": (extreme + 1) / (n_permutations + 1),
        "n_permutations": n_permutations,
        "seed": seed,
    }


def conditional_latency_profile(trace: Trace, n_bins: int = 10) -> list[dict]:
    """Mean reasoning latency per equal-count bin of non-reasoning confidence.

    Queries are ranked by ``p_true`` (ties keep trace order) and cut into
    ``n_bins`` contiguous groups whose sizes differ by at most one.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    n = len(trace)
    if n < n_bins:
        raise ValueError(f"trace has {n} records, fewer than n_bins={n_bins}")
    order = np.argsort(trace.p_true, kind="stable")
    rows = []
    start = 0
    for b, idx in enumerate(np.array_split(order, n_bins)):
        stop = start + idx.size
        lat = trace.r_latency[idx]
        rows.append({
            "percentile_bin": b,
            "lower_percentile": 100.0 * start / n,
            "upper_percentile": 100.0 * stop / n,
            "mean_p_true": float(trace.p_true[idx].mean()),
            "mean_l_r": math.fsum(lat.tolist()) / idx.size,
            "count": int(idx.size),
        })
        start = stop
    return rows


def savings_table(trace: Trace, u_values: Sequence[float] = (0.0, 0.5, 0.6, 0.75),
                  grid: Optional[Sequence[float]] = None) -> list[dict]:
    """AUARC and grid-averaged latency/cost per utilization, relative to the
    reasoning-model-only (Ask) system.

    The ``u = 0`` row is the Ask system itself and is always included first.
    Deltas are percentage changes versus that row.
    """
    grid = default_grid() if grid is None else list(grid)
    us = [0.0] + [float(u) for u in u_values if float(u) != 0.0]
    for u in us:
        if not 0 <= u <= 1:
            raise ValueError(f"u values must lie in [0, 1], got {u!r}")
    base = auarc(accuracy_rejection_curve(trace, "ask", grid))
    summaries = [(u, base if u == 0 else auarc(accuracy_rejection_curve(trace, "ffoa", grid, u=u)))
                 for u in us]
    return savings_rows(summaries)


def savings_rows(summaries: Sequence[tuple]) -> list[dict]:
    """Savings rows from ``(u, AuarcSummary)`` pairs; the ``u == 0`` pair is the base."""
    bases = [s for u, s in summaries if u == 0]
    if not bases:
        raise ValueError("savings table needs a u = 0 base row")
    base = bases[0]
    rows = []
    for u, s in summaries:
        rows.append({
            "u": u,
            "system": "ask" if u == 0 else "ffoa",
            "auarc": s.auarc,
            "mean_latency": s.mean_latency,
            "mean_cost": s.mean_cost,
            "delta_auarc_pct": _pct_change(s.auarc, base.auarc),
            "delta_latency_pct": _pct_change(s.mean_latency, base.mean_latency),
            "delta_cost_pct": _pct_change(s.mean_cost, base.mean_cost),
        })
    return rows


def baseline_stats(trace: Trace) -> dict:
    """Per-model averages per query: error rate, latency, cost, output tokens."""
    trace.require_nonempty()
    md = trace.metadata

    def arm(model_id, role, correct, latency, cost, tokens):
        return {
            "model_id": model_id,
            "role": role,
            "error_rate": 1.0 - int(np.count_nonzero(correct)) / correct.size,
            "mean_latency_seconds": math.fsum(latency.tolist()) / latency.size,
            "mean_cost_usd": math.fsum(cost.tolist()) / cost.size,
            "mean_output_tokens": int(tokens.sum()) / tokens.size,
        }

    return {
        "n": len(trace),
        "reasoning": arm(md.get("r_model_id"), "reasoning", trace.r_correct, trace.r_latency,
                         trace.r_cost, trace.r_tokens),
        "non_reasoning": arm(md.get("nr_model_id"), "non_reasoning", trace.nr_correct, trace.nr_latency,
                             trace.nr_cost, trace.nr_tokens),
    }


def _pct_change(value: float, base: float) -> float:
    if value == base:
        return 0.0
    if base == 0:
        return math.inf if value > 0 else -math.inf
    return 100.0 * (value - base) / base


def curve_to_csv(curve: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rejection_rate", "realized_rejection", "conditional_accuracy", "conditional_error",
                "n_answered", "mean_latency_seconds", "mean_cost_usd"])
    for p in curve:
        w.writerow([repr(p.rejection_rate), repr(p.realized_rejection), repr(p.conditional_accuracy),
                    repr(p.conditional_error), p.n_answered, repr(p.mean_latency_seconds),
                    repr(p.mean_cost_usd)])
    return buf.getvalue()


def profile_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    cols = ["percentile_bin", "lower_percentile", "upper_percentile", "mean_p_true", "mean_l_r", "count"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()
