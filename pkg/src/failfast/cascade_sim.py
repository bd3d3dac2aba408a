"""Route each query through the Ask or Fail-Fast-or-Ask system.

Accounting rules:

* Human time and cost are zero and the human is always right, so human routes
  carry no counted correctness.
* A reasoning-model deferral still pays the reasoning run: output length is
  only known after generation.
* The non-reasoning record already includes its P(True) probe, so a
  fail-fast query pays ``L_nr``/``C_nr`` once and nothing else.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .calibrate import FAIL_FAST, PASS, RESPOND, AskPolicy, PolicyConfig, classify
from .trace_store import Trace


class Action(str, Enum):
    RESPOND = "respond"
    PASS = "pass"
    FAIL_FAST = "fail_fast"


class Route(str, Enum):
    NR_ANSWER = "nr_answer"
    R_ANSWER = "r_answer"
    HUMAN_VIA_FAIL_FAST = "human_via_fail_fast"
    HUMAN_VIA_REASONING = "human_via_reasoning"

    @property
    def is_human(self) -> bool:
        return self in (Route.HUMAN_VIA_FAIL_FAST, Route.HUMAN_VIA_REASONING)


# integer codes used by the array path; index into ROUTES
NR_ANSWER, R_ANSWER, HUMAN_FF, HUMAN_R = 0, 1, 2, 3
ROUTES = (Route.NR_ANSWER, Route.R_ANSWER, Route.HUMAN_VIA_FAIL_FAST, Route.HUMAN_VIA_REASONING)
_ACTIONS = {FAIL_FAST: Action.FAIL_FAST, PASS: Action.PASS, RESPOND: Action.RESPOND}


@dataclass(frozen=True)
class Outcome:
    query_id: str
    route: Route
    counted_correct: Optional[bool]
    latency_seconds: float
    cost_usd: float

    def __post_init__(self):
        if self.route.is_human != (self.counted_correct is None):
            raise ValueError("counted_correct must be present exactly on machine-answered routes")


@dataclass(frozen=True)
class RoutedArrays:
    """Column form of an Outcome list; what metrics consume."""

    route: np.ndarray  # int8 codes, see ROUTES
    correct: np.ndarray  # bool, meaningful only where answered
    latency: np.ndarray
    cost: np.ndarray

    @property
    def answered(self) -> np.ndarray:
        return self.route <= R_ANSWER

    def to_outcomes(self, query_ids: Sequence[str]) -> list[Outcome]:
        out = []
        for qid, code, ok, lat, cost in zip(query_ids, self.route.tolist(), self.correct.tolist(),
                                            self.latency.tolist(), self.cost.tolist()):
            out.append(Outcome(qid, ROUTES[code], ok if code <= R_ANSWER else None, lat, cost))
        return out


def nr_action(p_true: float, config: PolicyConfig) -> Action:
    code = classify(np.array([p_true]), config.c_fail_fast, config.c_pass)[0]
    return _ACTIONS[int(code)]


def route_ask(trace: Trace, policy: AskPolicy) -> RoutedArrays:
    trace.require_nonempty()
    deferred = trace.r_tokens > policy.token_threshold
    route = np.where(deferred, HUMAN_R, R_ANSWER).astype(np.int8)
    return RoutedArrays(route, trace.r_correct.copy(), trace.r_latency.copy(), trace.r_cost.copy())


def route_ffoa(trace: Trace, config: PolicyConfig) -> RoutedArrays:
    trace.require_nonempty()
    codes = classify(trace.p_true, config.c_fail_fast, config.c_pass)
    passed = codes == PASS

    route = np.empty(len(trace), dtype=np.int8)
    route[codes == RESPOND] = NR_ANSWER
    route[codes == FAIL_FAST] = HUMAN_FF
    if passed.any():
        if config.r_token_threshold is None:
            raise ValueError("config passes queries but has no reasoning token threshold")
        deferred = trace.r_tokens > config.r_token_threshold
        route[passed & deferred] = HUMAN_R
        route[passed & ~deferred] = R_ANSWER

    correct = np.where(passed, trace.r_correct, trace.nr_correct)
    latency = np.where(passed, trace.nr_latency + trace.r_latency, trace.nr_latency)
    cost = np.where(passed, trace.nr_cost + trace.r_cost, trace.nr_cost)
    return RoutedArrays(route, correct, latency, cost)


def simulate_ask(trace: Trace, policy: AskPolicy) -> list[Outcome]:
    return route_ask(trace, policy).to_outcomes(trace.query_ids)


def simulate_ffoa(trace: Trace, config: PolicyConfig) -> list[Outcome]:
    return route_ffoa(trace, config).to_outcomes(trace.query_ids)


def realized_rates(outcomes: Sequence[Outcome]) -> dict:
    """Fractions over all outcomes.

    ``pass_rate`` counts queries that reached the reasoning model (answered or
    deferred by it); ``utilization = 1 - pass_rate``.
    """
    if not outcomes:
        raise ValueError("realized_rates of an empty outcome list")
    n = len(outcomes)
    counts = {route: 0 for route in Route}
    for o in outcomes:
        counts[o.route] += 1
    n_pass = counts[Route.R_ANSWER] + counts[Route.HUMAN_VIA_REASONING]
    return {
        "utilization": (n - n_pass) / n,
        "fail_fast_rate": counts[Route.HUMAN_VIA_FAIL_FAST] / n,
        "pass_rate": n_pass / n,
        "rejection_rate": (counts[Route.HUMAN_VIA_FAIL_FAST] + counts[Route.HUMAN_VIA_REASONING]) / n,
    }


OUTCOME_COLUMNS = ("query_id", "route", "counted_correct", "latency_seconds", "cost_usd")


def outcomes_to_csv(outcomes: Sequence[Outcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OUTCOME_COLUMNS)
    for o in outcomes:
        cc = "" if o.counted_correct is None else str(o.counted_correct).lower()
        w.writerow([o.query_id, o.route.value, cc, repr(o.latency_seconds), repr(o.cost_usd)])
    return buf.getvalue()
