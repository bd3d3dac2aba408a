"""Per-query trace records: JSONL ingestion, validation and the nr/r join.

One JSONL line holds one model run on one query::

    {"query_id": "q1", "model_id": "m", "role": "reasoning", "correct": true,
     "latency_seconds": 1.5, "cost_usd": 0.001, "output_tokens": 100}

Non-reasoning lines additionally carry ``p_true``. Unknown keys are ignored so
that collector side-channel fields (probe latency, extracted answer, ...) do
not break ingestion.

``output_tokens`` is whatever the provider reported as completion tokens. Some
hosted reasoning models bill hidden thinking tokens without returning them;
those counts are stored as reported.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

NR_FILENAME = "nr.jsonl"
R_FILENAME = "r.jsonl"


class TraceError(ValueError):
    """Invalid trace content. ``line`` is 1-based when the error came from a file."""

    def __init__(self, message: str, *, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ModelRole(str, Enum):
    REASONING = "reasoning"
    NON_REASONING = "non_reasoning"


def _check_nonneg_real(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TraceError(f"{name} must be a number, got {value!r}", field=name)
    if not math.isfinite(value) or value < 0:
        raise TraceError(f"{name} out of range: {value!r} (finite, >= 0)", field=name)


@dataclass(frozen=True)
class TraceRecord:
    query_id: str
    model_id: str
    role: ModelRole
    correct: bool
    latency_seconds: float
    cost_usd: float
    output_tokens: int
    p_true: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.query_id, str) or not self.query_id:
            raise TraceError("query_id must be a nonempty string", field="query_id")
        if not isinstance(self.model_id, str):
            raise TraceError("model_id must be a string", field="model_id")
        if not isinstance(self.role, ModelRole):
            try:
                object.__setattr__(self, "role", ModelRole(self.role))
            except ValueError:
                raise TraceError(f"unknown role {self.role!r}", field="role") from None
        if not isinstance(self.correct, bool):
            raise TraceError(f"correct must be a boolean, got {self.correct!r}", field="correct")
        _check_nonneg_real("latency_seconds", self.latency_seconds)
        _check_nonneg_real("cost_usd", self.cost_usd)
        if isinstance(self.output_tokens, bool) or not isinstance(self.output_tokens, int):
            raise TraceError(
                f"output_tokens must be an integer, got {self.output_tokens!r}", field="output_tokens"
            )
        if self.output_tokens < 0:
            raise TraceError(f"output_tokens out of range: {self.output_tokens}", field="output_tokens")
        if self.p_true is not None:
            if isinstance(self.p_true, bool) or not isinstance(self.p_true, (int, float)):
                raise TraceError(f"p_true must be a number, got {self.p_true!r}", field="p_true")
            if not (0.0 <= self.p_true <= 1.0):
                raise TraceError(f"p_true out of range: {self.p_true!r} (expected [0, 1])", field="p_true")

    @classmethod
    def from_dict(cls, obj: dict, default_role: Optional[ModelRole] = None) -> "TraceRecord":
        required = ["query_id", "model_id", "correct", "latency_seconds", "cost_usd", "output_tokens"]
        for name in required:
            if name not in obj:
                raise TraceError(f"missing required field {name!r}", field=name)
        role = obj.get("role", default_role)
        if role is None:
            raise TraceError("missing required field 'role'", field="role")
        return cls(
            query_id=obj["query_id"],
            model_id=obj["model_id"],
            role=role,
            correct=obj["correct"],
            latency_seconds=obj["latency_seconds"],
            cost_usd=obj["cost_usd"],
            output_tokens=obj["output_tokens"],
            p_true=obj.get("p_true"),
        )

    def to_dict(self) -> dict:
        out = {
            "query_id": self.query_id,
            "model_id": self.model_id,
            "role": self.role.value,
            "correct": self.correct,
            "latency_seconds": self.latency_seconds,
            "cost_usd": self.cost_usd,
            "output_tokens": self.output_tokens,
        }
        if self.p_true is not None:
            out["p_true"] = self.p_true
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass(frozen=True)
class ModelRun:
    """The per-model half of a joined record."""

    correct: bool
    latency_seconds: float
    cost_usd: float
    output_tokens: int
    p_true: Optional[float] = None


@dataclass(frozen=True)
class JoinedRecord:
    query_id: str
    nr: ModelRun
    r: ModelRun

    def __post_init__(self):
        p = self.nr.p_true
        if p is None:
            raise TraceError(f"query {self.query_id!r}: non-reasoning run has no p_true", field="p_true")
        if not (0.0 <= p <= 1.0):
            raise TraceError(f"query {self.query_id!r}: p_true out of range: {p!r}", field="p_true")


@dataclass(frozen=True)
class Trace:
    """Ordered joined records plus provenance.

    Column views (``trace.p_true``, ``trace.r_latency``, ...) are numpy arrays
    built once on first access.
    """

    records: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for rec in self.records:
            if rec.query_id in seen:
                raise TraceError(f"duplicate query_id {rec.query_id!r} in trace", field="query_id")
            seen.add(rec.query_id)

    def __len__(self):
        return len(self.records)

    def require_nonempty(self):
        if not self.records:
            raise TraceError("trace is empty")

    @property
    def query_ids(self) -> list:
        return [rec.query_id for rec in self.records]

    @cached_property
    def p_true(self) -> np.ndarray:
        return np.array([rec.nr.p_true for rec in self.records], dtype=float)

    @cached_property
    def nr_correct(self) -> np.ndarray:
        return np.array([rec.nr.correct for rec in self.records], dtype=bool)

    @cached_property
    def nr_latency(self) -> np.ndarray:
        return np.array([rec.nr.latency_seconds for rec in self.records], dtype=float)

    @cached_property
    def nr_cost(self) -> np.ndarray:
        return np.array([rec.nr.cost_usd for rec in self.records], dtype=float)

    @cached_property
    def nr_tokens(self) -> np.ndarray:
        return np.array([rec.nr.output_tokens for rec in self.records], dtype=np.int64)

    @cached_property
    def r_correct(self) -> np.ndarray:
        return np.array([rec.r.correct for rec in self.records], dtype=bool)

    @cached_property
    def r_latency(self) -> np.ndarray:
        return np.array([rec.r.latency_seconds for rec in self.records], dtype=float)

    @cached_property
    def r_cost(self) -> np.ndarray:
        return np.array([rec.r.cost_usd for rec in self.records], dtype=float)

    @cached_property
    def r_tokens(self) -> np.ndarray:
        return np.array([rec.r.output_tokens for rec in self.records], dtype=np.int64)

    def subset(self, mask) -> "Trace":
        mask = np.asarray(mask, dtype=bool)
        return Trace([rec for rec, keep in zip(self.records, mask) if keep], dict(self.metadata))

    def split_records(self) -> tuple[list, list]:
        """Inverse of :func:`join`: the nr and r TraceRecord lists."""
        nr_id = self.metadata.get("nr_model_id", "nr")
        r_id = self.metadata.get("r_model_id", "r")
        nr, r = [], []
        for rec in self.records:
            nr.append(TraceRecord(rec.query_id, nr_id, ModelRole.NON_REASONING, rec.nr.correct,
                                  rec.nr.latency_seconds, rec.nr.cost_usd, rec.nr.output_tokens,
                                  rec.nr.p_true))
            r.append(TraceRecord(rec.query_id, r_id, ModelRole.REASONING, rec.r.correct,
                                 rec.r.latency_seconds, rec.r.cost_usd, rec.r.output_tokens))
        return nr, r


def parse_lines(lines: Iterable[str], role: ModelRole) -> list[TraceRecord]:
    role = ModelRole(role)
    records = []
    seen = set()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceError(f"malformed JSON: {exc.msg}", line=lineno) from None
        if not isinstance(obj, dict):
            raise TraceError("expected a JSON object", line=lineno)
        try:
            rec = TraceRecord.from_dict(obj, default_role=role)
        except TraceError as exc:
            raise TraceError(str(exc), line=lineno, field=exc.field) from None
        if rec.role is not role:
            raise TraceError(f"role {rec.role.value!r} does not match expected {role.value!r}",
                             line=lineno, field="role")
        key = (rec.query_id, rec.model_id)
        if key in seen:
            raise TraceError(f"duplicate (query_id, model_id) pair {key!r}", line=lineno, field="query_id")
        seen.add(key)
        records.append(rec)
    return records


def ingest(path, role: ModelRole) -> list[TraceRecord]:
    """Read and validate one JSONL trace file. An empty file yields ``[]``."""
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh, role)


def dump(records: Iterable[TraceRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def join(nr_records: list[TraceRecord], r_records: list[TraceRecord], source: str = "") -> Trace:
    """Inner-join non-reasoning and reasoning runs on ``query_id``.

    Output follows ``nr_records`` order. The number of ids present on only one
    side is stored in ``metadata["unmatched_nr"]`` / ``metadata["unmatched_r"]``.
    """
    nr_ids = set()
    for rec in nr_records:
        if rec.role is not ModelRole.NON_REASONING:
            raise TraceError(f"query {rec.query_id!r}: expected a non_reasoning record", field="role")
        if rec.p_true is None:
            raise TraceError(f"query {rec.query_id!r}: non-reasoning record missing p_true", field="p_true")
        if rec.query_id in nr_ids:
            raise TraceError(f"duplicate query_id {rec.query_id!r} in non-reasoning records", field="query_id")
        nr_ids.add(rec.query_id)
    by_id = {}
    for rec in r_records:
        if rec.role is not ModelRole.REASONING:
            raise TraceError(f"query {rec.query_id!r}: expected a reasoning record", field="role")
        if rec.query_id in by_id:
            raise TraceError(f"duplicate query_id {rec.query_id!r} in reasoning records", field="query_id")
        by_id[rec.query_id] = rec

    joined = []
    for a in nr_records:
        b = by_id.get(a.query_id)
        if b is None:
            continue
        joined.append(JoinedRecord(
            a.query_id,
            ModelRun(a.correct, a.latency_seconds, a.cost_usd, a.output_tokens, a.p_true),
            ModelRun(b.correct, b.latency_seconds, b.cost_usd, b.output_tokens),
        ))
    if not joined:
        raise TraceError("join produced no records (no shared query_id)")

    metadata = {
        "nr_model_id": nr_records[0].model_id,
        "r_model_id": r_records[0].model_id,
        "source": source,
        "unmatched_nr": len(nr_ids) - len(joined),
        "unmatched_r": len(by_id) - len(joined),
    }
    return Trace(joined, metadata)


def join_report(trace: Trace) -> dict:
    md = trace.metadata
    return {
        "n_joined": len(trace),
        "unmatched_nr": md.get("unmatched_nr", 0),
        "unmatched_r": md.get("unmatched_r", 0),
        "nr_model_id": md.get("nr_model_id"),
        "r_model_id": md.get("r_model_id"),
        "source": md.get("source", ""),
    }


def load_trace(nr_path, r_path) -> Trace:
    nr = ingest(nr_path, ModelRole.NON_REASONING)
    r = ingest(r_path, ModelRole.REASONING)
    return join(nr, r, source=f"{nr_path}|{r_path}")


def load_trace_dir(directory) -> Trace:
    """Join ``nr.jsonl`` and ``r.jsonl`` from a directory (the synth output layout)."""
    d = Path(directory)
    trace = load_trace(d / NR_FILENAME, d / R_FILENAME)
    trace.metadata["source"] = str(d)
    return trace


def write_trace_dir(trace: Trace, directory) -> tuple[Path, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    nr, r = trace.split_records()
    dump(nr, d / NR_FILENAME)
    dump(r, d / R_FILENAME)
    return d / NR_FILENAME, d / R_FILENAME
