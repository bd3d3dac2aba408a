"""Collect traces from OpenAI-compatible chat-completions endpoints.

For each dataset item the collector makes one answer call and, for the
non-reasoning model, a P(True) probe: the model is shown the question and its
own proposed answer and asked for "True" or "False". ``p_true`` is the
probability of the "True" token when the endpoint returns log-probabilities,
otherwise the fraction of "True" replies over ``probe_samples`` samples at
temperature 1.

Latency is the wall-clock time of the successful HTTP attempt. The emitted
``latency_seconds``/``cost_usd`` include the probe; the components are kept as
extra fields (``answer_latency_seconds``, ``probe_cost_usd``, ...), which
trace ingestion ignores.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import httpx

from ._exact import exact
from .trace_store import ModelRole, TraceError, TraceRecord, parse_lines

logger = logging.getLogger(__name__)

PROMPT_VERSION = "v1"


class CollectError(RuntimeError):
    """A request that still failed after all retries."""


class UsageMissingError(CollectError):
    """The endpoint did not report token usage; cost cannot be computed."""


class _Retryable(Exception):
    pass


@dataclass(frozen=True)
class Pricing:
    usd_per_1m_input_tokens: float
    usd_per_1m_output_tokens: float

    def __post_init__(self):
        if self.usd_per_1m_input_tokens < 0 or self.usd_per_1m_output_tokens < 0:
            raise ValueError("pricing values must be >= 0")

    def cost(self, input_tokens: int, output_tokens: int) -> Fraction:
        return (input_tokens * exact(self.usd_per_1m_input_tokens)
                + output_tokens * exact(self.usd_per_1m_output_tokens)) / 1_000_000


@dataclass
class EndpointConfig:
    base_url: str
    model_id: str
    pricing: Pricing
    api_key_env: str = "OPENAI_API_KEY"
    timeout_seconds: float = 600.0
    max_in_flight: int = 4
    max_retries: int = 3
    backoff_base_seconds: float = 1.0
    backoff_max_seconds: float = 30.0
    temperature: float = 0.0
    max_tokens: Optional[int] = None
    probe_samples: int = 8
    answer_template: Optional[str] = None  # path; None = packaged template
    probe_template: Optional[str] = None
    extra_body: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.pricing, dict):
            self.pricing = Pricing(**self.pricing)
        if not self.timeout_seconds > 0:
            raise ValueError("timeout_seconds must be > 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.probe_samples < 1:
            raise ValueError("probe_samples must be >= 1")

    @property
    def api_key(self) -> str:
        return os.environ.get(self.api_key_env, "")

    @classmethod
    def from_file(cls, path) -> "EndpointConfig":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


@dataclass(frozen=True)
class DatasetItem:
    query_id: str
    question: str
    gold_answer: str

    def __post_init__(self):
        if parse_number(self.gold_answer) is None:
            raise ValueError(f"item {self.query_id!r}: gold_answer {self.gold_answer!r} is not numeric")


def load_dataset(path) -> list[DatasetItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                items.append(DatasetItem(str(obj["query_id"]), obj["question"], str(obj["gold_answer"])))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
    return items


def load_template(path: Optional[str], default_name: str) -> str:
    if path is not None:
        return Path(path).read_text(encoding="utf-8")
    return resources.files("failfast").joinpath("prompts", default_name).read_text(encoding="utf-8")


def render(template: str, **values) -> str:
    # plain replacement: templates contain LaTeX braces
    for key, val in values.items():
        template = template.replace("{" + key + "}", val)
    return template


# --- answer extraction and grading -------------------------------------------

_NUMBER = re.compile(r"-?\d+(?:,\d{3})*(?:\.\d+)?(?:\s*/\s*\d+(?:\.\d+)?)?")
_FRAC = re.compile(r"^(-?)\\[dt]?frac\{([^{}]+)\}\{([^{}]+)\}$")


def _boxed_contents(text: str) -> list[str]:
    out = []
    for m in re.finditer(r"\\(?:boxed|fbox)\s*\{", text):
        depth, i = 1, m.end()
        while i < len(text) and depth:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            out.append(text[m.end():i - 1])
    return out


def parse_number(s: str) -> Optional[float]:
    """Parse an integer, decimal, ``a/b`` or ``\\frac{a}{b}``; None if not numeric."""
    if s is None:
        return None
    t = s.strip().strip("$").strip()
    t = t.replace("\\!", "").replace("\\,", "").replace(",", "").replace(" ", "")
    t = t.rstrip(".")
    m = _FRAC.match(t)
    if m:
        num, den = parse_number(m.group(2)), parse_number(m.group(3))
        if num is None or den in (None, 0):
            return None
        return (-1 if m.group(1) else 1) * num / den
    if "/" in t:
        a, _, b = t.partition("/")
        num, den = parse_number(a), parse_number(b)
        if num is None or den in (None, 0):
            return None
        return num / den
    try:
        v = float(t)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def extract_answer(completion_text: str) -> Optional[str]:
    """Final ``\\boxed{}`` content if numeric, else the last number in the text."""
    if not completion_text:
        return None
    for content in reversed(_boxed_contents(completion_text)):
        if parse_number(content) is not None:
            return content.strip()
    matches = _NUMBER.findall(completion_text)
    if not matches:
        return None
    return matches[-1].replace(" ", "")


def grade(gold_answer: str, extracted: Optional[str]) -> bool:
    a, b = parse_number(gold_answer), parse_number(extracted) if extracted is not None else None
    if a is None or b is None:
        return False
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=0.0)


# --- HTTP ----------------------------------------------------------------------

class ChatClient:
    """Minimal chat-completions client with retry and exponential backoff."""

    def __init__(self, endpoint: EndpointConfig, client: Optional[httpx.Client] = None):
        self.endpoint = endpoint
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key:
            headers["Authorization"] = f"Bearer {endpoint.api_key}"
        self._client = client or httpx.Client(
            base_url=endpoint.base_url.rstrip("/"), headers=headers,
            timeout=endpoint.timeout_seconds,
        )
        self._rng = random.Random()

    def close(self):
        self._client.close()

    def _sleep_backoff(self, attempt: int):
        cap = min(self.endpoint.backoff_max_seconds, self.endpoint.backoff_base_seconds * 2 ** attempt)
        time.sleep(self._rng.uniform(0, cap))  # full jitter

    def complete(self, messages: list, **params) -> tuple[dict, float]:
        """POST one request; returns (response JSON, seconds for the successful attempt)."""
        payload = {"model": self.endpoint.model_id, "messages": messages, **self.endpoint.extra_body, **params}
        last = None
        for attempt in range(self.endpoint.max_retries + 1):
            t0 = time.perf_counter()
            try:
                resp = self._client.post("/chat/completions", json=payload)
                elapsed = time.perf_counter() - t0
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise _Retryable(f"HTTP {resp.status_code}")
                if resp.status_code >= 400:
                    raise CollectError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return resp.json(), elapsed
            except (httpx.TransportError, _Retryable) as exc:
                last = exc
                logger.warning("request failed (attempt %d/%d): %s", attempt + 1,
                               self.endpoint.max_retries + 1, exc)
                if attempt < self.endpoint.max_retries:
                    self._sleep_backoff(attempt)
        raise CollectError(f"giving up after {self.endpoint.max_retries + 1} attempts: {last}")


def _usage(resp: dict) -> tuple[int, int]:
    usage = resp.get("usage")
    if not usage or "prompt_tokens" not in usage or "completion_tokens" not in usage:
        raise UsageMissingError("response carries no usage data; cannot compute cost")
    return int(usage["prompt_tokens"]), int(usage["completion_tokens"])


def _true_probability(resp: dict) -> Optional[float]:
    """P("True") from first-token log-probabilities, or None if absent."""
    try:
        first = resp["choices"][0]["logprobs"]["content"][0]
    except (KeyError, IndexError, TypeError):
        return None
    candidates = first.get("top_logprobs") or [first]
    p = 0.0
    for cand in candidates:
        if cand.get("token", "").strip().lower() == "true":
            p += math.exp(cand["logprob"])
    return min(p, 1.0)


@dataclass
class _ProbeResult:
    p_true: float
    method: str
    latency: float
    cost: Fraction


def probe_p_true(client: ChatClient, question: str, answer: str, template: str) -> _ProbeResult:
    ep = client.endpoint
    messages = [{"role": "user", "content": render(template, question=question, answer=answer)}]
    resp, latency = client.complete(messages, max_tokens=1, temperature=0.0, logprobs=True, top_logprobs=5)
    cost = ep.pricing.cost(*_usage(resp))
    p = _true_probability(resp)
    if p is not None:
        return _ProbeResult(p, "logprobs", latency, cost)

    # sampling fallback
    votes = []
    while len(votes) < ep.probe_samples:
        need = ep.probe_samples - len(votes)
        resp, dt = client.complete(messages, max_tokens=3, temperature=1.0, n=need)
        latency += dt
        cost += ep.pricing.cost(*_usage(resp))
        choices = resp.get("choices") or []
        if not choices:
            raise CollectError("probe sampling returned no choices")
        for ch in choices[:need]:
            text = (ch.get("message") or {}).get("content") or ""
            votes.append(text.strip().lower().startswith("true"))
    return _ProbeResult(sum(votes) / len(votes), "sampling", latency, cost)


def collect_one(client: ChatClient, item: DatasetItem, role: ModelRole, probe: bool,
                answer_template: str, probe_template: str) -> dict:
    ep = client.endpoint
    params = {"temperature": ep.temperature}
    if ep.max_tokens is not None:
        params["max_tokens"] = ep.max_tokens
    messages = [{"role": "user", "content": render(answer_template, question=item.question)}]
    resp, latency = client.complete(messages, **params)
    in_tok, out_tok = _usage(resp)
    cost = ep.pricing.cost(in_tok, out_tok)
    try:
        text = resp["choices"][0]["message"].get("content") or ""
    except (KeyError, IndexError, TypeError):
        text = ""
    extracted = extract_answer(text)

    row = {
        "query_id": item.query_id,
        "model_id": ep.model_id,
        "role": role.value,
        "correct": grade(item.gold_answer, extracted),
        "latency_seconds": latency,
        "cost_usd": float(cost),
        "output_tokens": out_tok,
        "input_tokens": in_tok,
        "extracted_answer": extracted,
        "answer_parse_failed": extracted is None,
        "answer_latency_seconds": latency,
        "answer_cost_usd": float(cost),
    }
    if probe:
        pr = probe_p_true(client, item.question, extracted if extracted is not None else text, probe_template)
        row.update({
            "p_true": pr.p_true,
            "p_true_method": pr.method,
            "probe_latency_seconds": pr.latency,
            "probe_cost_usd": float(pr.cost),
            "latency_seconds": latency + pr.latency,
            "cost_usd": float(cost + pr.cost),
            "prompt_version": PROMPT_VERSION,
        })
    TraceRecord.from_dict(row)  # validate before it reaches disk
    return row


def _existing_ids(out_path: Path, role: ModelRole, model_id: str) -> set:
    if not out_path.exists():
        return set()
    with open(out_path, encoding="utf-8") as fh:
        return {rec.query_id for rec in parse_lines(fh, role) if rec.model_id == model_id}


def collect(items: Sequence[DatasetItem], endpoint: EndpointConfig, role: ModelRole, probe: bool,
            out_path, failures_path=None, client: Optional[ChatClient] = None) -> list[dict]:
    """Run every not-yet-collected item and append one JSONL line per success.

    Items whose query_id already appears in ``out_path`` for this model are
    skipped, so an interrupted run can simply be restarted. Transport failures
    go to ``failures_path`` (default: ``<out>.failures.jsonl``) and the run
    continues; missing usage data aborts the run.
    """
    role = ModelRole(role)
    if probe and role is not ModelRole.NON_REASONING:
        raise ValueError("the P(True) probe is only defined for the non_reasoning role")
    out_path = Path(out_path)
    failures_path = Path(failures_path) if failures_path else out_path.with_suffix(".failures.jsonl")
    done = _existing_ids(out_path, role, endpoint.model_id)
    todo = [it for it in items if it.query_id not in done]
    answer_t = load_template(endpoint.answer_template, f"answer_{PROMPT_VERSION}.txt")
    probe_t = load_template(endpoint.probe_template, f"ptrue_{PROMPT_VERSION}.txt")

    own_client = client is None
    client = client or ChatClient(endpoint)
    lock = threading.Lock()
    written = []

    def work(item):
        try:
            row = collect_one(client, item, role, probe, answer_t, probe_t)
        except UsageMissingError:
            raise
        except (CollectError, TraceError, ValueError, KeyError) as exc:
            with lock, open(failures_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"query_id": item.query_id, "model_id": endpoint.model_id,
                                     "error": str(exc)}) + "\n")
            return
        with lock, open(out_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
            written.append(row)

    try:
        with ThreadPoolExecutor(max_workers=endpoint.max_in_flight) as pool:
            futures = [pool.submit(work, it) for it in todo]
            for fut in futures:
                try:
                    fut.result()
                except UsageMissingError:
                    for f in futures:
                        f.cancel()
                    raise
    finally:
        if own_client:
            client.close()
    return written
