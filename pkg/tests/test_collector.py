import json
from fractions import Fraction

import pytest

from failfast.collector import (ChatClient, CollectError, DatasetItem, EndpointConfig, Pricing, UsageMissingError,
                                collect, extract_answer, grade, load_dataset, parse_number, probe_p_true,
                                render)
from failfast.trace_store import ModelRole, ingest


def endpoint(state, **kw):
    base = dict(base_url=state.base_url, model_id="stub-model", pricing=Pricing(1.0, 2.0),
                backoff_base_seconds=0.001, backoff_max_seconds=0.01)
    base.update(kw)
    return EndpointConfig(**base)


def items(k, prefix="q"):
    return [DatasetItem(f"{prefix}{i}", f"What is {i} + 40?", "42") for i in range(k)]


def read_rows(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_pricing_exact():
    assert Pricing(1.0, 2.0).cost(100, 50) == Fraction(2, 10_000)
    assert float(Pricing(0.3, 1.2).cost(3, 7)) == 9.3e-6


@pytest.mark.parametrize("text, expected", [
    ("so \\boxed{42}", "42"),
    ("first \\boxed{1} then \\boxed{\\frac{1}{2}}", "\\frac{1}{2}"),
    ("the answer is 17.", "17"),
    ("values 3, 5 and finally -2.5", "-2.5"),
    ("\\boxed{x+1} so 8", "8"),
    ("no numbers here", None),
    ("", None),
])
def test_extract_answer(text, expected):
    assert extract_answer(text) == expected


@pytest.mark.parametrize("gold, got, ok", [
    ("42", "42.0", True), ("0.5", "\\frac{1}{2}", True), ("1/3", "\\dfrac{1}{3}", True),
    ("1,000", "1000", True), ("42", "43", False), ("42", None, False),
])
def test_grade(gold, got, ok):
    assert grade(gold, got) is ok


def test_parse_number_rejects_text():
    assert parse_number("abc") is None and parse_number("1/0") is None


def test_render_leaves_latex_braces():
    assert render("Q: {question} \\boxed{}", question="x") == "Q: x \\boxed{}"


def test_dataset_requires_numeric_gold(tmp_path):
    f = tmp_path / "d.jsonl"
    f.write_text('{"query_id": "a", "question": "?", "gold_answer": "7"}\n'
                 '{"query_id": "b", "question": "?", "gold_answer": "seven"}\n')
    with pytest.raises(ValueError, match="line 2"):
        load_dataset(f)


def test_reasoning_run_cost_and_fields(stub_server, tmp_path):
    out = tmp_path / "r.jsonl"
    rows = collect(items(3), endpoint(stub_server), ModelRole.REASONING, False, out)
    assert len(rows) == 3
    for rec in ingest(out, ModelRole.REASONING):
        assert rec.cost_usd == 2.0e-4
        assert rec.output_tokens == 50 and rec.correct and rec.p_true is None
    assert all(b.get("max_tokens") not in (1, 3) for b in stub_server.requests)


def test_nr_probe_logprobs(stub_server, tmp_path):
    out = tmp_path / "nr.jsonl"
    collect(items(2), endpoint(stub_server), ModelRole.NON_REASONING, True, out)
    for row in read_rows(out):
        assert row["p_true"] == pytest.approx(0.9)
        assert row["p_true_method"] == "logprobs"
        # answer (100 in, 50 out) + probe (20 in, 1 out) at $1/$2 per 1M
        assert row["cost_usd"] == float(Fraction(200 + 20 + 2, 1_000_000))
        assert row["latency_seconds"] == row["answer_latency_seconds"] + row["probe_latency_seconds"]
    probes = [b for b in stub_server.requests if b.get("max_tokens") == 1]
    assert "Proposed Answer: 42" in probes[0]["messages"][0]["content"]


def test_nr_probe_sampling_fallback(stub_server, tmp_path):
    stub_server.logprobs = False
    out = tmp_path / "nr.jsonl"
    collect(items(1), endpoint(stub_server), ModelRole.NON_REASONING, True, out)
    [row] = read_rows(out)
    assert row["p_true"] == 0.75 and row["p_true_method"] == "sampling"
    # one logprob attempt plus one sampling call for all 8 votes
    assert row["cost_usd"] == float(Fraction(200 + 2 * (20 + 2), 1_000_000))


def test_probe_requires_non_reasoning_role(stub_server, tmp_path):
    with pytest.raises(ValueError):
        collect(items(1), endpoint(stub_server), ModelRole.REASONING, True, tmp_path / "x.jsonl")


def test_resumable(stub_server, tmp_path):
    out = tmp_path / "r.jsonl"
    ep = endpoint(stub_server)
    assert len(collect(items(5), ep, ModelRole.REASONING, False, out)) == 5
    n_requests = len(stub_server.requests)
    assert collect(items(5), ep, ModelRole.REASONING, False, out) == []
    assert len(stub_server.requests) == n_requests
    assert len(collect(items(7), ep, ModelRole.REASONING, False, out)) == 2
    assert len(ingest(out, ModelRole.REASONING)) == 7


def test_max_in_flight_respected(stub_server, tmp_path):
    stub_server.delay = 0.05
    collect(items(16), endpoint(stub_server, max_in_flight=3), ModelRole.REASONING, False, tmp_path / "r.jsonl")
    assert stub_server.max_in_flight <= 3
    assert stub_server.max_in_flight >= 2  # concurrency actually happened


def test_retry_recovers(stub_server, tmp_path):
    stub_server.fail_first = 2
    out = tmp_path / "r.jsonl"
    assert len(collect(items(1), endpoint(stub_server, max_retries=3), ModelRole.REASONING, False, out)) == 1
    assert len(stub_server.requests) == 3


def test_persistent_failure_logged_and_run_continues(stub_server, tmp_path):
    stub_server.fail_always_for = {"What is 1 +"}
    out = tmp_path / "r.jsonl"
    rows = collect(items(3), endpoint(stub_server, max_retries=1), ModelRole.REASONING, False, out)
    assert sorted(r["query_id"] for r in rows) == ["q0", "q2"]
    [fail] = read_rows(tmp_path / "r.failures.jsonl")
    assert fail["query_id"] == "q1" and "503" in fail["error"]


def test_missing_usage_is_fatal(stub_server, tmp_path):
    stub_server.usage = None
    with pytest.raises(UsageMissingError):
        collect(items(2), endpoint(stub_server, max_in_flight=1), ModelRole.REASONING, False,
                tmp_path / "r.jsonl")


def test_client_error_not_retried(stub_server):
    stub_server.fail_first, stub_server.fail_code = 1, 400
    client = ChatClient(endpoint(stub_server))
    try:
        with pytest.raises(CollectError, match="HTTP 400"):
            client.complete([{"role": "user", "content": "hi"}])
    finally:
        client.close()
    assert len(stub_server.requests) == 1


def test_probe_direct(stub_server):
    stub_server.true_prob = 0.3
    client = ChatClient(endpoint(stub_server))
    try:
        res = probe_p_true(client, "q", "a", "{question} {answer}")
    finally:
        client.close()
    assert res.p_true == pytest.approx(0.3) and res.method == "logprobs"


def test_endpoint_config_validation(tmp_path):
    with pytest.raises(ValueError):
        EndpointConfig("http://x", "m", Pricing(1, 1), max_in_flight=0)
    with pytest.raises(ValueError):
        Pricing(-1, 0)
    f = tmp_path / "ep.json"
    f.write_text(json.dumps({"base_url": "http://x/v1", "model_id": "m",
                             "pricing": {"usd_per_1m_input_tokens": 1, "usd_per_1m_output_tokens": 2}}))
    assert EndpointConfig.from_file(f).pricing == Pricing(1, 2)


def test_unreachable_endpoint_raises():
    ep = EndpointConfig("http://127.0.0.1:9/v1", "m", Pricing(1, 1), max_retries=0, timeout_seconds=2)
    client = ChatClient(ep)
    try:
        with pytest.raises(CollectError):
            client.complete([{"role": "user", "content": "hi"}])
    finally:
        client.close()
