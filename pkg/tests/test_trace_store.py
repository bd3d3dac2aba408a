import json

import pytest
from hypothesis import given, strategies as st

from failfast.trace_store import (ModelRole, TraceError, TraceRecord, dump, ingest, join, join_report,
                                  load_trace_dir, parse_lines, write_trace_dir)

from conftest import make_trace

LINE = ('{"query_id":"q1","model_id":"m","role":"reasoning","correct":true,'
        '"latency_seconds":1.5,"cost_usd":0.001,"output_tokens":100}')


def rec(qid, role=ModelRole.REASONING, p=None, model="m"):
    if role is ModelRole.NON_REASONING and p is None:
        p = 0.5
    return TraceRecord(qid, model, role, True, 1.0, 0.01, 10, p)


def test_ingest_single_line(tmp_path):
    f = tmp_path / "r.jsonl"
    f.write_text(LINE + "\n")
    [r] = ingest(f, ModelRole.REASONING)
    assert r == TraceRecord("q1", "m", ModelRole.REASONING, True, 1.5, 0.001, 100, None)


def test_p_true_out_of_range_names_field_and_line(tmp_path):
    f = tmp_path / "nr.jsonl"
    bad = LINE.replace('"reasoning"', '"non_reasoning"').replace("}", ',"p_true":1.2}')
    f.write_text(LINE.replace('"reasoning"', '"non_reasoning"').replace("}", ',"p_true":0.3}')
                 .replace("q1", "q0") + "\n" + bad + "\n")
    with pytest.raises(TraceError) as exc:
        ingest(f, ModelRole.NON_REASONING)
    assert exc.value.line == 2
    assert exc.value.field == "p_true"
    assert "p_true" in str(exc.value) and "line 2" in str(exc.value)


def test_empty_file_is_empty_list(tmp_path):
    f = tmp_path / "empty.jsonl"
    f.write_text("")
    assert ingest(f, ModelRole.REASONING) == []


@pytest.mark.parametrize("line, field", [
    ("{not json", None),
    (LINE.replace('"correct":true,', ""), "correct"),
    (LINE.replace("1.5", "-1"), "latency_seconds"),
    (LINE.replace("0.001", "NaN"), "cost_usd"),
    (LINE.replace("100", "1.5"), "output_tokens"),
    (LINE.replace("true", "1"), "correct"),
    (LINE.replace('"q1"', '""'), "query_id"),
])
def test_invalid_lines(line, field):
    with pytest.raises(TraceError) as exc:
        parse_lines([line], ModelRole.REASONING)
    assert exc.value.line == 1
    if field:
        assert exc.value.field == field


def test_duplicate_pair_is_error():
    with pytest.raises(TraceError, match="duplicate"):
        parse_lines([LINE, LINE], ModelRole.REASONING)


def test_same_query_different_model_is_fine():
    other = LINE.replace('"model_id":"m"', '"model_id":"m2"')
    assert len(parse_lines([LINE, other], ModelRole.REASONING)) == 2


def test_role_mismatch():
    with pytest.raises(TraceError, match="role"):
        parse_lines([LINE], ModelRole.NON_REASONING)


def test_unknown_fields_ignored():
    line = LINE.replace("}", ',"answer_latency_seconds":1.0,"extra":{"a":1}}')
    [r] = parse_lines([line], ModelRole.REASONING)
    assert r.latency_seconds == 1.5


def test_join_intersection_and_unmatched_counts():
    nr = [rec(q, ModelRole.NON_REASONING) for q in "abc"]
    r = [rec(q) for q in "bcd"]
    trace = join(nr, r)
    assert trace.query_ids == ["b", "c"]
    rep = join_report(trace)
    assert (rep["unmatched_nr"], rep["unmatched_r"]) == (1, 1)


def test_join_keeps_nr_order():
    nr = [rec(q, ModelRole.NON_REASONING) for q in "zyx"]
    r = [rec(q) for q in "xyz"]
    assert join(nr, r).query_ids == ["z", "y", "x"]


def test_join_duplicate_id():
    nr = [rec("a", ModelRole.NON_REASONING), rec("a", ModelRole.NON_REASONING, model="m2")]
    with pytest.raises(TraceError, match="duplicate"):
        join(nr, [rec("a")])


def test_join_missing_p_true():
    nr = [TraceRecord("a", "m", ModelRole.NON_REASONING, True, 1.0, 0.0, 1, None)]
    with pytest.raises(TraceError, match="p_true"):
        join(nr, [rec("a")])


def test_join_empty_result():
    with pytest.raises(TraceError, match="no records"):
        join([rec("a", ModelRole.NON_REASONING)], [rec("b")])


def test_join_identity_case():
    ids = [f"q{i}" for i in range(7)]
    assert len(join([rec(q, ModelRole.NON_REASONING) for q in ids], [rec(q) for q in ids])) == 7


records = st.builds(
    TraceRecord,
    query_id=st.text(min_size=1, max_size=12),
    model_id=st.text(max_size=8),
    role=st.sampled_from(list(ModelRole)),
    correct=st.booleans(),
    latency_seconds=st.floats(min_value=0, max_value=1e6, allow_nan=False),
    cost_usd=st.floats(min_value=0, max_value=10, allow_nan=False),
    output_tokens=st.integers(min_value=0, max_value=10**6),
    p_true=st.none() | st.floats(min_value=0, max_value=1),
)


@given(records)
def test_serialize_parse_round_trip(r):
    [back] = parse_lines([r.to_json()], r.role)
    assert back == r


@given(st.sets(st.integers(0, 30), max_size=15), st.sets(st.integers(0, 30), max_size=15))
def test_join_size_is_intersection(a, b):
    nr = [rec(str(i), ModelRole.NON_REASONING) for i in sorted(a)]
    r = [rec(str(i)) for i in sorted(b)]
    if not a & b:
        with pytest.raises(TraceError):
            join(nr, r)
    else:
        assert len(join(nr, r)) == len(a & b)


def test_ingest_deterministic_and_order_preserving(tmp_path):
    recs = [rec(f"q{i}") for i in (5, 2, 9, 1)]
    f = tmp_path / "r.jsonl"
    dump(recs, f)
    assert ingest(f, ModelRole.REASONING) == recs == ingest(f, ModelRole.REASONING)


def test_trace_dir_round_trip(tmp_path):
    trace = make_trace([0.1, 0.9, 0.5], [10, 20, 30], r_correct=[True, False, True])
    write_trace_dir(trace, tmp_path)
    back = load_trace_dir(tmp_path)
    assert back.records == trace.records
    lines = (tmp_path / "nr.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["p_true"] == 0.1
