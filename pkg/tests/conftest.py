import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from failfast.trace_store import JoinedRecord, ModelRun, Trace


def make_trace(p_true, r_tokens, r_correct=None, nr_correct=None, nr_latency=None, r_latency=None,
               nr_cost=None, r_cost=None, nr_tokens=None):
    n = len(p_true)
    r_correct = [True] * n if r_correct is None else r_correct
    nr_correct = [True] * n if nr_correct is None else nr_correct
    nr_latency = [1.0] * n if nr_latency is None else nr_latency
    r_latency = [10.0] * n if r_latency is None else r_latency
    nr_cost = [0.001] * n if nr_cost is None else nr_cost
    r_cost = [0.01] * n if r_cost is None else r_cost
    nr_tokens = [100] * n if nr_tokens is None else nr_tokens
    recs = []
    for i in range(n):
        recs.append(JoinedRecord(
            f"q{i}",
            ModelRun(bool(nr_correct[i]), float(nr_latency[i]), float(nr_cost[i]), int(nr_tokens[i]),
                     float(p_true[i])),
            ModelRun(bool(r_correct[i]), float(r_latency[i]), float(r_cost[i]), int(r_tokens[i])),
        ))
    return Trace(recs, {"nr_model_id": "nr", "r_model_id": "r", "source": "test"})


def random_trace(rng: np.random.Generator, n: int, distinct_p: bool = False) -> Trace:
    """Small random trace with deliberate ties in tokens and (optionally) p_true."""
    if distinct_p:
        p = rng.permutation(n + 7)[:n] / (n + 7)
    else:
        p = rng.integers(0, 9, n) / 8
    tokens = rng.integers(1, max(2, n // 2) + 2, n)
    return make_trace(
        p_true=p,
        r_tokens=tokens,
        r_correct=rng.random(n) < 0.8,
        nr_correct=rng.random(n) < 0.6,
        nr_latency=rng.random(n) * 5,
        r_latency=rng.random(n) * 100,
        nr_cost=rng.random(n) * 1e-3,
        r_cost=rng.random(n) * 1e-2,
    )


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


# --- stub chat-completions server ---------------------------------------------

class StubState:
    def __init__(self):
        self.lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0
        self.requests = []
        self.delay = 0.0
        self.answer_text = "The answer is \\boxed{42}."
        self.usage = {"prompt_tokens": 100, "completion_tokens": 50}
        self.probe_usage = {"prompt_tokens": 20, "completion_tokens": 1}
        self.true_prob = 0.9
        self.logprobs = True
        self.sample_replies = ["True"] * 6 + ["False"] * 2
        self.fail_first = 0  # number of failures before succeeding
        self.fail_code = 503
        self.fail_always_for = set()  # substrings of the question that always 503


def _make_handler(state: StubState):
    import time

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length))
            with state.lock:
                state.in_flight += 1
                state.max_in_flight = max(state.max_in_flight, state.in_flight)
                state.requests.append(body)
                fail = state.fail_first > 0
                if fail:
                    state.fail_first -= 1
            try:
                time.sleep(state.delay)
                content = body["messages"][0]["content"]
                if fail or any(s in content for s in state.fail_always_for):
                    self._send(state.fail_code, {"error": "unavailable"})
                    return
                self._send(200, self._reply(body))
            finally:
                with state.lock:
                    state.in_flight -= 1

        def _reply(self, body):
            is_probe = body.get("max_tokens") in (1, 3)
            if not is_probe:
                resp = {"choices": [{"index": 0, "message": {"role": "assistant", "content": state.answer_text}}]}
                if state.usage is not None:
                    resp["usage"] = state.usage
                return resp
            if body.get("logprobs") and state.logprobs:
                lp = [{"token": "True", "logprob": math.log(state.true_prob)},
                      {"token": "False", "logprob": math.log(1 - state.true_prob)}]
                return {"choices": [{"index": 0, "message": {"role": "assistant", "content": "True"},
                                     "logprobs": {"content": [{"token": "True", "logprob": lp[0]["logprob"],
                                                               "top_logprobs": lp}]}}],
                        "usage": state.probe_usage}
            n = body.get("n", 1)
            replies = state.sample_replies[:n]
            return {"choices": [{"index": i, "message": {"role": "assistant", "content": t}}
                                for i, t in enumerate(replies)],
                    "usage": state.probe_usage}

        def _send(self, code, obj):
            data = json.dumps(obj).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return Handler


@pytest.fixture
def stub_server():
    state = StubState()
    server = ThreadingHTTPServer(("127.0.0.1", 0), _make_handler(state))
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state.base_url = f"http://127.0.0.1:{server.server_address[1]}/v1"
    yield state
    server.shutdown()
    server.server_close()


# --- acceptance reporting --------------------------------------------------------

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
