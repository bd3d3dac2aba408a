"""Collecting traces from an OpenAI-compatible endpoint.

A tiny in-process server stands in for the real endpoint so the script runs
offline. Point ``base_url`` at a real server (and set OPENAI_API_KEY) to
collect for real.

    python demos/05_collect_with_stub.py
"""

import json
import math
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from failfast.collector import DatasetItem, EndpointConfig, Pricing, collect
from failfast.trace_store import ModelRole, ingest


class Stub(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if body.get("logprobs"):
            lp = [{"token": "True", "logprob": math.log(0.8)}, {"token": "False", "logprob": math.log(0.2)}]
            reply = {"choices": [{"message": {"content": "True"},
                                  "logprobs": {"content": [{"token": "True", "logprob": lp[0]["logprob"],
                                                            "top_logprobs": lp}]}}],
                     "usage": {"prompt_tokens": 40, "completion_tokens": 1}}
        else:
            reply = {"choices": [{"message": {"content": "2 + 2 = \\boxed{4}"}}],
                     "usage": {"prompt_tokens": 30, "completion_tokens": 12}}
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


server = ThreadingHTTPServer(("127.0.0.1", 0), Stub)
threading.Thread(target=server.serve_forever, daemon=True).start()

endpoint = EndpointConfig(base_url=f"http://127.0.0.1:{server.server_address[1]}/v1", model_id="demo-nr",
                          pricing=Pricing(usd_per_1m_input_tokens=3.0, usd_per_1m_output_tokens=3.0))
items = [DatasetItem("a", "What is 2 + 2?", "4"), DatasetItem("b", "What is 3 + 3?", "6")]

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "nr.jsonl"
    collect(items, endpoint, ModelRole.NON_REASONING, probe=True, out_path=out)
    again = collect(items, endpoint, ModelRole.NON_REASONING, probe=True, out_path=out)
    for rec in ingest(out, ModelRole.NON_REASONING):
        print(f"{rec.query_id}: correct={rec.correct} p_true={rec.p_true:.2f} "
              f"cost=${rec.cost_usd:.2e} tokens={rec.output_tokens}")
    print(f"re-run wrote {len(again)} new records (already collected)")
server.shutdown()
