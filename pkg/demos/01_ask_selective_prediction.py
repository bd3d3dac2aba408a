"""Selective prediction with a reasoning model and a human expert.

The reasoning model answers every query; queries whose reasoning trace is
longer than a calibrated token threshold are handed to the human instead.
Long traces go with hard queries, so deferring them lowers the error rate on
what the model does answer.

    python demos/01_ask_selective_prediction.py
"""

from failfast import accuracy_rejection_curve, auarc, calibrate_ask, generate, paper_preset
from failfast.metrics import baseline_stats

trace = generate(paper_preset())
stats = baseline_stats(trace)["reasoning"]
print(f"{len(trace)} queries, reasoning error {stats['error_rate']:.2%}, "
      f"mean trace {stats['mean_output_tokens']:.0f} tokens\n")

for r in (0.0, 0.025, 0.05, 0.075, 0.1, 0.2):
    policy = calibrate_ask(trace, r)
    [point] = accuracy_rejection_curve(trace, "ask", [r])
    print(f"defer {r:5.1%}: threshold {policy.token_threshold:6d} tokens, "
          f"realized {point.realized_rejection:5.2%}, error on answered {point.conditional_error:.2%}")

summary = auarc(accuracy_rejection_curve(trace, "ask"))
print(f"\nAUARC over 0-20% rejection: {summary.auarc:.4f}")
