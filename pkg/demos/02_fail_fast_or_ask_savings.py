"""Fronting the reasoning model with a fast non-reasoning model.

The non-reasoning model answers confident queries itself, sends the least
confident ones straight to the human ("fails fast") and passes the rest to
the reasoning model. Raising its utilization u trades a little AUARC for
latency and cost.

    python demos/02_fail_fast_or_ask_savings.py
"""

from failfast import calibrate_ffoa, generate, paper_preset, savings_table

trace = generate(paper_preset())

cfg = calibrate_ffoa(trace, 0.5, 0.1)
rates = cfg.realized
print("u=0.5, r=0.1 thresholds:")
print(f"  fail fast if p_true <= {cfg.c_fail_fast:.4f}  ({rates.fail_fast_rate:.1%} of queries)")
print(f"  pass if p_true <= {cfg.c_pass:.4f}       ({rates.pass_rate:.1%})")
print(f"  reasoning trace cap {cfg.r_token_threshold} tokens\n")

print(f"{'u':>5} {'AUARC':>7} {'dAUARC%':>8} {'dL%':>7} {'dC%':>7}")
for row in savings_table(trace, (0.3, 0.5, 0.6, 0.75)):
    print(f"{row['u']:5.2f} {row['auarc']:7.4f} {row['delta_auarc_pct']:8.2f} "
          f"{row['delta_latency_pct']:7.2f} {row['delta_cost_pct']:7.2f}")
