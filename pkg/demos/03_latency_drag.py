"""Why latency savings fall short of the naive estimate.

If the queries passed to the reasoning model were a random sample, mean
latency would be L_nr + (1-u) * L_r. They are not random: the non-reasoning
model passes the queries it is unsure about, which are the ones the reasoning
model thinks longest on. The gap is the latency drag.

    python demos/03_latency_drag.py
"""

from failfast import calibrate_ffoa, generate, paper_preset
from failfast.metrics import conditional_latency_profile, drag_permutation_test
from failfast.synth import independent_preset

for label, spec in (("confidence-dependent latency", paper_preset()),
                    ("independent latency", independent_preset())):
    trace = generate(spec)
    test = drag_permutation_test(trace, calibrate_ffoa(trace, 0.5, 0.1), 1000, seed=0)
    print(f"{label}: drag {test['drag']:+.2f} s  (permutation SE {test['null_se']:.2f}, "
          f"p = {test['p_value']:.4f})")

print("\nmean reasoning latency by non-reasoning confidence decile:")
for row in conditional_latency_profile(generate(paper_preset()), 10):
    bar = "#" * int(row["mean_l_r"] / 5)
    print(f"  {row['lower_percentile']:3.0f}-{row['upper_percentile']:3.0f}%  {row['mean_l_r']:6.1f} s  {bar}")
