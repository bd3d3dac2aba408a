"""Correctness against reasoning-trace length, smoothed with local linear
regression and a one-sigma band.

    python demos/04_loess_tokens.py
"""

import numpy as np

from failfast import generate, loess_fit, paper_preset

trace = generate(paper_preset())
x, y = trace.r_tokens, trace.r_correct.astype(float)
grid = np.quantile(x, np.linspace(0.02, 0.98, 13))
fit = loess_fit(x, y, span=0.3, eval_points=grid)

print(f"{'tokens':>8} {'P(correct)':>11} {'band':>15}")
for t, m, lo, hi in zip(fit.eval_points, fit.fitted_mean, fit.lower, fit.upper):
    print(f"{t:8.0f} {m:11.3f}   [{lo:5.2f}, {hi:5.2f}]")
