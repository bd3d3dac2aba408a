"""Fit the default preset's free constants for seed=PRESET_SEED, n=10_000.

Token location ``mu`` is solved so the mean token count hits its target, then
the correctness intercept so the error count hits its target. Everything else
in the preset is fixed by hand. Prints the values to paste into synth.py.
"""

from dataclasses import replace

import numpy as np

from failfast.synth import PRESET_SEED, _draw, _arm, paper_preset

TARGETS = {
    "r": {"tokens": 10_800, "error": 0.028},
    "nr": {"tokens": 978, "error": 0.306},
}


def bisect(f, lo, hi, iters=80):
    # f increasing
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def main():
    spec = paper_preset(10_000, PRESET_SEED)
    d = _draw(spec)
    for name in ("r", "nr"):
        arm = getattr(spec, name)
        eps, u, noise = d[f"eps_tok_{name}"], d[f"u_{name}"], d[f"noise_{name}"]
        tgt = TARGETS[name]
        mu = bisect(lambda m: _arm(replace(arm, token_mu=m), d["z"], eps, u, noise)[0].mean() - tgt["tokens"],
                    0.0, 15.0)
        mu = round(mu, 5)
        arm = replace(arm, token_mu=mu)
        # more intercept -> fewer errors
        icpt = bisect(lambda a: (1 - _arm(replace(arm, correct_intercept=a), d["z"], eps, u, noise)[3].mean())
                      * -1 + tgt["error"], -10.0, 15.0)
        icpt = round(icpt, 5)
        arm = replace(arm, correct_intercept=icpt)
        tok, lat, cost, ok = _arm(arm, d["z"], eps, u, noise)
        print(f"{name}: token_mu={mu} correct_intercept={icpt} -> tokens {tok.mean():.1f} "
              f"latency {lat.mean():.2f} cost {cost.mean():.4e} error {1 - ok.mean():.4f}")


if __name__ == "__main__":
    main()
