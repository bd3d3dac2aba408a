from dataclasses import replace

import pytest
from scipy.stats import spearmanr

from failfast.calibrate import calibrate_ask, calibrate_ffoa
from failfast.cascade_sim import Outcome, Route, simulate_ask, simulate_ffoa
from failfast.metrics import baseline_stats
from failfast.synth import (ArmSpec, SynthSpec, generate, generate_with_latent, independent_preset,
                            oracle_simulate, paper_preset, spearman_to_gaussian)

from conftest import make_trace

ARM = ArmSpec(token_mu=6.0, token_sigma=0.5, latency_per_token=0.01, latency_base=1.0, latency_noise=0.5,
              cost_base=1e-4, cost_per_token=1e-6, correct_intercept=1.0, correct_slope=0.0)


def spec(n=10_000, seed=1, **kw):
    kw = {"nr": ARM, "r": ARM, **kw}
    return SynthSpec(n=n, seed=seed, **kw)


def test_spearman_to_gaussian():
    assert spearman_to_gaussian(0.0) == 0.0
    assert spearman_to_gaussian(1.0) == pytest.approx(1.0)
    assert spearman_to_gaussian(-1.0) == pytest.approx(-1.0)


def test_zero_correlations():
    trace, z = generate_with_latent(spec())
    for col in (trace.p_true, trace.r_tokens, trace.nr_tokens, trace.r_correct, trace.r_latency):
        assert abs(spearmanr(col, z)[0]) < 0.05
    assert abs(spearmanr(trace.p_true, trace.r_latency)[0]) < 0.05


def test_requested_rank_correlations():
    s = spec(p_true_rho=-0.6, r=replace(ARM, token_sigma=1.0, token_rho=0.5))
    trace, z = generate_with_latent(s)
    assert spearmanr(trace.p_true, z)[0] == pytest.approx(-0.6, abs=0.05)
    assert spearmanr(trace.r_tokens, z)[0] == pytest.approx(0.5, abs=0.05)


def test_correctness_falls_with_difficulty():
    trace, z = generate_with_latent(spec(r=replace(ARM, correct_slope=2.0)))
    assert spearmanr(trace.r_correct, z)[0] < -0.2


def test_deterministic():
    a, b = generate(spec(n=500, seed=9)), generate(spec(n=500, seed=9))
    assert a.records == b.records and a.metadata == b.metadata
    assert generate(spec(n=500, seed=10)).records != a.records


def test_single_record():
    trace = generate(spec(n=1))
    assert len(trace) == 1 and trace.query_ids == ["q0"]
    assert 0 <= trace.records[0].nr.p_true <= 1


@pytest.mark.parametrize("change", [
    dict(n=0), dict(seed=-1), dict(p_true_rho=1.5), dict(p_true_scale=-1.0),
    dict(r=replace(ARM, token_sigma=-0.1)), dict(nr=replace(ARM, latency_noise=-1.0)),
    dict(r=replace(ARM, token_rho=-2.0)), dict(nr=replace(ARM, cost_per_token=-1.0)),
])
def test_invalid_spec(change):
    with pytest.raises(ValueError):
        generate(replace(spec(n=10), **change))


def test_spec_dict_round_trip():
    s = paper_preset()
    assert SynthSpec.from_dict(s.to_dict()) == s


@pytest.mark.slow
def test_preset_marginals():
    stats = baseline_stats(generate(paper_preset()))
    r, nr = stats["reasoning"], stats["non_reasoning"]
    targets = [(r["error_rate"], 0.028), (r["mean_latency_seconds"], 125.9), (r["mean_cost_usd"], 9.5e-3),
               (r["mean_output_tokens"], 10_800), (nr["error_rate"], 0.306), (nr["mean_latency_seconds"], 12.4),
               (nr["mean_cost_usd"], 3.6e-3), (nr["mean_output_tokens"], 978)]
    for got, want in targets:
        assert got == pytest.approx(want, rel=0.02)


def test_independent_preset_decouples_latency():
    trace = generate(independent_preset(n=5000))
    assert abs(spearmanr(trace.p_true, trace.r_latency)[0]) < 0.05
    trace = generate(paper_preset(n=5000))
    assert spearmanr(trace.p_true, trace.r_latency)[0] < -0.2


def test_oracle_single_record_respond():
    trace = make_trace([0.95], [10], nr_correct=[True], nr_latency=[2.0], nr_cost=[0.5])
    cfg = calibrate_ffoa(trace, 1.0, 0.0)
    assert oracle_simulate(trace, cfg) == [Outcome("q0", Route.NR_ANSWER, True, 2.0, 0.5)]


def test_oracle_agrees_with_simulator_on_synthetic_trace():
    trace = generate(paper_preset(n=2000, seed=3))
    for r in (0.0, 0.05, 0.2):
        assert simulate_ask(trace, calibrate_ask(trace, r)) == oracle_simulate(trace, calibrate_ask(trace, r))
        cfg = calibrate_ffoa(trace, 0.6, r)
        assert simulate_ffoa(trace, cfg) == oracle_simulate(trace, cfg)


def test_oracle_rejects_empty():
    from failfast.trace_store import Trace
    with pytest.raises(ValueError):
        oracle_simulate(Trace([], {}), None)
