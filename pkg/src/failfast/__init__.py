"""Human-in-the-loop cascades of a non-reasoning model, a reasoning model and a
human expert, evaluated from per-query traces."""

import json
from importlib import resources

from .calibrate import (AskPolicy, InfeasibleConfiguration, PolicyConfig, calibrate_ask, calibrate_ffoa,
                        empirical_quantile, fail_fast_rate)
from .cascade_sim import Action, Outcome, Route, nr_action, realized_rates, simulate_ask, simulate_ffoa
from .metrics import (AuarcSummary, CurvePoint, accuracy_rejection_curve, auarc, baseline_stats,
                      conditional_accuracy, conditional_latency_profile, ideal_latency, latency_drag,
                      savings_table)
from .smooth import LoessFit, loess_fit
from .synth import SynthSpec, generate, oracle_simulate, paper_preset
from .trace_store import JoinedRecord, ModelRole, Trace, TraceError, TraceRecord, ingest, join

__version__ = "0.1.0"


def load_schema(name: str) -> dict:
    """JSON schema shipped for a CLI output, e.g. ``load_schema("report")``."""
    text = resources.files(__name__).joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)
