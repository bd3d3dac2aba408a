"""Command-line entry point: ``failfast <subcommand> ...``.

Exit codes: 0 on success; 1 with a one-line JSON error on stderr for invalid
parameters or bad input; 2 (with usage) for an unknown subcommand.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import calibrate as cal
from . import cascade_sim as sim
from . import metrics, smooth, synth
from .trace_store import (ModelRole, TraceError, ingest, join, join_report, load_trace, load_trace_dir,
                          write_trace_dir)

DEFAULT_U_VALUES = (0.3, 0.5, 0.6, 0.75)


class ParameterError(ValueError):
    def __init__(self, parameter: str, message: str):
        self.parameter = parameter
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    """Routes argument errors to exit 1 + JSON, except a bad subcommand (exit 2)."""

    def error(self, message):
        if message.startswith("argument command:") or message.endswith("required: command"):
            self.print_usage(sys.stderr)
            self.exit(2, f"{self.prog}: error: {message}\n")
        raise ParameterError(_param_from_message(message), message)


def _param_from_message(message: str) -> str:
    # "argument --u: invalid float value: 'x'"
    if message.startswith("argument "):
        return message[len("argument "):].split(":", 1)[0].split("/")[0].lstrip("-").replace("-", "_")
    return "argv"


def _sanitize(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_sanitize(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --- parameter validation -----------------------------------------------------

def _unit(name, v, *, upper_open=False):
    if v is None:
        return
    if not math.isfinite(v) or v < 0 or v > 1 or (upper_open and v >= 1):
        raise ParameterError(name, f"{name} must lie in {'[0, 1)' if upper_open else '[0, 1]'}, got {v}")


def _validate(args):
    for name in ("u", "drag_u"):
        _unit(name, getattr(args, name, None))
    for name in ("r", "drag_r"):
        _unit(name, getattr(args, name, None), upper_open=True)
    for u in getattr(args, "u_values", None) or ():
        _unit("u_values", u)
    if getattr(args, "grid_step", None) is not None and not args.grid_step > 0:
        raise ParameterError("grid_step", "grid_step must be > 0")
    if getattr(args, "grid_stop", None) is not None and not 0 <= args.grid_stop < 1:
        raise ParameterError("grid_stop", "grid_stop must lie in [0, 1)")
    span = getattr(args, "span", None)
    if span is not None and not 0 < span <= 1:
        raise ParameterError("span", "span must lie in (0, 1]")
    if getattr(args, "bins", None) is not None and args.bins < 2:
        raise ParameterError("bins", "bins must be >= 2")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        raise ParameterError("seed", "seed must be >= 0")
    if getattr(args, "n", None) is not None and args.n < 1:
        raise ParameterError("n", "n must be >= 1")
    if getattr(args, "permutations", None) is not None and args.permutations < 1:
        raise ParameterError("permutations", "permutations must be >= 1")
    if getattr(args, "n_eval", None) is not None and args.n_eval < 1:
        raise ParameterError("n_eval", "n_eval must be >= 1")
    cf = getattr(args, "calibration_fraction", None)
    if cf is not None and not 0 < cf < 1:
        raise ParameterError("calibration_fraction", "calibration_fraction must lie in (0, 1)")
    if getattr(args, "system", None) == "ffoa" and getattr(args, "u", None) is None:
        raise ParameterError("u", "--system ffoa requires --u")


def _trace(args):
    if args.trace:
        return load_trace_dir(args.trace)
    if args.nr and args.r_file:
        return load_trace(args.nr, args.r_file)
    raise ParameterError("trace", "give --trace DIR or both --nr FILE and --r-file FILE")


def _grid(args):
    return metrics.default_grid(args.grid_stop, args.grid_step)


def _policy(trace, args):
    if args.system == "ask":
        return cal.calibrate_ask(trace, args.r)
    return cal.calibrate_ffoa(trace, args.u, args.r)


def _curve(trace, system, grid, u=None):
    return metrics.accuracy_rejection_curve(trace, system, grid, u=u)


# --- subcommands ----------------------------------------------------------------

def cmd_validate(args):
    recs = ingest(args.file, ModelRole(args.role))
    _emit(dumps({"valid": True, "role": args.role, "n_records": len(recs),
                 "model_ids": sorted({r.model_id for r in recs})}), args.out)


def cmd_join(args):
    trace = join(ingest(args.nr, ModelRole.NON_REASONING), ingest(args.r_file, ModelRole.REASONING),
                 source=f"{args.nr}|{args.r_file}")
    _emit(dumps(join_report(trace)), args.out)


def cmd_calibrate(args):
    trace = _trace(args)
    if args.calibration_fraction is not None:
        trace, _ = cal.split_trace(trace, args.calibration_fraction, args.seed)
    _emit(dumps(_policy(trace, args).to_dict()), args.out)


def _load_policy(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.pop("system") == "ask":
        return cal.AskPolicy(**d)
    d["realized"] = cal.RealizedRates(**d["realized"])
    return cal.PolicyConfig(**d)


def cmd_simulate(args):
    trace = _trace(args)
    if args.calibration_fraction is not None:
        calib, trace = cal.split_trace(trace, args.calibration_fraction, args.seed)
    else:
        calib = trace
    policy = _load_policy(args.policy) if args.policy else _policy(calib, args)
    if isinstance(policy, cal.AskPolicy):
        outcomes = sim.simulate_ask(trace, policy)
    else:
        outcomes = sim.simulate_ffoa(trace, policy)
    _emit(sim.outcomes_to_csv(outcomes), args.out)


def cmd_curve(args):
    trace = _trace(args)
    _emit(metrics.curve_to_csv(_curve(trace, args.system, _grid(args), args.u)), args.out)


def cmd_auarc(args):
    trace = _trace(args)
    s = metrics.auarc(_curve(trace, args.system, _grid(args), args.u))
    _emit(dumps({"system": args.system, "u": args.u if args.system == "ffoa" else 0.0, **s.to_dict()}),
          args.out)


def _drag_block(trace, u, r, permutations, seed, bins):
    config = cal.calibrate_ffoa(trace, u, r)
    out = metrics.latency_drag(trace, config)
    perm = metrics.drag_permutation_test(trace, config, permutations, seed)
    out.update({
        "target_rejection": r,
        "permutation": {k: perm[k] for k in ("null_mean", "null_se", "z", "p_value", "n_permutations", "seed")},
        "profile": metrics.conditional_latency_profile(trace, bins),
    })
    return out


def cmd_drag(args):
    trace = _trace(args)
    out = _drag_block(trace, args.u, args.r, args.permutations, args.seed, args.bins)
    if args.profile_out:
        _emit(metrics.profile_to_csv(out["profile"]), args.profile_out)
    _emit(dumps(out), args.out)


def _loess(trace, args):
    x, y = trace.r_tokens, trace.r_correct.astype(float)
    ev = None
    if args.n_eval is not None:
        lo, hi = float(x.min()), float(x.max())
        ev = [lo + (hi - lo) * i / (args.n_eval - 1) for i in range(args.n_eval)] if args.n_eval > 1 else [lo]
    return smooth.loess_fit(x, y, args.span, ev)


def cmd_loess(args):
    trace = _trace(args)
    _emit(smooth.loess_to_csv(_loess(trace, args), clamp=args.clamp), args.out)


def cmd_report(args):
    trace = _trace(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid(args)

    us = [0.0] + [u for u in args.u_values if u != 0]
    summaries, curves = [], {}
    for u in us:
        curve = _curve(trace, "ask", grid) if u == 0 else _curve(trace, "ffoa", grid, u)
        name = "curve_ask.csv" if u == 0 else f"curve_ffoa_u{u:g}.csv"
        (out / name).write_text(metrics.curve_to_csv(curve), encoding="utf-8")
        curves[f"{u:g}"] = name
        summaries.append((u, metrics.auarc(curve)))
    rows = metrics.savings_rows(summaries)

    drag = _drag_block(trace, args.drag_u, args.drag_r, args.permutations, args.seed, args.bins)
    (out / "profile.csv").write_text(metrics.profile_to_csv(drag["profile"]), encoding="utf-8")
    (out / "loess.csv").write_text(smooth.loess_to_csv(_loess(trace, args), clamp=args.clamp), encoding="utf-8")

    report = {
        "trace": {"n": len(trace), **{k: trace.metadata.get(k) for k in ("nr_model_id", "r_model_id", "source")}},
        "baseline": metrics.baseline_stats(trace),
        "grid": grid,
        "savings": rows,
        "drag": drag,
        "files": {"curves": curves, "profile": "profile.csv", "loess": "loess.csv"},
        "seed": args.seed,
    }
    (out / "report.json").write_text(dumps(report), encoding="utf-8")
    sys.stdout.write(dumps({"report": str(out / "report.json")}))


def cmd_synth(args):
    if args.spec:
        spec = synth.SynthSpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
        if args.seed is not None or args.n is not None:
            spec = replace(spec, seed=args.seed if args.seed is not None else spec.seed,
                           n=args.n if args.n is not None else spec.n)
    else:
        make = synth.paper_preset if args.preset == "paper" else synth.independent_preset
        spec = make(n=args.n or 10_000, seed=synth.PRESET_SEED if args.seed is None else args.seed)
    trace = synth.generate(spec)
    nr_path, r_path = write_trace_dir(trace, args.out)
    spec_path = Path(args.out) / "spec.json"
    spec_path.write_text(dumps(spec.to_dict()), encoding="utf-8")
    sys.stdout.write(dumps({"nr": str(nr_path), "r": str(r_path), "spec": str(spec_path), "n": spec.n}))


def cmd_collect(args):
    from .collector import EndpointConfig, collect, load_dataset
    endpoint = EndpointConfig.from_file(args.config)
    items = load_dataset(args.dataset)
    written = collect(items, endpoint, ModelRole(args.role), args.probe, args.out, args.failures)
    sys.stdout.write(dumps({"written": len(written), "items": len(items), "out": str(args.out)}))


# --- parser ---------------------------------------------------------------------

def _add_trace(p):
    p.add_argument("--trace", help="directory holding nr.jsonl and r.jsonl")
    p.add_argument("--nr", help="non-reasoning JSONL file")
    p.add_argument("--r-file", dest="r_file", help="reasoning JSONL file")


def _add_grid(p):
    p.add_argument("--grid-stop", type=float, default=metrics.GRID_STOP)
    p.add_argument("--grid-step", type=float, default=metrics.GRID_STEP)


def _add_system(p, need_r=True):
    p.add_argument("--system", choices=("ask", "ffoa"), default="ask")
    p.add_argument("--u", type=float, default=None, help="utilization of the non-reasoning model")
    if need_r:
        p.add_argument("--r", type=float, default=0.1, help="target rejection rate")


def _add_loess(p):
    p.add_argument("--span", type=float, default=smooth.DEFAULT_SPAN)
    p.add_argument("--n-eval", type=int, default=None)
    p.add_argument("--clamp", action="store_true", help="clamp fitted values and band to [0, 1]")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="failfast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="validate one JSONL trace file")
    p.add_argument("--file", required=True)
    p.add_argument("--role", choices=[r.value for r in ModelRole], required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("join", help="join nr and r traces; prints a join report")
    p.add_argument("--nr", required=True)
    p.add_argument("--r-file", dest="r_file", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_join)

    p = sub.add_parser("calibrate", help="calibrate Ask or FFoA thresholds (JSON)")
    _add_trace(p)
    _add_system(p)
    p.add_argument("--calibration-fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="route every query; writes outcome CSV")
    _add_trace(p)
    _add_system(p)
    p.add_argument("--policy", help="policy JSON from `calibrate` (skips calibration)")
    p.add_argument("--calibration-fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curve", help="accuracy-rejection curve CSV")
    _add_trace(p)
    _add_system(p, need_r=False)
    _add_grid(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("auarc", help="AUARC summary JSON")
    _add_trace(p)
    _add_system(p, need_r=False)
    _add_grid(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_auarc)

    p = sub.add_parser("drag", help="latency drag, permutation test and latency profile")
    _add_trace(p)
    p.add_argument("--u", type=float, default=0.5)
    p.add_argument("--r", type=float, default=0.1)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile-out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_drag)

    p = sub.add_parser("loess", help="local linear regression of reasoning correctness on tokens")
    _add_trace(p)
    _add_loess(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_loess)

    p = sub.add_parser("report", help="full pipeline: savings table, curves, drag, profile, loess")
    _add_trace(p)
    _add_grid(p)
    _add_loess(p)
    p.add_argument("--u-values", type=float, nargs="+", default=list(DEFAULT_U_VALUES))
    p.add_argument("--drag-u", type=float, default=0.5)
    p.add_argument("--drag-r", type=float, default=0.1)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic nr/r trace pair plus spec echo")
    p.add_argument("--preset", choices=("paper", "independent"), default="paper")
    p.add_argument("--spec", help="SynthSpec JSON (overrides --preset)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("collect", help="query an OpenAI-compatible endpoint and append trace records")
    p.add_argument("--config", required=True, help="endpoint JSON config")
    p.add_argument("--dataset", required=True, help="JSONL with query_id, question, gold_answer")
    p.add_argument("--role", choices=[r.value for r in ModelRole], required=True)
    p.add_argument("--probe", action="store_true", help="run the P(True) probe (non_reasoning only)")
    p.add_argument("--out", required=True)
    p.add_argument("--failures")
    p.set_defaults(func=cmd_collect)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(args)
        args.func(args)
    except ParameterError as exc:
        sys.stderr.write(json.dumps({"error": "invalid_parameter", "parameter": exc.parameter,
                                     "message": str(exc)}) + "\n")
        return 1
    except (TraceError, ValueError, OSError, KeyError, RuntimeError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
