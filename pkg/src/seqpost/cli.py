"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable series, bad or mismatched design file), 3 weight collapse.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .design import DesignFormatError, read_design, write_design
from .diagnostics import evidence_accumulate
from .engine import (DesignMismatchError, EngineConfig, RunOutcome, run_adaptive, run_hybrid,
                     run_nonadaptive)
from .io import (DataError, build_report, hybrid_to_dict, ingest_series, read_report, render_report,
                 write_report, write_traces)
from .models import EgarchModel, make_model
from .models.egarch import prior_moments
from .mutation import MPhaseRule
from .rng import Phase, RandomStream, StreamKey

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "model": "conjugate", "K": 1, "I": 1, "sigma2": None, "m0": None, "v0": None,
    "data_kind": "returns", "J": 16, "N": 512, "seed": 0, "rss_threshold": 0.5,
    "mphase_rule": "rne", "rbar": 7, "kappa": 3, "d1": 0.5, "d2": 0.2, "e1": 0.35, "e2": 0.9,
    "rmax": 100, "resampler": "residual", "proposal": "random_walk", "forced_dates": "",
    "burn_in": None, "moment_dates": None, "pit": False, "T": 500, "theta": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dates(text):
    if text is None or text == "":
        return []
    if isinstance(text, (list, tuple)):
        return [int(t) for t in text]
    return [int(t) for t in str(text).split(",") if t.strip()]


def _model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--model", help="conjugate, bimodal or egarch")
    g.add_argument("--K", type=int, help="EGARCH volatility components")
    g.add_argument("--I", type=int, help="EGARCH mixture components")
    g.add_argument("--sigma2", type=float)
    g.add_argument("--m0", type=float)
    g.add_argument("--v0", type=float)


def _data_args(p):
    p.add_argument("--data", required=True, help="CSV with one value per row")
    p.add_argument("--data-kind", choices=("returns", "prices"))
    p.add_argument("--config", help="JSON file of option values; flags override it")
    p.add_argument("--report-out", help="report path (JSON); traces go next to it")
    p.add_argument("--pit", action="store_true", default=None, help="record PIT values")
    p.add_argument("--burn-in", type=int, help="t_burn for the log score")


def _engine_args(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--J", type=int)
    g.add_argument("--N", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--rss-threshold", type=float)
    g.add_argument("--mphase-rule", choices=("deterministic", "rne"))
    for name, typ in (("rbar", int), ("kappa", int), ("d1", float), ("d2", float),
                      ("e1", float), ("e2", float), ("rmax", int)):
        g.add_argument(f"--{name}", type=typ)
    g.add_argument("--resampler", choices=("multinomial", "residual", "stratified", "systematic"))
    g.add_argument("--proposal", choices=("random_walk", "independence"))
    g.add_argument("--forced-dates", help="comma-separated observation dates")
    g.add_argument("--moment-dates", help="comma-separated dates for moment reports (default T)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seqpost", description="Sequential posterior simulation with group NSEs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="adaptive run; writes a design and a report")
    _model_args(p), _data_args(p), _engine_args(p)
    p.add_argument("--design-out")

    p = sub.add_parser("replay", help="nonadaptive run from a design file")
    _model_args(p), _data_args(p)
    p.add_argument("--design-in", required=True)
    p.add_argument("--seed", type=int, help="default: the design's step-2 seed")

    p = sub.add_parser("hybrid", help="adaptive pass, then replay with a derived seed")
    _model_args(p), _data_args(p), _engine_args(p)
    p.add_argument("--design-out")

    p = sub.add_parser("simulate", help="synthetic series from a model")
    _model_args(p)
    p.add_argument("--config")
    p.add_argument("--T", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--theta", help="comma-separated parameters; unconstrained vector for egarch "
                   "(default prior mean), theta for conjugate/bimodal (default 1)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="re-render a saved report")
    p.add_argument("report_in")
    p.add_argument("--json", action="store_true", help="print the stored JSON instead of a table")
    return parser


def _options(args) -> dict:
    opts = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        try:
            from_file = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        unknown = set(from_file) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        opts.update(from_file)
    opts.update({k: v for k, v in vars(args).items() if v is not None})
    return opts


def _model(opts):
    name = str(opts["model"]).lower()
    if name.startswith("egarch"):
        return EgarchModel(K=int(opts["K"]), I=int(opts["I"]))
    try:
        return make_model(name, sigma2=opts["sigma2"], m0=opts["m0"], v0=opts["v0"])
    except TypeError as exc:
        raise UsageError(f"model {name}: {exc}") from exc


def _engine_config(opts) -> EngineConfig:
    moment = opts["moment_dates"]
    rule = MPhaseRule(kind=opts["mphase_rule"], rbar=int(opts["rbar"]), kappa=int(opts["kappa"]),
                      d1=float(opts["d1"]), d2=float(opts["d2"]), e1=float(opts["e1"]),
                      e2=float(opts["e2"]), rmax=int(opts["rmax"]))
    return EngineConfig(
        J=int(opts["J"]), N=int(opts["N"]), master_seed=int(opts["seed"]),
        rss_threshold=float(opts["rss_threshold"]), rule=rule, resampler=opts["resampler"],
        proposal=1 if opts["proposal"] == "independence" else 0,
        forced_dates=tuple(_dates(opts["forced_dates"])),
        moment_dates=None if moment in (None, "") else tuple(_dates(moment)),
        t_burn=opts["burn_in"], pit=bool(opts["pit"]))


def _report_paths(opts, default_stem):
    report = Path(opts.get("report_out") or f"{default_stem}.report.json")
    return report, Path(str(report).removesuffix(".json"))


def _emit(opts, model, y, config, outcome, mode, stem):
    report_path, trace_prefix = _report_paths(opts, stem)
    report = build_report(mode, model, y, config, outcome)
    write_report(report, report_path)
    write_traces(outcome.trace, trace_prefix)
    sys.stdout.write(render_report(report))
    return report_path


def _cmd_run(args):
    opts = _options(args)
    model, y = _model(opts), ingest_series(opts["data"], opts["data_kind"])
    config = _engine_config(opts)
    system, design, trace = run_adaptive(model, y, config)
    design_out = opts.get("design_out") or "design.bin"
    write_design(design, design_out)
    outcome = RunOutcome(trace, evidence_accumulate(trace, config.t_burn), system, config.master_seed)
    _emit(opts, model, y, config, outcome, "adaptive", "run")


def _cmd_replay(args):
    opts = _options(args)
    model, y = _model(opts), ingest_series(opts["data"], opts["data_kind"])
    design = read_design(opts["design_in"])
    seed = getattr(args, "seed", None)
    system, trace = run_nonadaptive(model, y, design, seed, pit_on=bool(opts["pit"]))
    seed = design.step2_seed if seed is None else seed
    outcome = RunOutcome(trace, evidence_accumulate(trace, opts["burn_in"]), system, seed)
    config = {"J": design.J, "N": design.N, "design_seed": design.master_seed,
              "resampler": design.resampler.value, "t_burn": opts["burn_in"]}
    _emit(opts, model, y, config, outcome, "replay", "replay")


def _cmd_hybrid(args):
    opts = _options(args)
    model, y = _model(opts), ingest_series(opts["data"], opts["data_kind"])
    config = _engine_config(opts)
    hybrid = run_hybrid(model, y, config)
    write_design(hybrid.design, opts.get("design_out") or "design.bin")
    report_path, prefix = _report_paths(opts, "hybrid")
    report = hybrid_to_dict(model, y, config, hybrid)
    timings = {"step1": hybrid.step1.trace.timings, "step2": hybrid.step2.trace.timings}
    write_report(report, report_path, timings)
    write_traces(hybrid.step1.trace, str(prefix) + ".step1")
    write_traces(hybrid.step2.trace, str(prefix) + ".step2")
    sys.stdout.write(render_report(report))


def _cmd_simulate(args):
    opts = _options(args)
    model = _model(opts)
    T = int(opts["T"])
    if T < 1:
        raise UsageError("--T must be positive")
    stream = RandomStream(StreamKey(int(opts["seed"]), phase=Phase.AUX))
    theta = None if opts["theta"] is None else np.array(_dates_float(opts["theta"]))
    if isinstance(model, EgarchModel):
        if theta is None:
            theta = prior_moments(model.K, model.I)[0]
        if theta.size != model.k:
            raise UsageError(f"--theta needs {model.k} values for {model.name}")
        y = model.simulate(theta, T, stream)
    else:
        y = model.simulate(1.0 if theta is None else float(theta[0]), T, stream)
    Path(opts["out"]).write_text("".join(f"{v!r}\n" for v in map(float, y)))
    print(f"wrote {T} observations to {opts['out']}")


def _dates_float(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _cmd_report(args):
    report = read_report(args.report_in)
    if args.json:
        d = report if isinstance(report, dict) else report.to_dict()
        sys.stdout.write(json.dumps(d, indent=1) + "\n")
    else:
        sys.stdout.write(render_report(report))


COMMANDS = {"run": _cmd_run, "replay": _cmd_replay, "hybrid": _cmd_hybrid,
            "simulate": _cmd_simulate, "report": _cmd_report}


def main(argv=None) -> int:
    from .particles import WeightCollapseError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except WeightCollapseError as exc:
        print(f"seqpost: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DesignFormatError, DesignMismatchError, OSError) as exc:
        print(f"seqpost: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ValueError) as exc:
        print(f"seqpost: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
