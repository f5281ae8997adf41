"""Data ingestion, run reports and CSV traces.

Reports are JSON with every float written by ``repr`` so a report survives a
write/read cycle bit for bit. Wall-clock timings go to a separate
``<report>.timings.json`` so the report itself is a deterministic function
of (data, configuration, seed).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import EvidenceReport, MomentReport
from .engine import EngineConfig, HybridReport, RunOutcome

__all__ = [
    "DataError",
    "RunReport",
    "ingest_series",
    "build_report",
    "hybrid_to_dict",
    "write_report",
    "read_report",
    "write_traces",
    "render_report",
]

REPORT_SCHEMA = "seqpost-report/1"


class DataError(ValueError):
    pass


def ingest_series(path, kind: str = "returns") -> np.ndarray:
    """Read one number per row; ``kind="prices"`` converts to log returns.

    A non-numeric first row is taken as a header.
    """
    if kind not in ("returns", "prices"):
        raise DataError(f"unknown data kind {kind!r}")
    values = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            if len(cells) != 1:
                raise DataError(f"{path}:{lineno}: expected one value per row, got {len(cells)}")
            try:
                v = float(cells[0])
            except ValueError:
                if lineno == 1 and not values:
                    continue
                raise DataError(f"{path}:{lineno}: not a number: {cells[0]!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}:{lineno}: non-finite value")
            values.append(v)
    x = np.asarray(values, dtype=float)
    if kind == "prices":
        if np.any(x <= 0):
            raise DataError(f"{path}: prices must be positive")
        x = np.diff(np.log(x))
    if x.size == 0:
        raise DataError(f"{path}: no observations")
    return x


@dataclass
class RunReport:
    mode: str
    model: dict
    config: dict
    seed: int
    T: int
    data_sha256: str
    cycles: int
    metropolis_steps: int
    moments: list[MomentReport]
    evidence: EvidenceReport
    rss_trace: list[float]
    pit_trace: list[float]
    cycle_summary: list[dict]
    rne_trace: list[list[float]]
    test_functions: list[str]
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "mode": self.mode,
            "model": self.model,
            "config": self.config,
            "seed": self.seed,
            "T": self.T,
            "data_sha256": self.data_sha256,
            "cycles": self.cycles,
            "metropolis_steps": self.metropolis_steps,
            "moments": [m.to_dict() for m in self.moments],
            "evidence": self.evidence.to_dict(),
            "rss_trace": self.rss_trace,
            "pit_trace": self.pit_trace,
            "cycle_summary": self.cycle_summary,
            "rne_trace": self.rne_trace,
            "test_functions": self.test_functions,
        }

    @classmethod
    def from_dict(cls, d: dict, timings: dict | None = None) -> "RunReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise DataError(f"not a run report (schema {d.get('schema')!r})")
        return cls(
            mode=d["mode"], model=d["model"], config=d["config"], seed=d["seed"], T=d["T"],
            data_sha256=d["data_sha256"], cycles=d["cycles"], metropolis_steps=d["metropolis_steps"],
            moments=[MomentReport(**m) for m in d["moments"]],
            evidence=EvidenceReport(**d["evidence"]),
            rss_trace=d["rss_trace"], pit_trace=d["pit_trace"], cycle_summary=d["cycle_summary"],
            rne_trace=d["rne_trace"], test_functions=d["test_functions"], timings=timings or {},
        )


def build_report(mode: str, model, y, config: EngineConfig | dict, outcome: RunOutcome) -> RunReport:
    trace = outcome.trace
    summary = [
        {"cycle": c.cycle, "t_start": c.t_start, "t_end": c.t_end, "rss": float(c.rss_at_end),
         "reason": c.reason, "forced": c.forced, "resampled": c.resampled, "sweeps": c.iterations,
         "acceptance": [float(a) for a in c.acceptance], "stepsizes": [float(h) for h in c.stepsizes]}
        for c in trace.cycles
    ]
    rne_rows = [[it, cyc, t, *map(float, r)] for it, cyc, t, r in trace.rne_rows()]
    cfg = config.to_dict() if isinstance(config, EngineConfig) else dict(config)
    return RunReport(
        mode=mode,
        model={"name": model.name, **model.hyperparameters()},
        config=cfg,
        seed=int(outcome.seed),
        T=int(trace.T),
        data_sha256=hashlib.sha256(np.ascontiguousarray(y, dtype="<f8").tobytes()).hexdigest(),
        cycles=trace.L,
        metropolis_steps=trace.total_sweeps,
        moments=list(trace.moments),
        evidence=outcome.evidence,
        rss_trace=[float(v) for v in trace.rss],
        pit_trace=[float(v) for v in trace.pit],
        cycle_summary=summary,
        rne_trace=rne_rows,
        test_functions=list(trace.test_function_names),
        timings={k: float(v) for k, v in trace.timings.items()},
    )


def hybrid_to_dict(model, y, config: EngineConfig, hybrid: HybridReport) -> dict:
    return {
        "schema": REPORT_SCHEMA + "+hybrid",
        "step1": build_report("hybrid-step1", model, y, config, hybrid.step1).to_dict(),
        "step2": build_report("hybrid-step2", model, y, config, hybrid.step2).to_dict(),
    }


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def write_report(report: RunReport | dict, path, timings: dict | None = None) -> None:
    """Write the report and, if there are any, its timings next to it."""
    path = Path(path)
    if isinstance(report, RunReport):
        timings = report.timings if timings is None else timings
        report = report.to_dict()
    path.write_text(_dump(report))
    if timings:
        Path(str(path) + ".timings.json").write_text(_dump(timings))


def read_report(path):
    """A ``RunReport`` for single-run files, the raw dict for hybrid reports."""
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON report ({exc})") from exc
    tpath = Path(str(path) + ".timings.json")
    timings = json.loads(tpath.read_text()) if tpath.exists() else {}
    if d.get("schema") == REPORT_SCHEMA + "+hybrid":
        return d
    return RunReport.from_dict(d, timings)


def write_traces(trace, prefix) -> tuple[Path, Path]:
    """``<prefix>.rss.csv`` (per observation) and ``<prefix>.rne.csv`` (per sweep)."""
    prefix = str(prefix)
    rss_path, rne_path = Path(prefix + ".rss.csv"), Path(prefix + ".rne.csv")
    cycle_of = np.zeros(trace.T, dtype=int)
    for c in trace.cycles:
        cycle_of[c.t_start:c.t_end] = c.cycle
    with open(rss_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "cycle", "rss", "pit"])
        for t in range(trace.T):
            w.writerow([t + 1, cycle_of[t], repr(float(trace.rss[t])), repr(float(trace.pit[t]))])
    with open(rne_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "cycle", "t", *trace.test_function_names])
        for it, cyc, t, r in trace.rne_rows():
            w.writerow([it, cyc, t, *(repr(float(v)) for v in r)])
    return rss_path, rne_path


def _render_single(d: dict) -> list[str]:
    ev = d["evidence"]
    lines = [
        f"mode            {d['mode']}",
        f"model           {d['model']}",
        f"seed            {d['seed']}",
        f"observations    {d['T']}",
        f"cycles          {d['cycles']}",
        f"metropolis      {d['metropolis_steps']}",
        f"log ML          {ev['log_ml']:.4f}  (NSE {ev['nse_log_ml']:.4f})",
        f"log ML tilde    {ev['log_ml_tilde']:.4f}",
    ]
    if ev.get("log_score") is not None:
        lines.append(f"log score       {ev['log_score']:.4f}  (NSE {ev['nse_log_score']:.4f}, burn-in {ev['t_burn']})")
    lines.append(f"{'function':<20}{'t':>6}{'E':>14}{'SD':>12}{'NSE':>12}{'RNE':>8}")
    for m in d["moments"]:
        lines.append(f"{m['name']:<20}{m['t']:>6}{m['mean']:>14.6g}{m['sd']:>12.4g}{m['nse']:>12.4g}{m['rne']:>8.3f}")
    return lines


def render_report(report) -> str:
    d = report.to_dict() if isinstance(report, RunReport) else report
    if "step1" in d:
        return "\n".join(_render_single(d["step1"]) + [""] + _render_single(d["step2"])) + "\n"
    return "\n".join(_render_single(d)) + "\n"
