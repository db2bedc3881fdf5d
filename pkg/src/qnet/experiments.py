"""Threshold-scaling sweeps with seeded replications, rate tables, and
CSV/JSON export.

Outputs are byte-stable for a fixed plan: floats are written with
shortest-roundtrip repr, rows are merged in (n, seed) order regardless of
worker completion order, and wall-clock timings are kept in memory only
(never serialized), so identical plans hash identically.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import des
from .network import NetworkSpec

__all__ = [
    "ExperimentPlan",
    "RateRow",
    "RateTable",
    "ConvergenceReport",
    "run_sweep",
    "compare_to_fluid",
    "plot_export",
    "export_trace_csv",
    "export_trajectory_csv",
    "export_rate_table_csv",
    "export_rate_table_json",
]

WORKERS_ENV = "QNET_WORKERS"


@dataclass
class ExperimentPlan:
    n_values: tuple
    horizon: float
    replications: int = 10
    base_seed: int = 0
    seeds: Optional[tuple] = None        # explicit seeds override base_seed
    warmup_frac: float = 0.2
    target_rates: Optional[tuple] = None

    def resolved_seeds(self) -> tuple:
        if self.seeds is not None:
            return tuple(int(s) for s in self.seeds)
        return tuple(self.base_seed + i for i in range(self.replications))

    def validate(self) -> None:
        ns = list(self.n_values)
        if not ns or any(n <= 0 for n in ns) or sorted(ns) != ns or len(set(ns)) != len(ns):
            raise ValueError("n_values must be positive and strictly increasing")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if not self.resolved_seeds():
            raise ValueError("plan has no replications")


@dataclass
class RateRow:
    n: float
    seed: int
    flow_rates: tuple                 # departure rates over the window
    admit_rates: tuple
    event_count: int
    wall_time: float = 0.0            # in-memory only, never serialized
    error: Optional[str] = None


@dataclass
class RateTable:
    num_flows: int
    rows: list = field(default_factory=list)

    def rates_for(self, n: float) -> np.ndarray:
        return np.array(
            [r.flow_rates for r in self.rows if r.n == n and r.error is None]
        )


def _sweep_cell(args):
    spec, n, seed, horizon, warmup = args
    start = time.perf_counter()
    try:
        trace = des.run(spec, n, seed, horizon, warmup_frac=warmup, invariant_checks="off")
    except des.SimulationError as exc:
        return RateRow(
            n=n, seed=seed, flow_rates=(), admit_rates=(),
            event_count=0, wall_time=time.perf_counter() - start, error=str(exc),
        )
    return RateRow(
        n=n,
        seed=seed,
        flow_rates=tuple(float(x) for x in trace.flow_depart_rates),
        admit_rates=tuple(float(x) for x in trace.flow_admit_rates),
        event_count=trace.event_count,
        wall_time=time.perf_counter() - start,
    )


def run_sweep(spec: NetworkSpec, plan: ExperimentPlan, *, workers: Optional[int] = None) -> RateTable:
    """Run every (n, seed) cell of the plan and collect long-run rates.

    Budget errors in one cell are recorded on its row; the other cells
    still run.  Worker count comes from the QNET_WORKERS environment
    variable unless given; results are merged in (n, seed) order so the
    table is deterministic either way.
    """
    plan.validate()
    if plan.horizon <= 0:
        raise des.EmptyWindowError("empty measurement window")
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    cells = [
        (spec, float(n), seed, plan.horizon, plan.warmup_frac)
        for n in plan.n_values
        for seed in plan.resolved_seeds()
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    rows.sort(key=lambda r: (r.n, r.seed))
    return RateTable(num_flows=spec.num_flows, rows=rows)


@dataclass
class ConvergenceReport:
    n_values: tuple
    mean_deviation: tuple       # per n: mean over seeds of max_f |rate - R_f|
    min_deviation: tuple
    max_deviation: tuple
    nonincreasing: Optional[bool]   # None when fewer than two n values

    def to_dict(self) -> dict:
        return {
            "n_values": list(self.n_values),
            "mean_deviation": list(self.mean_deviation),
            "min_deviation": list(self.min_deviation),
            "max_deviation": list(self.max_deviation),
            "nonincreasing": self.nonincreasing,
        }


def compare_to_fluid(table: RateTable, target_rates) -> ConvergenceReport:
    """Per-threshold-scale deviation of observed rates from the fluid
    prediction, with a flag for the mean deviation being nonincreasing in
    n (a statistical trend over seeds, not a per-seed guarantee)."""
    if not table.rows:
        raise ValueError("rate table is empty")
    R = np.asarray(target_rates, dtype=float)
    ns = sorted({r.n for r in table.rows})
    means, mins, maxs = [], [], []
    for n in ns:
        rates = table.rates_for(n)
        if len(rates) == 0:
            means.append(float("nan")); mins.append(float("nan")); maxs.append(float("nan"))
            continue
        devs = np.max(np.abs(rates - R), axis=1)
        means.append(float(devs.mean()))
        mins.append(float(devs.min()))
        maxs.append(float(devs.max()))
    trend = None
    if len(ns) >= 2:
        trend = all(b <= a + 1e-15 for a, b in zip(means, means[1:]))
    return ConvergenceReport(
        n_values=tuple(ns),
        mean_deviation=tuple(means),
        min_deviation=tuple(mins),
        max_deviation=tuple(maxs),
        nonincreasing=trend,
    )


# ---------------------------------------------------------------------------
# CSV / JSON export


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(x) for x in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def export_trace_csv(trace: des.SimTrace, path) -> None:
    """Columnar trace: time, per-class queue lengths, cumulative per-class
    departures, cumulative per-flow admissions.  Uses the sampling grid if
    the trace carries one, otherwise a single final-state row."""
    K = len(trace.q_final)
    F = len(trace.admitted)
    header = (
        ["time"]
        + [f"q{k}" for k in range(K)]
        + [f"d{k}" for k in range(K)]
        + [f"admitted{f}" for f in range(F)]
    )
    rows = []
    if trace.sample_times is not None:
        for i, t in enumerate(trace.sample_times):
            rows.append(
                [t, *trace.sample_q[i], *trace.sample_d[i], *trace.sample_admitted[i]]
            )
    else:
        rows.append([trace.horizon, *trace.q_final, *trace.departures, *trace.admitted])
    _write_csv(path, header, rows)


def export_trace_json(trace: des.SimTrace, path) -> None:
    summary = {
        "n": trace.n,
        "seed": trace.seed,
        "horizon": trace.horizon,
        "window": list(trace.window),
        "event_count": trace.event_count,
        "flow_depart_rates": [float(x) for x in trace.flow_depart_rates],
        "flow_admit_rates": [float(x) for x in trace.flow_admit_rates],
        "exogenous": [int(x) for x in trace.exogenous],
        "admitted": [int(x) for x in trace.admitted],
        "departures": [int(x) for x in trace.departures],
    }
    try:
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def export_trajectory_csv(traj, path) -> None:
    """Fluid trajectory breakpoints: time, per-class fluid queue contents,
    then the segment rates (per-flow admission, per-class departure)."""
    K = traj.q.shape[1]
    F = traj.u.shape[1]
    header = (
        ["time"]
        + [f"q{k}" for k in range(K)]
        + [f"admit_rate{f}" for f in range(F)]
        + [f"depart_rate{k}" for k in range(K)]
    )
    rows = []
    for i in range(len(traj.times)):
        rows.append([traj.times[i], *traj.q[i], *traj.admit[i], *traj.depart[i]])
    _write_csv(path, header, rows)


def export_rate_table_csv(table: RateTable, path) -> None:
    header = (
        ["n", "seed"]
        + [f"rate{f}" for f in range(table.num_flows)]
        + [f"admit_rate{f}" for f in range(table.num_flows)]
        + ["event_count", "error"]
    )
    rows = []
    for r in table.rows:
        rates = list(r.flow_rates) or [""] * table.num_flows
        admits = list(r.admit_rates) or [""] * table.num_flows
        rows.append([r.n, r.seed, *rates, *admits, r.event_count, r.error or ""])
    _write_csv(path, header, rows)


def export_rate_table_json(table: RateTable, path, *, target_rates=None) -> None:
    payload = {
        "num_flows": table.num_flows,
        "rows": [
            {
                "n": r.n,
                "seed": r.seed,
                "flow_rates": list(r.flow_rates),
                "admit_rates": list(r.admit_rates),
                "event_count": r.event_count,
                "error": r.error,
            }
            for r in table.rows
        ],
    }
    if target_rates is not None:
        payload["comparison"] = compare_to_fluid(table, target_rates).to_dict()
    try:
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def plot_export(obj, path) -> None:
    """Export a trace, fluid trajectory, or rate table to CSV by type."""
    from .fluid import FluidTrajectory

    if isinstance(obj, des.SimTrace):
        export_trace_csv(obj, path)
    elif isinstance(obj, FluidTrajectory):
        export_trajectory_csv(obj, path)
    elif isinstance(obj, RateTable):
        export_rate_table_csv(obj, path)
    else:
        raise TypeError(f"cannot export {type(obj).__name__}")
