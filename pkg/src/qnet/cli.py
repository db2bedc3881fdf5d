"""Command-line harness.

Verbs: validate, simulate, fluid, verify-c1, verify-c2, sweep, export.
Every verb takes --config (YAML, see config.py), --seed (overrides the
config where it applies) and --out (output directory).  Exit codes:
0 success, 1 validation/configuration failure, 2 runtime budget or I/O
failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import absorption, des, experiments, fluid
from .config import ConfigError, load_config, make_equilibrium_set
from .network import offered_load, validate

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load(args):
    cfg = load_config(args.config)
    report = validate(cfg.network)
    if not report.ok:
        raise ConfigError(f"invalid network:\n{report}")
    return cfg


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    report = validate(cfg.network)
    print(report)
    if report.ok:
        load = offered_load(cfg.network)
        print("offered load per station:", " ".join(repr(float(x)) for x in load))
        return EXIT_OK
    return EXIT_INVALID


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if cfg.simulate is None:
        raise ConfigError("config has no simulate section")
    sim = cfg.simulate
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    horizon = float(sim["horizon"])
    sample_times = None
    if sim.get("sample_count"):
        sample_times = np.linspace(0.0, horizon, int(sim["sample_count"]))
    trace = des.run(
        cfg.network,
        float(sim["n"]),
        seed,
        horizon,
        warmup_frac=float(sim.get("warmup_frac", 0.2)),
        initial_queues=sim.get("initial_queues"),
        sample_times=sample_times,
    )
    out = _outdir(args)
    experiments.export_trace_csv(trace, os.path.join(out, "trace.csv"))
    experiments.export_trace_json(trace, os.path.join(out, "trace.json"))
    rates = " ".join(repr(float(x)) for x in trace.flow_depart_rates)
    print(f"simulated to t={horizon} seed={seed}: flow rates {rates}")
    return EXIT_OK


def cmd_fluid(args) -> int:
    cfg = _load(args)
    if cfg.fluid is None:
        raise ConfigError("config has no fluid section")
    node = cfg.fluid
    state = fluid.FluidState.initial(
        cfg.network,
        np.asarray(node["initial_q"], dtype=float),
        float(node["hbar"]),
        u=np.asarray(node["initial_u"], dtype=float) if "initial_u" in node else None,
        v=np.asarray(node["initial_v"], dtype=float) if "initial_v" in node else None,
    )
    traj = fluid.integrate(state, cfg.network, float(node["horizon"]))
    out = _outdir(args)
    experiments.export_trajectory_csv(traj, os.path.join(out, "fluid.csv"))
    _, flow_rates = fluid.departure_rates_at(
        traj.state_at(traj.horizon), cfg.network
    )
    print(
        f"integrated {len(traj.times)} breakpoints to t={traj.horizon}; "
        f"absorbed_at={traj.absorbed_at}; final flow rates "
        + " ".join(repr(float(x)) for x in flow_rates)
    )
    return EXIT_OK


def _verify_common(args):
    cfg = _load(args)
    if cfg.verify is None:
        raise ConfigError("config has no verify section")
    node = cfg.verify
    eqset = make_equilibrium_set(node["set"])
    return cfg, node, eqset


def cmd_verify_c1(args) -> int:
    cfg, node, eqset = _verify_common(args)
    if "starts" not in node:
        raise ConfigError("verify: c1 needs a starts list (initial q vectors)")
    hbar = float(node["hbar"])
    points = [
        absorption.SamplePoint(q=np.asarray(q, dtype=float), label=f"start{i}")
        for i, q in enumerate(node["starts"])
    ]
    plan = absorption.SamplePlan(points=points, time_budget=float(node.get("time_budget", 100.0 * hbar)))
    report = absorption.verify_C1(cfg.network, eqset, hbar, plan)
    out = _outdir(args)
    with open(os.path.join(out, "c1.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"samples={len(points)} max_ratio={report.max_ratio!r} ok={report.ok}")
    for v in report.violations:
        print("violation:", v)
    return EXIT_OK if report.ok else EXIT_RUNTIME


def cmd_verify_c2(args) -> int:
    cfg, node, eqset = _verify_common(args)
    if "target_rates" not in node:
        raise ConfigError("verify: c2 needs target_rates")
    report = absorption.verify_C2(
        cfg.network,
        eqset,
        float(node["hbar"]),
        node["target_rates"],
        per_piece=int(node.get("per_piece", 12)),
        seed=args.seed or 0,
    )
    out = _outdir(args)
    with open(os.path.join(out, "c2.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"max deviation from target rates: {report.max_deviation!r}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if cfg.experiment is None:
        raise ConfigError("config has no experiment section")
    plan = cfg.experiment
    if args.seed is not None:
        plan.base_seed = args.seed
        plan.seeds = None
    table = experiments.run_sweep(cfg.network, plan, workers=args.workers)
    out = _outdir(args)
    experiments.export_rate_table_csv(table, os.path.join(out, "rates.csv"))
    experiments.export_rate_table_json(
        table, os.path.join(out, "rates.json"), target_rates=plan.target_rates
    )
    for n in plan.n_values:
        rates = table.rates_for(n)
        if len(rates):
            mean = " ".join(repr(float(x)) for x in rates.mean(axis=0))
            print(f"n={n}: mean flow rates {mean} over {len(rates)} seeds")
        else:
            print(f"n={n}: all cells failed")
    errors = [r for r in table.rows if r.error]
    for r in errors:
        print(f"cell (n={r.n}, seed={r.seed}) failed: {r.error}")
    return EXIT_RUNTIME if errors else EXIT_OK


def cmd_export(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    node = cfg.export or {}
    wrote = []
    if cfg.simulate is not None:
        sim = cfg.simulate
        seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
        horizon = float(sim["horizon"])
        count = int(sim.get("sample_count", 1000))
        trace = des.run(
            cfg.network, float(sim["n"]), seed, horizon,
            warmup_frac=float(sim.get("warmup_frac", 0.2)),
            sample_times=np.linspace(0.0, horizon, count),
        )
        queues = node.get("trace_queues")
        if queues:
            path = os.path.join(out, "queues.csv")
            header = ["time"] + [f"q{int(k)}" for k in queues]
            rows = [
                [t, *[int(trace.sample_q[i][int(k)]) for k in queues]]
                for i, t in enumerate(trace.sample_times)
            ]
            experiments._write_csv(path, header, rows)
            wrote.append(path)
        path = os.path.join(out, "trace.csv")
        experiments.export_trace_csv(trace, path)
        wrote.append(path)
    if cfg.fluid is not None:
        fl = cfg.fluid
        state = fluid.FluidState.initial(
            cfg.network, np.asarray(fl["initial_q"], dtype=float), float(fl["hbar"])
        )
        traj = fluid.integrate(state, cfg.network, float(fl["horizon"]))
        pair = node.get("fluid_phase")
        if pair:
            i, j = int(pair[0]), int(pair[1])
            path = os.path.join(out, "phase.csv")
            header = ["time", f"q{i}", f"q{j}"]
            rows = [[t, traj.q[b][i], traj.q[b][j]] for b, t in enumerate(traj.times)]
            experiments._write_csv(path, header, rows)
            wrote.append(path)
        path = os.path.join(out, "fluid.csv")
        experiments.export_trajectory_csv(traj, path)
        wrote.append(path)
    if not wrote:
        raise ConfigError("export: nothing to export (no simulate or fluid section)")
    for p in wrote:
        print("wrote", p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qnet",
        description="Simulate and analyze multiclass queueing networks with ingress discarding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in [
        ("validate", cmd_validate),
        ("simulate", cmd_simulate),
        ("fluid", cmd_fluid),
        ("verify-c1", cmd_verify_c1),
        ("verify-c2", cmd_verify_c2),
        ("sweep", cmd_sweep),
        ("export", cmd_export),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".")
        if name == "sweep":
            p.add_argument("--workers", type=int, default=None)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (des.SimulationError, fluid.FluidRateError, fluid.ZenoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
