"""Command line front end: single synthesis runs, closed-loop simulations,
the exact-oracle computation, and the grid feasibility sweep."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import conic, model, mpc, oracle, simulate, synthesis

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _parse_range(spec: str) -> list[float]:
    """start:stop:step (inclusive stop) or a comma list."""
    if ":" in spec:
        start, stop, step = (float(tok) for tok in spec.split(":"))
        count = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 12) for i in range(count)]
    return [float(tok) for tok in spec.split(",") if tok]


def _parse_horizons(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in spec.split(",") if tok]


def _max_workers(requested: int) -> int:
    cap = os.environ.get("LMIH_THREADS")
    cap = int(cap) if cap else os.cpu_count() or 1
    if requested <= 0:
        requested = cap
    return max(1, min(requested, cap))


def _load(path: str) -> model.Problem:
    problem = model.load_problem(path)
    model.validate_or_raise(problem)
    return problem


def cmd_synth(args) -> int:
    try:
        problem = _load(args.problem)
        if args.kind:
            problem = model.Problem(
                stages=problem.stages,
                x_bar=problem.x_bar,
                cone=problem.cone,
                kind=args.kind,
                Pf=problem.Pf,
            )
            model.validate_or_raise(problem)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        cert = synthesis.synth(problem, tail_scale=args.tail_scale)
    except synthesis.Infeasible as exc:
        print(f"infeasible: phase-I margin {exc.margin:.3e}")
        return EXIT_INFEASIBLE
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = synthesis.verify_certificate(problem, cert)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fp:
            json.dump(cert.to_dict(), fp, indent=1)
    print(f"feasible: cost bound {cert.bound:.9g}")
    print(f"  phase-I margin    {cert.feasibility_margin:.3e}")
    print(
        "  recovered margins "
        f"decrease {report.cost:.3e}, initial {report.initial:.3e}, "
        f"terminal {report.terminal:.3e}, peak {report.constraint:.3e}"
    )
    return EXIT_OK


def _classify_point(task) -> tuple[int, str]:
    index, gamma, eps2, horizon, point, tail_scale = task
    problem = model.build_example(gamma, eps2, horizon=horizon, x_bar=point)
    try:
        ok, _ = synthesis.classify(problem, tail_scale=tail_scale)
        return index, ("feasible" if ok else "infeasible")
    except Exception:
        return index, "failure"


def cmd_sweep(args) -> int:
    gammas = _parse_range(args.gammas)
    horizons = _parse_horizons(args.horizons)
    points = oracle.grid(args.grid_lo, args.grid_hi, args.grid)
    workers = _max_workers(args.jobs)
    rows = []
    for gamma in gammas:
        base = model.build_example(gamma, args.eps2)
        feas = oracle.feasible_set(base)
        members = [pt for pt in points if oracle.contains(feas, pt)]
        for horizon in horizons:
            tasks = [
                (i, gamma, args.eps2, horizon, tuple(pt), args.tail_scale)
                for i, pt in enumerate(members)
            ]
            if workers > 1 and len(tasks) > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    results = dict(pool.map(_classify_point, tasks))
            else:
                results = dict(map(_classify_point, tasks))
            outcomes = [results[i] for i in range(len(tasks))]
            certified = outcomes.count("feasible")
            failures = outcomes.count("failure")
            frac = certified / len(members) if members else 0.0
            rows.append((gamma, horizon, certified, len(members), frac, failures))
            print(
                f"gamma={gamma:.2f} N={horizon} certified={certified}/{len(members)} "
                f"fraction={frac:.6f}" + (f" failures={failures}" if failures else "")
            )
    with open(args.out, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["gamma", "N", "certified_count", "oracle_count", "fraction", "solver_failures"])
        for gamma, horizon, certified, total, frac, failures in rows:
            writer.writerow([gamma, horizon, certified, total, f"{frac:.15g}", failures])
    return EXIT_OK


def cmd_mpc(args) -> int:
    try:
        problem = _load(args.problem)
        x0 = np.array([float(tok) for tok in args.x0.split(",")])
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    dist = simulate.sample_disturbances(problem.cone, args.steps, mode=args.mode, seed=args.seed)
    try:
        log = mpc.run_closed_loop(problem, x0, dist, args.steps, tail_scale=args.tail_scale)
    except synthesis.Infeasible as exc:
        print(f"infeasible at step {exc.step}: margin {exc.margin:.3e}")
        return EXIT_INFEASIBLE
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    mpc.log_to_csv(log, args.out)
    print(
        f"ran {log.steps} steps: nu_0={log.nu[0]:.6g}, total cost {log.total_cost():.6g}, "
        f"max v'v {float(log.max_vv.max()):.6g}"
    )
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        problem = _load(args.problem)
        feas = oracle.feasible_set(problem)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    points = oracle.grid(args.grid_lo, args.grid_hi, args.grid, dim=problem.n)
    members = [pt.tolist() for pt in points if oracle.contains(feas, pt)]
    payload = feas.to_dict()
    payload["grid"] = {"lo": args.grid_lo, "hi": args.grid_hi, "count": args.grid}
    payload["members"] = members
    payload["member_count"] = len(members)
    with open(args.out, "w", encoding="utf-8") as fp:
        json.dump(payload, fp, indent=1)
    print(f"feasible set: {feas.num_rows} rows, {len(members)} grid members")
    return EXIT_OK


def cmd_example(args) -> int:
    problem = model.build_example(
        args.gamma, args.eps2, horizon=args.horizon, x_bar=tuple(float(t) for t in args.x0.split(","))
    )
    model.save_problem(problem, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmih",
        description="Robust time-varying state-feedback synthesis via LMI relaxations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="solve one synthesis problem from JSON")
    p.add_argument("problem")
    p.add_argument("--kind", choices=model.KINDS, default=None, help="override the problem kind")
    p.add_argument("--out", default=None, help="certificate JSON output path")
    p.add_argument("--tail-scale", choices=("identity", "nu"), default="identity")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="grid feasibility sweep on the benchmark example")
    p.add_argument("--gammas", default="0.05:0.45:0.05")
    p.add_argument("--horizons", default="0..4")
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--grid-lo", type=float, default=-7.9)
    p.add_argument("--grid-hi", type=float, default=7.9)
    p.add_argument("--eps2", type=float, default=0.1)
    p.add_argument("--out", default="fractions.csv")
    p.add_argument("--jobs", type=int, default=0, help="0 = all cores (capped by LMIH_THREADS)")
    p.add_argument("--tail-scale", choices=("identity", "nu"), default="identity")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("mpc", help="closed-loop receding-horizon run")
    p.add_argument("problem")
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=(simulate.UNIFORM, simulate.VERTICES), default=simulate.UNIFORM)
    p.add_argument("--out", default="mpc_log.csv")
    p.add_argument("--tail-scale", choices=("identity", "nu"), default="identity")
    p.set_defaults(func=cmd_mpc)

    p = sub.add_parser("oracle", help="exact robust controllable set and grid membership")
    p.add_argument("problem")
    p.add_argument("--out", default="polytope.json")
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--grid-lo", type=float, default=-7.9)
    p.add_argument("--grid-hi", type=float, default=7.9)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("example", help="write the benchmark problem as JSON")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--eps2", type=float, default=0.1)
    p.add_argument("--horizon", type=int, default=0)
    p.add_argument("--x0", default="0,0")
    p.add_argument("--out", default="problem.json")
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
