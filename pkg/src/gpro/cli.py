"""``gpro`` command line.

Exit codes: 0 ok, 2 counterexample found, 3 invariant violation (including
an invalid input instance).  ``GPRO_WORKERS`` sets the worker count.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .generators import make_instance
from .model import (
    default_policy,
    instance_to_dict,
    load_instance,
    load_policy,
    policy_to_dict,
    save_instance,
    validate,
)
from .oracle import brute_force_optimum
from .pri import NumericalFaultError, solve
from .reductions import gpro_to_ssp, reduce_ssp
from .ssp import load_ssp, save_ssp, ssp_to_dict


def _emit(obj, out=None):
    text = json.dumps(obj, indent=1)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_validate(args) -> int:
    inst = load_instance(args.instance)
    problems = validate(inst)
    _emit({"valid": not problems, "violations": [vars(v) for v in problems]})
    return bench.EXIT_INVARIANT if problems else bench.EXIT_OK


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    if validate(inst):
        return cmd_validate(args)
    start = load_policy(args.policy) if args.policy else default_policy(inst)
    try:
        trace = solve(inst, start, sense=args.sense, ties=args.ties)
    except NumericalFaultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return bench.EXIT_INVARIANT
    report = trace.to_dict(inst)
    report.update(
        {
            "value": trace.value(inst),
            "policy": policy_to_dict(trace.policy),
            "improvements": trace.improvements,
            "evaluations": trace.iteration_count,
        }
    )
    _emit(report, args.out)
    return bench.EXIT_OK if trace.converged else bench.EXIT_INVARIANT


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    if validate(inst):
        return cmd_validate(args)
    res = brute_force_optimum(inst, sense=args.sense, cap=args.cap)
    _emit(
        {
            "sense": args.sense,
            "value": res.value,
            "evaluated": res.evaluated,
            "optimal": [{"active": sorted(p.active), "bits": p.bits(inst)} for p in res.policies],
        },
        args.out,
    )
    return bench.EXIT_OK


def cmd_reduce(args) -> int:
    if args.direction == "to-ssp":
        inst = load_instance(args.input)
        if validate(inst):
            return cmd_validate(argparse.Namespace(instance=args.input))
        ssp, rmap = gpro_to_ssp(inst)
        save_ssp(ssp, args.out) if args.out else print(json.dumps(ssp_to_dict(ssp), indent=1))
    else:
        ssp = load_ssp(args.input)
        inst, rmap = reduce_ssp(ssp)
        save_instance(inst, args.out) if args.out else print(json.dumps(instance_to_dict(inst), indent=1))
    if args.map:
        Path(args.map).write_text(json.dumps(rmap.to_dict(), indent=1) + "\n")
    return bench.EXIT_OK


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .generators import instance_rng

    for i in range(args.count):
        inst = make_instance(
            args.family, args.n, args.f, instance_rng(args.seed, i), p=args.p, exponent=args.exponent, mode=args.mode
        )
        save_instance(inst, out / f"instance_{i:06d}.json")
    return bench.EXIT_OK


def _workers(args) -> int:
    return args.workers or bench.worker_count()


def cmd_sweep(args) -> int:
    overrides = {"master_seed": args.master_seed, "repetitions": args.repetitions, "family": args.family}
    if args.f_min is not None or args.f_max is not None:
        base = bench.load_config(bench.SweepConfig, args.config, {})
        lo = args.f_min if args.f_min is not None else min(base.f_values)
        hi = args.f_max if args.f_max is not None else max(base.f_values)
        overrides["f_values"] = list(range(lo, hi + 1))
    cfg = bench.load_config(bench.SweepConfig, args.config, overrides)
    rows = bench.sweep_f(cfg, _workers(args))
    text = bench.rows_to_csv(rows, bench.SWEEP_COLUMNS)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    flagged = [r["f"] for r in rows if r["over_f"]]
    if flagged:
        print(f"runs above f at f={flagged}", file=sys.stderr)
        return bench.EXIT_COUNTEREXAMPLE
    return bench.EXIT_OK


def cmd_hunt(args) -> int:
    overrides = {"budget": args.budget, "master_seed": args.master_seed, "checkpoint_every": args.checkpoint_every}
    if args.inject:
        overrides["inject"] = args.inject
    cfg = bench.load_config(bench.HuntConfig, args.config, overrides)
    res = bench.hunt(cfg, Path(args.out), _workers(args), resume=not args.no_resume)
    print(
        json.dumps(
            {
                "status": res.status,
                "processed": res.processed,
                "failures": res.failures,
                "histogram": {str(k): v for k, v in res.histogram.items()},
                "barrier_hits": len(res.barrier_hits),
                "counterexamples": res.counterexamples,
            }
        )
    )
    return res.exit_code


def cmd_theorems(args) -> int:
    overrides = {
        "master_seed": args.master_seed,
        "fbound_count": args.fbound_count,
        "pivi_count": args.pivi_count,
        "run": args.run.split(",") if args.run else None,
    }
    cfg = bench.load_config(bench.TheoremConfig, args.config, overrides)
    rep = bench.theorem_checks(cfg, Path(args.out) if args.out else None, _workers(args))
    print(json.dumps({"fbound": rep.fbound, "pivi": rep.pivi, "violations": len(rep.violations)}))
    return rep.exit_code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpro", description="PageRank optimization by PageRank Iteration")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("instance")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("solve", help="run PRI on an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--policy", help="starting policy JSON (default: all free edges active)")
    p.add_argument("--sense", choices=["max", "min"], default="max")
    p.add_argument("--ties", choices=["keep", "activate"], default="keep")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("oracle", help="brute-force optimum by enumeration")
    p.add_argument("--instance", required=True)
    p.add_argument("--sense", choices=["max", "min"], default="max")
    p.add_argument("--cap", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("reduce", help="translate between GPRO and SSP")
    p.add_argument("direction", choices=["to-ssp", "from-ssp"])
    p.add_argument("input")
    p.add_argument("--out")
    p.add_argument("--map", help="where to write the reduction map JSON")
    p.set_defaults(fn=cmd_reduce)

    p = sub.add_parser("gen", help="write random instances")
    p.add_argument("--family", choices=["er", "powerlaw"], default="er")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--f", type=int, required=True)
    p.add_argument("--p", type=float, default=0.3)
    p.add_argument("--exponent", type=float, default=2.5)
    p.add_argument("--mode", default="uniform")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    for name, fn in (("sweep-f", cmd_sweep), ("hunt", cmd_hunt), ("theorems", cmd_theorems)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config; flags override its keys")
        p.add_argument("--master-seed", type=int)
        p.add_argument("--workers", type=int, help="overrides GPRO_WORKERS")
        p.set_defaults(fn=fn)
        if name == "sweep-f":
            p.add_argument("--family", choices=["er", "powerlaw"])
            p.add_argument("--f-min", type=int)
            p.add_argument("--f-max", type=int)
            p.add_argument("--repetitions", type=int)
            p.add_argument("--out", help="CSV path (default stdout)")
        elif name == "hunt":
            p.add_argument("--budget", type=int)
            p.add_argument("--checkpoint-every", type=int)
            p.add_argument("--inject", nargs="*", help="instance files run before the random ones")
            p.add_argument("--no-resume", action="store_true")
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--run", help="comma list of fbound,pivi")
            p.add_argument("--fbound-count", type=int)
            p.add_argument("--pivi-count", type=int)
            p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
