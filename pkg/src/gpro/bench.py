"""Experiment harness: iteration sweeps, conjecture hunts, theorem checks.

Runs are reproducible from ``(config, master_seed)``: instance ``i`` is
built from ``instance_rng(master_seed, i)`` and results are aggregated in
index order, whatever the number of workers.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from . import tolerances as tol
from .generators import InfeasibleError, instance_rng, make_instance
from .hitting import hitting_times
from .model import GproInstance, canonical_pro, default_policy, instance_to_dict, load_instance
from .oracle import brute_force_optimum
from .pri import PriTrace, final_decisions, random_policy, solve
from .reductions import gpro_to_ssp
from .ssp import bellman_residual, instance_stats, policy_iteration, pivi_shape, value_iteration, vi_error_bound

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_COUNTEREXAMPLE = 2
EXIT_INVARIANT = 3


def worker_count() -> int:
    return max(1, int(os.environ.get("GPRO_WORKERS", "1")))


def _map(fn: Callable, items: Iterable, workers: int):
    if workers <= 1:
        yield from map(fn, items)
        return
    with Pool(workers) as pool:
        yield from pool.imap(fn, items, chunksize=64)


def _draw_start(instance: GproInstance, start: str, rng):
    if start == "all_active":
        return default_policy(instance)
    if start == "random":
        return random_policy(instance, rng)
    raise ValueError(f"unknown start {start!r}")


def _uniform_int(rng, lo_hi) -> int:
    lo, hi = lo_hi
    return int(rng.integers(lo, hi + 1))


def _uniform(rng, lo_hi) -> float:
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


# ---------------------------------------------------------------------------
# sweep over the number of free edges


@dataclass
class SweepConfig:
    family: str = "powerlaw"
    f_values: list = field(default_factory=lambda: list(range(3, 31)))
    repetitions: int = 5
    n_factor: float = 3.0
    n_min: int = 10
    p: float = 0.3
    exponent: float = 2.5
    d_min: int = 1
    mode: str = "uniform"
    start: str = "all_active"
    master_seed: int = 0


SWEEP_COLUMNS = ["f", "mean_iters", "max_iters", "count", "over_f", "errors", "mean_evaluations", "max_evaluations"]


def _sweep_one(args):
    cfg, f, r = args
    rng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed, spawn_key=(f, r)))
    n = max(cfg.n_min, math.ceil(cfg.n_factor * f))
    try:
        inst = make_instance(cfg.family, n, f, rng, p=cfg.p, exponent=cfg.exponent, mode=cfg.mode, d_min=cfg.d_min)
        trace = solve(inst, _draw_start(inst, cfg.start, rng))
    except Exception as exc:  # recorded per row, the sweep goes on
        return f, None, f"{type(exc).__name__}: {exc}"
    if not trace.converged:
        return f, None, "guard tripped"
    return f, (trace.improvements, trace.iteration_count), None


def sweep_f(cfg: SweepConfig, workers: int = 1) -> list[dict]:
    """One row per ``f``: mean and max PRI iteration counts over the repetitions."""
    jobs = [(cfg, f, r) for f in cfg.f_values for r in range(cfg.repetitions)]
    per_f: dict[int, dict] = {f: {"runs": [], "errors": 0} for f in cfg.f_values}
    for f, res, err in _map(_sweep_one, jobs, workers):
        if err:
            log.warning("f=%d: %s", f, err)
            per_f[f]["errors"] += 1
        else:
            per_f[f]["runs"].append(res)
    rows = []
    for f in cfg.f_values:
        runs = per_f[f]["runs"]
        impr = [a for a, _ in runs]
        evals = [b for _, b in runs]
        rows.append(
            {
                "f": f,
                "mean_iters": float(np.mean(impr)) if impr else math.nan,
                "max_iters": max(impr) if impr else -1,
                "count": len(runs),
                "over_f": sum(1 for x in impr if x > f),
                "errors": per_f[f]["errors"],
                "mean_evaluations": float(np.mean(evals)) if evals else math.nan,
                "max_evaluations": max(evals) if evals else -1,
            }
        )
    return rows


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in columns})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# conjecture hunt


@dataclass
class HuntConfig:
    families: list = field(default_factory=lambda: ["er", "powerlaw"])
    n_range: list = field(default_factory=lambda: [5, 15])
    f_range: list = field(default_factory=lambda: [3, 10])
    p_range: list = field(default_factory=lambda: [0.2, 0.8])
    exponent_range: list = field(default_factory=lambda: [2.1, 3.0])
    mode: str = "uniform"
    start: str = "all_active"
    budget: int = 1000
    master_seed: int = 0
    checkpoint_every: int = 10_000
    inject: list = field(default_factory=list)


@dataclass
class HuntResult:
    histogram: dict
    processed: int
    failures: int
    barrier_hits: list
    counterexamples: list

    @property
    def status(self) -> str:
        return "counterexample" if self.counterexamples else "no-counterexample"

    @property
    def exit_code(self) -> int:
        return EXIT_COUNTEREXAMPLE if self.counterexamples else EXIT_OK


def _config_hash(cfg) -> str:
    return hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()[:16]


def _hunt_instance(cfg: HuntConfig, index: int) -> GproInstance:
    rng = instance_rng(cfg.master_seed, index)
    family = cfg.families[index % len(cfg.families)]
    n = _uniform_int(rng, cfg.n_range)
    f = _uniform_int(rng, cfg.f_range)
    return make_instance(
        family,
        n,
        f,
        rng,
        p=_uniform(rng, cfg.p_range),
        exponent=_uniform(rng, cfg.exponent_range),
        mode=cfg.mode,
    ), rng


def _classify(instance: GproInstance, trace: PriTrace) -> Optional[str]:
    if not trace.converged or trace.improvements > instance.f:
        return "counterexample"
    if trace.improvements == instance.f:
        return "barrier"
    return None


def _hunt_one(args):
    cfg, index = args
    try:
        inst, rng = _hunt_instance(cfg, index)
        trace = solve(inst, _draw_start(inst, cfg.start, rng))
    except Exception as exc:
        return index, None, None, f"{type(exc).__name__}: {exc}"
    kind = _classify(inst, trace)
    payload = None
    if kind:
        payload = {
            "kind": kind,
            "index": index,
            "seed": {"master": cfg.master_seed, "spawn_key": [index]},
            "config": asdict(cfg),
            "instance": instance_to_dict(inst),
            "trace": trace.to_dict(inst),
        }
    return index, trace.improvements, payload, None


def _archive(out: Path, name: str, payload: dict) -> str:
    d = out / "archive"
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"{name}_{payload['kind']}.json"
    path.write_text(json.dumps(payload, indent=1))
    return str(path)


def hunt(cfg: HuntConfig, out: Optional[Path] = None, workers: int = 1, resume: bool = True) -> HuntResult:
    """Run PRI over ``cfg.budget`` random instances and archive every barrier hit.

    A barrier hit takes exactly ``f`` improving rounds; more than ``f`` (or a
    tripped guard) is archived as a counterexample.
    """
    out = Path(out) if out else None
    hist: dict[int, int] = {}
    barrier: list = []
    counter: list = []
    failures = 0
    start = 0
    chash = _config_hash(cfg)
    ckpt = out / "checkpoint.json" if out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    if ckpt and resume and ckpt.exists():
        state = json.loads(ckpt.read_text())
        if state.get("config_hash") == chash:
            start = state["next"]
            hist = {int(k): v for k, v in state["histogram"].items()}
            barrier, counter, failures = state["barrier_hits"], state["counterexamples"], state["failures"]
            log.info("resuming hunt at instance %d", start)

    if start == 0:
        for k, path in enumerate(cfg.inject):
            inst = load_instance(path)
            trace = solve(inst)
            kind = _classify(inst, trace)
            if kind:
                payload = {
                    "kind": kind,
                    "index": f"inject{k}",
                    "source": str(path),
                    "config": asdict(cfg),
                    "instance": instance_to_dict(inst),
                    "trace": trace.to_dict(inst),
                }
                ref = _archive(out, f"inject{k}", payload) if out else payload["index"]
                (counter if kind == "counterexample" else barrier).append(ref)

    def checkpoint(nxt: int):
        if ckpt:
            ckpt.write_text(
                json.dumps(
                    {
                        "config_hash": chash,
                        "next": nxt,
                        "histogram": {str(k): v for k, v in sorted(hist.items())},
                        "barrier_hits": barrier,
                        "counterexamples": counter,
                        "failures": failures,
                    }
                )
            )

    jobs = ((cfg, i) for i in range(start, cfg.budget))
    done = start
    for index, iters, payload, err in _map(_hunt_one, jobs, workers):
        done = index + 1
        if err:
            failures += 1
            log.debug("instance %d failed: %s", index, err)
        else:
            hist[iters] = hist.get(iters, 0) + 1
            if payload:
                ref = _archive(out, f"{index:09d}", payload) if out else index
                (counter if payload["kind"] == "counterexample" else barrier).append(ref)
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            checkpoint(done)
    checkpoint(max(done, start))
    result = HuntResult(dict(sorted(hist.items())), sum(hist.values()), failures, barrier, counter)
    if out:
        (out / "summary.json").write_text(
            json.dumps(
                {
                    "status": result.status,
                    "processed": result.processed,
                    "failures": result.failures,
                    "histogram": {str(k): v for k, v in result.histogram.items()},
                    "barrier_hits": barrier,
                    "counterexamples": counter,
                    "config": asdict(cfg),
                },
                indent=1,
            )
        )
        (out / "histogram.csv").write_text(
            rows_to_csv(
                [{"iterations": k, "count": v} for k, v in result.histogram.items()], ["iterations", "count"]
            )
        )
    return result


# ---------------------------------------------------------------------------
# theorem checks


@dataclass
class TheoremConfig:
    fbound_count: int = 10_000
    fbound_modes: list = field(default_factory=lambda: ["single_source", "source_vs", "source_vs_and_w"])
    fbound_n_range: list = field(default_factory=lambda: [5, 12])
    fbound_f_range: list = field(default_factory=lambda: [1, 8])
    fbound_p_range: list = field(default_factory=lambda: [0.4, 1.0])
    random_starts: int = 10
    oracle_check: bool = True
    pivi_count: int = 1000
    zapping: list = field(default_factory=lambda: [0.05, 0.15, 0.3])
    pivi_n_range: list = field(default_factory=lambda: [5, 20])
    pivi_f_range: list = field(default_factory=lambda: [1, 6])
    pivi_p_range: list = field(default_factory=lambda: [0.2, 0.6])
    master_seed: int = 0
    run: list = field(default_factory=lambda: ["fbound", "pivi"])


def fbound_instance(cfg: TheoremConfig, index: int):
    rng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed, spawn_key=(3, index)))
    mode = cfg.fbound_modes[index % len(cfg.fbound_modes)]
    lo = 2 if mode == "source_vs_and_w" else 1
    for _ in range(1000):
        f = _uniform_int(rng, [max(lo, cfg.fbound_f_range[0]), cfg.fbound_f_range[1]])
        n = _uniform_int(rng, [max(cfg.fbound_n_range[0], f + 2), cfg.fbound_n_range[1]])
        try:
            inst = make_instance("er", n, f, rng, p=_uniform(rng, cfg.fbound_p_range), mode=mode, max_tries=5)
        except InfeasibleError:
            continue
        return mode, inst, rng
    raise InfeasibleError(f"f-bound instance {index} not constructible")


def _single_source(instance: GproInstance) -> Optional[int]:
    srcs = {instance.edges[k].src for k in instance.free_edges} - {instance.v_s}
    return srcs.pop() if len(srcs) == 1 else None


def check_fbound_run(instance: GproInstance, trace: PriTrace) -> list[str]:
    """Problems with one PRI run on an instance whose free edges leave ``v_s`` and/or one node ``w``."""
    problems = []
    f = instance.f
    if not trace.converged:
        problems.append("guard tripped")
    if trace.improvements > f:
        problems.append(f"{trace.improvements} improving rounds > f={f}")
    rounds = final_decisions(trace)
    if any(c < 1 for c in rounds):
        problems.append(f"round without a final decision: {rounds}")
    w = _single_source(instance)
    if w is not None:
        only_w = all(instance.edges[k].src == w for k in instance.free_edges)
        for a, b in zip(trace.steps, trace.steps[1:]):
            d = a.phi - b.phi
            scale = tol.COMPARE * (1 + abs(a.phi[w]))
            others = np.arange(instance.n) != w
            if only_w:
                bad = np.flatnonzero(others & (d > d[w] + scale))
            else:
                # v_s is fed by w but not the other way round
                others[instance.v_s] = False
                bad = np.flatnonzero(others & (d > d[w] + scale))
            if bad.size:
                problems.append(f"hitting time of {bad.tolist()} fell more than that of w={w}")
                break
    return problems


def check_threshold_rule(instance: GproInstance, trace: PriTrace) -> list[str]:
    """With every free edge on ``v_s``: active exactly when ``phi_vs >= phi_u + K`` at the fixpoint."""
    phi = trace.phi
    out = []
    for k in instance.free_edges:
        e = instance.edges[k]
        lhs, rhs = phi[instance.v_s], e.cost + phi[e.dst]
        if tol.close(lhs, rhs):
            continue
        if (lhs > rhs) != (k in trace.policy.active):
            out.append(f"edge {k} violates the threshold rule")
    return out


def _fbound_one(args):
    cfg, index = args
    try:
        mode, inst, rng = fbound_instance(cfg, index)
    except InfeasibleError as exc:
        return index, None, [str(exc)], None
    starts = [default_policy(inst)] + [random_policy(inst, rng) for _ in range(cfg.random_starts)]
    problems: list[str] = []
    counts = []
    for s in starts:
        trace = solve(inst, s)
        counts.append(trace.improvements)
        problems += check_fbound_run(inst, trace)
        if mode == "source_vs":
            problems += check_threshold_rule(inst, trace)
    if cfg.oracle_check and mode == "source_vs":
        best = brute_force_optimum(inst)
        if not tol.close(best.value, float(hitting_times(inst, trace.policy)[inst.v_s])):
            problems.append("final value differs from the oracle optimum")
    payload = None
    if problems:
        payload = {"kind": "fbound-violation", "index": index, "mode": mode, "problems": problems,
                   "instance": instance_to_dict(inst)}
    return index, (mode, inst.f, counts), problems, payload


def _pivi_one(args):
    cfg, index = args
    rng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed, spawn_key=(2, index)))
    c = cfg.zapping[index % len(cfg.zapping)]
    n = _uniform_int(rng, cfg.pivi_n_range)
    f = _uniform_int(rng, cfg.pivi_f_range)
    base = make_instance("er", n, f, rng, p=_uniform(rng, cfg.pivi_p_range))
    inst = replace(canonical_pro(base), zapping=c)
    ssp, rmap = gpro_to_ssp(inst)
    pi = policy_iteration(ssp, rmap.forward(default_policy(inst)))
    vi = value_iteration(ssp, record=True)
    pri = solve(inst)
    stats = instance_stats(ssp)
    shape = pivi_shape(inst.n, stats["delta"], c)
    problems = []
    if pi.iterations > vi.iterations:
        problems.append(f"PI took {pi.iterations} > VI {vi.iterations}")
    if not vi.converged:
        problems.append("VI hit its iteration cap")
    scale = 1 + np.abs(pi.values).max()
    if bellman_residual(ssp, pi.values) > tol.RESIDUAL * scale:
        problems.append("PI values are not a Bellman fixpoint")
    if np.abs(pi.values - vi.values).max() > 10 * vi_error_bound(vi) + tol.RESIDUAL * scale:
        problems.append("PI values lie outside the VI error bound")
    if not tol.close(pi.values[inst.v_s], pri.value(inst)):
        problems.append("PRI and PI optima disagree")
    row = {
        "index": index,
        "n": inst.n,
        "f": inst.f,
        "c": c,
        "ssp_states": ssp.n,
        "delta": stats["delta"],
        "eta": stats["eta"],
        "pi_iters": pi.iterations,
        "vi_iters": vi.iterations,
        "pri_iters": pri.iteration_count,
        "shape": shape,
        "pi_over_shape": pi.iterations / shape,
    }
    return row, problems


@dataclass
class TheoremReport:
    fbound: dict = field(default_factory=dict)
    pivi: dict = field(default_factory=dict)
    pivi_rows: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_INVARIANT if self.violations else EXIT_OK


def theorem_checks(cfg: TheoremConfig, out: Optional[Path] = None, workers: int = 1) -> TheoremReport:
    rep = TheoremReport()
    out = Path(out) if out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    if "fbound" in cfg.run:
        per_mode: dict[str, dict] = {}
        skipped = 0
        for index, res, problems, payload in _map(_fbound_one, ((cfg, i) for i in range(cfg.fbound_count)), workers):
            if res is None:
                skipped += 1
                continue
            mode, f, counts = res
            m = per_mode.setdefault(mode, {"instances": 0, "runs": 0, "within_f": 0, "max_iters": 0})
            m["instances"] += 1
            m["runs"] += len(counts)
            m["within_f"] += sum(1 for c in counts if c <= f)
            m["max_iters"] = max(m["max_iters"], max(counts))
            if payload:
                rep.violations.append({"check": "fbound", "index": index, "problems": problems})
                if out:
                    _archive(out, f"t3_{index:07d}", payload)
        rep.fbound = {"per_mode": per_mode, "skipped": skipped}
    if "pivi" in cfg.run:
        rows = []
        for row, problems in _map(_pivi_one, ((cfg, i) for i in range(cfg.pivi_count)), workers):
            rows.append(row)
            if problems:
                rep.violations.append({"check": "pivi", "index": row["index"], "problems": problems})
        rep.pivi_rows = rows
        rep.pivi = {
            "pairs": len(rows),
            "pi_le_vi": sum(1 for r in rows if r["pi_iters"] <= r["vi_iters"]),
            "max_pi_iters": max((r["pi_iters"] for r in rows), default=0),
            "max_pi_over_shape": max((r["pi_over_shape"] for r in rows), default=0.0),
            "pi_above_shape": sum(1 for r in rows if r["pi_over_shape"] > 1),
        }
        if out:
            cols = list(rows[0]) if rows else []
            (out / "pivi.csv").write_text(rows_to_csv(rows, cols))
    if out:
        (out / "theorems.json").write_text(
            json.dumps({"fbound": rep.fbound, "pivi": rep.pivi, "violations": rep.violations}, indent=1)
        )
    return rep


def load_config(cls, path: Optional[str], overrides: dict):
    data = json.loads(Path(path).read_text()) if path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return cls(**data)
