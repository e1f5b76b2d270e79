"""Seeded random instance families.

Every generator is a pure function of its parameters and seed.  Sweeps
derive one seed per instance from a master seed with
``numpy.random.SeedSequence(master, spawn_key=(index,))`` so any instance
of a run can be regenerated on its own.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Optional, Union

import numpy as np

from .model import Edge, GproInstance, SupportGraph, repair_dangling, split_target, validate
from .ssp import SspInstance

Seed = Union[int, np.random.Generator, np.random.SeedSequence, None]

FREE_MODES = ("uniform", "single_source", "source_vs", "source_vs_and_w")


class InfeasibleError(ValueError):
    pass


def instance_rng(master: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(index,)))


def _rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def erdos_renyi(n: int, p: float, seed: Seed = None, self_loops: bool = True, repair: str = "components") -> SupportGraph:
    """Directed G(n, p), then dangling repair."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    rng = _rng(seed)
    present = rng.random((n, n)) < p
    if not self_loops:
        np.fill_diagonal(present, False)
    src, dst = np.nonzero(present)
    g = SupportGraph(n, tuple(Edge(int(a), int(b)) for a, b in zip(src, dst)))
    return repair_dangling(g, repair) if repair else g


def power_law_degrees(n: int, exponent: float, rng: np.random.Generator, d_min: int = 1, d_max: Optional[int] = None) -> np.ndarray:
    """``n`` i.i.d. draws from ``P(k) ~ k**-exponent`` on ``[d_min, d_max]``."""
    d_max = n - 1 if d_max is None else d_max
    ks = np.arange(d_min, d_max + 1)
    w = ks.astype(float) ** -exponent
    return rng.choice(ks, size=n, p=w / w.sum())


def power_law(
    n: int,
    exponent: float,
    seed: Seed = None,
    d_min: int = 1,
    repair: str = "components",
    max_retries: int = 100,
) -> SupportGraph:
    """Directed configuration-style graph with power-law out- and in-degrees.

    Out-degrees are drawn from the power law; each out-stub picks its head in
    proportion to an independent power-law in-degree sequence.  Self-loops are
    dropped and repeated edges collapsed.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = _rng(seed)
    for _ in range(max_retries):
        dout = power_law_degrees(n, exponent, rng, d_min)
        din = power_law_degrees(n, exponent, rng, d_min).astype(float)
        srcs = np.repeat(np.arange(n), dout)
        dsts = rng.choice(n, size=len(srcs), p=din / din.sum())
        keep = srcs != dsts
        pairs = sorted(set(zip(srcs[keep].tolist(), dsts[keep].tolist())))
        if len(pairs) < n:
            continue
        g = SupportGraph(n, tuple(Edge(a, b) for a, b in pairs))
        return repair_dangling(g, repair) if repair else g
    raise InfeasibleError(f"no usable power-law graph after {max_retries} draws")


def _mark_free(instance: GproInstance, chosen) -> GproInstance:
    chosen = set(int(k) for k in chosen)
    edges = tuple(e._replace(free=True) if k in chosen else e for k, e in enumerate(instance.edges))
    return replace(instance, edges=edges)


def _fixed_out(instance: GproInstance, node: int) -> list[int]:
    return [k for k in instance.out_edges[node] if not instance.edges[k].free]


def sample_free_edges(
    instance: GproInstance,
    f: int,
    mode: str = "uniform",
    seed: Seed = None,
    w: Optional[int] = None,
    max_tries: int = 100,
) -> GproInstance:
    """Mark ``f`` fixed edges free according to ``mode``.

    ``single_source``/``source_vs``/``source_vs_and_w`` put every free edge on
    ``w``, on ``v_s`` or on both; the chosen node always keeps one fixed edge,
    so its free edges stay independently switchable.  Samples whose result
    fails validation are redrawn.
    """
    if mode not in FREE_MODES:
        raise ValueError(f"mode must be one of {FREE_MODES}")
    rng = _rng(seed)
    if f == 0:
        if validate(instance):
            raise InfeasibleError("instance invalid before marking free edges")
        return instance
    vs, vt = instance.v_s, instance.v_t
    others = [i for i in range(instance.n) if i not in (vs, vt)]

    def pick_w(need: int) -> int:
        if w is not None:
            if len(_fixed_out(instance, w)) < need + 1 or w in (vs, vt):
                raise InfeasibleError(f"node {w} cannot carry {need} free edges")
            return w
        cand = [i for i in others if len(_fixed_out(instance, i)) >= need + 1]
        if not cand:
            raise InfeasibleError(f"no node can carry {need} free edges")
        return int(rng.choice(cand))

    for _ in range(max_tries):
        if mode == "uniform":
            pool = [k for k, e in enumerate(instance.edges) if not e.free and e.src != vt]
            if len(pool) < f:
                raise InfeasibleError(f"only {len(pool)} eligible edges for f={f}")
            chosen = rng.choice(pool, size=f, replace=False)
        elif mode == "single_source":
            node = pick_w(f)
            chosen = rng.choice(_fixed_out(instance, node), size=f, replace=False)
        elif mode == "source_vs":
            pool = _fixed_out(instance, vs)
            if len(pool) < f + 1:
                raise InfeasibleError(f"v_s has out-degree {len(pool)}, need {f + 1}")
            chosen = rng.choice(pool, size=f, replace=False)
        else:
            if f < 2:
                raise InfeasibleError("source_vs_and_w needs f >= 2")
            ps = _fixed_out(instance, vs)
            cand = [i for i in others if len(_fixed_out(instance, i)) >= 2]
            if w is not None:
                cand = [w] if w in cand else []
            lo = max(1, f - max((len(_fixed_out(instance, i)) - 1 for i in cand), default=0))
            hi = min(f - 1, len(ps) - 1)
            if not cand or lo > hi:
                raise InfeasibleError("v_s and w cannot carry the free edges")
            fs = int(rng.integers(lo, hi + 1))
            cand = [i for i in cand if len(_fixed_out(instance, i)) >= f - fs + 1]
            node = int(rng.choice(cand))
            chosen = list(rng.choice(ps, size=fs, replace=False)) + list(
                rng.choice(_fixed_out(instance, node), size=f - fs, replace=False)
            )
        out = _mark_free(instance, chosen)
        if not validate(out):
            return out
    raise InfeasibleError(f"no valid free-edge sample after {max_tries} tries")


def make_instance(
    family: str,
    n: int,
    f: int,
    seed: Seed = None,
    p: Optional[float] = None,
    exponent: float = 2.5,
    mode: str = "uniform",
    d_min: int = 1,
    max_tries: int = 100,
) -> GproInstance:
    """Random graph, random target split, then free-edge sampling.

    ``family`` is ``"er"`` (edge probability ``p``) or ``"powerlaw"``.
    ``n`` counts nodes of the support graph; the instance has ``n + 1``.
    """
    rng = _rng(seed)
    for _ in range(max_tries):
        if family == "er":
            g = erdos_renyi(n, p, rng)
        elif family == "powerlaw":
            g = power_law(n, exponent, rng, d_min=d_min)
        else:
            raise ValueError(f"unknown family {family!r}")
        v = int(rng.integers(n))
        try:
            inst, _ = split_target(g, v)
            return sample_free_edges(inst, f, mode, rng, max_tries=10)
        except (InfeasibleError, ValueError):
            continue
    raise InfeasibleError(f"could not build a {family} instance with n={n}, f={f}, mode={mode}")


def randomize_weights(instance: GproInstance, seed: Seed = None, low: float = 0.25, high: float = 4.0) -> GproInstance:
    """Random weights and costs (3 decimals) on every edge except the target loop."""
    rng = _rng(seed)
    edges = []
    for e in instance.edges:
        if e.src == instance.v_t:
            edges.append(e)
        else:
            edges.append(
                e._replace(
                    weight=round(float(rng.uniform(low, high)), 3),
                    cost=round(float(rng.uniform(low, high)), 3),
                )
            )
    return replace(instance, edges=tuple(edges))


def declare_pairs(instance: GproInstance) -> GproInstance:
    """Declare every two-edge forced-choice node an exclusivity pair."""
    pairs = tuple(g for g in instance.structure.groups if len(g) == 2)
    return replace(instance, exclusivity=pairs)


def random_ssp(
    n: int,
    seed: Seed = None,
    max_actions: int = 5,
    max_successors: int = 3,
    p_det: float = 0.3,
) -> SspInstance:
    """Random SSP on ``n`` states (the last is the target) where every policy is proper.

    Non-target states get a random rank; every action puts positive
    probability on some state of lower rank or on the target.
    """
    rng = _rng(seed)
    target = n - 1
    rank = np.empty(n, dtype=int)
    rank[target] = 0
    rank[:target] = rng.permutation(np.arange(1, n))
    actions = []
    for s in range(n):
        if s == target:
            actions.append([((target, 1.0, 0.0),)])
            continue
        lower = [t for t in range(n) if rank[t] < rank[s]]
        acts = []
        for _ in range(int(rng.integers(1, max_actions + 1))):
            anchor = int(rng.choice(lower))
            cost = round(float(rng.uniform(0.1, 5.0)), 2)
            if rng.random() < p_det:
                acts.append(((anchor, 1.0, cost),))
                continue
            k = int(rng.integers(1, max_successors))
            extra = rng.choice(n, size=k, replace=False).tolist()
            succ = [anchor] + [t for t in extra if t != anchor]
            # thousandths, each at least one, summing to exactly 1000
            probs = (1 + rng.multinomial(1000 - len(succ), rng.dirichlet(np.ones(len(succ))))) / 1000
            acts.append(
                tuple((t, float(q), round(float(rng.uniform(0.1, 5.0)), 2)) for t, q in zip(succ, probs))
            )
        actions.append(acts)
    return SspInstance(tuple(f"s{i}" for i in range(n - 1)) + ("tau",), target, actions)
