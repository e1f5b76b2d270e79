"""GPRO / PRO instances: construction, validation, normalization and JSON I/O.

An instance lives on the *split* graph: the target node of the original
support graph has already been replaced by a start node ``v_s`` (all of its
outgoing edges) and an absorbing target ``v_t`` (all of its incoming edges
plus a zero-cost self-loop).
"""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Optional

import numpy as np

log = logging.getLogger(__name__)

RESTART_MODES = ("all", "original", "no_target")


class Edge(NamedTuple):
    src: int
    dst: int
    weight: float = 1.0
    cost: float = 1.0
    free: bool = False


@dataclass(frozen=True)
class Violation:
    kind: str
    where: tuple
    message: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.where}: {self.message}"


class InvalidInstanceError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


@dataclass(frozen=True)
class SupportGraph:
    """A plain directed graph before the target split."""

    n: int
    edges: tuple[Edge, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.names:
            object.__setattr__(self, "names", tuple(str(i) for i in range(self.n)))
        object.__setattr__(self, "edges", tuple(Edge(*e) for e in self.edges))

    def out_degree(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for e in self.edges:
            deg[e.src] += 1
        return deg

    def in_degree(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for e in self.edges:
            deg[e.dst] += 1
        return deg


@dataclass(frozen=True)
class FreeStructure:
    """How the free edges of an instance are constrained.

    ``unconstrained`` edges may be switched independently.  Each entry of
    ``groups`` is the edge set of a node whose outgoing edges are all free;
    exactly one edge of a group is active under any feasible policy.
    Exclusivity pairs are groups of size two.
    """

    unconstrained: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class GproInstance:
    names: tuple[str, ...]
    v_s: int
    v_t: int
    edges: tuple[Edge, ...]
    exclusivity: tuple[tuple[int, int], ...] = ()
    zapping: Optional[float] = None
    restart: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "edges", tuple(Edge(*e) for e in self.edges))
        object.__setattr__(
            self, "exclusivity", tuple(tuple(sorted(p)) for p in self.exclusivity)
        )

    @property
    def n(self) -> int:
        return len(self.names)

    @cached_property
    def free_edges(self) -> tuple[int, ...]:
        return tuple(k for k, e in enumerate(self.edges) if e.free)

    @property
    def f(self) -> int:
        return len(self.free_edges)

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        src = np.array([e.src for e in self.edges], dtype=np.intp)
        dst = np.array([e.dst for e in self.edges], dtype=np.intp)
        out = {
            "src": src,
            "dst": dst,
            "weight": np.array([e.weight for e in self.edges], dtype=float),
            "cost": np.array([e.cost for e in self.edges], dtype=float),
            "free": np.array([e.free for e in self.edges], dtype=bool),
        }
        for a in out.values():
            a.setflags(write=False)
        return out

    @cached_property
    def out_edges(self) -> tuple[tuple[int, ...], ...]:
        lists: list[list[int]] = [[] for _ in range(self.n)]
        for k, e in enumerate(self.edges):
            if 0 <= e.src < self.n:
                lists[e.src].append(k)
        return tuple(tuple(x) for x in lists)

    @cached_property
    def structure(self) -> FreeStructure:
        unconstrained: list[int] = []
        groups: list[tuple[int, ...]] = []
        for i, out in enumerate(self.out_edges):
            free = [k for k in out if self.edges[k].free]
            if not free:
                continue
            if len(free) == len(out):
                groups.append(tuple(free))
            else:
                unconstrained.extend(free)
        return FreeStructure(tuple(sorted(unconstrained)), tuple(groups))

    def edge_index(self, src: int, dst: int) -> int:
        for k in self.out_edges[src]:
            if self.edges[k].dst == dst:
                return k
        raise KeyError((src, dst))


@dataclass(frozen=True)
class Policy:
    """Set of activated free edges (edge indices into ``instance.edges``)."""

    active: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "active", frozenset(int(k) for k in self.active))

    def bits(self, instance: GproInstance) -> str:
        return "".join("1" if k in self.active else "0" for k in instance.free_edges)

    @classmethod
    def from_bits(cls, instance: GproInstance, bits: str) -> "Policy":
        if len(bits) != instance.f:
            raise ValueError(f"expected {instance.f} bits, got {len(bits)}")
        return cls(frozenset(k for k, b in zip(instance.free_edges, bits) if b == "1"))

    def mask(self, instance: GproInstance) -> np.ndarray:
        """Boolean mask over all edges: fixed edges plus active free edges."""
        m = ~instance.arrays["free"]
        if self.active:
            m = m.copy()
            m[list(self.active)] = True
        return m


# ---------------------------------------------------------------------------
# policies


def default_policy(instance: GproInstance) -> Policy:
    """All unconstrained free edges on; forced-choice nodes take their lowest edge."""
    s = instance.structure
    return Policy(frozenset(s.unconstrained) | {min(g) for g in s.groups})


def is_feasible(instance: GproInstance, policy: Policy) -> bool:
    free = set(instance.free_edges)
    if not policy.active <= free:
        return False
    return all(len(policy.active.intersection(g)) == 1 for g in instance.structure.groups)


def policy_count(instance: GproInstance) -> int:
    s = instance.structure
    count = 2 ** len(s.unconstrained)
    for g in s.groups:
        count *= len(g)
    return count


# ---------------------------------------------------------------------------
# validation


def _safe_nodes(instance: GproInstance) -> np.ndarray:
    """Nodes that reach v_t with positive probability under *every* policy.

    Least fixed point: a node is safe if one of its fixed edges leads to a
    safe node, or it is a forced-choice node whose every free edge does.
    """
    n = instance.n
    safe = np.zeros(n, dtype=bool)
    safe[instance.v_t] = True
    groups = {instance.edges[g[0]].src for g in instance.structure.groups}
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if safe[i]:
                continue
            out = [instance.edges[k] for k in instance.out_edges[i] if instance.edges[k].weight > 0]
            if i in groups:
                ok = bool(out) and all(safe[e.dst] for e in out)
            else:
                ok = any(safe[e.dst] for e in out if not e.free)
            if ok:
                safe[i] = True
                changed = True
    return safe


def validate(instance: GproInstance) -> list[Violation]:
    """Every invariant violation of ``instance``, in a deterministic order."""
    v: list[Violation] = []
    n = instance.n
    if n < 2:
        v.append(Violation("size", (), "need at least v_s and v_t"))
        return v
    for name, idx in (("v_s", instance.v_s), ("v_t", instance.v_t)):
        if not 0 <= idx < n:
            v.append(Violation("index", (name,), f"{name}={idx} out of range"))
    if v:
        return v
    if instance.v_s == instance.v_t:
        v.append(Violation("index", ("v_s", "v_t"), "v_s and v_t coincide"))

    seen: dict[tuple[int, int], int] = {}
    for k, e in enumerate(instance.edges):
        if not (0 <= e.src < n and 0 <= e.dst < n):
            v.append(Violation("endpoint", (e.src, e.dst), f"edge {k} leaves the node range"))
            continue
        if (e.src, e.dst) in seen:
            v.append(Violation("parallel", (e.src, e.dst), f"edge {k} duplicates edge {seen[(e.src, e.dst)]}"))
        seen.setdefault((e.src, e.dst), k)
        if not math.isfinite(e.weight) or e.weight < 0:
            v.append(Violation("negative-weight", (e.src, e.dst), f"weight {e.weight}"))
        elif e.weight == 0:
            v.append(Violation("zero-weight", (e.src, e.dst), "edges must carry positive weight"))
        if not math.isfinite(e.cost):
            v.append(Violation("cost", (e.src, e.dst), f"cost {e.cost} not finite"))
    if any(x.kind == "endpoint" for x in v):
        return v

    vt_out = [instance.edges[k] for k in instance.out_edges[instance.v_t]]
    if len(vt_out) != 1 or vt_out[0].dst != instance.v_t:
        v.append(Violation("target", (instance.v_t,), "v_t must have exactly one outgoing edge, its self-loop"))
    for e in vt_out:
        if e.dst == instance.v_t and (e.cost != 0 or e.free):
            v.append(Violation("target", (e.src, e.dst), "v_t self-loop must be fixed with cost 0"))
    for k, e in enumerate(instance.edges):
        if e.dst == instance.v_s:
            v.append(Violation("start", (e.src, e.dst), "v_s must not have incoming edges"))

    used: set[int] = set()
    for pair in instance.exclusivity:
        if len(pair) != 2 or pair[0] == pair[1]:
            v.append(Violation("exclusivity", tuple(pair), "a pair needs two distinct edges"))
            continue
        if not all(0 <= k < len(instance.edges) for k in pair):
            v.append(Violation("exclusivity", tuple(pair), "edge index out of range"))
            continue
        a, b = (instance.edges[k] for k in pair)
        if used.intersection(pair):
            v.append(Violation("exclusivity", tuple(pair), "edge already in another pair"))
        used.update(pair)
        if not (a.free and b.free):
            v.append(Violation("exclusivity", tuple(pair), "both edges must be free"))
        if a.src != b.src:
            v.append(Violation("exclusivity", tuple(pair), "edges must leave the same node"))
        elif len(instance.out_edges[a.src]) != 2:
            v.append(Violation("exclusivity", tuple(pair), f"node {a.src} must have out-degree exactly 2"))

    if instance.zapping is not None and not 0 < instance.zapping < 1:
        v.append(Violation("zapping", (), f"zapping {instance.zapping} not in (0, 1)"))
    if instance.restart not in RESTART_MODES:
        v.append(Violation("restart", (), f"unknown restart mode {instance.restart!r}"))

    for i in range(n):
        if not instance.out_edges[i]:
            v.append(Violation("properness", (i,), f"node {instance.names[i]} has no outgoing edge"))
    zap_reaches_target = instance.zapping is not None and instance.restart != "no_target"
    if not zap_reaches_target and not any(x.kind in ("negative-weight", "zero-weight") for x in v):
        safe = _safe_nodes(instance)
        for i in np.flatnonzero(~safe):
            if instance.out_edges[i]:
                v.append(
                    Violation("properness", (int(i),), f"node {instance.names[i]} can be cut off from v_t by some policy")
                )
    return v


def check(instance: GproInstance) -> GproInstance:
    violations = validate(instance)
    if violations:
        raise InvalidInstanceError(violations)
    return instance


# ---------------------------------------------------------------------------
# graph preprocessing


def repair_dangling(graph: SupportGraph, mode: str = "components") -> SupportGraph:
    """Connect dangling nodes (and, by default, closed components) to every other node.

    ``mode="nodes"`` only repairs nodes without any outgoing edge.
    ``mode="components"`` additionally repairs every closed strongly connected
    component of a graph that is not strongly connected, which makes the
    result strongly connected.  Added edges are fixed, with unit weight and
    cost.  Idempotent.
    """
    if mode not in ("nodes", "components"):
        raise ValueError(f"unknown repair mode {mode!r}")
    n = graph.n
    edges = list(graph.edges)
    present = {(e.src, e.dst) for e in edges}
    deg = graph.out_degree()
    for s in np.flatnonzero(deg == 0):
        s = int(s)
        for t in range(n):
            if t != s:
                edges.append(Edge(s, t))
                present.add((s, t))
    if mode == "components" and n > 1:
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import connected_components

        rows = [e.src for e in edges]
        cols = [e.dst for e in edges]
        adj = csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
        ncomp, label = connected_components(adj, directed=True, connection="strong")
        if ncomp > 1:
            leaves = np.ones(ncomp, dtype=bool)
            for e in edges:
                if label[e.src] != label[e.dst]:
                    leaves[label[e.src]] = False
            for c in np.flatnonzero(leaves):
                members = np.flatnonzero(label == c)
                outside = np.flatnonzero(label != c)
                for s in members:
                    for t in outside:
                        if (int(s), int(t)) not in present:
                            edges.append(Edge(int(s), int(t)))
                            present.add((int(s), int(t)))
    if len(edges) == len(graph.edges):
        return graph
    return SupportGraph(n, tuple(edges), graph.names)


def split_target(graph: SupportGraph, v: int) -> tuple[GproInstance, dict[int, tuple[int, ...]]]:
    """Split target ``v`` into a start node (its out-edges) and an absorbing target.

    ``v_s`` takes the index of ``v``; ``v_t`` is appended as the last node.
    Returns the instance and a map from original node to its new node(s).
    """
    n = graph.n
    if not 0 <= v < n:
        raise ValueError(f"target {v} not a node")
    if not any(e.src == v for e in graph.edges):
        raise ValueError(f"target {graph.names[v]} has no outgoing edge")
    if not any(e.dst == v for e in graph.edges):
        raise ValueError(f"target {graph.names[v]} has no incoming edge")
    v_s, v_t = v, n
    edges = [
        Edge(e.src if e.src != v else v_s, e.dst if e.dst != v else v_t, e.weight, e.cost, e.free)
        for e in graph.edges
    ]
    edges.append(Edge(v_t, v_t, 1.0, 0.0, False))
    names = list(graph.names)
    names[v] = f"{graph.names[v]}_s"
    names.append(f"{graph.names[v]}_t")
    mapping = {i: (i,) for i in range(n)}
    mapping[v] = (v_s, v_t)
    return GproInstance(tuple(names), v_s, v_t, tuple(edges)), mapping


def canonical_pro(instance: GproInstance) -> GproInstance:
    """Unit weights everywhere, unit costs except on the target's self-loop."""
    edges = tuple(
        e._replace(weight=1.0, cost=0.0 if e.src == instance.v_t else 1.0) for e in instance.edges
    )
    return replace(instance, edges=edges)


def epsilon_exclusivity_emulation(instance: GproInstance, pair: tuple[int, int], eps: float) -> GproInstance:
    """Replace an exclusivity pair by a unit-weight free edge and an ``eps``-weight fixed edge.

    Experimental: nothing guarantees the optimum survives the rewrite.  The
    first edge of ``pair`` stays free, the second becomes fixed.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    key = tuple(sorted(pair))
    if key not in instance.exclusivity:
        raise ValueError(f"{pair} is not an exclusivity pair")
    a, b = pair
    edges = list(instance.edges)
    edges[a] = edges[a]._replace(weight=1.0, free=True)
    edges[b] = edges[b]._replace(weight=float(eps), free=False)
    rest = tuple(p for p in instance.exclusivity if p != key)
    return replace(instance, edges=tuple(edges), exclusivity=rest)


# ---------------------------------------------------------------------------
# JSON


def _num(x) -> float:
    # decimal strings are accepted so files can carry exact literals
    return float(x) if not isinstance(x, str) else float(x.strip())


def instance_to_dict(instance: GproInstance) -> dict:
    d = {
        "nodes": list(instance.names),
        "v_s": instance.v_s,
        "v_t": instance.v_t,
        "edges": [
            {"from": e.src, "to": e.dst, "weight": e.weight, "cost": e.cost, "free": e.free}
            for e in instance.edges
        ],
        "exclusivity": [list(p) for p in instance.exclusivity],
        "zapping": instance.zapping,
    }
    if instance.restart != "all":
        d["restart"] = instance.restart
    return d


def instance_from_dict(d: dict) -> GproInstance:
    names = [str(x) for x in d["nodes"]]
    index = {name: i for i, name in enumerate(names)}

    def node(x):
        return index[x] if isinstance(x, str) and x in index else int(x)

    edges = tuple(
        Edge(node(e["from"]), node(e["to"]), _num(e.get("weight", 1)), _num(e.get("cost", 1)), bool(e.get("free", False)))
        for e in d["edges"]
    )
    zap = d.get("zapping")
    return GproInstance(
        names=tuple(names),
        v_s=node(d["v_s"]),
        v_t=node(d["v_t"]),
        edges=edges,
        exclusivity=tuple(tuple(int(k) for k in p) for p in d.get("exclusivity", [])),
        zapping=None if zap is None else _num(zap),
        restart=d.get("restart", "all"),
    )


def dumps_instance(instance: GproInstance) -> str:
    return json.dumps(instance_to_dict(instance), indent=1)


def loads_instance(text: str) -> GproInstance:
    return instance_from_dict(json.loads(text))


def load_instance(path) -> GproInstance:
    return loads_instance(Path(path).read_text())


def save_instance(instance: GproInstance, path) -> None:
    Path(path).write_text(dumps_instance(instance))


def policy_to_dict(policy: Policy) -> dict:
    return {"active": sorted(policy.active)}


def policy_from_dict(d: dict) -> Policy:
    return Policy(frozenset(int(k) for k in d["active"]))


def load_policy(path) -> Policy:
    return policy_from_dict(json.loads(Path(path).read_text()))


def reachable_to(n: int, arcs: Iterable[tuple[int, int]], target: int) -> np.ndarray:
    """Nodes with a directed path to ``target`` over ``arcs``."""
    rev: list[list[int]] = [[] for _ in range(n)]
    for a, b in arcs:
        rev[b].append(a)
    seen = np.zeros(n, dtype=bool)
    seen[target] = True
    queue = deque([target])
    while queue:
        x = queue.popleft()
        for y in rev[x]:
            if not seen[y]:
                seen[y] = True
                queue.append(y)
    return seen
