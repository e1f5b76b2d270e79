"""Reductions between SSP and GPRO, each carrying a map for pulling optima back.

SSP -> GPRO goes through two SSP normalizations (at most two actions per
state, then deterministic two-action states) before states become nodes.
GPRO -> SSP turns forced-choice nodes into multi-action states and routes
every other free edge through an auxiliary two-action state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

from . import tolerances as tol
from .hitting import restart_vector
from .model import Edge, GproInstance, Policy
from .ssp import SspInstance, SspPolicy


@dataclass
class ReductionMap:
    """Correspondence between a source problem and its reduction.

    ``state_map``: source state/node -> derived states/nodes.
    ``value_nodes``: source state/node -> the derived node carrying its value.
    ``forward`` / ``backward`` translate policies.
    """

    kind: str
    state_map: dict[int, tuple[int, ...]]
    value_nodes: dict[int, int]
    table: dict = field(default_factory=dict)
    _forward: Callable = field(default=None, repr=False)
    _backward: Callable = field(default=None, repr=False)

    def forward(self, policy):
        return self._forward(policy)

    def backward(self, policy):
        return self._backward(policy)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "state_map": {str(k): list(v) for k, v in self.state_map.items()},
            "value_nodes": {str(k): v for k, v in self.value_nodes.items()},
            "table": self.table,
        }


@dataclass
class ComposedMap:
    stages: list[Union[ReductionMap, "ComposedMap"]]

    @property
    def kind(self) -> str:
        return "+".join(s.kind for s in self.stages)

    @property
    def value_nodes(self) -> dict[int, int]:
        out = dict(self.stages[0].value_nodes)
        for st in self.stages[1:]:
            out = {k: st.value_nodes[v] for k, v in out.items()}
        return out

    @property
    def state_map(self) -> dict[int, tuple[int, ...]]:
        out = {k: tuple(v) for k, v in self.stages[0].state_map.items()}
        for st in self.stages[1:]:
            out = {k: tuple(y for x in v for y in st.state_map[x]) for k, v in out.items()}
        return out

    def forward(self, policy):
        for st in self.stages:
            policy = st.forward(policy)
        return policy

    def backward(self, policy):
        for st in reversed(self.stages):
            policy = st.backward(policy)
        return policy

    def to_dict(self) -> dict:
        return {
            "kind": "composed",
            "value_nodes": {str(k): v for k, v in self.value_nodes.items()},
            "stages": [s.to_dict() for s in self.stages],
        }


def _identity_map(n: int) -> dict[int, tuple[int, ...]]:
    return {s: (s,) for s in range(n)}


def _is_deterministic(action) -> bool:
    return len(action) == 1


# ---------------------------------------------------------------------------
# SSP -> SSP normalizations


def split_multiaction(ssp: SspInstance) -> tuple[SspInstance, ReductionMap]:
    """Replace each k-action state (k >= 3) by a chain of k-1 two-action states.

    The head of the chain keeps the state's index, so incoming transitions
    are unchanged; link ``r`` offers action ``r`` or a free hop to link ``r+1``.
    """
    n = ssp.n
    actions = [list(a) for a in ssp.actions]
    names = list(ssp.names)
    chains: dict[int, list[int]] = {}
    for s, acts in enumerate(ssp.actions):
        k = len(acts)
        if k <= 2 or s == ssp.target:
            continue
        chain = [s] + list(range(len(actions), len(actions) + k - 2))
        actions.extend([] for _ in range(k - 2))
        names.extend(f"{ssp.names[s]}#{r}" for r in range(1, k - 1))
        for r, node in enumerate(chain[:-1]):
            actions[node] = [acts[r], ((chain[r + 1], 1.0, 0.0),)]
        actions[chain[-1]] = [acts[k - 2], acts[k - 1]]
        chains[s] = chain
    out = SspInstance(tuple(names), ssp.target, actions)
    size = out.n

    def forward(policy: SspPolicy) -> SspPolicy:
        new = list(policy) + [0] * (size - n)
        for s, chain in chains.items():
            t = policy[s]
            last = len(chain) - 1
            for r, node in enumerate(chain):
                if r < last:
                    new[node] = 1 if r < t else 0
                else:
                    new[node] = 1 if t > last else 0
        return tuple(new)

    def backward(policy: SspPolicy) -> SspPolicy:
        old = list(policy[:n])
        for s, chain in chains.items():
            last = len(chain) - 1
            for r, node in enumerate(chain):
                if r == last:
                    old[s] = r + policy[node]
                elif policy[node] == 0:
                    old[s] = r
                    break
        return tuple(old)

    smap = _identity_map(n)
    for s, chain in chains.items():
        smap[s] = tuple(chain)
    rmap = ReductionMap(
        "split_multiaction",
        smap,
        {s: s for s in range(n)},
        {"chains": {str(s): c for s, c in chains.items()}},
        forward,
        backward,
    )
    return out, rmap


def _needs_probabilistic_split(acts) -> bool:
    if len(acts) != 2:
        return False
    a, b = acts
    # two deterministic actions into the same state would need parallel edges
    return not (_is_deterministic(a) and _is_deterministic(b) and a[0][0] != b[0][0])


def split_probabilistic(ssp: SspInstance) -> tuple[SspInstance, ReductionMap]:
    """Turn each probabilistic two-action state into a deterministic chooser plus two single-action states."""
    if any(len(a) > 2 for a in ssp.actions):
        raise ValueError("split_probabilistic needs at most two actions per state")
    n = ssp.n
    actions = [list(a) for a in ssp.actions]
    names = list(ssp.names)
    gadgets: dict[int, tuple[int, int]] = {}
    for s, acts in enumerate(ssp.actions):
        if s == ssp.target or not _needs_probabilistic_split(acts):
            continue
        u1, u2 = len(actions), len(actions) + 1
        actions.append([acts[0]])
        actions.append([acts[1]])
        names.extend([f"{ssp.names[s]}'", f"{ssp.names[s]}''"])
        actions[s] = [((u1, 1.0, 0.0),), ((u2, 1.0, 0.0),)]
        gadgets[s] = (u1, u2)
    out = SspInstance(tuple(names), ssp.target, actions)
    size = out.n

    def forward(policy: SspPolicy) -> SspPolicy:
        return tuple(policy) + (0,) * (size - n)

    def backward(policy: SspPolicy) -> SspPolicy:
        return tuple(policy[:n])

    smap = _identity_map(n)
    for s, (u1, u2) in gadgets.items():
        smap[s] = (s, u1, u2)
    rmap = ReductionMap(
        "split_probabilistic",
        smap,
        {s: s for s in range(n)},
        {"gadgets": {str(s): list(g) for s, g in gadgets.items()}},
        forward,
        backward,
    )
    return out, rmap


# ---------------------------------------------------------------------------
# SSP -> GPRO


def is_normalized(ssp: SspInstance) -> bool:
    return all(
        len(acts) == 1 or (len(acts) == 2 and not _needs_probabilistic_split(acts))
        for s, acts in enumerate(ssp.actions)
        if s != ssp.target
    )


def ssp_to_gpro(ssp: SspInstance) -> tuple[GproInstance, ReductionMap]:
    """States become nodes; two-action states get an exclusive pair of free edges.

    A fresh start node (index ``ssp.n``) links with zero cost to every
    non-target state, so minimizing its hitting time minimizes all states at once.
    """
    if not is_normalized(ssp):
        raise ValueError("SSP must have deterministic two-action or single-action states; run the splits first")
    n = ssp.n
    tau = ssp.target
    v_s = n
    edges: list[Edge] = []
    pairs: dict[int, tuple[int, int]] = {}
    for s, acts in enumerate(ssp.actions):
        if s == tau:
            edges.append(Edge(tau, tau, 1.0, 0.0, False))
        elif len(acts) == 1:
            for t, p, c in acts[0]:
                edges.append(Edge(s, t, p, c, False))
        else:
            (t0, _, c0), = acts[0]
            (t1, _, c1), = acts[1]
            pairs[s] = (len(edges), len(edges) + 1)
            edges.append(Edge(s, t0, 1.0, c0, True))
            edges.append(Edge(s, t1, 1.0, c1, True))
    starts = [s for s in range(n) if s != tau] or [tau]
    for s in starts:
        edges.append(Edge(v_s, s, 1.0, 0.0, False))
    inst = GproInstance(tuple(ssp.names) + ("start",), v_s, tau, tuple(edges), tuple(pairs.values()))

    def forward(policy: SspPolicy) -> Policy:
        return Policy(frozenset(pairs[s][policy[s]] for s in pairs))

    def backward(policy: Policy) -> SspPolicy:
        return tuple(
            (0 if pairs[s][0] in policy.active else 1) if s in pairs else 0 for s in range(n)
        )

    rmap = ReductionMap(
        "ssp_to_gpro",
        _identity_map(n),
        {s: s for s in range(n)},
        {"pairs": {str(s): list(p) for s, p in pairs.items()}, "start": v_s},
        forward,
        backward,
    )
    return inst, rmap


def reduce_ssp(ssp: SspInstance) -> tuple[GproInstance, ComposedMap]:
    """Full SSP -> GPRO pipeline: both splits, then the state-to-node encoding."""
    s1, m1 = split_multiaction(ssp)
    s2, m2 = split_probabilistic(s1)
    g, m3 = ssp_to_gpro(s2)
    return g, ComposedMap([m1, m2, m3])


# ---------------------------------------------------------------------------
# GPRO -> SSP


def gpro_to_ssp(instance: GproInstance, normalize: bool = False):
    """Encode a GPRO instance as an SSP with actions taken in states.

    Forced-choice nodes become one action per free edge.  At a node with
    fixed edges, each free edge is replaced by an auxiliary state entered
    with cost 0 in proportion to the edge's weight; it either exits along the
    edge (active) or returns to the node (inactive).  With zapping the node
    first zaps or moves to a non-zapping copy, and auxiliary returns go to
    that copy so the restart probability is not re-applied.

    With ``normalize`` the multi-action states are further chained into
    two-action states.
    """
    n = instance.n
    vt = instance.v_t
    c = instance.zapping or 0.0
    r = restart_vector(instance) if c else None
    zap = [(j, c * r[j], tol.ZAP_COST) for j in range(n) if c and r[j] > 0]
    group_of = {instance.edges[g[0]].src: g for g in instance.structure.groups}
    actions: list[list] = [[] for _ in range(n)]
    names = list(instance.names)
    entries: list[tuple[int, int, int, int]] = []  # (edge, state, on_action, off_action or -1)
    smap = _identity_map(n)
    gadgeted: list[int] = []

    def new_state(name):
        actions.append([])
        names.append(name)
        return len(actions) - 1

    for i in range(n):
        out = [instance.edges[k] for k in instance.out_edges[i]]
        if i == vt:
            actions[i] = [((vt, 1.0, 0.0),)]
        elif i in group_of:
            for pos, k in enumerate(group_of[i]):
                e = instance.edges[k]
                actions[i].append(tuple([(e.dst, 1.0 - c, e.cost)] + zap))
                entries.append((k, i, pos, -1))
        elif not any(e.free for e in out):
            total = sum(e.weight for e in out)
            actions[i] = [tuple([(e.dst, (1.0 - c) * e.weight / total, e.cost) for e in out] + zap)]
        else:
            chooser = i
            if c:
                chooser = new_state(f"{instance.names[i]}~")
                actions[i] = [tuple([(chooser, 1.0 - c, 0.0)] + zap)]
                smap[i] = smap[i] + (chooser,)
            total = sum(e.weight for e in out)
            trans = []
            for k in instance.out_edges[i]:
                e = instance.edges[k]
                if e.free:
                    aux = new_state(f"{instance.names[i]}->{instance.names[e.dst]}")
                    actions[aux] = [((e.dst, 1.0, e.cost),), ((chooser, 1.0, 0.0),)]
                    trans.append((aux, e.weight / total, 0.0))
                    entries.append((k, aux, 0, 1))
                    smap[i] = smap[i] + (aux,)
                    gadgeted.append(k)
                else:
                    trans.append((e.dst, e.weight / total, e.cost))
            actions[chooser] = [tuple(trans)]
    ssp = SspInstance(tuple(names), vt, actions)

    def forward(policy: Policy) -> SspPolicy:
        out = [0] * ssp.n
        for k, s, on, off in entries:
            if k in policy.active:
                out[s] = on
            elif off >= 0:
                out[s] = off
        return tuple(out)

    def backward(policy: SspPolicy) -> Policy:
        return Policy(frozenset(k for k, s, on, _ in entries if policy[s] == on))

    rmap = ReductionMap(
        "gpro_to_ssp",
        smap,
        {i: i for i in range(n)},
        {"decisions": [list(x) for x in entries], "gadgeted": gadgeted},
        forward,
        backward,
    )
    if normalize:
        ssp2, m2 = split_multiaction(ssp)
        return ssp2, ComposedMap([rmap, m2])
    return ssp, rmap
