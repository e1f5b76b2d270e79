"""Hand-built instances used across the test modules."""
from gpro.model import Edge, GproInstance


def build(names, edges, v_s="vs", v_t="vt", exclusivity=(), zapping=None, restart="all"):
    """``edges``: (src, dst[, weight, cost, free]) with node names; the v_t loop is added."""
    idx = {x: i for i, x in enumerate(names)}
    out = []
    for e in edges:
        src, dst, *rest = e
        w, k, free = (list(rest) + [1.0, 1.0, False][len(rest):])[:3]
        out.append(Edge(idx[src], idx[dst], float(w), float(k), bool(free)))
    out.append(Edge(idx[v_t], idx[v_t], 1.0, 0.0, False))
    return GproInstance(tuple(names), idx[v_s], idx[v_t], tuple(out), tuple(exclusivity), zapping, restart)


def minimal():
    return build(["vs", "vt"], [("vs", "vt")])


def chain():
    return build(["vs", "a", "vt"], [("vs", "a"), ("a", "vt")])


def two_way():
    """v_s -> v_t fixed, v_s -> a free, a -> v_t."""
    return build(["vs", "a", "vt"], [("vs", "vt"), ("vs", "a", 1, 1, True), ("a", "vt")])


def barrier():
    """Two free edges on v_s with continuation values 2 and 10 next to a fixed edge worth 1.

    From the all-active start PRI first drops the expensive edge, then the
    cheaper one: two improving rounds for f = 2.
    """
    return build(
        ["vs", "a", "b", "vt"],
        [("vs", "vt"), ("vs", "a", 1, 1, True), ("vs", "b", 1, 1, True), ("a", "vt"), ("b", "vt", 1, 9)],
    )


def shortcuts():
    """A long chain whose free edges all jump straight to v_t."""
    return build(
        ["vs", "a", "b", "c", "vt"],
        [
            ("vs", "a"),
            ("a", "b"),
            ("b", "c"),
            ("c", "vt"),
            ("a", "vt", 1, 1, True),
            ("b", "vt", 1, 1, True),
            ("vs", "vt", 1, 1, True),
        ],
    )


def symmetric_pair():
    """x must pick a or b; both lead to v_t in one step."""
    return build(
        ["vs", "x", "a", "b", "vt"],
        [("vs", "x"), ("x", "a", 1, 1, True), ("x", "b", 1, 1, True), ("a", "vt"), ("b", "vt")],
        exclusivity=[(1, 2)],
    )


def pair_plus_two():
    """One exclusivity pair and two unconstrained free edges."""
    return build(
        ["vs", "x", "a", "b", "vt"],
        [
            ("vs", "x"),
            ("vs", "a", 1, 1, True),
            ("x", "a", 1, 1, True),
            ("x", "b", 1, 1, True),
            ("a", "vt"),
            ("a", "b", 1, 1, True),
            ("b", "vt"),
        ],
        exclusivity=[(2, 3)],
    )


def weighted_mix():
    """Non-unit weights and costs, a forced-choice node with three edges."""
    return build(
        ["vs", "a", "b", "c", "vt"],
        [
            ("vs", "a", 2, 1),
            ("vs", "b", 1, 3),
            ("vs", "c", 0.5, 1, True),
            ("a", "vt", 1, 2),
            ("a", "b", 3, 0.5, True),
            ("b", "vt", 1, 1, True),
            ("b", "c", 1, 0.25, True),
            ("b", "a", 1, 0.5, True),
            ("c", "vt", 1, 4),
            ("c", "a", 1, 1),
        ],
    )


ALL = {
    "minimal": minimal,
    "chain": chain,
    "two_way": two_way,
    "barrier": barrier,
    "shortcuts": shortcuts,
    "symmetric_pair": symmetric_pair,
    "pair_plus_two": pair_plus_two,
    "weighted_mix": weighted_mix,
}
