"""Brute-force ground truth by exhaustive policy enumeration.

Nothing here uses greedy logic: every feasible policy is evaluated with
``hitting_times`` (or ``ssp.evaluate``) and the best ones are returned as a set.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tolerances as tol
from .hitting import ImproperPolicyError, hitting_times
from .model import GproInstance, Policy, policy_count
from .ssp import SspInstance, SspPolicy, evaluate

DEFAULT_CAP = 20


class EnumerationTooLargeError(ValueError):
    pass


def enumerate_policies(instance: GproInstance, cap: int = DEFAULT_CAP) -> Iterator[Policy]:
    """Every feasible policy once, in lexicographic order of the free-edge bitstring.

    The bitstring lists free edges by increasing edge index, ``0`` before ``1``.
    Refuses when the feasible count exceeds ``2**cap``.
    """
    count = policy_count(instance)
    if count > 2**cap:
        raise EnumerationTooLargeError(f"{count} feasible policies exceed the cap 2**{cap}")
    free = instance.free_edges
    group_of: dict[int, tuple[int, ...]] = {}
    for g in instance.structure.groups:
        for e in g:
            group_of[e] = g
    last_of = {g: max(g) for g in instance.structure.groups}
    chosen: list[int] = []
    taken: set = set()

    def rec(pos: int):
        if pos == len(free):
            yield Policy(frozenset(chosen))
            return
        e = free[pos]
        g = group_of.get(e)
        if g is None:
            yield from rec(pos + 1)
            chosen.append(e)
            yield from rec(pos + 1)
            chosen.pop()
            return
        if g in taken:
            yield from rec(pos + 1)
            return
        if e != last_of[g]:
            yield from rec(pos + 1)
        taken.add(g)
        chosen.append(e)
        yield from rec(pos + 1)
        chosen.pop()
        taken.discard(g)

    yield from rec(0)


@dataclass
class OracleResult:
    policies: list[Policy]
    value: float
    evaluated: int

    def contains(self, policy: Policy) -> bool:
        return any(p.active == policy.active for p in self.policies)


def brute_force_optimum(instance: GproInstance, sense: str = "max", cap: int = DEFAULT_CAP) -> OracleResult:
    """All feasible policies whose ``phi[v_s]`` is within tolerance of the best.

    ``sense="max"`` maximizes the target's PageRank, i.e. minimizes ``phi[v_s]``.
    """
    values: list[float] = []
    policies: list[Policy] = []
    for p in enumerate_policies(instance, cap):
        try:
            phi = hitting_times(instance, p)
        except ImproperPolicyError as exc:
            raise ImproperPolicyError(f"policy {p.bits(instance)}: {exc}", exc.nodes) from None
        values.append(float(phi[instance.v_s]))
        policies.append(p)
    vals = np.array(values)
    best = float(vals.min() if sense == "max" else vals.max())
    winners = [p for p, v in zip(policies, values) if tol.close(v, best)]
    return OracleResult(winners, best, len(values))


def enumerate_ssp_policies(ssp: SspInstance) -> Iterator[SspPolicy]:
    yield from itertools.product(*(range(len(a)) for a in ssp.actions))


def ssp_policy_count(ssp: SspInstance) -> int:
    return int(np.prod([len(a) for a in ssp.actions], dtype=object))


@dataclass
class SspOracleResult:
    policies: list[SspPolicy]
    values: np.ndarray
    evaluated: int


def ssp_brute_force(ssp: SspInstance, sense: str = "min") -> SspOracleResult:
    """Pointwise-optimal values over all SSP policies (all assumed proper).

    Returns the componentwise best value vector and the policies attaining it
    at every state.
    """
    best = None
    table = []
    for pol in enumerate_ssp_policies(ssp):
        J = evaluate(ssp, pol, check=False)
        table.append((pol, J))
        best = J.copy() if best is None else (np.minimum(best, J) if sense == "min" else np.maximum(best, J))
    scale = 1.0 + np.abs(best)
    winners = [p for p, J in table if np.all(np.abs(J - best) <= tol.COMPARE * scale)]
    return SspOracleResult(winners, best, len(table))
