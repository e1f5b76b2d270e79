"""PageRank Iteration: policy iteration carried out directly on free edges.

Each round evaluates the current policy exactly and then switches, all at
once, every free edge whose switch would improve the hitting time of its
source node.

Two counts are reported for a run.  ``iteration_count`` is the number of
evaluations, including the final one that confirms the fixpoint.
``improvements`` is the number of rounds that changed the policy; the
iteration bounds (``<= f`` for single-source instances, the barrier of the
random-instance hunts) are stated on this count.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import tolerances as tol
from .hitting import hitting_times
from .model import GproInstance, Policy, default_policy, is_feasible

log = logging.getLogger(__name__)

SENSES = ("max", "min")


class NumericalFaultError(RuntimeError):
    """The objective moved the wrong way between two PRI rounds."""


@dataclass(frozen=True)
class Step:
    policy: Policy
    phi: np.ndarray
    switched: frozenset = field(default_factory=frozenset)


@dataclass
class PriTrace:
    steps: list[Step]
    termination: str
    sense: str = "max"

    @property
    def iteration_count(self) -> int:
        return len(self.steps)

    @property
    def improvements(self) -> int:
        return sum(1 for s in self.steps if s.switched)

    @property
    def policy(self) -> Policy:
        return self.steps[-1].policy

    @property
    def phi(self) -> np.ndarray:
        return self.steps[-1].phi

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    def value(self, instance: GproInstance) -> float:
        return float(self.phi[instance.v_s])

    def to_dict(self, instance: GproInstance) -> dict:
        return {
            "sense": self.sense,
            "termination": self.termination,
            "iteration_count": self.iteration_count,
            "improvements": self.improvements,
            "free_edges": list(instance.free_edges),
            "iterations": [
                {
                    "policy": s.policy.bits(instance),
                    "active": sorted(s.policy.active),
                    "phi": [float(x) for x in s.phi],
                    "switched": sorted(s.switched),
                }
                for s in self.steps
            ],
        }


def _continuation(instance: GproInstance, policy: Policy, phi: np.ndarray) -> np.ndarray:
    """Value each node compares a free edge against.

    Without zapping this is ``phi`` itself.  With zapping it is the mean of
    ``K + phi[head]`` over the node's active edges, i.e. ``phi`` with the
    restart term taken out, since only that part depends on the policy.
    """
    if not instance.zapping:
        return phi
    a = instance.arrays
    m = policy.mask(instance)
    src, dst, w, k = a["src"][m], a["dst"][m], a["weight"][m], a["cost"][m]
    num = np.bincount(src, weights=w * (k + phi[dst]), minlength=instance.n)
    den = np.bincount(src, weights=w, minlength=instance.n)
    return num / np.where(den > 0, den, 1.0)


def greedy_improve(
    instance: GproInstance,
    policy: Policy,
    phi: np.ndarray,
    sense: str = "max",
    ties: str = "keep",
) -> Policy:
    """One greedy improvement round.

    ``sense="max"`` maximizes the target's PageRank (minimizes ``phi``).
    ``ties="keep"`` leaves an edge whose two sides agree within tolerance in
    its current state; ``ties="activate"`` applies the non-strict comparison
    literally and activates it.
    """
    if sense not in SENSES:
        raise ValueError(f"sense must be one of {SENSES}")
    if ties not in ("keep", "activate"):
        raise ValueError("ties must be 'keep' or 'activate'")
    struct = instance.structure
    a = instance.arrays
    active = set()
    if struct.unconstrained:
        ref = _continuation(instance, policy, phi)
        U = np.asarray(struct.unconstrained)
        lhs = ref[a["src"][U]]
        rhs = a["cost"][U] + phi[a["dst"][U]]
        for e, x, y in zip(U.tolist(), lhs.tolist(), rhs.tolist()):
            if sense == "min":
                x, y = y, x
            if tol.close(x, y):
                on = (e in policy.active) if ties == "keep" else True
            else:
                on = x > y
            if on:
                active.add(e)
    for group in struct.groups:
        vals = [a["cost"][e] + phi[a["dst"][e]] for e in group]
        best = min(vals) if sense == "max" else max(vals)
        current = [e for e in group if e in policy.active]
        if current and tol.close(vals[group.index(current[0])], best):
            active.add(current[0])
        else:
            active.add(min(e for e, v in zip(group, vals) if tol.close(v, best)))
    return Policy(frozenset(active))


def guard_limit(instance: GproInstance) -> int:
    return 2 ** instance.f + 1


def solve(
    instance: GproInstance,
    initial: Optional[Policy] = None,
    sense: str = "max",
    guard: Optional[int] = None,
    ties: str = "keep",
) -> PriTrace:
    """Run PRI from ``initial`` (default: all unconstrained free edges on)."""
    policy = default_policy(instance) if initial is None else initial
    if not is_feasible(instance, policy):
        raise ValueError("initial policy is not feasible")
    guard = guard_limit(instance) if guard is None else guard
    sign = 1.0 if sense == "max" else -1.0
    steps: list[Step] = []
    seen = {policy.active}
    while True:
        phi = hitting_times(instance, policy)
        if steps:
            prev = steps[-1].phi[instance.v_s]
            cur = phi[instance.v_s]
            if sign * (cur - prev) > tol.COMPARE * (1 + abs(prev)):
                raise NumericalFaultError(
                    f"objective moved from {prev!r} to {cur!r} after switching {sorted(steps[-1].switched)}"
                )
        new = greedy_improve(instance, policy, phi, sense, ties)
        switched = policy.active ^ new.active
        steps.append(Step(policy, phi, frozenset(switched)))
        if not switched:
            return PriTrace(steps, "converged", sense)
        if len(steps) >= guard or new.active in seen:
            log.warning("PRI guard tripped after %d evaluations", len(steps))
            return PriTrace(steps, "guard-tripped", sense)
        seen.add(new.active)
        policy = new


def random_policy(instance: GproInstance, rng: np.random.Generator) -> Policy:
    struct = instance.structure
    active = {e for e in struct.unconstrained if rng.random() < 0.5}
    active |= {g[int(rng.integers(len(g)))] for g in struct.groups}
    return Policy(frozenset(active))


def iteration_count(
    instance: GproInstance, initial_policies: Iterable[Optional[Policy]], sense: str = "max"
) -> dict:
    """Run PRI from each start; summarize evaluation and improvement counts."""
    f = instance.f
    evals, impr, over = [], [], []
    for k, start in enumerate(initial_policies):
        trace = solve(instance, start, sense)
        evals.append(trace.iteration_count)
        impr.append(trace.improvements)
        if trace.improvements > f or not trace.converged:
            over.append(k)
    if not evals:
        return {"runs": 0, "max": 0, "mean": 0.0, "max_improvements": 0, "mean_improvements": 0.0, "exceeding_f": []}
    return {
        "runs": len(evals),
        "max": max(evals),
        "mean": float(np.mean(evals)),
        "max_improvements": max(impr),
        "mean_improvements": float(np.mean(impr)),
        "exceeding_f": over,
    }


def final_decisions(trace: PriTrace) -> list[int]:
    """For each improvement round, how many free edges received their final state.

    An edge's decision in round k is final when its state in the policy
    produced by round k never changes afterwards.
    """
    policies = [s.policy.active for s in trace.steps]
    counts = []
    for k in range(len(policies) - 1):
        changed_later = set()
        for a, b in zip(policies[k + 1 :], policies[k + 2 :]):
            changed_later |= a ^ b
        counts.append(len(trace.steps[k].switched - changed_later))
    return counts
