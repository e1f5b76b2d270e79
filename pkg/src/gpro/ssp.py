"""Stochastic shortest path problems: evaluation, policy iteration, value iteration."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tolerances as tol
from .model import Violation

Transition = tuple[int, float, float]  # (successor, probability, cost)
Action = tuple[Transition, ...]
SspPolicy = tuple[int, ...]


class ImproperSspPolicyError(ValueError):
    pass


def _normalize_action(action) -> Action:
    # merge repeated successors, keeping the expected cost
    acc: dict[int, list[float]] = {}
    for s, p, c in action:
        s, p, c = int(s), float(p), float(c)
        if s in acc:
            q, pc = acc[s]
            acc[s] = [q + p, pc + p * c]
        else:
            acc[s] = [p, p * c]
    return tuple((s, q, (pc / q if q > 0 else 0.0)) for s, (q, pc) in sorted(acc.items()) if q > 0)


@dataclass(frozen=True)
class SspInstance:
    names: tuple[str, ...]
    target: int
    actions: tuple[tuple[Action, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(
            self, "actions", tuple(tuple(_normalize_action(a) for a in acts) for acts in self.actions)
        )

    @classmethod
    def build(cls, actions, target: int, names: Sequence[str] = ()) -> "SspInstance":
        names = tuple(names) or tuple(str(i) for i in range(len(actions)))
        return cls(names, target, actions)

    @property
    def n(self) -> int:
        return len(self.actions)

    @property
    def m(self) -> int:
        return sum(len(a) for a in self.actions)

    @cached_property
    def starts(self) -> np.ndarray:
        sizes = np.array([len(a) for a in self.actions], dtype=np.intp)
        return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)

    @cached_property
    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(P, c)``: one row per action, ``c`` the expected step cost."""
        P = np.zeros((self.m, self.n))
        c = np.zeros(self.m)
        row = 0
        for acts in self.actions:
            for act in acts:
                for s, p, k in act:
                    P[row, s] += p
                    c[row] += p * k
                row += 1
        P.setflags(write=False)
        c.setflags(write=False)
        return P, c

    def action_rows(self, policy: SspPolicy) -> np.ndarray:
        return self.starts + np.asarray(policy, dtype=np.intp)


def default_ssp_policy(ssp: SspInstance) -> SspPolicy:
    return tuple(0 for _ in ssp.actions)


def _safe_states(ssp: SspInstance) -> np.ndarray:
    safe = np.zeros(ssp.n, dtype=bool)
    safe[ssp.target] = True
    changed = True
    while changed:
        changed = False
        for s, acts in enumerate(ssp.actions):
            if not safe[s] and acts and all(any(safe[t] for t, p, _ in a if p > 0) for a in acts):
                safe[s] = True
                changed = True
    return safe


def validate_ssp(ssp: SspInstance) -> list[Violation]:
    v: list[Violation] = []
    n = ssp.n
    if not 0 <= ssp.target < n:
        return [Violation("target", (ssp.target,), "target out of range")]
    for s, acts in enumerate(ssp.actions):
        if not acts:
            v.append(Violation("actions", (s,), "state has no action"))
        for u, act in enumerate(acts):
            if any(not 0 <= t < n for t, _, _ in act):
                v.append(Violation("endpoint", (s, u), "successor out of range"))
                continue
            if any(p < 0 for _, p, _ in act):
                v.append(Violation("probability", (s, u), "negative probability"))
            total = sum(p for _, p, _ in act)
            if abs(total - 1.0) > tol.ROW_SUM * max(1, len(act)):
                v.append(Violation("probability", (s, u), f"probabilities sum to {total!r}"))
            if any(not math.isfinite(c) for _, _, c in act):
                v.append(Violation("cost", (s, u), "cost not finite"))
    for act in ssp.actions[ssp.target]:
        if any(t != ssp.target or c != 0 for t, _, c in act):
            v.append(Violation("target", (ssp.target,), "target must be absorbing and cost-free"))
    if not v:
        safe = _safe_states(ssp)
        for s in np.flatnonzero(~safe):
            v.append(Violation("properness", (int(s),), f"some policy keeps state {ssp.names[s]} from the target"))
    return v


def is_proper(ssp: SspInstance, policy: SspPolicy) -> bool:
    P, _ = ssp.matrices
    link = P[ssp.action_rows(policy)] > 0
    reach = np.zeros(ssp.n, dtype=bool)
    reach[ssp.target] = True
    while True:
        nxt = reach | link[:, reach].any(axis=1)
        if nxt.sum() == reach.sum():
            return bool(reach.all())
        reach = nxt


def evaluate(ssp: SspInstance, policy: SspPolicy, check: bool = True) -> np.ndarray:
    """Expected total cost to the target from every state under ``policy``."""
    if check and not is_proper(ssp, policy):
        raise ImproperSspPolicyError(f"policy {policy} is improper")
    P, c = ssp.matrices
    rows = ssp.action_rows(policy)
    t = np.arange(ssp.n) != ssp.target
    Pm = P[rows][np.ix_(t, t)]
    A = np.eye(int(t.sum())) - Pm
    b = c[rows][t]
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ImproperSspPolicyError(str(exc)) from None
    x = x + np.linalg.solve(A, b - A @ x)
    J = np.zeros(ssp.n)
    J[t] = x
    return J


def q_values(ssp: SspInstance, J: np.ndarray) -> np.ndarray:
    P, c = ssp.matrices
    return c + P @ J


def greedy(ssp: SspInstance, J: np.ndarray, current: Optional[SspPolicy] = None, sense: str = "min") -> SspPolicy:
    """Best action per state against ``J``; the current action wins ties."""
    q = q_values(ssp, J)
    out = []
    for s, start in enumerate(ssp.starts):
        k = len(ssp.actions[s])
        vals = q[start : start + k]
        best = vals.min() if sense == "min" else vals.max()
        if current is not None and tol.close(vals[current[s]], best):
            out.append(current[s])
        else:
            out.append(int(next(i for i in range(k) if tol.close(vals[i], best))))
    return tuple(out)


@dataclass
class PIResult:
    policy: SspPolicy
    values: np.ndarray
    iterations: int


def policy_iteration(
    ssp: SspInstance, initial: Optional[SspPolicy] = None, sense: str = "min", max_iter: int = 10_000
) -> PIResult:
    """Howard's policy iteration; ``iterations`` counts evaluations."""
    policy = default_ssp_policy(ssp) if initial is None else tuple(initial)
    for k in range(1, max_iter + 1):
        J = evaluate(ssp, policy)
        new = greedy(ssp, J, policy, sense)
        if new == policy:
            return PIResult(policy, J, k)
        policy = new
    raise RuntimeError(f"policy iteration did not converge in {max_iter} rounds")


@dataclass
class VIResult:
    values: np.ndarray
    policy: SspPolicy
    iterations: int
    converged: bool
    history: Optional[list[float]] = None


def value_iteration(
    ssp: SspInstance,
    epsilon: float = tol.VI_EPSILON,
    max_iter: int = 1_000_000,
    J0: Optional[np.ndarray] = None,
    record: bool = False,
) -> VIResult:
    """Bellman iteration from ``J0`` (default 0) until the sup-norm update is ``<= epsilon``."""
    P, c = ssp.matrices
    starts = ssp.starts
    J = np.zeros(ssp.n) if J0 is None else np.array(J0, dtype=float)
    J[ssp.target] = 0.0
    history = [] if record else None
    converged = False
    k = 0
    while k < max_iter:
        k += 1
        Jn = np.minimum.reduceat(c + P @ J, starts)
        Jn[ssp.target] = 0.0
        d = float(np.abs(Jn - J).max())
        J = Jn
        if record:
            history.append(d)
        if d <= epsilon:
            converged = True
            break
    return VIResult(J, greedy(ssp, J), k, converged, history)


def bellman(ssp: SspInstance, J: np.ndarray, sense: str = "min") -> np.ndarray:
    P, c = ssp.matrices
    q = c + P @ J
    out = (np.minimum if sense == "min" else np.maximum).reduceat(q, ssp.starts)
    out[ssp.target] = 0.0
    return out


def bellman_residual(ssp: SspInstance, J: np.ndarray, sense: str = "min") -> float:
    return float(np.abs(bellman(ssp, J, sense) - J).max())


def vi_error_bound(result: VIResult, window: int = 20) -> float:
    """A-posteriori distance from the last VI iterate to the fixpoint.

    ``d * rho / (1 - rho)`` with ``d`` the last displacement and ``rho`` the
    largest displacement ratio over the last ``window`` steps.  Needs a run
    with ``record=True``.
    """
    h = np.asarray(result.history)
    if h.size < 2:
        return float(h[-1]) if h.size else 0.0
    tail = h[-window - 1 :]
    ratios = tail[1:] / np.where(tail[:-1] > 0, tail[:-1], 1.0)
    rho = float(min(ratios.max(), 1 - 1e-12))
    return float(h[-1] * rho / (1 - rho))


def instance_stats(ssp: SspInstance) -> dict:
    """Quantities parameterizing the value-iteration bound.

    ``eta``: smallest non-zero transition probability; ``delta``: bits
    needed to write every probability and cost as an exact fraction;
    ``r``: largest over state pairs of the fewest steps between them using
    any actions (``inf`` if some pair is disconnected).
    """
    eta = math.inf
    delta = 0
    adj = [set() for _ in range(ssp.n)]
    for s, acts in enumerate(ssp.actions):
        for act in acts:
            for t, p, cst in act:
                if p > 0:
                    eta = min(eta, p)
                    adj[s].add(t)
                for x in (p, cst):
                    fr = Fraction(x)
                    delta += abs(fr.numerator).bit_length() + fr.denominator.bit_length() + 1
    r = 0
    for s in range(ssp.n):
        dist = {s: 0}
        frontier = [s]
        while frontier:
            nxt = []
            for x in frontier:
                for y in adj[x]:
                    if y not in dist:
                        dist[y] = dist[x] + 1
                        nxt.append(y)
            frontier = nxt
        if len(dist) < ssp.n:
            r = math.inf
            break
        r = max(r, max(dist.values()))
    return {"n": ssp.n, "m": ssp.m, "eta": eta, "delta": delta, "r": r}


def pivi_shape(n: int, delta: int, c: float) -> float:
    """``n^2 log(n delta) / c`` with unit constant."""
    return n * n * math.log(n * delta) / c


# ---------------------------------------------------------------------------
# JSON


def ssp_to_dict(ssp: SspInstance) -> dict:
    return {
        "states": list(ssp.names),
        "target": ssp.target,
        "actions": [[[[t, p, c] for t, p, c in act] for act in acts] for acts in ssp.actions],
    }


def ssp_from_dict(d: dict) -> SspInstance:
    acts = [
        [[(int(t), float(p), float(c)) for t, p, c in act] for act in state_actions]
        for state_actions in d["actions"]
    ]
    return SspInstance(tuple(str(x) for x in d["states"]), int(d["target"]), acts)


def load_ssp(path) -> SspInstance:
    return ssp_from_dict(json.loads(Path(path).read_text()))


def save_ssp(ssp: SspInstance, path) -> None:
    Path(path).write_text(json.dumps(ssp_to_dict(ssp), indent=1))
