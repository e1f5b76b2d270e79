"""Exact policy evaluation: transition matrices, first hitting times, PageRank.

All quantities are computed by direct linear solves on the chain induced
by a policy.  Small chains use dense LAPACK; large ones use a sparse LU
(``scipy.sparse.linalg.splu``) with the zapping term folded in by a
rank-one update.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from . import tolerances as tol
from .model import GproInstance, Policy, reachable_to

DENSE_LIMIT = 400


class ImproperPolicyError(ValueError):
    """The policy leaves some node unable to reach the target."""

    def __init__(self, message: str, nodes=()):
        self.nodes = tuple(nodes)
        super().__init__(message)


class IrreducibleError(ValueError):
    pass


class DegenerateError(ValueError):
    pass


def restart_vector(instance: GproInstance) -> np.ndarray:
    """Restart distribution used by zapping, over the split nodes."""
    r = np.ones(instance.n)
    if instance.restart == "original":
        r[instance.v_s] = 0.0
    elif instance.restart == "no_target":
        r[instance.v_t] = 0.0
    return r / r.sum()


def _active(instance: GproInstance, policy: Policy):
    a = instance.arrays
    m = policy.mask(instance)
    return a["src"][m], a["dst"][m], a["weight"][m], a["cost"][m]


def _row_sums(instance, src, w):
    rs = np.bincount(src, weights=w, minlength=instance.n)
    if not np.all(rs > 0):
        bad = np.flatnonzero(rs <= 0)
        names = ", ".join(instance.names[i] for i in bad)
        raise ImproperPolicyError(f"no active out-edge at {names}", bad)
    return rs


def chain(instance: GproInstance, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``(Q, C)``: transition probabilities and cost-weighted transitions.

    ``C[i, j]`` is the expected cost contributed by moving from i to j, so
    ``C.sum(axis=1)`` is the expected one-step cost.
    """
    n = instance.n
    src, dst, w, k = _active(instance, policy)
    rs = _row_sums(instance, src, w)
    p = w / rs[src]
    Q = np.zeros((n, n))
    C = np.zeros((n, n))
    Q[src, dst] = p
    C[src, dst] = p * k
    c = instance.zapping
    if c:
        r = restart_vector(instance)
        rows = np.ones(n, dtype=bool)
        rows[instance.v_t] = False
        Q[rows] = (1 - c) * Q[rows] + c * r
        C[rows] = (1 - c) * C[rows] + c * tol.ZAP_COST * r
    Q[instance.v_t] = 0.0
    Q[instance.v_t, instance.v_t] = 1.0
    C[instance.v_t] = 0.0
    return Q, C


def transition_matrix(instance: GproInstance, policy: Policy) -> np.ndarray:
    """Row-stochastic ``Q`` of the policy's chain (dense)."""
    return chain(instance, policy)[0]


def step_costs(instance: GproInstance, policy: Policy) -> np.ndarray:
    return chain(instance, policy)[1].sum(axis=1)


def _zap_reaches_target(instance: GproInstance) -> bool:
    return bool(instance.zapping) and instance.restart != "no_target"


def _check_reach(instance: GproInstance, Q: np.ndarray):
    reach = np.zeros(instance.n, dtype=bool)
    reach[instance.v_t] = True
    link = Q > 0
    while True:
        nxt = reach | link[:, reach].any(axis=1)
        if nxt.sum() == reach.sum():
            break
        reach = nxt
    if not reach.all():
        bad = np.flatnonzero(~reach)
        names = ", ".join(instance.names[i] for i in bad)
        raise ImproperPolicyError(f"v_t unreachable from {names}", bad)


def _dense_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ImproperPolicyError(f"singular hitting-time system: {exc}") from None
    r = b - A @ x
    if np.abs(r).max(initial=0.0) > tol.RESIDUAL * 0.1:
        x = x + np.linalg.solve(A, r)
    return x


def hitting_times(instance: GproInstance, policy: Policy, check: bool = True) -> np.ndarray:
    """Expected accumulated cost from every node to ``v_t`` (``phi[v_t] == 0``).

    With ``check`` the policy is first tested for properness by reachability,
    which turns a singular system into an error naming the stranded nodes.
    """
    if instance.n > DENSE_LIMIT:
        return _hitting_times_sparse(instance, policy, check)
    Q, C = chain(instance, policy)
    if check and not _zap_reaches_target(instance):
        _check_reach(instance, Q)
    t = np.ones(instance.n, dtype=bool)
    t[instance.v_t] = False
    A = np.eye(int(t.sum())) - Q[np.ix_(t, t)]
    b = C[t].sum(axis=1)
    phi = np.zeros(instance.n)
    phi[t] = _dense_solve(A, b)
    return phi


def _hitting_times_sparse(instance: GproInstance, policy: Policy, check: bool) -> np.ndarray:
    n, vt = instance.n, instance.v_t
    src, dst, w, k = _active(instance, policy)
    rs = _row_sums(instance, src, w)
    p = w / rs[src]
    cost = np.bincount(src, weights=p * k, minlength=n)
    c = instance.zapping or 0.0
    if check and not _zap_reaches_target(instance):
        seen = reachable_to(n, zip(src.tolist(), dst.tolist()), vt)
        if not seen.all():
            raise ImproperPolicyError("v_t unreachable", np.flatnonzero(~seen))
    keep = np.arange(n) != vt
    idx = -np.ones(n, dtype=np.intp)
    idx[keep] = np.arange(n - 1)
    m = (src != vt) & (dst != vt)
    P = sp.csr_matrix(((1 - c) * p[m], (idx[src[m]], idx[dst[m]])), shape=(n - 1, n - 1))
    B = (sp.identity(n - 1, format="csc") - P).tocsc()
    b = (1 - c) * cost[keep] + c * tol.ZAP_COST
    try:
        lu = splu(B)
    except RuntimeError as exc:
        raise ImproperPolicyError(f"singular hitting-time system: {exc}") from None

    def solve(rhs):
        x = lu.solve(rhs)
        return x + lu.solve(rhs - B @ x)

    x = solve(b)
    if c:
        # (B - c 1 r^T) x = b  via Sherman-Morrison
        r = restart_vector(instance)[keep]
        y = solve(np.ones(n - 1))
        x = x + y * (c * (r @ x)) / (1 - c * (r @ y))
    phi = np.zeros(n)
    phi[keep] = x
    return phi


def residual(instance: GproInstance, policy: Policy, phi: np.ndarray) -> float:
    """``||(I - Q~) phi - k~||_inf`` with the v_t row and column deleted."""
    Q, C = chain(instance, policy)
    t = np.arange(instance.n) != instance.v_t
    A = np.eye(int(t.sum())) - Q[np.ix_(t, t)]
    return float(np.abs(A @ phi[t] - C[t].sum(axis=1)).max(initial=0.0))


def merged_chain(instance: GproInstance, policy: Policy) -> np.ndarray:
    """Transition matrix with v_s and v_t merged back into one node.

    Indexed like the split instance; the merged node lives at ``v_t`` and the
    ``v_s`` row/column are zero.
    """
    Q, _ = chain(instance, policy)
    M = Q.copy()
    M[instance.v_t] = Q[instance.v_s]
    M[:, instance.v_t] += M[:, instance.v_s]
    M[:, instance.v_s] = 0.0
    M[instance.v_s] = 0.0
    return M


def pagerank(instance: GproInstance, policy: Policy) -> np.ndarray:
    """Stationary distribution of the merged chain.

    Returned over the split node indices: ``pi[v_t]`` is the PageRank of the
    original target and ``pi[v_s]`` is 0.
    """
    M = merged_chain(instance, policy)
    keep = np.arange(instance.n) != instance.v_s
    P = M[np.ix_(keep, keep)]
    m = P.shape[0]
    ncomp, _ = connected_components(sp.csr_matrix(P > 0), directed=True, connection="strong")
    if ncomp != 1:
        raise IrreducibleError(f"merged chain has {ncomp} strongly connected components")
    A = (np.eye(m) - P).T
    A[-1] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    pi_k = np.linalg.solve(A, b)
    pi_k = pi_k + np.linalg.solve(A, b - A @ pi_k)
    pi = np.zeros(instance.n)
    pi[keep] = pi_k
    return pi


@dataclass(frozen=True)
class Decomposition:
    """Split of ``phi_u`` at the first visit of ``w``.

    ``p_uv``: probability of reaching v_t without visiting w.
    ``phi_uv``: mean cost of those w-avoiding paths (0 when there are none).
    ``phi_uw``: mean cost from u to the first visit of w, given w comes first
    (0 when w is never reached first).
    """

    p_uv: float
    phi_uv: float
    phi_uw: float

    @property
    def p_uw(self) -> float:
        return 1.0 - self.p_uv

    def reconstruct(self, phi_w: float) -> float:
        return self.p_uv * self.phi_uv + self.p_uw * (self.phi_uw + phi_w)


def decompose(instance: GproInstance, policy: Policy, u: int, w: int) -> Decomposition:
    vt = instance.v_t
    if len({u, w, vt}) != 3:
        raise ValueError("u, w and v_t must be distinct")
    Q, C = chain(instance, policy)
    t = np.ones(instance.n, dtype=bool)
    t[[w, vt]] = False
    A = np.eye(int(t.sum())) - Q[np.ix_(t, t)]
    try:
        hv = np.zeros(instance.n)
        hv[vt] = 1.0
        hv[t] = np.linalg.solve(A, Q[t, vt])
        hw = np.zeros(instance.n)
        hw[w] = 1.0
        hw[t] = np.linalg.solve(A, Q[t, w])
        gv = np.zeros(instance.n)
        gv[t] = np.linalg.solve(A, C[t] @ hv)
        gw = np.zeros(instance.n)
        gw[t] = np.linalg.solve(A, C[t] @ hw)
    except np.linalg.LinAlgError:
        raise DegenerateError(f"taboo chain avoiding {instance.names[w]} is singular") from None
    p_uv, p_uw = min(max(hv[u], 0.0), 1.0), min(max(hw[u], 0.0), 1.0)
    if p_uv + p_uw < 1 - tol.DECOMPOSITION:
        raise DegenerateError(
            f"from {instance.names[u]} neither v_t nor {instance.names[w]} is reached almost surely"
        )
    phi_uv = gv[u] / p_uv if p_uv > 0 else 0.0
    phi_uw = gw[u] / p_uw if p_uw > 0 else 0.0
    return Decomposition(float(p_uv), float(phi_uv), float(phi_uw))


def dump_csv(path, instance: GproInstance, policy: Policy) -> None:
    """Debug dump: one row per node with phi followed by the Q row."""
    Q = transition_matrix(instance, policy)
    phi = hitting_times(instance, policy)
    lines = ["node,phi," + ",".join(instance.names)]
    for i, name in enumerate(instance.names):
        lines.append(f"{name},{float(phi[i])!r}," + ",".join(repr(float(x)) for x in Q[i]))
    Path(path).write_text("\n".join(lines) + "\n")
