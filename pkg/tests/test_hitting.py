from dataclasses import replace

import numpy as np
import pytest

import fixtures as F
from gpro import hitting
from gpro.generators import make_instance, randomize_weights
from gpro.hitting import (
    DegenerateError,
    ImproperPolicyError,
    IrreducibleError,
    decompose,
    dump_csv,
    hitting_times,
    pagerank,
    residual,
    transition_matrix,
)
from gpro.model import Edge, Policy, SupportGraph, canonical_pro, default_policy, split_target
from gpro.oracle import brute_force_optimum, enumerate_policies
from gpro.pri import random_policy
from oracles import monte_carlo_phi, naive_q, pagerank_power, phi_fixed_point, phi_fundamental


def random_instances(count, seed=0, n=(4, 9), f=(0, 5), zap=False, weights=False):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        try:
            inst = make_instance("er", int(rng.integers(*n)), int(rng.integers(*f)), rng, p=float(rng.uniform(0.25, 0.7)))
        except ValueError:
            continue
        if weights:
            inst = randomize_weights(inst, rng)
        if zap:
            inst = replace(inst, zapping=float(rng.choice([0.05, 0.15, 0.3])))
        out.append((inst, random_policy(inst, rng)))
    return out


class TestTransitionMatrix:
    def test_normalizes_weights(self):
        inst = F.build(["vs", "a", "b", "vt"], [("vs", "a", 2), ("vs", "b"), ("vs", "vt"), ("a", "vt"), ("b", "vt")])
        Q = transition_matrix(inst, Policy())
        assert Q[0].tolist() == [0, 0.5, 0.25, 0.25]

    def test_canonical_uniform(self):
        inst = canonical_pro(
            F.build(["vs", "a", "b", "vt"], [("vs", "a", 7), ("vs", "b", 2), ("vs", "vt", 3), ("a", "vt"), ("b", "vt")])
        )
        assert np.allclose(transition_matrix(inst, Policy())[0, 1:], 1 / 3, rtol=0, atol=1e-15)

    def test_zapping_row(self):
        inst = F.build(["vs", "a", "b", "vt"], [("vs", "a"), ("a", "b"), ("b", "vt")], zapping=0.2)
        Q = transition_matrix(inst, Policy())
        expect = np.array([0.05, 0.85, 0.05, 0.05])
        assert np.abs(Q[0] - expect).max() < 1e-15
        Qn, _ = naive_q(inst, set())
        assert np.abs(Q - Qn).max() < 1e-15
        assert Q[3].tolist() == [0, 0, 0, 1]

    def test_restart_modes(self):
        base = F.build(["vs", "a", "b", "vt"], [("vs", "a"), ("a", "b"), ("b", "vt")], zapping=0.2)
        for mode in ("original", "no_target"):
            inst = replace(base, restart=mode)
            assert np.abs(transition_matrix(inst, Policy()) - naive_q(inst, set())[0]).max() < 1e-15

    def test_rows_stochastic(self):
        for inst, pol in random_instances(40, 1, zap=True, weights=True) + random_instances(40, 2):
            Q = transition_matrix(inst, pol)
            assert np.abs(Q.sum(axis=1) - 1).max() <= 1e-12
            assert (Q >= 0).all()

    def test_node_without_active_edge(self):
        inst = F.symmetric_pair()
        with pytest.raises(ImproperPolicyError) as err:
            transition_matrix(inst, Policy())
        assert err.value.nodes == (1,)


class TestHittingTimes:
    def test_chain(self):
        assert hitting_times(F.chain(), Policy()).tolist() == [2, 1, 0]

    def test_two_way_hand_solve(self):
        inst = F.two_way()
        phi = hitting_times(inst, Policy(frozenset({1})))
        assert abs(phi[0] - 1.5) < 1e-15 and phi[1] == 1 and phi[2] == 0

    def test_symmetric_three_cycle_matches_dense_inverse(self):
        g = SupportGraph(4, (Edge(0, 1), Edge(1, 2), Edge(2, 0), Edge(0, 3), Edge(1, 3), Edge(2, 3), Edge(3, 0)))
        inst, _ = split_target(g, 3)
        phi = hitting_times(inst, Policy())
        assert np.abs(phi - phi_fundamental(inst, set())).max() < 1e-12
        assert abs(phi[0] - 2) < 1e-12  # phi = 1 + phi / 2 on every cycle node

    def test_agrees_with_independent_solvers(self):
        for inst, pol in random_instances(60, 3, zap=False, weights=True) + random_instances(30, 4, zap=True):
            phi = hitting_times(inst, pol)
            assert np.abs(phi - phi_fundamental(inst, pol.active)).max() <= 1e-9 * (1 + np.abs(phi).max())
            assert np.abs(phi - phi_fixed_point(inst, pol.active)).max() <= 1e-8 * (1 + np.abs(phi).max())
            assert residual(inst, pol, phi) <= 1e-9

    def test_unit_costs_at_least_one(self):
        for inst, pol in random_instances(30, 5):
            phi = hitting_times(inst, pol)
            assert phi[inst.v_t] == 0
            assert (np.delete(phi, inst.v_t) >= 1 - 1e-12).all()

    def test_improper_policy(self):
        inst = F.build(["vs", "u", "vt"], [("vs", "u"), ("vs", "vt"), ("u", "u"), ("u", "vt", 1, 1, True)])
        with pytest.raises(ImproperPolicyError) as err:
            hitting_times(inst, Policy())
        assert 1 in err.value.nodes

    def test_sparse_path_matches_dense(self):
        for inst, pol in random_instances(20, 6, weights=True) + random_instances(20, 7, zap=True):
            dense = hitting_times(inst, pol)
            sparse = hitting._hitting_times_sparse(inst, pol, True)
            assert np.abs(dense - sparse).max() <= 1e-9 * (1 + np.abs(dense).max())

    def test_large_instance_uses_sparse_solver(self):
        inst = make_instance("powerlaw", 600, 20, 11)
        pol = default_policy(inst)
        phi = hitting_times(inst, pol)
        assert inst.n > hitting.DENSE_LIMIT
        Q, C = hitting.chain(inst, pol)
        keep = np.arange(inst.n) != inst.v_t
        A = np.eye(inst.n - 1) - Q[np.ix_(keep, keep)]
        assert np.abs(A @ phi[keep] - C[keep].sum(axis=1)).max() <= 1e-9

    def test_monte_carlo_sanity(self):
        rng = np.random.default_rng(12)
        for inst, pol in random_instances(10, 8, n=(3, 6), weights=True):
            phi = hitting_times(inst, pol)
            mean, se = monte_carlo_phi(inst, pol.active, inst.v_s, 1500, rng)
            assert abs(mean - phi[inst.v_s]) <= 3 * se + 1e-12

    def test_dump_csv(self, tmp_path):
        dump_csv(tmp_path / "d.csv", F.two_way(), Policy(frozenset({1})))
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "node,phi,vs,a,vt" and lines[1].startswith("vs,1.5,")


class TestPageRank:
    def test_two_cycle(self):
        inst, _ = split_target(SupportGraph(2, (Edge(0, 1), Edge(1, 0)), ("a", "v")), 1)
        pi = pagerank(inst, Policy())
        assert abs(pi[0] - 0.5) < 1e-15 and abs(pi[inst.v_t] - 0.5) < 1e-15 and pi[inst.v_s] == 0

    def test_renewal_identity_and_power_iteration(self):
        checked = 0
        cases = random_instances(60, 9) + [
            (replace(canonical_pro(i), zapping=0.15, restart="original"), p) for i, p in random_instances(20, 10)
        ]
        for inst, pol in cases:
            try:
                pi = pagerank(inst, pol)
            except IrreducibleError:
                continue
            checked += 1
            phi = hitting_times(inst, pol)
            assert abs(pi[inst.v_t] - 1 / phi[inst.v_s]) <= 1e-9
            assert abs(pi.sum() - 1) <= 1e-12
            M = hitting.merged_chain(inst, pol)
            assert np.abs(pi @ M - pi).max() <= 1e-12
            assert abs(pagerank_power(inst, pol.active) - pi[inst.v_t]) <= 1e-9
        assert checked >= 40

    def test_reducible_without_zapping(self):
        # b is entered only through an inactive free edge, so it is transient
        inst = F.build(["vs", "a", "b", "vt"], [("vs", "a"), ("a", "vt"), ("b", "vt"), ("vs", "b", 1, 1, True)])
        with pytest.raises(IrreducibleError):
            pagerank(inst, Policy())

    def test_argmax_pagerank_is_argmin_hitting_time(self):
        for inst, _ in random_instances(25, 13, f=(1, 7)):
            rows = []
            for p in enumerate_policies(inst):
                try:
                    rows.append((p.active, pagerank(inst, p)[inst.v_t], hitting_times(inst, p)[inst.v_s]))
                except IrreducibleError:
                    rows.append((p.active, None, hitting_times(inst, p)[inst.v_s]))
            good = [r for r in rows if r[1] is not None]
            if len(good) < len(rows):
                continue
            best_pi = max(r[1] for r in rows)
            best_phi = min(r[2] for r in rows)
            arg_pi = {r[0] for r in rows if abs(r[1] - best_pi) <= 1e-9 * best_pi}
            arg_phi = {r[0] for r in rows if abs(r[2] - best_phi) <= 1e-9 * (1 + best_phi)}
            assert arg_pi == arg_phi
            assert {p.active for p in brute_force_optimum(inst).policies} == arg_phi


class TestDecomposition:
    def test_forced_path(self):
        inst = F.build(["vs", "u", "w", "vt"], [("vs", "u"), ("u", "w"), ("w", "vt")])
        d = decompose(inst, Policy(), 1, 2)
        assert d.p_uv == 0 and d.phi_uw == 1 and d.p_uw == 1

    def test_direct_route(self):
        inst = F.build(["vs", "u", "w", "vt"], [("vs", "u"), ("vs", "w"), ("u", "vt"), ("w", "vt")])
        d = decompose(inst, Policy(), 1, 2)
        phi = hitting_times(inst, Policy())
        assert d.p_uv == 1 and d.phi_uv == phi[1]

    def test_reconstruction_random(self):
        for inst, pol in random_instances(15, 14, n=(5, 6), weights=True) + random_instances(10, 15, zap=True):
            phi = hitting_times(inst, pol)
            for u in range(inst.n):
                for w in range(inst.n):
                    if len({u, w, inst.v_t}) < 3:
                        continue
                    d = decompose(inst, pol, u, w)
                    assert 0 <= d.p_uv <= 1
                    assert abs(d.reconstruct(phi[w]) - phi[u]) <= 1e-8

    def test_invalid_arguments(self):
        inst = F.chain()
        with pytest.raises(ValueError):
            decompose(inst, Policy(), 0, 2)

    def test_degenerate(self):
        # u is trapped in a loop that meets neither w nor v_t (not a valid instance, built on purpose)
        inst = F.build(["vs", "u", "w", "vt"], [("vs", "w"), ("u", "u"), ("w", "vt")])
        with pytest.raises(DegenerateError):
            decompose(inst, Policy(), 1, 2)
