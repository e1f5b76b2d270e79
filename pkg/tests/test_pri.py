import json
from dataclasses import replace

import numpy as np
import pytest

import fixtures as F
from gpro import pri
from gpro.bench import check_fbound_run, check_threshold_rule
from gpro.generators import make_instance, randomize_weights
from gpro.hitting import hitting_times
from gpro.model import Policy, default_policy
from gpro.oracle import brute_force_optimum, enumerate_policies
from gpro.pri import (
    NumericalFaultError,
    final_decisions,
    greedy_improve,
    guard_limit,
    iteration_count,
    random_policy,
    solve,
)


def tie_instance():
    # off: phi_vs = 2 = K(vs,a) + phi_a
    return F.build(["vs", "a", "vt"], [("vs", "vt", 1, 2), ("vs", "a", 1, 1, True), ("a", "vt")])


class TestGreedy:
    def test_deactivates_losing_edge(self):
        inst = F.two_way()
        on = Policy(frozenset({1}))
        phi = hitting_times(inst, on)
        assert greedy_improve(inst, on, phi).active == frozenset()

    def test_exact_tie_non_strict(self):
        inst = tie_instance()
        off = Policy()
        phi = hitting_times(inst, off)
        assert phi[0] == 2
        assert greedy_improve(inst, off, phi, ties="activate").active == {1}

    def test_exact_tie_keeps_state(self):
        inst = tie_instance()
        for pol in (Policy(), Policy(frozenset({1}))):
            phi = hitting_times(inst, pol)
            assert greedy_improve(inst, pol, phi) == pol

    def test_no_free_edges(self):
        inst = F.chain()
        phi = hitting_times(inst, Policy())
        assert greedy_improve(inst, Policy(), phi) == Policy()

    def test_group_picks_cheapest_head(self):
        inst = F.build(
            ["vs", "x", "a", "b", "vt"],
            [("vs", "x"), ("x", "a", 1, 1, True), ("x", "b", 1, 1, True), ("a", "vt"), ("b", "a")],
        )
        pol = Policy(frozenset({2}))
        phi = hitting_times(inst, pol)
        assert greedy_improve(inst, pol, phi).active == {1}
        assert greedy_improve(inst, Policy(frozenset({1})), hitting_times(inst, Policy(frozenset({1}))), "min").active == {2}

    def test_group_tie_keeps_current(self):
        inst = F.symmetric_pair()
        for e in (1, 2):
            pol = Policy(frozenset({e}))
            assert greedy_improve(inst, pol, hitting_times(inst, pol)) == pol

    def test_bad_arguments(self):
        inst = F.two_way()
        phi = hitting_times(inst, Policy())
        with pytest.raises(ValueError):
            greedy_improve(inst, Policy(), phi, sense="up")
        with pytest.raises(ValueError):
            greedy_improve(inst, Policy(), phi, ties="flip")


class TestSolve:
    def test_no_free_edges_single_evaluation(self):
        t = solve(F.chain())
        assert t.iteration_count == 1 and t.improvements == 0 and t.policy == Policy() and t.converged

    def test_two_way_trace(self):
        inst = F.two_way()
        t = solve(inst)
        assert t.iteration_count == 2 and t.improvements == 1
        assert t.policy == Policy() and t.value(inst) == 1
        assert t.steps[0].phi.tolist() == [1.5, 1, 0]

    def test_barrier_fixture(self):
        inst = F.barrier()
        t = solve(inst)
        # {a, b} -> {a} -> {} : phi_vs 13/3, 3/2, 1
        assert [sorted(s.policy.active) for s in t.steps] == [[1, 2], [1], []]
        assert np.allclose([s.phi[0] for s in t.steps], [13 / 3, 1.5, 1.0], rtol=0, atol=1e-14)
        assert t.improvements == inst.f == 2 and t.iteration_count == 3

    @pytest.mark.parametrize("name", sorted(F.ALL))
    def test_fixtures_match_oracle(self, name):
        inst = F.ALL[name]()
        for sense in ("max", "min"):
            t = solve(inst, sense=sense)
            best = brute_force_optimum(inst, sense)
            assert abs(t.value(inst) - best.value) <= 1e-9
            assert best.contains(t.policy)

    def test_random_n8_f4_match_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            inst = make_instance("er", 8, 4, rng, p=float(rng.uniform(0.2, 0.8)))
            t = solve(inst)
            best = brute_force_optimum(inst)
            assert abs(t.value(inst) - best.value) <= 1e-9 and best.contains(t.policy)

    def test_weighted_zapping_and_minimization(self):
        rng = np.random.default_rng(6)
        for k in range(60):
            inst = randomize_weights(make_instance("er", int(rng.integers(3, 8)), int(rng.integers(1, 6)), rng, p=0.5), rng)
            if k % 2:
                inst = replace(inst, zapping=float(rng.choice([0.05, 0.15, 0.3])), restart=["all", "original", "no_target"][k % 3])
            sense = "min" if k % 3 == 0 else "max"
            t = solve(inst, random_policy(inst, rng), sense=sense)
            best = brute_force_optimum(inst, sense)
            assert abs(t.value(inst) - best.value) <= 1e-9 * (1 + best.value)
            assert best.contains(t.policy)

    def test_monotone_and_greedy_stable(self):
        rng = np.random.default_rng(7)
        for _ in range(80):
            inst = make_instance("er", int(rng.integers(4, 10)), int(rng.integers(1, 8)), rng, p=0.4)
            t = solve(inst, random_policy(inst, rng))
            for a, b in zip(t.steps, t.steps[1:]):
                scale = 1e-9 * (1 + np.abs(a.phi).max())
                assert (b.phi <= a.phi + scale).all()
                assert (a.phi - b.phi).max() > scale  # the whole vector strictly improves
                assert b.phi[inst.v_s] <= a.phi[inst.v_s] + scale
            assert greedy_improve(inst, t.policy, t.phi) == t.policy

    def test_start_independence(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            inst = make_instance("er", 6, int(rng.integers(1, 7)), rng, p=0.5)
            vals = {round(solve(inst, p).value(inst), 9) for p in enumerate_policies(inst)}
            assert len(vals) == 1

    def test_guard_trip(self):
        t = solve(F.barrier(), guard=1)
        assert t.termination == "guard-tripped" and not t.converged
        assert guard_limit(F.barrier()) == 5

    def test_objective_increase_is_a_fault(self, monkeypatch):
        inst = F.two_way()
        calls = iter([np.array([1.5, 1.0, 0.0]), np.array([3.0, 1.0, 0.0])])
        monkeypatch.setattr(pri, "hitting_times", lambda *_: next(calls))
        with pytest.raises(NumericalFaultError):
            solve(inst)

    def test_infeasible_start(self):
        with pytest.raises(ValueError):
            solve(F.symmetric_pair(), Policy())

    def test_trace_json(self):
        inst = F.barrier()
        d = solve(inst).to_dict(inst)
        again = json.loads(json.dumps(d))
        assert [x["policy"] for x in again["iterations"]] == ["11", "10", "00"]
        assert again["improvements"] == 2 and again["termination"] == "converged"


class TestIterationCounts:
    def test_summary(self):
        inst = F.barrier()
        rng = np.random.default_rng(0)
        s = iteration_count(inst, [None] + [random_policy(inst, rng) for _ in range(5)])
        assert s["runs"] == 6 and s["max"] == 3 and s["max_improvements"] == 2 and s["exceeding_f"] == []

    def test_single_free_edge_at_most_two(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            inst = make_instance("er", int(rng.integers(3, 9)), 1, rng, p=0.4)
            for start in enumerate_policies(inst):
                assert solve(inst, start).iteration_count <= 2

    @pytest.mark.parametrize("mode", ["single_source", "source_vs", "source_vs_and_w"])
    def test_fbound_families(self, mode):
        rng = np.random.default_rng(10)
        for _ in range(40):
            f = int(rng.integers(2, 7))
            inst = make_instance("er", int(rng.integers(f + 2, 11)), f, rng, p=0.8, mode=mode)
            starts = [default_policy(inst)] + [random_policy(inst, rng) for _ in range(5)]
            for s in starts:
                t = solve(inst, s)
                assert t.improvements <= inst.f
                assert all(c >= 1 for c in final_decisions(t))
                assert check_fbound_run(inst, t) == []
                if mode == "source_vs":
                    assert check_threshold_rule(inst, t) == []

    def test_dominance_detected_when_broken(self):
        # a fabricated trace in which another node gains more than w is flagged
        inst = make_instance("er", 7, 3, 3, p=0.8, mode="single_source")
        t = solve(inst, Policy())
        w = next(inst.edges[k].src for k in inst.free_edges)
        other = next(i for i in range(inst.n) if i not in (w, inst.v_t, inst.v_s))
        fake_phi = t.steps[0].phi.copy()
        fake_phi[other] += 5.0
        fake = pri.PriTrace([pri.Step(t.steps[0].policy, fake_phi, frozenset({inst.free_edges[0]})), t.steps[-1]], "converged")
        assert any("fell more" in p for p in check_fbound_run(inst, fake))

    def test_final_decisions(self):
        t = solve(F.barrier())
        assert final_decisions(t) == [1, 1]
