from dataclasses import replace

import numpy as np
import pytest

from gpro.generators import make_instance, random_ssp
from gpro.hitting import hitting_times
from gpro.model import canonical_pro, default_policy
from gpro.oracle import ssp_brute_force
from gpro.reductions import gpro_to_ssp
from gpro.ssp import (
    ImproperSspPolicyError,
    SspInstance,
    bellman_residual,
    evaluate,
    instance_stats,
    is_proper,
    load_ssp,
    policy_iteration,
    save_ssp,
    pivi_shape,
    validate_ssp,
    value_iteration,
    vi_error_bound,
)
from oracles import ssp_bellman


def coin_flip():
    return SspInstance.build([[((1, 0.5, 1.0), (0, 0.5, 1.0))], [((1, 1.0, 0.0),)]], target=1)


def toy():
    # state 0: safe action (cost 5 to target) or a gamble through state 1
    return SspInstance.build(
        [
            [((2, 1.0, 5.0),), ((1, 1.0, 1.0),)],
            [((2, 0.5, 1.0), (0, 0.5, 1.0)), ((2, 1.0, 4.0),)],
            [((2, 1.0, 0.0),)],
        ],
        target=2,
    )


class TestEvaluate:
    def test_deterministic(self):
        ssp = SspInstance.build([[((1, 1.0, 3.0),)], [((1, 1.0, 0.0),)]], target=1)
        assert evaluate(ssp, (0, 0)).tolist() == [3.0, 0.0]

    def test_coin_flip_geometric(self):
        assert abs(evaluate(coin_flip(), (0, 0))[0] - 2.0) < 1e-15

    def test_improper(self):
        ssp = SspInstance.build([[((0, 1.0, 1.0),), ((1, 1.0, 1.0),)], [((1, 1.0, 0.0),)]], target=1)
        assert not is_proper(ssp, (0, 0)) and is_proper(ssp, (1, 0))
        with pytest.raises(ImproperSspPolicyError):
            evaluate(ssp, (0, 0))
        assert validate_ssp(ssp) != []

    def test_reduced_gpro_matches_hitting_times(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            inst = make_instance("er", int(rng.integers(3, 8)), int(rng.integers(0, 5)), rng, p=0.5)
            ssp, m = gpro_to_ssp(inst)
            pol = default_policy(inst)
            J = evaluate(ssp, m.forward(pol))
            phi = hitting_times(inst, pol)
            assert np.abs(J[: inst.n] - phi).max() <= 1e-9 * (1 + phi.max())

    def test_validation(self):
        assert validate_ssp(toy()) == []
        bad = SspInstance.build([[((1, 0.5, 1.0),)], [((1, 1.0, 0.0),)]], target=1)
        assert validate_ssp(bad)


class TestPolicyIteration:
    def test_single_action(self):
        r = policy_iteration(coin_flip())
        assert r.iterations == 1 and r.policy == (0, 0)

    def test_toy_against_enumeration(self):
        ssp = toy()
        best = ssp_brute_force(ssp)
        # by hand: J1 = min(0.5 + 0.5 (1 + J0), 4), J0 = min(5, 1 + J1) -> J0 = 4, J1 = 3
        assert np.allclose(best.values, [4, 3, 0], rtol=0, atol=1e-12)
        for start in [(0, 0, 0), (1, 1, 0), (0, 1, 0)]:
            r = policy_iteration(ssp, start)
            assert np.abs(r.values - best.values).max() < 1e-12
            assert r.policy in best.policies

    def test_random_against_enumeration(self):
        for seed in range(60):
            ssp = random_ssp(int(np.random.default_rng(seed).integers(2, 7)), seed)
            best = ssp_brute_force(ssp)
            r = policy_iteration(ssp)
            assert np.abs(r.values - best.values).max() <= 1e-9 * (1 + best.values.max())
            assert np.abs(ssp_bellman(ssp, r.values) - r.values).max() <= 1e-9 * (1 + r.values.max())

    def test_maximization(self):
        ssp = toy()
        r = policy_iteration(ssp, sense="max")
        assert np.allclose(r.values, ssp_brute_force(ssp, "max").values, rtol=0, atol=1e-12)

    def test_reduced_pro_matches_pri(self):
        from gpro.pri import solve

        rng = np.random.default_rng(2)
        for _ in range(30):
            inst = make_instance("er", int(rng.integers(3, 8)), int(rng.integers(1, 6)), rng, p=0.5)
            ssp, m = gpro_to_ssp(inst)
            r = policy_iteration(ssp, m.forward(default_policy(inst)))
            assert abs(r.values[inst.v_s] - solve(inst).value(inst)) <= 1e-9


class TestValueIteration:
    def test_deterministic_chain_exact(self):
        n = 6
        acts = [[((s + 1, 1.0, 1.0),)] for s in range(n - 1)] + [[((n - 1, 1.0, 0.0),)]]
        ssp = SspInstance.build(acts, target=n - 1)
        r = value_iteration(ssp)
        assert r.converged and r.iterations <= n
        assert r.values.tolist() == [5, 4, 3, 2, 1, 0]

    def test_matches_pi_on_random(self):
        for seed in range(40):
            ssp = random_ssp(6, seed)
            vi = value_iteration(ssp, record=True)
            pi = policy_iteration(ssp)
            assert vi.converged
            assert np.abs(vi.values - pi.values).max() <= 10 * vi_error_bound(vi) + 1e-12

    def test_zapping_decay_and_pi_le_vi(self):
        rng = np.random.default_rng(3)
        for c in (0.05, 0.15, 0.3):
            for _ in range(4):
                inst = replace(canonical_pro(make_instance("er", 19, 4, rng, p=0.3)), zapping=c)
                ssp, m = gpro_to_ssp(inst)
                vi = value_iteration(ssp, record=True)
                pi = policy_iteration(ssp, m.forward(default_policy(inst)))
                assert pi.iterations <= vi.iterations
                # the target receives c/n of every zap, and a chooser copy zaps on its next step
                h = np.array(vi.history)
                rho2 = 1 - c / inst.n
                assert (h[2:] <= rho2 * h[:-2] * (1 + 1e-9) + 1e-15).all()
                assert bellman_residual(ssp, pi.values) <= 1e-9 * (1 + pi.values.max())
                assert np.abs(vi.values - pi.values).max() <= 10 * vi_error_bound(vi)

    def test_iteration_cap(self):
        r = value_iteration(coin_flip(), epsilon=1e-300, max_iter=5)
        assert not r.converged and r.iterations == 5


class TestStatsAndIO:
    def test_stats(self):
        s = instance_stats(coin_flip())
        assert s["eta"] == 0.5
        assert s["r"] == float("inf")  # nothing leaves the target
        assert s["delta"] > 0
        s2 = instance_stats(toy())
        assert s2["n"] == 3 and s2["m"] == 5

    def test_shape(self):
        assert pivi_shape(10, 100, 0.5) == pytest.approx(200 * np.log(1000))

    def test_json_round_trip(self, tmp_path):
        ssp = random_ssp(5, 4)
        save_ssp(ssp, tmp_path / "s.json")
        assert load_ssp(tmp_path / "s.json") == ssp
