import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_rl_lab.envs import make_cb_env, make_tree_env
from latent_rl_lab.mdp import (
    FiniteDistribution,
    Policy,
    TabularMDP,
    bellman_backup,
    dumps_mdp,
    enumerate_deterministic_policies,
    hellinger_sq,
    loads_mdp,
    mdp_equal,
    occupancy,
    policy_value,
    random_mdp,
    sample_trajectory,
    validate_mdp,
    value_iteration,
)
from latent_rl_lab.oracle import random_policy


def one_state_mdp(H=1):
    probs = np.zeros((H, 1, 1, 2))
    probs[..., 1] = 1.0 / H if H == 1 else 0.0
    probs[..., 0] = 1.0 - probs[..., 1]
    if H == 1:
        return TabularMDP(np.ones(1), np.zeros((0, 1, 1, 1)), probs, np.array([0.0, 1.0]))
    return TabularMDP(np.ones(1), np.ones((H - 1, 1, 1, 1)), probs, np.array([0.0, 1.0]))


# distributions -------------------------------------------------------------------


def test_distribution_invariants():
    with pytest.raises(ValueError):
        FiniteDistribution([0, 1], [0.5, 0.6])
    with pytest.raises(ValueError):
        FiniteDistribution([0, 0], [0.5, 0.5])
    with pytest.raises(ValueError):
        FiniteDistribution([0, 1], [1.5, -0.5])
    assert FiniteDistribution.point(3).mean() == 3.0


def test_hellinger_examples():
    p = FiniteDistribution([0, 1], [0.3, 0.7])
    assert hellinger_sq(p, p) == 0.0
    assert hellinger_sq(FiniteDistribution.point(1), FiniteDistribution.point(0)) == pytest.approx(2.0)
    b0 = FiniteDistribution([0, 1], [1.0, 0.0])
    bh = FiniteDistribution([0, 1], [0.5, 0.5])
    assert hellinger_sq(b0, bh) == pytest.approx(2 - math.sqrt(2), abs=1e-12)


probs3 = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3)


def _dist(v):
    v = np.asarray(v) / np.sum(v)
    return FiniteDistribution(range(3), v / v.sum())


@settings(max_examples=60, deadline=None)
@given(probs3, probs3, probs3)
def test_hellinger_metric_properties(a, b, c):
    p, q, r = _dist(a), _dist(b), _dist(c)
    d = hellinger_sq(p, q)
    assert -1e-12 <= d <= 2 + 1e-12
    assert d == pytest.approx(hellinger_sq(q, p), abs=1e-12)
    assert math.sqrt(hellinger_sq(p, r)) <= math.sqrt(d) + math.sqrt(hellinger_sq(q, r)) + 1e-10


def test_hellinger_disjoint_supports_union():
    p = FiniteDistribution(["a"], [1.0])
    q = FiniteDistribution(["b"], [1.0])
    assert hellinger_sq(p, q) == pytest.approx(2.0)


# validation ---------------------------------------------------------------------


def test_validate_trivial_and_tree():
    assert validate_mdp(one_state_mdp())
    assert validate_mdp(make_tree_env(4).base)


def test_validate_reports_bad_row():
    M = random_mdp(3, 2, 3, np.random.default_rng(0))
    trans = M.trans.copy()
    trans[1, 2, 1] *= 0.9
    rep = validate_mdp(TabularMDP(M.init, trans, M.reward_probs, M.reward_grid))
    assert not rep
    assert rep.where == ("trans", 2, 2, 1)


def test_validate_total_reward():
    M = random_mdp(2, 2, 2, np.random.default_rng(1))
    probs = np.zeros_like(M.reward_probs)
    probs[..., -1] = 1.0
    big = TabularMDP(M.init, M.trans, probs, np.array([0.0, 0.9]))
    rep = validate_mdp(big)
    assert not rep and rep.where == ("total_reward",)


# dynamic programming ------------------------------------------------------------


def test_tree_and_cb_optimal_values():
    for N in (4, 8):
        assert value_iteration(make_tree_env(N).base).J == pytest.approx(1.0)
    cb = make_cb_env(4).base
    assert value_iteration(cb).J == pytest.approx(1.0)
    assert policy_value(cb, Policy.uniform(1, 4, 4)).J == pytest.approx(0.25)


@pytest.mark.parametrize("seed", range(5))
def test_value_iteration_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    M = random_mdp(3, 2, 2, rng, reward_levels=3)
    vt = value_iteration(M)
    best = max(policy_value(M, p).J for p in enumerate_deterministic_policies(M.H, M.S, M.A))
    assert vt.J == pytest.approx(best, abs=1e-12)
    assert policy_value(M, vt.greedy).J == pytest.approx(vt.J, abs=1e-10)
    assert np.allclose(vt.V, vt.Q.max(axis=-1))
    assert vt.J == pytest.approx(M.init @ vt.V[0])


def test_greedy_tie_breaks_to_smallest_index():
    probs = np.zeros((1, 1, 3, 2))
    probs[..., 0] = 1.0
    M = TabularMDP(np.ones(1), np.zeros((0, 1, 3, 1)), probs, np.array([0.0, 1.0]))
    assert np.argmax(value_iteration(M).greedy.table[0, 0]) == 0


def test_policy_value_horizon_mismatch():
    M = random_mdp(2, 2, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        policy_value(M, Policy.uniform(2, 2, 2))


def test_policy_value_monte_carlo():
    rng = np.random.default_rng(3)
    M = random_mdp(3, 2, 3, rng, reward_levels=3)
    pi = random_policy(3, 3, 2, rng)
    J = policy_value(M, pi).J
    rets = np.array([sample_trajectory(M, pi, rng).ret for _ in range(100_000)])
    se = rets.std() / math.sqrt(len(rets))
    assert abs(rets.mean() - J) <= 3 * se


def test_occupancy_examples():
    d = occupancy(one_state_mdp(3), Policy.uniform(3, 1, 1)).d_s
    assert np.allclose(d, 1.0)
    tree = make_tree_env(4).base
    block = 7
    roots = np.arange(4) * block
    d = occupancy(tree, Policy.deterministic(np.zeros((3, tree.S), int), 2)).d_s
    assert np.allclose(d[0, roots], 0.25)
    assert np.allclose(d[1, roots + 1], 0.25)  # left child of each root


def _enumerated_occupancy(M, pi):
    d = np.zeros((M.H, M.S, M.A))
    for path in itertools.product(range(M.S), range(M.A), repeat=M.H):
        s, a = path[0::2], path[1::2]
        p = M.init[s[0]]
        for h in range(M.H):
            p *= pi.table[h, s[h], a[h]]
            if h < M.H - 1:
                p *= M.trans[h, s[h], a[h], s[h + 1]]
        for h in range(M.H):
            d[h, s[h], a[h]] += p
    return d


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.integers(1, 3), st.integers(0, 10_000))
def test_occupancy_properties(S, A, H, seed):
    rng = np.random.default_rng(seed)
    M = random_mdp(S, A, H, rng, sparsity=0.3)
    pi = random_policy(H, S, A, rng)
    d = occupancy(M, pi).d_sa
    assert np.allclose(d.sum(axis=(1, 2)), 1.0, atol=1e-10)
    assert np.allclose(d, _enumerated_occupancy(M, pi), atol=1e-12)
    vt = value_iteration(M)
    assert policy_value(M, vt.greedy).J == pytest.approx(vt.J, abs=1e-10)


def test_bellman_backup():
    rng = np.random.default_rng(5)
    M = random_mdp(3, 2, 3, rng, reward_levels=3)
    assert np.allclose(bellman_backup(M, 2, np.zeros((3, 2))), M.mean_reward[1])
    assert np.allclose(bellman_backup(M, 3), M.mean_reward[2])
    f = rng.random((3, 2))
    direct = np.zeros((3, 2))
    for s in range(3):
        for a in range(2):
            direct[s, a] = sum(M.reward_grid[g] * M.reward_probs[0, s, a, g] for g in range(len(M.reward_grid)))
            direct[s, a] += sum(M.trans[0, s, a, t] * max(f[t]) for t in range(3))
    assert np.allclose(bellman_backup(M, 1, f), direct, atol=1e-14)
    with pytest.raises(ValueError):
        bellman_backup(M, 4, f)


# sampling -------------------------------------------------------------------------


def test_sampling_deterministic_cases():
    tree = make_tree_env(4).base
    pi = Policy.deterministic(np.ones((3, tree.S), int), 2)
    rng = np.random.default_rng(0)
    trajs = [sample_trajectory(tree, pi, rng, start=0) for _ in range(5)]
    assert all(np.array_equal(t.states, trajs[0].states) for t in trajs)
    M = random_mdp(3, 2, 3, np.random.default_rng(1))
    u = Policy.uniform(3, 3, 2)
    a = sample_trajectory(M, u, np.random.default_rng(7))
    b = sample_trajectory(M, u, np.random.default_rng(7))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions) and np.array_equal(a.rewards, b.rewards)


def test_sampled_occupancy_matches_exact():
    rng = np.random.default_rng(11)
    M = random_mdp(3, 2, 3, rng)
    pi = random_policy(3, 3, 2, rng)
    n = 100_000
    counts = np.zeros((3, 3))
    for _ in range(n):
        tau = sample_trajectory(M, pi, rng)
        counts[np.arange(3), tau.states] += 1
    d = occupancy(M, pi).d_s
    se = np.sqrt(d * (1 - d) / n)
    assert np.all(np.abs(counts / n - d) <= 3 * se + 1e-12)


# serialization -------------------------------------------------------------------


def test_json_round_trip_bit_stable():
    M = random_mdp(3, 2, 3, np.random.default_rng(2), reward_levels=3)
    text = dumps_mdp(M)
    back = loads_mdp(text)
    assert mdp_equal(M, back)
    assert dumps_mdp(back) == text
