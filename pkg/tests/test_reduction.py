import numpy as np
import pytest
from scipy import stats

from latent_rl_lab.base_algs import KnownModelPlanner, ucbvi_base
from latent_rl_lab.envs import make_cb_env, make_tree_env
from latent_rl_lab.latent import Decoder, EmissionProcess, compose, compose_policy, compress_trajectory
from latent_rl_lab.mdp import MixturePolicy, Policy, Trajectory, occupancy, random_mdp, sample_trajectory
from latent_rl_lab.oracle import random_emission, random_policy
from latent_rl_lab.reduction import (
    HindsightLearner,
    OracleLearner,
    ProtocolConfig,
    golf_probe_algorithm,
    hardness_probe,
    hindsight_annotate,
    make_rep_learner,
    o2l_run,
    risk_eval,
    standalone_base_risk,
)


class SpyAlg:
    """Uniform latent policy that records everything it is fed."""

    def __init__(self, S, A, H, log):
        self.pi = Policy.uniform(H, S, A)
        self.log = log

    def policy(self):
        return self.pi

    def update(self, tau):
        self.log.append(tau)

    def final_policy(self):
        return self.pi


def spy_factory(M, log):
    return lambda rng: SpyAlg(M.S, M.A, M.H, log)


# protocol accounting -------------------------------------------------------------


def test_single_epoch_single_episode():
    b = make_tree_env(4)
    L = b.member(0)
    log = []
    learner = HindsightLearner(b.decoders, L.true_decoder)
    res = o2l_run(L, learner, spy_factory(b.base, log), ProtocolConfig(1, 1), np.random.default_rng(0))
    assert res.episodes == 2 and len(res.rows) == 2
    assert len(log) == 1
    assert len(learner.fed_indices) == 1


@pytest.mark.parametrize("T,K", [(3, 2), (5, 4)])
def test_episode_count_and_rows(T, K):
    b = make_tree_env(4)
    L = b.member(1)
    log = []
    res = o2l_run(L, HindsightLearner(b.decoders, L.true_decoder), spy_factory(b.base, log), ProtocolConfig(T, K), np.random.default_rng(1))
    assert res.episodes == T * (K + 1) == len(res.rows)
    assert len(log) == T * K
    assert [r["k"] for r in res.rows] == list(range(1, K + 2)) * T
    assert len(res.epoch_risks) == T


def test_hindsight_feeds_uniform_index():
    b = make_tree_env(4)
    L = b.member(0)
    rng = np.random.default_rng(2)
    K = 4
    epoch = [sample_trajectory(L.obs, Policy.uniform(L.H, L.X, L.A, "observation"), rng) for _ in range(K + 1)]
    learner = HindsightLearner(b.decoders, L.true_decoder)
    for _ in range(10_000):
        learner.observe_epoch(epoch, [], rng)
    counts = np.bincount(learner.fed_indices, minlength=K + 1)
    assert stats.chisquare(counts).pvalue > 0.001


def test_feed_all_feeds_every_episode():
    b = make_tree_env(4)
    L = b.member(0)
    rng = np.random.default_rng(3)
    epoch = [sample_trajectory(L.obs, Policy.uniform(L.H, L.X, L.A, "observation"), rng) for _ in range(3)]
    learner = HindsightLearner(b.decoders, L.true_decoder, feed_all=True)
    learner.observe_epoch(epoch, [], rng)
    assert learner.fed_indices == [0, 1, 2]


# isolation of the base algorithm --------------------------------------------------


def test_base_alg_sees_only_labels():
    # two distinct observation trajectories with the same decoded labels
    phi = Decoder(np.array([[0, 0, 1, 1], [0, 1, 0, 1]]), 2)
    a = Trajectory(np.array([0, 1]), np.array([1, 0]), np.array([0.0, 1.0]))
    b = Trajectory(np.array([1, 3]), np.array([1, 0]), np.array([0.0, 1.0]))
    ca, cb = compress_trajectory(a, phi), compress_trajectory(b, phi)
    assert np.array_equal(ca.states, cb.states)
    u, v = ucbvi_base(2, 2, 2), ucbvi_base(2, 2, 2)
    for _ in range(5):
        u.update(ca)
        v.update(cb)
        assert np.array_equal(u.Q, v.Q)
        assert np.array_equal(u.policy().table, v.policy().table)


def test_base_alg_inputs_are_latent():
    b = make_tree_env(4)
    L = b.member(2)
    log = []
    o2l_run(L, OracleLearner(L.true_decoder), spy_factory(b.base, log), ProtocolConfig(4, 3), np.random.default_rng(4))
    for tau in log:
        assert tau.hindsight is None
        assert np.all((tau.states >= 0) & (tau.states < b.base.S))


def test_oracle_pin_couples_to_latent_run():
    # under phi* the compressed episode law equals the latent law for any latent policy
    rng = np.random.default_rng(5)
    M = random_mdp(3, 2, 3, rng)
    L = compose(M, random_emission(3, 8, 3, rng))
    for _ in range(3):
        pi = random_policy(3, 3, 2, rng)
        d_obs = occupancy(L.obs, compose_policy(pi, L.true_decoder)).d_sa
        pushed = np.stack([L.true_decoder.onehot(h + 1).T @ d_obs[h] for h in range(3)])
        assert np.allclose(pushed, occupancy(M, pi).d_sa, atol=1e-12)
    # and the empirical state marginals of what the base algorithm receives match it
    log = []
    o2l_run(L, OracleLearner(L.true_decoder), spy_factory(M, log), ProtocolConfig(400, 5), np.random.default_rng(6))
    emp = np.zeros((3, 3))
    for tau in log:
        emp[np.arange(3), tau.states] += 1
    emp /= len(log)
    exact = occupancy(M, Policy.uniform(3, 3, 2)).d_s
    se = np.sqrt(exact * (1 - exact) / len(log))
    assert np.all(np.abs(emp - exact) <= 4 * se + 1e-12)


# risks ----------------------------------------------------------------------------


def test_oracle_pin_with_planner_has_zero_risk():
    b = make_tree_env(8)
    L = b.member(5)
    res = o2l_run(L, OracleLearner(L.true_decoder), lambda rng: KnownModelPlanner(b.base), ProtocolConfig(3, 2), np.random.default_rng(7))
    assert res.risk_obs == 0.0
    assert np.all(res.epoch_risks == 0.0)
    assert np.all(res.decoder_accuracy == 1.0)
    assert standalone_base_risk(b.base, lambda rng: KnownModelPlanner(b.base), 2, np.random.default_rng(0), runs=3) == 0.0


def test_mixture_risk_is_mean_of_epoch_risks():
    b = make_tree_env(4)
    L = b.member(3)
    res = o2l_run(
        L,
        HindsightLearner(b.decoders, L.true_decoder),
        lambda rng: ucbvi_base(b.base.S, b.base.A, b.base.H, rng=rng, num_episodes=5),
        ProtocolConfig(6, 5),
        np.random.default_rng(8),
    )
    assert res.risk_obs == pytest.approx(res.epoch_risks.mean(), abs=1e-10)
    assert risk_eval(L.obs, res.final_mixture) == pytest.approx(res.risk_obs, abs=1e-10)


def test_risk_eval_cb():
    b = make_cb_env(4)
    M = b.base
    uni = Policy.uniform(1, 4, 4)
    assert risk_eval(M, uni) == pytest.approx(0.75)
    opt = KnownModelPlanner(M).final_policy()
    assert risk_eval(M, opt) == pytest.approx(0.0)
    assert risk_eval(M, MixturePolicy([uni, opt])) == pytest.approx(0.375)


def test_hindsight_annotate_keeps_episode():
    b = make_tree_env(4)
    L = b.member(1)
    tau = sample_trajectory(L.obs, Policy.uniform(L.H, L.X, L.A, "observation"), np.random.default_rng(9))
    ann = hindsight_annotate(tau, L.true_decoder)
    assert np.array_equal(ann.states, tau.states)
    assert np.array_equal(ann.actions, tau.actions)
    assert np.array_equal(ann.rewards, tau.rewards)
    assert ann.hindsight.tolist() == [L.true_decoder.maps[h, tau.states[h]] for h in range(L.H)]
    ident = EmissionProcess.from_maps(np.tile(np.arange(3), (2, 1)), 3)
    Li = compose(random_mdp(3, 2, 2, np.random.default_rng(0)), ident)
    t2 = sample_trajectory(Li.obs, Policy.uniform(2, 3, 2, "observation"), np.random.default_rng(1))
    assert np.array_equal(hindsight_annotate(t2, Li.true_decoder).hindsight, t2.states)


# configuration ----------------------------------------------------------------------


def test_protocol_config_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(0, 1)
    with pytest.raises(ValueError):
        ProtocolConfig(1, 0)
    with pytest.raises(ValueError):
        ProtocolConfig(1, 1, mode="nope")
    with pytest.raises(ValueError):
        ProtocolConfig(1, 1, mode="self-predictive")
    assert ProtocolConfig(1, 1, mode="self-predictive", gamma=2.0).gamma == 2.0


def test_mode_mismatch_raises():
    b = make_tree_env(4)
    L = b.member(0)
    learner = HindsightLearner(b.decoders, L.true_decoder)
    with pytest.raises(ValueError):
        o2l_run(L, learner, spy_factory(b.base, []), ProtocolConfig(1, 1, mode="self-predictive", gamma=1.0), np.random.default_rng(0))
    with pytest.raises(ValueError):
        make_rep_learner(b, ProtocolConfig(1, 1, mode="self-predictive", gamma=1.0))


def test_run_is_deterministic():
    b = make_tree_env(4)
    L = b.member(0)

    def go():
        return o2l_run(
            L,
            HindsightLearner(b.decoders, L.true_decoder),
            lambda rng: ucbvi_base(b.base.S, b.base.A, b.base.H, rng=rng, num_episodes=3),
            ProtocolConfig(4, 3),
            np.random.default_rng(11),
        ).rows

    assert go() == go()


# hardness probe ---------------------------------------------------------------------


def test_hardness_probe_small():
    out = hardness_probe([4], golf_probe_algorithm(), 0.1, 400, np.random.default_rng(0), num_members=3)
    assert len(out) == 1 and out[0].N == 4
    assert np.all(np.isfinite(out[0].episodes)) and np.all(out[0].episodes <= 400)
    oracle = hardness_probe([4], golf_probe_algorithm(oracle=True), 0.1, 400, np.random.default_rng(0), num_members=3)
    assert oracle[0].median <= out[0].median
    with pytest.raises(ValueError):
        hardness_probe([], golf_probe_algorithm(), 0.1, 10, np.random.default_rng(0))
