import itertools

import numpy as np
import pytest

from latent_rl_lab.envs import make_random_pushforward_env, make_tree_env
from latent_rl_lab.latent import Decoder, DecoderClass, EmissionProcess, compose, compose_policy, invert_emission
from latent_rl_lab.mdp import TabularMDP, enumerate_deterministic_policies, occupancy, random_mdp
from latent_rl_lab.oracle import (
    MismatchKernel,
    model_joint,
    mismatch_compose_model,
    mismatch_compose_policy,
    mismatch_kernel,
    phi_compressed_kernel,
    pushforward_coverability,
    pushforward_model,
    random_decoder,
    random_emission,
    random_policy,
    random_structural_instance,
    run_structural_suite,
    state_action_coverability,
    state_coverability,
    verify_structural_identities,
)


def small_instance(seed, S=3, X=7, A=2, H=3):
    rng = np.random.default_rng(seed)
    M = random_mdp(S, A, H, rng, reward_levels=3, sparsity=0.2)
    return compose(M, random_emission(S, X, H, rng)), rng


# mismatch kernels ------------------------------------------------------------------


def test_mismatch_kernel_examples():
    L, rng = small_instance(0)
    g = mismatch_kernel(L.emission, L.true_decoder)
    assert np.array_equal(g.gamma, np.broadcast_to(np.eye(3), (3, 3, 3)))
    # relabeling a deterministic emission gives a permutation kernel
    perm = np.array([2, 0, 1])
    psi = EmissionProcess.from_maps(np.tile(np.arange(3), (2, 1)), 3)
    g = mismatch_kernel(psi, Decoder(np.tile(perm, (2, 1)), 3))
    assert np.array_equal(g.gamma[0], np.eye(3)[perm])
    # a uniform two-observation emission split by phi
    probs = np.zeros((1, 2, 3))
    probs[0, 0, :2] = 0.5
    probs[0, 1, 2] = 1.0
    g = mismatch_kernel(EmissionProcess(probs), Decoder(np.array([[0, 1, 1]]), 2)).gamma
    assert np.allclose(g[0, 0], [0.5, 0.5]) and np.allclose(g[0, 1], [0.0, 1.0])


def test_mismatch_rows_are_distributions():
    L, rng = small_instance(1)
    for _ in range(5):
        g = mismatch_kernel(L.emission, random_decoder(3, 7, 3, rng)).gamma
        assert np.allclose(g.sum(axis=-1), 1.0, atol=1e-12)


def test_mismatch_compose_model_and_policy():
    L, rng = small_instance(2)
    M = L.base
    ident = MismatchKernel.identity(3, 3)
    for a, b in zip(mismatch_compose_model(ident, M).layers, model_joint(M).layers):
        assert np.allclose(a, b)
    pi = random_policy(3, 3, 2, rng)
    assert np.allclose(mismatch_compose_policy(ident, pi).table, pi.table)
    perm = np.array([1, 2, 0])
    gp = MismatchKernel(np.broadcast_to(np.eye(3)[perm], (3, 3, 3)).copy())
    assert np.allclose(mismatch_compose_policy(gp, pi).table, pi.table[:, perm])
    # random Gamma: compare against explicit enumeration
    g = mismatch_kernel(L.emission, random_decoder(3, 7, 3, rng))
    comp = mismatch_compose_model(g, M)
    for h in range(2):
        layer = comp.layers[h]
        assert np.allclose(layer.sum(axis=(2, 3)), 1.0, atol=1e-12)
        for s, a, r, t in itertools.product(range(3), range(2), range(len(M.reward_grid)), range(3)):
            val = sum(M.reward_probs[h, s, a, r] * M.trans[h, s, a, u] * g.gamma[h + 1, u, t] for u in range(3))
            assert layer[s, a, r, t] == pytest.approx(val, abs=1e-14)
    pol = mismatch_compose_policy(g, pi).table
    assert np.allclose(pol.sum(axis=-1), 1.0)
    for h, s, a in itertools.product(range(3), range(3), range(2)):
        assert pol[h, s, a] == pytest.approx(sum(g.gamma[h, s, u] * pi.table[h, u, a] for u in range(3)))


# pushforward models ----------------------------------------------------------------


def test_pushforward_examples():
    L, rng = small_instance(3)
    star = L.true_decoder
    push = pushforward_model(L, star)
    base = model_joint(L.base)
    for h in range(3):
        assert np.allclose(push.layers[h], base.layers[h][star.maps[h]], atol=1e-12)
    const = pushforward_model(L, Decoder.constant(3, 7, 3, 2))
    for h in range(2):
        nxt = const.layers[h].sum(axis=2)
        assert np.allclose(nxt[..., 2], 1.0)
    phi = random_decoder(3, 7, 3, rng)
    push = pushforward_model(L, phi)
    comp = mismatch_compose_model(mismatch_kernel(L.emission, phi), L.base)
    for h in range(3):
        assert np.allclose(push.layers[h], comp.layers[h][star.maps[h]], atol=1e-12)


# coverability ---------------------------------------------------------------------


def test_pushforward_coverability_examples():
    trans = np.zeros((1, 2, 1, 2))
    trans[0, 0, 0, 0] = 1.0
    trans[0, 1, 0, 1] = 1.0
    chain = TabularMDP.from_mean_rewards(np.array([0.5, 0.5]), trans, np.zeros((2, 2, 1)))
    rep = pushforward_coverability(chain)
    assert rep.coefficient == pytest.approx(2.0)
    assert rep.verified == pytest.approx(2.0)
    for seed in range(5):
        L, _ = small_instance(seed, S=4, X=9)
        c_lat = pushforward_coverability(L.base)
        assert c_lat.coefficient <= 4 + 1e-12
        assert c_lat.verified == pytest.approx(c_lat.coefficient, abs=1e-9)
        assert pushforward_coverability(L.obs).coefficient == pytest.approx(c_lat.coefficient, abs=1e-12)


def test_state_coverability_examples():
    rng = np.random.default_rng(0)
    M = random_mdp(2, 2, 2, rng)
    pi = random_policy(2, 2, 2, rng)
    assert state_coverability(M, [pi]).coefficient == pytest.approx(1.0)
    assert state_action_coverability(M, [pi]).coefficient == pytest.approx(1.0)
    pols = list(enumerate_deterministic_policies(2, 2, 2))
    occ = np.array([occupancy(M, p).d_s for p in pols])
    brute = occ.max(axis=0).sum(axis=1).max()
    assert state_coverability(M, pols).coefficient == pytest.approx(brute)
    assert state_coverability(M).coefficient == pytest.approx(brute, abs=1e-12)
    with pytest.raises(ValueError):
        state_coverability(M, [])


@pytest.mark.parametrize("seed", range(5))
def test_coverability_bounds(seed):
    rng = np.random.default_rng(seed)
    M = random_mdp(3, 2, 3, rng, sparsity=0.4)
    pols = [random_policy(3, 3, 2, rng) for _ in range(4)]
    c_st = state_coverability(M, pols).coefficient
    assert state_action_coverability(M, pols).coefficient <= c_st * M.A + 1e-9
    assert state_action_coverability(M).coefficient <= pushforward_coverability(M).coefficient * M.A + 1e-9


def test_state_coverability_invariance():
    L, rng = small_instance(4)
    phis = [L.true_decoder, random_decoder(3, 7, 3, rng)]
    pols = [random_policy(3, 3, 2, rng) for _ in range(2)]
    obs = [compose_policy(p, phi) for p in pols for phi in phis]
    lat = [mismatch_compose_policy(mismatch_kernel(L.emission, phi), p) for p in pols for phi in phis]
    assert state_coverability(L.obs, obs).coefficient == pytest.approx(state_coverability(L.base, lat).coefficient, abs=1e-9)


# compressed kernels ----------------------------------------------------------------


def test_compressed_kernel_exact_decoder_is_markov():
    L, rng = small_instance(5)
    pi = random_policy(3, 3, 2, rng)
    joint = model_joint(L.base)
    for h in range(1, 4):
        k = phi_compressed_kernel(L, L.true_decoder, pi, h)
        ref = joint.layers[h - 1][k.prefixes[:, -2], k.prefixes[:, -1]]
        assert np.allclose(k.joints, ref, atol=1e-12)
        assert k.prefix_probs.sum() == pytest.approx(1.0)


def test_compressed_kernel_h1_is_pushforward():
    L, rng = small_instance(6, H=1)
    phi = random_decoder(1, 7, 3, rng)
    pi = random_policy(1, 3, 2, rng)
    k = phi_compressed_kernel(L, phi, pi, 1)
    push = pushforward_model(L, phi)
    # the single-step kernel averages pushforward cells within each decoded label
    d0 = L.obs.init
    for s in range(3):
        xs = np.flatnonzero(phi.maps[0] == s)
        if d0[xs].sum() == 0:
            continue
        w = d0[xs] / d0[xs].sum()
        for a in range(2):
            assert np.allclose(k.averaged[s, a], np.tensordot(w, push.layers[0][xs, a], axes=1), atol=1e-12)


def test_compressed_kernel_horizon_cap():
    rng = np.random.default_rng(0)
    M = random_mdp(2, 2, 6, rng)
    L = compose(M, random_emission(2, 3, 6, rng))
    with pytest.raises(ValueError):
        phi_compressed_kernel(L, L.true_decoder, random_policy(6, 2, 2, rng), 2)


# identity suite -------------------------------------------------------------------


def test_identities_exact_decoder_zero_residual():
    L, rng = small_instance(7)
    rep = verify_structural_identities(L, DecoderClass([L.true_decoder]), random_policy(3, 3, 2, rng), rng.random((3, 3, 2)), 1e-12)
    assert rep.passed
    assert all(c.max_residual <= 1e-12 for c in rep.checks)


def test_identities_constant_decoder():
    L, rng = small_instance(8)
    rep = verify_structural_identities(L, DecoderClass([Decoder.constant(3, 7, 3)]), random_policy(3, 3, 2, rng), rng.random((3, 3, 2)))
    assert rep.passed


def test_identities_random_instances():
    for i in range(10):
        inst = random_structural_instance(np.random.default_rng(1000 + i))
        rep = verify_structural_identities(inst.L, inst.decoders, inst.pi, inst.f, 1e-9, inst.policies)
        assert rep.passed, [c for c in rep.checks if not c.passed]


def test_structural_suite_records():
    recs = run_structural_suite(3, seed=5)
    assert {"instance_seed", "identity_name", "max_residual", "pass"} <= set(recs[0])
    assert all(r["pass"] for r in recs)
    assert recs == run_structural_suite(3, seed=5)


def test_random_env_passes_identities():
    rng = np.random.default_rng(0)
    b = make_random_pushforward_env(3, 6, 2, 3, 0.5, (2, 3), rng)
    L = b.member(0)
    rep = verify_structural_identities(L, b.decoders, random_policy(3, 3, 2, rng), rng.random((3, 3, 2)))
    assert rep.passed


def test_tree_coverability():
    b = make_tree_env(4)
    assert pushforward_coverability(b.base).coefficient <= b.base.S
    assert invert_emission(b.emissions[0]) == b.decoders[0]
