"""Exact structural objects for latent-dynamics MDPs and brute-force identity checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from latent_rl_lab.latent import (
    Decoder,
    DecoderClass,
    EmissionProcess,
    LatentDynamicsMDP,
    compose,
    compose_policy,
    invert_emission,
)
from latent_rl_lab.mdp import (
    Policy,
    TabularMDP,
    bellman_backup,
    hellinger_sq_arrays,
    occupancy,
    random_mdp,
    tv_arrays,
)

MAX_COMPRESSED_HORIZON = 5


@dataclass(frozen=True, eq=False)
class MismatchKernel:
    """``gamma[h-1, s, s']`` = P_{x ~ psi_h(s)}(phi_h(x) = s')."""

    gamma: np.ndarray

    @property
    def H(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def identity(cls, H: int, S: int) -> "MismatchKernel":
        return cls(np.broadcast_to(np.eye(S), (H, S, S)).copy())


@dataclass(frozen=True, eq=False)
class JointKernel:
    """Joint law of (reward, next label) per conditioning cell.

    ``layers[h-1][z, a, g, s']``; at layer H the next-label axis has size 1.
    ``init`` is the law of the first label.
    """

    init: np.ndarray
    layers: tuple
    reward_grid: np.ndarray

    @property
    def H(self) -> int:
        return len(self.layers)


# Pushforward models are joint kernels indexed by observations.
PushforwardModel = JointKernel


@dataclass(frozen=True, eq=False)
class CoverabilityReport:
    coefficient: float
    witness: tuple
    kind: str
    per_layer: np.ndarray
    verified: float


def model_joint(M: TabularMDP) -> JointKernel:
    layers = []
    for h in range(M.H):
        R = M.reward_probs[h]
        if h < M.H - 1:
            layers.append(R[:, :, :, None] * M.trans[h][:, :, None, :])
        else:
            layers.append(R[:, :, :, None])
    return JointKernel(M.init.copy(), tuple(layers), M.reward_grid)


def mismatch_kernel(psi: EmissionProcess, phi: Decoder) -> MismatchKernel:
    if (psi.H, psi.X) != (phi.H, phi.X) or psi.S != phi.S:
        raise ValueError("emission and decoder dimensions differ")
    g = np.stack([psi.probs[h] @ phi.onehot(h + 1) for h in range(psi.H)])
    # renormalize so that the true decoder yields the identity exactly
    return MismatchKernel(g / g.sum(axis=-1, keepdims=True))


def mismatch_composed_mdp(gamma: MismatchKernel, M: TabularMDP) -> TabularMDP:
    """The latent model whose next-state law is P(.|s,a) pushed through Gamma_{h+1}."""
    G = gamma.gamma
    if G.shape != (M.H, M.S, M.S):
        raise ValueError("mismatch kernel shape does not match the model")
    trans = np.stack([M.trans[h] @ G[h + 1] for h in range(M.H - 1)]) if M.H > 1 else M.trans
    return TabularMDP(M.init @ G[0], trans, M.reward_probs, M.reward_grid)


def mismatch_compose_model(gamma: MismatchKernel, M: TabularMDP) -> JointKernel:
    return model_joint(mismatch_composed_mdp(gamma, M))


def mismatch_compose_policy(gamma: MismatchKernel, pi: Policy) -> Policy:
    if gamma.H != pi.H:
        raise ValueError("horizons differ")
    return Policy(np.einsum("hst,hta->hsa", gamma.gamma, pi.table), pi.space)


def pushforward_model(L: LatentDynamicsMDP, phi: Decoder) -> JointKernel:
    obs = L.obs
    layers = []
    for h in range(obs.H):
        R = obs.reward_probs[h]
        if h < obs.H - 1:
            nxt = obs.trans[h] @ phi.onehot(h + 2)
            layers.append(R[:, :, :, None] * nxt[:, :, None, :])
        else:
            layers.append(R[:, :, :, None])
    return JointKernel(obs.init @ phi.onehot(1), tuple(layers), obs.reward_grid)


def mismatch_complete_class(L: LatentDynamicsMDP, decoders: DecoderClass, models: Sequence[TabularMDP]) -> list[TabularMDP]:
    """{Gamma_phi o M : phi in decoders, M in models}, decoder-major order."""
    out = []
    for phi in decoders:
        g = mismatch_kernel(L.emission, phi)
        out.extend(mismatch_composed_mdp(g, M) for M in models)
    return out


# Coverability -----------------------------------------------------------------


def pushforward_coverability(M: TabularMDP) -> CoverabilityReport:
    """max_h sum_z' max_{z,a} P_h(z'|z,a), with witness proportional to the max."""
    per_layer, witness = [1.0], [M.init.copy()]
    for h in range(M.H - 1):
        m = M.trans[h].max(axis=(0, 1))
        per_layer.append(float(m.sum()))
        witness.append(m / m.sum())
    ratio = 1.0
    for h in range(M.H - 1):
        mu = witness[h + 1]
        P = M.trans[h]
        pos = P > 0
        ratio = max(ratio, float(np.max(np.where(pos, P / np.where(mu > 0, mu, 1.0)[None, None, :], 0.0))))
    per_layer = np.array(per_layer)
    return CoverabilityReport(float(per_layer.max()), tuple(witness), "pushforward", per_layer, ratio)


def max_reachability(M: TabularMDP) -> np.ndarray:
    """reach[h-1, z] = max over policies of P(s_h = z), by backward DP per layer."""
    reach = np.zeros((M.H, M.S))
    for h in range(M.H):
        W = np.eye(M.S)  # W[z, s] = best probability of hitting z at layer h from s
        for t in range(h - 1, -1, -1):
            W = np.einsum("sap,zp->zsa", M.trans[t], W).max(axis=-1)
        reach[h] = W @ M.init
    return reach


def _occupancy_coverage(d: np.ndarray, kind: str, verify_tables: list[np.ndarray]) -> CoverabilityReport:
    H = d.shape[0]
    flat = d.reshape(H, -1)
    per_layer = flat.sum(axis=1)
    witness = tuple((flat[h] / per_layer[h]).reshape(d.shape[1:]) for h in range(H))
    ratio = 0.0
    for table in verify_tables:
        for h in range(H):
            mu = witness[h]
            pos = table[h] > 0
            ratio = max(ratio, float(np.max(np.where(pos, table[h] / np.where(mu > 0, mu, 1.0), 0.0), initial=0.0)))
    return CoverabilityReport(float(per_layer.max()), witness, kind, per_layer, ratio)


def state_coverability(M: TabularMDP, policies: Sequence[Policy] | None = None) -> CoverabilityReport:
    """max_h sum_z max_pi d_h(z); all deterministic policies when ``policies`` is None."""
    if policies is None:
        reach = max_reachability(M)
        return _occupancy_coverage(reach, "state", [reach])
    if len(policies) == 0:
        raise ValueError("policy list is empty")
    occ = [occupancy(M, p).d_s for p in policies]
    return _occupancy_coverage(np.max(occ, axis=0), "state", occ)


def state_action_coverability(M: TabularMDP, policies: Sequence[Policy] | None = None) -> CoverabilityReport:
    if policies is None:
        reach = np.repeat(max_reachability(M)[:, :, None], M.A, axis=2)
        return _occupancy_coverage(reach, "state-action", [reach])
    if len(policies) == 0:
        raise ValueError("policy list is empty")
    occ = [occupancy(M, p).d_sa for p in policies]
    return _occupancy_coverage(np.max(occ, axis=0), "state-action", occ)


# phi-compressed POMDP -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CompressedKernel:
    """Prefix-conditional and averaged kernels of the phi-compressed process at one layer.

    ``prefixes[i]`` = (s_1, a_1, ..., s_h, a_h); ``joints[i, g, s']`` is the
    conditional joint of (r_h, s_{h+1}); ``averaged[s, a]`` averages joints over
    prefixes ending in (s, a); ``marginal[s, a]`` is the law of (s_h, a_h).
    """

    h: int
    prefixes: np.ndarray
    prefix_probs: np.ndarray
    joints: np.ndarray
    averaged: np.ndarray
    marginal: np.ndarray


def phi_compressed_kernel(L: LatentDynamicsMDP, phi: Decoder, pi: Policy, h: int) -> CompressedKernel:
    """Exact enumeration over (s, a) prefixes with observation beliefs carried along."""
    obs = L.obs
    if obs.H > MAX_COMPRESSED_HORIZON:
        raise ValueError(f"prefix enumeration is capped at H <= {MAX_COMPRESSED_HORIZON}")
    if not 1 <= h <= obs.H:
        raise ValueError(f"layer {h} outside 1..{obs.H}")
    S, A, X = L.S, L.A, L.X
    # prefix one-step: B[p, x] = P(prefix p, x_l = x)
    lab = phi.maps[0]
    B = (obs.init[None, :] * (lab[None, :] == np.arange(S)[:, None]))[:, None, :] * pi.table[0][:, :, None]
    codes = np.array([(s, a) for s in range(S) for a in range(A)], dtype=int)
    B = B.reshape(S * A, X)
    keep = B.sum(axis=1) > 0
    B, codes = B[keep], codes[keep]
    for l in range(1, h):
        a_last = codes[:, -1]
        P_sel = obs.trans[l - 1].transpose(1, 0, 2)[a_last]  # (n, X, X')
        nxt = np.einsum("px,pxy->py", B, P_sel)
        lab = phi.maps[l]
        ind = (lab[None, :] == np.arange(S)[:, None]).astype(float)  # (S, X)
        Bn = nxt[:, None, None, :] * ind[None, :, None, :] * pi.table[l][None, :, :, None]
        n = len(codes)
        Bn = Bn.reshape(n * S * A, X)
        ext = np.array([(s, a) for s in range(S) for a in range(A)], dtype=int)
        codes = np.concatenate([np.repeat(codes, S * A, axis=0), np.tile(ext, (n, 1))], axis=1)
        keep = Bn.sum(axis=1) > 0
        B, codes = Bn[keep], codes[keep]
    probs = B.sum(axis=1)
    belief = B / probs[:, None]
    a_last = codes[:, -1]
    R = obs.reward_probs[h - 1].transpose(1, 0, 2)[a_last]  # (n, X, G)
    if h < obs.H:
        nxt = (obs.trans[h - 1] @ phi.onehot(h + 1)).transpose(1, 0, 2)[a_last]  # (n, X, S)
        joints = np.einsum("px,pxg,pxs->pgs", belief, R, nxt)
    else:
        joints = np.einsum("px,pxg->pg", belief, R)[:, :, None]
    s_last = codes[:, -2]
    marginal = np.zeros((S, A))
    np.add.at(marginal, (s_last, a_last), probs)
    averaged = np.zeros((S, A) + joints.shape[1:])
    np.add.at(averaged, (s_last, a_last), probs[:, None, None] * joints)
    pos = marginal > 0
    averaged[pos] /= marginal[pos][:, None, None]
    return CompressedKernel(h, codes, probs, joints, averaged, marginal)


# Identity verification ----------------------------------------------------------


@dataclass
class IdentityCheck:
    name: str
    max_residual: float
    passed: bool
    kind: str = "equality"


@dataclass
class StructuralReport:
    checks: list = field(default_factory=list)

    def add(self, name: str, residual: float, tol: float, kind: str = "equality") -> None:
        residual = float(residual)
        self.checks.append(IdentityCheck(name, residual, bool(residual <= tol), kind))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def by_name(self) -> dict:
        """Worst residual per identity name; passes only if every check passed."""
        out: dict = {}
        for c in self.checks:
            prev = out.get(c.name)
            if prev is None:
                out[c.name] = IdentityCheck(c.name, c.max_residual, c.passed, c.kind)
            else:
                prev.max_residual = max(prev.max_residual, c.max_residual)
                prev.passed = prev.passed and c.passed
        return out


def _joint_flat(layer: np.ndarray) -> np.ndarray:
    return layer.reshape(layer.shape[0], layer.shape[1], -1)


def verify_structural_identities(
    L: LatentDynamicsMDP,
    decoders: DecoderClass,
    pi: Policy,
    f: np.ndarray,
    tol: float = 1e-9,
    policies: Sequence[Policy] | None = None,
) -> StructuralReport:
    """Check the latent/observation identities and inequalities on one instance.

    ``f`` is a latent table of shape (H, S, A) with values in [0, 1]. ``policies``
    (default ``[pi]``) is the latent policy set used for the coverability invariance.
    """
    base, obs, phi_star = L.base, L.obs, L.true_decoder
    H, S, A = base.H, base.S, base.A
    f = np.asarray(f, dtype=float)
    policies = list(policies) if policies is not None else [pi]
    rep = StructuralReport()
    base_joint = model_joint(base)
    d_lat = occupancy(base, pi).d_sa
    star = phi_star.maps
    psi_own = np.stack([L.emission.probs[h, star[h], np.arange(L.X)] for h in range(H)])

    for phi in decoders:
        gamma = mismatch_kernel(L.emission, phi)
        pi_obs = compose_policy(pi, phi)
        d_obs = occupancy(obs, pi_obs).d_sa
        kernels = [phi_compressed_kernel(L, phi, pi, h) for h in range(1, H + 1)]

        # change of measure
        res = 0.0
        for h in range(H):
            lhs = float(np.sum(kernels[h].marginal * f[h]))
            rhs = float(np.sum(d_obs[h] * f[h][phi.maps[h]]))
            res = max(res, abs(lhs - rhs))
        rep.add("change_of_measure", res, tol)

        # Bellman backups of f o phi versus latent backups of Gamma o V_f
        res = 0.0
        for h in range(1, H + 1):
            if h < H:
                lhs = bellman_backup(obs, h, f[h][phi.maps[h]])
                ell = gamma.gamma[h] @ f[h].max(axis=-1)
                rhs = bellman_backup(base, h, ell)[star[h - 1]]
            else:
                lhs = bellman_backup(obs, h)
                rhs = bellman_backup(base, h)[star[h - 1]]
            res = max(res, float(np.max(np.abs(lhs - rhs))))
        rep.add("bellman_commutation", res, tol)

        # occupancy factorization
        d_mis = occupancy(base, mismatch_compose_policy(gamma, pi)).d_s
        lhs = d_obs.sum(axis=-1)
        rhs = psi_own * np.take_along_axis(d_mis, star, axis=1)
        rep.add("occupancy_factorization", float(np.max(np.abs(lhs - rhs))), tol)

        # pushforward realizability
        push = pushforward_model(L, phi)
        comp = mismatch_compose_model(gamma, base)
        res = float(np.max(np.abs(push.init - comp.init)))
        for h in range(H):
            res = max(res, float(np.max(np.abs(push.layers[h] - comp.layers[h][star[h]]))))
        rep.add("pushforward_realizability", res, tol)

        # simulation lemma: |E_lat f - E_compressed f| <= accumulated TV of transitions
        tv0 = float(tv_arrays(base.init, push.init))
        tv_layers = []
        for h in range(H - 1):
            p_lat = base.trans[h][phi.maps[h]]  # (X, A, S)
            p_push = push.layers[h].sum(axis=2)
            tv_layers.append(float(np.sum(d_obs[h] * tv_arrays(p_lat, p_push))))
        viol = 0.0
        for h in range(H):
            lhs = abs(float(np.sum(d_lat[h] * f[h])) - float(np.sum(kernels[h].marginal * f[h])))
            rhs = tv0 + sum(tv_layers[:h])
            viol = max(viol, lhs - rhs)
        rep.add("simulation_lemma", max(viol, 0.0), tol, "inequality")

        # near-markovianity, prefix-conditional and averaged forms
        rhs = 0.0
        lhs_prefix = 0.0
        lhs_avg = 0.0
        for h in range(H):
            M_cells = base_joint.layers[h][phi.maps[h]]  # (X, A, G, S')
            delta = hellinger_sq_arrays(_joint_flat(M_cells).reshape(L.X, A, -1), _joint_flat(push.layers[h]).reshape(L.X, A, -1))
            rhs += float(np.sum(d_obs[h] * delta))
            k = kernels[h]
            s_last, a_last = k.prefixes[:, -2], k.prefixes[:, -1]
            ref = base_joint.layers[h][s_last, a_last].reshape(len(s_last), -1)
            lhs_prefix += float(np.sum(k.prefix_probs * hellinger_sq_arrays(ref, k.joints.reshape(len(s_last), -1))))
            avg = k.averaged.reshape(S, A, -1)
            dh = hellinger_sq_arrays(base_joint.layers[h].reshape(S, A, -1), avg)
            lhs_avg += float(np.sum(np.where(k.marginal > 0, k.marginal * dh, 0.0)))
        rep.add("near_markov_prefix", max(lhs_prefix - rhs, 0.0), tol, "inequality")
        rep.add("near_markov_averaged", max(lhs_avg - rhs, 0.0), tol, "inequality")

    # pushforward coverability invariance, including the witness relation
    c_obs = pushforward_coverability(obs)
    c_lat = pushforward_coverability(base)
    res = abs(c_obs.coefficient - c_lat.coefficient)
    ratio = 0.0
    for h in range(H - 1):
        mu_obs = psi_own[h + 1] * c_lat.witness[h + 1][star[h + 1]]
        P = obs.trans[h]
        ratio = max(ratio, float(np.max(np.where(P > 0, P / np.where(mu_obs > 0, mu_obs, 1.0)[None, None, :], 0.0))))
    res = max(res, abs(max(ratio, 1.0) - c_obs.coefficient))
    rep.add("pushforward_coverability_invariance", res, tol)

    # state coverability invariance over Pi o Phi versus Gamma_Phi o Pi
    obs_pols = [compose_policy(p, phi) for p in policies for phi in decoders]
    lat_pols = [mismatch_compose_policy(mismatch_kernel(L.emission, phi), p) for p in policies for phi in decoders]
    c1 = state_coverability(obs, obs_pols).coefficient
    c2 = state_coverability(base, lat_pols).coefficient
    rep.add("state_coverability_invariance", abs(c1 - c2), tol)
    return rep


# Random instances ---------------------------------------------------------------


def random_emission(S: int, X: int, H: int, rng: np.random.Generator, padding: bool = True) -> EmissionProcess:
    """Random decodable emission; each layer partitions (a subset of) X into S blocks."""
    probs = np.zeros((H, S, X))
    for h in range(H):
        used = X if not padding else int(rng.integers(S, X + 1))
        perm = rng.permutation(X)[:used]
        owner = np.concatenate([np.arange(S), rng.integers(0, S, size=used - S)])
        rng.shuffle(owner)
        for s in range(S):
            xs = perm[owner == s]
            probs[h, s, xs] = rng.dirichlet(np.ones(len(xs)))
    return EmissionProcess(probs)


def random_decoder(H: int, X: int, S: int, rng: np.random.Generator) -> Decoder:
    return Decoder(rng.integers(0, S, size=(H, X)), S)


def perturb_decoder(phi: Decoder, frac: float, rng: np.random.Generator) -> Decoder:
    maps = phi.maps.copy()
    mask = rng.random(maps.shape) < frac
    maps[mask] = rng.integers(0, phi.S, size=int(mask.sum()))
    return Decoder(maps, phi.S)


def random_policy(H: int, Z: int, A: int, rng: np.random.Generator, space: str = "latent") -> Policy:
    return Policy(rng.dirichlet(np.ones(A), size=(H, Z)), space)


@dataclass(frozen=True, eq=False)
class StructuralInstance:
    L: LatentDynamicsMDP
    decoders: DecoderClass
    pi: Policy
    f: np.ndarray
    policies: tuple


def random_structural_instance(rng: np.random.Generator, max_S=5, max_X=12, max_A=3, max_H=4) -> StructuralInstance:
    S = int(rng.integers(1, max_S + 1))
    X = int(rng.integers(S, max_X + 1))
    A = int(rng.integers(1, max_A + 1))
    H = int(rng.integers(1, max_H + 1))
    base = random_mdp(S, A, H, rng, reward_levels=3, sparsity=0.3)
    psi = random_emission(S, X, H, rng)
    L = compose(base, psi)
    phis = [invert_emission(psi), Decoder.constant(H, X, S)]
    phis += [random_decoder(H, X, S, rng) for _ in range(2)]
    phis.append(perturb_decoder(phis[0], 0.3, rng))
    pi = random_policy(H, S, A, rng)
    extra = tuple(random_policy(H, S, A, rng) for _ in range(2))
    f = rng.random((H, S, A))
    return StructuralInstance(L, DecoderClass(phis), pi, f, (pi,) + extra)


def instance_seed(suite_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([suite_seed, index]).generate_state(1)[0])


def run_structural_suite(num_instances: int = 50, seed: int = 0, tol: float = 1e-9) -> list[dict]:
    """One record per identity per instance: instance_seed, identity_name, max_residual, pass."""
    records = []
    for i in range(num_instances):
        iseed = instance_seed(seed, i)
        inst = random_structural_instance(np.random.default_rng(iseed))
        rep = verify_structural_identities(inst.L, inst.decoders, inst.pi, inst.f, tol, inst.policies)
        for name, chk in rep.by_name().items():
            records.append({"instance_seed": iseed, "identity_name": name, "max_residual": chk.max_residual, "pass": chk.passed})
    return records
