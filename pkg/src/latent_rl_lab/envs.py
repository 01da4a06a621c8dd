"""Environment families: binary-tree and contextual-bandit hardness constructions,
combination locks, and random pushforward-coverable instances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from latent_rl_lab.latent import (
    Decoder,
    DecoderClass,
    EmissionProcess,
    LatentDynamicsMDP,
    compose,
    invert_emission,
)
from latent_rl_lab.mdp import TabularMDP
from latent_rl_lab.oracle import mismatch_complete_class, perturb_decoder


@dataclass(frozen=True, eq=False)
class EnvBundle:
    """A base MDP, a family of emissions and the learner's hypothesis classes.

    Member ``i`` is the latent-dynamics MDP <base, emissions[i]>.
    """

    base: TabularMDP
    emissions: tuple
    decoders: DecoderClass
    model_class: tuple
    L_lat: tuple | None = None
    known_model: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def num_members(self) -> int:
        return len(self.emissions)

    def member(self, i: int = 0) -> LatentDynamicsMDP:
        return compose(self.base, self.emissions[i])


def _shift_maps(N: int, block: int, H: int, shift: int) -> np.ndarray:
    """Map state (tree t, node p) -> (tree t+shift mod N, node p) on every layer."""
    s = np.arange(N * block)
    t, p = s // block, s % block
    return np.broadcast_to(((t + shift) % N) * block + p, (H, N * block))


def _shift_family(N: int, block: int, H: int) -> tuple[tuple, DecoderClass]:
    X = N * block
    emissions = tuple(EmissionProcess.from_maps(_shift_maps(N, block, H, i), X) for i in range(N))
    decoders = DecoderClass([invert_emission(e) for e in emissions])
    return emissions, decoders


def make_tree_env(N: int) -> EnvBundle:
    """N binary trees of depth log2(N); reaching leaf i of tree i pays 1 at layer H."""
    if N < 4 or N & (N - 1):
        raise ValueError("N must be a power of two and at least 4")
    H = int(np.log2(N)) + 1
    block = 2 * N - 1
    S, A = N * block, 2
    init = np.zeros(S)
    init[np.arange(N) * block] = 1.0 / N
    step = np.zeros((S, A, S))
    for t in range(N):
        for p in range(block):
            for a in range(A):
                child = 2 * p + 1 + a
                step[t * block + p, a, t * block + (child if child < block else p)] = 1.0
    trans = np.broadcast_to(step, (H - 1, S, A, S))
    mean = np.zeros((H, S, A))
    first_leaf = N - 1
    for t in range(N):
        mean[H - 1, t * block + first_leaf + t, :] = 1.0
    base = TabularMDP.from_mean_rewards(init, trans, mean)
    emissions, decoders = _shift_family(N, block, H)
    return EnvBundle(base, emissions, decoders, (base,), known_model=True, metadata={"name": "tree", "N": N})


def make_cb_env(N: int) -> EnvBundle:
    """One-step contextual bandit: N uniform contexts, action = context pays 1."""
    if N < 4:
        raise ValueError("N must be at least 4")
    init = np.full(N, 1.0 / N)
    mean = np.eye(N)[None]
    base = TabularMDP.from_mean_rewards(init, np.zeros((0, N, N, N)), mean)
    emissions, decoders = _shift_family(N, 1, 1)
    return EnvBundle(base, emissions, decoders, (base,), known_model=True, metadata={"name": "cb", "N": N})


def _block_emission(S: int, obs_per_state: int, H: int, rng: np.random.Generator) -> EmissionProcess:
    X = S * obs_per_state
    probs = np.zeros((H, S, X))
    for h in range(H):
        perm = rng.permutation(X).reshape(S, obs_per_state)
        for s in range(S):
            probs[h, s, perm[s]] = rng.dirichlet(np.ones(obs_per_state))
    return EmissionProcess(probs)


def make_combination_lock(H: int, num_decoys: int, rng: np.random.Generator) -> EnvBundle:
    """Two live states per layer; one secret action per (layer, live state) keeps the
    agent alive, any other action drops it into an absorbing decoy. The correct
    action at layer H-1 leads to the goal (live state 0 at layer H), which pays 1.
    """
    if H < 2:
        raise ValueError("H must be at least 2")
    if num_decoys < 1:
        raise ValueError("need at least one decoy state")
    S, A = 2 + num_decoys, 2
    init = np.zeros(S)
    init[:2] = 0.5
    secret = rng.integers(0, A, size=(H - 1, 2))
    trans = np.zeros((H - 1, S, A, S))
    decoys = np.arange(2, S)
    for h in range(H - 1):
        for s in range(2):
            for a in range(A):
                if a == secret[h, s]:
                    if h == H - 2:
                        trans[h, s, a, 0] = 1.0
                    else:
                        trans[h, s, a, :2] = 0.5
                else:
                    trans[h, s, a, decoys] = 1.0 / num_decoys
        for s in decoys:
            trans[h, s, :, decoys] = 1.0 / num_decoys
    mean = np.zeros((H, S, A))
    mean[H - 1, 0, :] = 1.0
    base = TabularMDP.from_mean_rewards(init, trans, mean)
    psi = _block_emission(S, 2, H, rng)
    phi_star = invert_emission(psi)
    X = psi.X
    phis = [phi_star, Decoder.constant(H, X, S)]
    phis += [perturb_decoder(phi_star, 0.25, rng) for _ in range(2)]
    # degenerate model: everything collapses onto state 0 with no reward
    deg_trans = np.zeros_like(trans)
    deg_trans[..., 0] = 1.0
    degenerate = TabularMDP.from_mean_rewards(np.eye(S)[0], deg_trans, np.zeros((H, S, A)))
    models = (base, degenerate)
    L_lat = tuple(mismatch_complete_class(compose(base, psi), DecoderClass(phis), models))
    meta = {"name": "lock", "H": H, "num_decoys": num_decoys, "secret": secret.tolist()}
    return EnvBundle(base, (psi,), DecoderClass(phis), models, L_lat, metadata=meta)


def _mix_rows(nu: np.ndarray, mix: float, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    rows = rng.dirichlet(np.ones(nu.shape[-1]), size=shape)
    return (1.0 - mix) * nu + mix * rows


def make_random_pushforward_env(
    S: int,
    X: int,
    A: int,
    H: int,
    mix: float,
    class_sizes: tuple[int, int],
    rng: np.random.Generator,
    perturb: float = 0.5,
    binary_rewards: bool = False,
) -> EnvBundle:
    """Random base MDP with P_h(.|s,a) = (1-mix) nu_h + mix * (random row).

    ``class_sizes = (num_models, num_decoders)``; index 0 of each class is the truth.
    Rewards take values in {0, 1/H}, so every path earns at most 1. With
    ``binary_rewards`` each reward is deterministic, so wrong models are far apart.
    """
    if X < S or S < 1 or A < 1 or H < 1:
        raise ValueError("infeasible sizes: need X >= S >= 1, A >= 1, H >= 1")
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix must lie in [0, 1]")
    n_models, n_dec = class_sizes
    if n_models < 1 or n_dec < 1:
        raise ValueError("class sizes must be positive")

    grid = np.array([0.0, 1.0 / H])

    def model(init, trans, p) -> TabularMDP:
        return TabularMDP(init, trans, np.stack([1.0 - p, p], axis=-1), grid)

    def draw():
        init = rng.dirichlet(np.ones(S))
        trans = np.zeros((H - 1, S, A, S))
        for h in range(H - 1):
            nu = rng.dirichlet(np.ones(S))
            trans[h] = _mix_rows(nu, mix, (S, A), rng)
        p = rng.random((H, S, A))
        return init, trans, np.round(p) if binary_rewards else p

    truth = draw()
    base = model(*truth)
    models = [base]
    for _ in range(n_models - 1):
        other = draw()
        init, trans, p = [(1 - perturb) * u + perturb * v for u, v in zip(truth, other)]
        models.append(model(init, trans, np.round(p) if binary_rewards else p))
    probs = np.zeros((H, S, X))
    for h in range(H):
        owner = np.concatenate([np.arange(S), rng.integers(0, S, size=X - S)])
        rng.shuffle(owner)
        for s in range(S):
            xs = np.flatnonzero(owner == s)
            probs[h, s, xs] = rng.dirichlet(np.ones(len(xs)))
    psi = EmissionProcess(probs)
    phi_star = invert_emission(psi)
    phis = [phi_star]
    while len(phis) < n_dec:
        cand = perturb_decoder(phi_star, perturb, rng)
        if all(cand != p for p in phis):
            phis.append(cand)
    decoders = DecoderClass(phis)
    L = compose(base, psi)
    L_lat = tuple(mismatch_complete_class(L, decoders, models))
    meta = {"name": "random", "S": S, "X": X, "A": A, "H": H, "mix": mix}
    return EnvBundle(base, (psi,), decoders, tuple(models), L_lat, metadata=meta)


def make_env(name: str, rng: np.random.Generator | None = None, **params) -> EnvBundle:
    """Construct a bundle by family name."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if name == "tree":
        return make_tree_env(int(params["N"]))
    if name == "cb":
        return make_cb_env(int(params["N"]))
    if name == "lock":
        return make_combination_lock(int(params["H"]), int(params.get("num_decoys", 1)), rng)
    if name == "random":
        sizes = tuple(params.get("class_sizes", (2, 2)))
        return make_random_pushforward_env(
            int(params["S"]),
            int(params["X"]),
            int(params["A"]),
            int(params["H"]),
            float(params.get("mix", 0.5)),
            sizes,
            rng,
            float(params.get("perturb", 0.5)),
            bool(params.get("binary_rewards", False)),
        )
    raise ValueError(f"unknown environment family {name!r}")
