"""Optimistic value-based exploration with squared-Bellman-error confidence sets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from latent_rl_lab.base_algs.embedding import (
    FiniteQClass,
    build_completeness_class,
    build_value_class,
    jl_embed,
    weight_norm_bound,
)
from latent_rl_lab.mdp import MixturePolicy, Policy, TabularMDP, policy_value, sample_trajectory, value_iteration
from latent_rl_lab.oracle import pushforward_coverability

TRACE_FIELDS = ("t", "selected_f_index", "episode_return", "optimal_return", "cumulative_regret", "confset_size", "beta_doublings")


def golf_beta(T: int, H: int, n_f: int, n_g: int, delta: float = 0.1, c: float = 2.0, eps_apx: float = 0.0) -> float:
    """c ln(T H |F| |G| / delta) + T eps_apx."""
    return c * math.log(T * H * n_f * n_g / delta) + T * eps_apx


@dataclass
class GolfResult:
    selected: np.ndarray
    returns: np.ndarray
    regret: np.ndarray
    confset_size: np.ndarray
    beta_doublings: np.ndarray
    realizable_in_set: np.ndarray | None
    optimal_return: float
    policies: list
    fallback_events: int = 0

    @property
    def episodes(self) -> int:
        return len(self.selected)

    @property
    def mixture_risk(self) -> float:
        return float(np.mean(self.regret)) if len(self.regret) else float("nan")

    def final_mixture(self) -> MixturePolicy:
        return MixturePolicy([self.policies[i] for i in self.selected])

    def trace_rows(self) -> list[dict]:
        """One row per episode, keyed by TRACE_FIELDS."""
        cum = np.cumsum(self.regret)
        return [
            {
                "t": t + 1,
                "selected_f_index": int(self.selected[t]),
                "episode_return": float(self.returns[t]),
                "optimal_return": self.optimal_return,
                "cumulative_regret": float(cum[t]),
                "confset_size": int(self.confset_size[t]),
                "beta_doublings": int(self.beta_doublings[t]),
            }
            for t in range(self.episodes)
        ]


def greedy_policies(F: FiniteQClass, space: str = "observation") -> list[Policy]:
    A = F.tables.shape[-1]
    return [Policy.deterministic(np.argmax(t, axis=-1), A, space) for t in F.tables]


def golf(
    F: FiniteQClass,
    G: FiniteQClass,
    beta: float,
    T: int,
    env: TabularMDP,
    rng: np.random.Generator,
    realizable_index: int | None = None,
    stop_risk: float | None = None,
) -> GolfResult:
    """Run T episodes on ``env``; the simulator is also used to score each policy exactly.

    Each round observes x_1, then plays the greedy policy of the member of the
    confidence set with the largest max_a f_1(x_1, a). With ``stop_risk`` the run
    ends as soon as the uniform mixture of the policies played so far has risk at
    most ``stop_risk``.
    """
    if len(F) == 0:
        raise ValueError("value class is empty")
    H = F.H
    nF, nG = len(F), len(G)
    Vf = np.concatenate([F.values(), np.zeros((nF, 1, F.tables.shape[2]))], axis=1)  # V_{f,H+1} = 0
    loss_g = np.zeros((H, nG, nF))
    loss_self = np.zeros((H, nF))
    pols = greedy_policies(F)
    j_star = value_iteration(env).J
    risks = np.array([j_star - policy_value(env, p).J for p in pols])
    selected, returns, regret, sizes, doublings, in_set = [], [], [], [], [], []
    fallbacks = 0
    cinit = np.cumsum(env.init)
    for t in range(T):
        gap = (loss_self - loss_g.min(axis=1)).max(axis=0)  # worst layer per f
        feasible = gap <= beta
        n_double = 0
        if not feasible.any():
            n_double = 1
            feasible = gap <= 2 * beta
            if not feasible.any():
                fallbacks += 1
                feasible = gap == gap.min()
        x1 = min(int(np.searchsorted(cinit, rng.random() * cinit[-1], side="right")), env.S - 1)
        scores = np.where(feasible, F.tables[:, 0, x1, :].max(axis=-1), -np.inf)
        f = int(np.argmax(scores))
        tau = sample_trajectory(env, pols[f], rng, start=x1)
        for h in range(H):
            x, a, r = tau.states[h], tau.actions[h], tau.rewards[h]
            nxt = Vf[:, h + 1, tau.states[h + 1]] if h < H - 1 else np.zeros(nF)
            y = r + nxt
            loss_g[h] += (G.tables[:, h, x, a][:, None] - y[None, :]) ** 2
            loss_self[h] += (F.tables[:, h, x, a] - y) ** 2
        selected.append(f)
        returns.append(tau.ret)
        regret.append(risks[f])
        sizes.append(int(feasible.sum()))
        doublings.append(n_double)
        if realizable_index is not None:
            in_set.append(bool(feasible[realizable_index]))
        if stop_risk is not None and np.mean(regret) <= stop_risk:
            break
    return GolfResult(
        np.array(selected, dtype=int),
        np.array(returns),
        np.array(regret),
        np.array(sizes, dtype=int),
        np.array(doublings, dtype=int),
        np.array(in_set, dtype=bool) if realizable_index is not None else None,
        j_star,
        pols,
        fallbacks,
    )


def coverable_classes(bundle, rng: np.random.Generator, eps_apx: float = 0.25, delta: float = 0.1, d: int | None = None):
    """F = {Q*_M o phi} and a clipped-linear G built from embeddings of the
    mismatch-complete latent class, which makes every backup of F representable
    up to the embedding error. Returns (F, G, index of Q* o phi* in F)."""
    if bundle.L_lat is None:
        raise ValueError("bundle has no mismatch-complete latent class")
    F = build_value_class(bundle.model_class, bundle.decoders.members)
    V = np.stack([value_iteration(M).V for M in bundle.model_class])
    embs = [jl_embed(M, pushforward_coverability(M), V, eps_apx, delta, rng, d) for M in bundle.L_lat]
    G = build_completeness_class(embs, bundle.decoders.members, weight_norm_bound(len(F), max(bundle.base.H - 1, 1)))
    return F, G, F.index((0, 0))
