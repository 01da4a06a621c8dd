"""Latent-space base algorithms: optimistic value iteration and a known-model planner."""

from __future__ import annotations

from typing import Protocol

import numpy as np

from latent_rl_lab.mdp import Policy, TabularMDP, Trajectory, value_iteration


class BaseAlgorithm(Protocol):
    """Episodic learner that only ever sees latent (compressed) trajectories."""

    def policy(self) -> Policy: ...

    def update(self, traj: Trajectory) -> None: ...

    def final_policy(self) -> Policy: ...


class UCBVI:
    """Optimistic value iteration on the empirical model.

    Q_h(s,a) = min(cap, r_hat + b(n) + P_hat V_{h+1}) with
    b(n) = bonus_scale * sqrt(ln(S A H K) / max(1, n)); unvisited pairs sit at the cap.
    ``value_cap`` defaults to 1 because returns lie in [0, 1]. Ties go to the
    smallest action index, which makes exploration of saturated tables ordered.
    """

    def __init__(
        self,
        S: int,
        A: int,
        H: int,
        bonus_scale: float = 1.0,
        rng: np.random.Generator | None = None,
        num_episodes: int | None = None,
        value_cap: float | None = 1.0,
    ):
        self.S, self.A, self.H = S, A, H
        self.bonus_scale = float(bonus_scale)
        self.rng = rng
        self.num_episodes = num_episodes
        self.value_cap = value_cap
        self.n = np.zeros((H, S, A))
        self.next_counts = np.zeros((max(H - 1, 0), S, A, S))
        self.reward_sum = np.zeros((H, S, A))
        self.episodes = 0
        self._policy: Policy | None = None
        self.Q = np.zeros((H, S, A))

    def _cap(self, h: int) -> float:
        return float(self.H - h) if self.value_cap is None else float(self.value_cap)

    def _plan(self) -> None:
        K = self.num_episodes if self.num_episodes is not None else max(self.episodes, 1)
        log_term = np.log(max(self.S * self.A * self.H * K, 1))
        safe_n = np.maximum(self.n, 1.0)
        bonus = self.bonus_scale * np.sqrt(log_term / safe_n)
        r_hat = self.reward_sum / safe_n
        V = np.zeros(self.S)
        for h in range(self.H - 1, -1, -1):
            q = r_hat[h] + bonus[h]
            if h < self.H - 1:
                p_hat = self.next_counts[h] / safe_n[h][:, :, None]
                q = q + p_hat @ V
            cap = self._cap(h)
            q = np.where(self.n[h] > 0, np.minimum(q, cap), cap)
            self.Q[h] = q
            V = q.max(axis=-1)
        self._policy = Policy.deterministic(np.argmax(self.Q, axis=-1), self.A)

    def policy(self) -> Policy:
        if self._policy is None:
            self._plan()
        return self._policy

    def update(self, traj: Trajectory) -> None:
        s, a, r = traj.states, traj.actions, traj.rewards
        h = np.arange(self.H)
        np.add.at(self.n, (h, s, a), 1.0)
        np.add.at(self.reward_sum, (h, s, a), r)
        if self.H > 1:
            np.add.at(self.next_counts, (h[:-1], s[:-1], a[:-1], s[1:]), 1.0)
        self.episodes += 1
        self._policy = None

    def final_policy(self) -> Policy:
        if self.episodes == 0:
            return Policy.uniform(self.H, self.S, self.A)
        return self.policy()


def ucbvi_base(S: int, A: int, H: int, bonus_scale: float = 1.0, rng=None, num_episodes: int | None = None, value_cap=1.0) -> UCBVI:
    return UCBVI(S, A, H, bonus_scale, rng, num_episodes, value_cap)


class KnownModelPlanner:
    """Plays the optimal policy of a fixed latent model and ignores data."""

    def __init__(self, M: TabularMDP):
        self._pi = value_iteration(M).greedy

    def policy(self) -> Policy:
        return self._pi

    def update(self, traj: Trajectory) -> None:
        pass

    def final_policy(self) -> Policy:
        return self._pi
