"""Optimistic debiased maximum-likelihood estimation of a latent model and decoder
from self-prediction, plus exact self-prediction error accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from latent_rl_lab.latent import Decoder, DecoderClass, LatentDynamicsMDP, compose, compose_policy
from latent_rl_lab.mdp import (
    Policy,
    TabularMDP,
    Trajectory,
    common_reward_grid,
    hellinger_sq_arrays,
    occupancy,
    sample_trajectory,
    value_iteration,
)
from latent_rl_lab.oracle import model_joint, pushforward_model, state_action_coverability

LOG_FLOOR = 1e-12
MAX_CLASS_SIZE = 64


# exact self-prediction error ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class SelfPredError:
    """``init`` is the first-label term; ``layers[h-1, x, a]`` the per-cell Hellinger term."""

    init: float
    layers: np.ndarray

    def expected(self, d_sa: np.ndarray) -> np.ndarray:
        """Per-layer expectations (H+1,) with the first-label term first."""
        return np.concatenate([[self.init], np.einsum("hxa,hxa->h", d_sa, self.layers)])


def _grid_index(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(grid, values - 1e-12)
    idx = np.minimum(idx, len(grid) - 1)
    if not np.allclose(grid[idx], values, atol=1e-9, rtol=0):
        raise ValueError("observed reward is not on the reward grid")
    return idx


def _on_grid(M: TabularMDP, grid: np.ndarray) -> TabularMDP:
    return M if np.array_equal(M.reward_grid, grid) else M.with_reward_grid(grid)


def self_pred_error(L: LatentDynamicsMDP, M_cand: TabularMDP, phi: Decoder) -> SelfPredError:
    """Squared Hellinger distance between M_cand at (phi_h(x), a) and phi_{h+1} pushed through the truth."""
    if (M_cand.H, M_cand.S, M_cand.A) != (L.H, phi.S, L.A) or phi.X != L.X:
        raise ValueError("candidate shapes do not match the instance")
    grid = common_reward_grid([M_cand, L.obs])
    if not np.array_equal(L.obs.reward_grid, grid):
        L = compose(L.base.with_reward_grid(grid), L.emission)
    P = pushforward_model(L, phi)
    Mj = model_joint(_on_grid(M_cand, grid))
    init = float(hellinger_sq_arrays(Mj.init, P.init))
    layers = np.stack([hellinger_sq_arrays(Mj.layers[h][phi.maps[h]], P.layers[h], axis=(-2, -1)) for h in range(L.H)])
    return SelfPredError(init, layers)


def expected_self_pred_error(L: LatentDynamicsMDP, M_cand: TabularMDP, phi: Decoder, pi: Policy) -> np.ndarray:
    """sum-ready per-layer expectations E^{pi}[Delta_h], h = 0..H, for an observation policy."""
    return self_pred_error(L, M_cand, phi).expected(occupancy(L.obs, pi).d_sa)


# data and likelihoods -------------------------------------------------------------


@dataclass
class TransitionCounts:
    """Counts of observed (x, a, r, x') tuples per layer; the last layer keeps (x, a, r)."""

    X: int
    A: int
    H: int
    grid: np.ndarray
    first: np.ndarray = None
    layers: list = None
    episodes: int = 0

    def __post_init__(self):
        G = len(self.grid)
        if self.first is None:
            self.first = np.zeros(self.X)
        if self.layers is None:
            self.layers = [np.zeros((self.X, self.A, G, self.X)) for _ in range(self.H - 1)]
            self.layers.append(np.zeros((self.X, self.A, G)))

    def add(self, tau: Trajectory) -> None:
        g = _grid_index(self.grid, tau.rewards)
        x, a = tau.states, tau.actions
        self.first[x[0]] += 1
        for h in range(self.H - 1):
            self.layers[h][x[h], a[h], g[h], x[h + 1]] += 1
        self.layers[-1][x[-1], a[-1], g[-1]] += 1
        self.episodes += 1

    def labeled(self, psi: Decoder) -> tuple[np.ndarray, list]:
        """Counts with next observations replaced by psi's labels."""
        first = np.zeros(psi.S)
        np.add.at(first, psi.maps[0], self.first)
        out = [C @ psi.onehot(h + 2) for h, C in enumerate(self.layers[:-1])]
        out.append(self.layers[-1])
        return first, out


def _log_joints(models: Sequence[TabularMDP], grid: np.ndarray):
    """Stacked floored log-probabilities and floor masks per layer."""
    joints = [model_joint(_on_grid(M, grid)) for M in models]
    init = np.stack([j.init for j in joints])
    layers = [np.stack([j.layers[h] for j in joints]) for h in range(models[0].H)]
    logs = [np.log(np.maximum(init, LOG_FLOOR))] + [np.log(np.maximum(p, LOG_FLOOR)) for p in layers]
    masks = [init < LOG_FLOOR] + [p < LOG_FLOOR for p in layers]
    return logs, masks


def log_likelihoods(data: TransitionCounts, log_joints, Phi: DecoderClass, psi: Decoder):
    """LL[n, k] = sum log [M_n o phi_k](r, psi(x')) over the data, and floor-event counts."""
    logs, masks = log_joints
    first, layers = data.labeled(psi)
    n = logs[0].shape[0]
    ll = np.tile(logs[0] @ first, (len(Phi), 1)).T
    ev = np.tile(masks[0] @ first, (len(Phi), 1)).T
    for k, phi in enumerate(Phi):
        for h, C in enumerate(layers):
            lg = logs[h + 1][:, phi.maps[h]]  # (n, X, A, G, S') or (n, X, A, G, 1)
            mk = masks[h + 1][:, phi.maps[h]]
            if C.ndim == 3:
                C = C[..., None]
            ll[:, k] += np.tensordot(lg, C, axes=4).reshape(n)
            ev[:, k] += np.tensordot(mk.astype(float), C, axes=4).reshape(n)
    return ll, ev


def selfpredict_beta(c_cov: float, H: int, T: int) -> float:
    """(1/2) sqrt(C_cov H ln T / T), with T floored at 2."""
    T = max(int(T), 2)
    return 0.5 * math.sqrt(c_cov * H * math.log(T) / T)


@dataclass
class SelfPredReport:
    t: int
    m_hat: int
    phi_hat: int
    optimism_gap: float
    objective: float
    clamp_events: int
    hellinger: np.ndarray | None = None
    pulsar_lhs: float | None = None

    @property
    def hellinger_sum(self) -> float | None:
        return None if self.hellinger is None else float(np.sum(self.hellinger))

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "m_hat": self.m_hat,
            "phi_hat": self.phi_hat,
            "hellinger_sum": self.hellinger_sum,
            "optimism_gap": self.optimism_gap,
            "objective": self.objective,
            "clamp_events": self.clamp_events,
        }


@dataclass
class SelfPredictOpt:
    """Exhaustive maximizer of the optimistic debiased likelihood objective.

    For each outer pair (M, phi): (gamma beta)^{-1} J_M(pi_M) + LL(M o phi) minus the
    best LL over L_class o Phi, all likelihoods scoring phi's labels of the next
    observation. Ties go to the smallest (model, decoder) index.
    """

    model_class: tuple
    Phi: DecoderClass
    L_class: tuple
    gamma: float
    beta: float
    grid: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.model_class) == 0 or len(self.Phi) == 0 or len(self.L_class) == 0:
            raise ValueError("classes must be nonempty")
        if max(len(self.model_class), len(self.Phi), len(self.L_class)) > MAX_CLASS_SIZE:
            raise ValueError(f"class sizes are capped at {MAX_CLASS_SIZE} for exhaustive search")
        if self.gamma <= 0 or self.beta <= 0:
            raise ValueError("gamma and beta must be positive")
        if self.grid is None:
            self.grid = common_reward_grid(list(self.model_class) + list(self.L_class))
        self.values = np.array([value_iteration(M).J for M in self.model_class])
        self._lj_model = _log_joints(self.model_class, self.grid)
        self._lj_inner = _log_joints(self.L_class, self.grid)

    def new_data(self) -> TransitionCounts:
        return TransitionCounts(self.Phi.X, self.model_class[0].A, self.Phi.H, self.grid)

    def objective_table(self, data: TransitionCounts) -> tuple[np.ndarray, int]:
        """(objective[m, k], floor events across all evaluated likelihoods)."""
        obj = np.zeros((len(self.model_class), len(self.Phi)))
        events = 0
        for k, phi in enumerate(self.Phi):
            ll, ev = log_likelihoods(data, self._lj_model, self.Phi, phi)
            ll_in, ev_in = log_likelihoods(data, self._lj_inner, self.Phi, phi)
            obj[:, k] = ll[:, k] - ll_in.max()
            events += int(ev[:, k].sum() + ev_in.sum())
        obj += self.values[:, None] / (self.gamma * self.beta)
        return obj, events

    def step(self, data: TransitionCounts, t: int = 0) -> tuple[TabularMDP, Decoder, SelfPredReport]:
        obj, events = self.objective_table(data)
        m, k = np.unravel_index(int(np.argmax(obj)), obj.shape)
        report = SelfPredReport(int(t), int(m), int(k), float("nan"), float(obj[m, k]), events)
        return self.model_class[m], self.Phi[k], report


def selfpredict_opt_step(dataset, Phi, model_class, L_class, gamma, beta, t: int = 0):
    """One exhaustive step from a list of observation trajectories."""
    est = SelfPredictOpt(tuple(model_class), DecoderClass(Phi), tuple(L_class), gamma, beta)
    data = est.new_data()
    for tau in dataset:
        data.add(tau)
    return est.step(data, t)


def debiased_gap(data: TransitionCounts, est: SelfPredictOpt, M: TabularMDP, k: int) -> float:
    """LL(M o phi_k) - max over L_class o Phi, both scoring phi_k's labels."""
    phi = est.Phi[k]
    lj = _log_joints([M], est.grid)
    ll, _ = log_likelihoods(data, lj, est.Phi, phi)
    ll_in, _ = log_likelihoods(data, est._lj_inner, est.Phi, phi)
    return float(ll[0, k] - ll_in.max())


def optimistic_regret(reports, L: LatentDynamicsMDP, policies, gamma: float, model_class, decoders) -> float:
    """sum_t sum_{h=0}^H E^{pi_t}[Delta_h(M_t, phi_t)] + gamma^{-1} (J* - J^{M_t}(pi_{M_t})), exactly."""
    j_star = value_iteration(L.base).J
    total = 0.0
    for rep, pi in zip(reports, policies, strict=True):
        M, phi = model_class[rep.m_hat], decoders[rep.phi_hat]
        total += float(expected_self_pred_error(L, M, phi, pi).sum())
        total += (j_star - value_iteration(M).J) / gamma
    return total


def c_cov_surrogate(M: TabularMDP) -> float:
    """State-action coverability of the base MDP over all deterministic policies."""
    return state_action_coverability(M).coefficient


def pulsar_bound(n_models: int, n_inner: int, n_decoders: int, H: int, T: int, delta: float = 0.1, c: float = 10.0) -> float:
    return c * math.log(n_models * n_inner * n_decoders * H * T / delta)


@dataclass
class SelfPredictRun:
    reports: list
    policies: list
    c_cov: float
    beta: float


def run_selfpredict_rounds(
    L: LatentDynamicsMDP,
    model_class: Sequence[TabularMDP],
    Phi: DecoderClass,
    L_class: Sequence[TabularMDP],
    gamma: float,
    T: int,
    rng: np.random.Generator,
) -> SelfPredictRun:
    """Each round fits on past data, deploys pi_{M_t} o phi_t for one episode, and records
    the exact per-round Hellinger terms and the cumulative estimation LHS
    sum_{i<t} E^{pi_i}[sum_h Delta_h(M_t, phi_t)] + gamma^{-1} gap_t."""
    c_cov = c_cov_surrogate(L.base)
    beta = selfpredict_beta(c_cov, L.H, T)
    est = SelfPredictOpt(tuple(model_class), Phi, tuple(L_class), gamma, beta)
    data = est.new_data()
    j_star = value_iteration(L.base).J
    greedy = [value_iteration(M).greedy for M in est.model_class]
    past_occ = np.zeros((L.H, L.X, L.A))
    reports, policies = [], []
    for t in range(1, T + 1):
        M, phi, rep = est.step(data, t)
        err = self_pred_error(L, M, phi)
        pi = compose_policy(greedy[rep.m_hat], phi)
        d = occupancy(L.obs, pi).d_sa
        rep.optimism_gap = float(j_star - est.values[rep.m_hat])
        rep.hellinger = err.expected(d)
        rep.pulsar_lhs = float((t - 1) * err.init + np.sum(past_occ * err.layers) + rep.optimism_gap / gamma)
        past_occ += d
        data.add(sample_trajectory(L.obs, pi, rng))
        reports.append(rep)
        policies.append(pi)
    return SelfPredictRun(reports, policies, c_cov, beta)
