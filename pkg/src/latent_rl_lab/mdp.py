"""Finite-horizon layered MDPs and exact dynamic programming.

Layers are numbered 1..H in every public signature. Arrays are stored
0-indexed, so layer ``h`` lives at index ``h - 1``.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


def _frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FiniteDistribution:
    """Distribution with finite support."""

    support: tuple
    probs: tuple

    def __init__(self, support: Sequence, probs: Sequence[float]):
        support = tuple(support)
        probs = tuple(float(p) for p in probs)
        if len(support) != len(probs):
            raise ValueError("support and probs differ in length")
        if len(set(support)) != len(support):
            raise ValueError("support entries must be distinct")
        if any(p < 0 for p in probs):
            raise ValueError("negative probability")
        if abs(sum(probs) - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {sum(probs)!r}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point(cls, value) -> "FiniteDistribution":
        return cls([value], [1.0])

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probs))

    def mean(self) -> float:
        return float(sum(float(v) * p for v, p in zip(self.support, self.probs)))


def hellinger_sq(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """Squared Hellinger distance sum_z (sqrt p(z) - sqrt q(z))^2, in [0, 2]."""
    pd, qd = p.as_dict(), q.as_dict()
    total = 0.0
    for z in set(pd) | set(qd):
        total += (np.sqrt(pd.get(z, 0.0)) - np.sqrt(qd.get(z, 0.0))) ** 2
    return float(total)


def hellinger_sq_arrays(p: np.ndarray, q: np.ndarray, axis=-1) -> np.ndarray:
    """Squared Hellinger distance between aligned probability arrays."""
    return np.sum((np.sqrt(p) - np.sqrt(q)) ** 2, axis=axis)


def tv_arrays(p: np.ndarray, q: np.ndarray, axis=-1) -> np.ndarray:
    """Total variation distance (half the L1 norm) between aligned arrays."""
    return 0.5 * np.sum(np.abs(p - q), axis=axis)


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Layered MDP over ``S`` states with rewards on a shared finite grid.

    ``trans[h-1, s, a]`` is the law of the layer-(h+1) state, h = 1..H-1.
    ``reward_probs[h-1, s, a]`` is the reward law at layer h over ``reward_grid``.
    """

    init: np.ndarray
    trans: np.ndarray
    reward_probs: np.ndarray
    reward_grid: np.ndarray
    _cdf: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "init", _frozen(self.init))
        object.__setattr__(self, "trans", _frozen(self.trans))
        object.__setattr__(self, "reward_probs", _frozen(self.reward_probs))
        object.__setattr__(self, "reward_grid", _frozen(self.reward_grid))
        H, S, A, G = self.reward_probs.shape
        if self.init.shape != (S,):
            raise ValueError(f"init has shape {self.init.shape}, expected {(S,)}")
        if self.trans.shape != (H - 1, S, A, S):
            raise ValueError(f"trans has shape {self.trans.shape}, expected {(H - 1, S, A, S)}")
        if self.reward_grid.shape != (G,):
            raise ValueError("reward grid does not match reward_probs")

    @property
    def H(self) -> int:
        return self.reward_probs.shape[0]

    @property
    def S(self) -> int:
        return self.reward_probs.shape[1]

    @property
    def A(self) -> int:
        return self.reward_probs.shape[2]

    @property
    def mean_reward(self) -> np.ndarray:
        if "mean" not in self._cdf:
            self._cdf["mean"] = self.reward_probs @ self.reward_grid
        return self._cdf["mean"]

    def cdfs(self):
        if "init" not in self._cdf:
            self._cdf["init"] = np.cumsum(self.init)
            self._cdf["trans"] = np.cumsum(self.trans, axis=-1)
            self._cdf["reward"] = np.cumsum(self.reward_probs, axis=-1)
        return self._cdf["init"], self._cdf["trans"], self._cdf["reward"]

    def transition(self, h: int, s: int, a: int) -> FiniteDistribution:
        row = self.trans[h - 1, s, a]
        return FiniteDistribution(range(self.S), row / row.sum())

    def reward(self, h: int, s: int, a: int) -> FiniteDistribution:
        return FiniteDistribution(self.reward_grid.tolist(), self.reward_probs[h - 1, s, a])

    def with_reward_grid(self, grid: np.ndarray) -> "TabularMDP":
        """Re-express rewards on a grid that contains the current one."""
        grid = np.asarray(grid, dtype=float)
        idx = np.searchsorted(grid, self.reward_grid)
        if np.any(idx >= len(grid)) or not np.allclose(grid[np.minimum(idx, len(grid) - 1)], self.reward_grid, atol=1e-12, rtol=0):
            raise ValueError("target grid does not contain the reward grid")
        probs = np.zeros(self.reward_probs.shape[:3] + (len(grid),))
        probs[..., idx] = self.reward_probs
        return TabularMDP(self.init, self.trans, probs, grid)

    @classmethod
    def from_mean_rewards(cls, init, trans, mean_reward) -> "TabularMDP":
        """Bernoulli rewards on the grid {0, 1} with the given means."""
        r = np.asarray(mean_reward, dtype=float)
        probs = np.stack([1.0 - r, r], axis=-1)
        return cls(init, trans, probs, np.array([0.0, 1.0]))


def common_reward_grid(models: Sequence[TabularMDP]) -> np.ndarray:
    return np.unique(np.concatenate([m.reward_grid for m in models]))


def align_reward_grids(models: Sequence[TabularMDP]) -> list[TabularMDP]:
    grid = common_reward_grid(models)
    return [m if np.array_equal(m.reward_grid, grid) else m.with_reward_grid(grid) for m in models]


@dataclass(frozen=True, eq=False)
class Policy:
    """Randomized non-stationary policy; ``table[h-1, z]`` is the action law at layer h."""

    table: np.ndarray
    space: str = "latent"

    def __post_init__(self):
        object.__setattr__(self, "table", _frozen(self.table))
        if self.table.ndim != 3:
            raise ValueError("policy table must have shape (H, Z, A)")
        if self.space not in ("latent", "observation"):
            raise ValueError(f"unknown state space tag {self.space!r}")

    @property
    def H(self) -> int:
        return self.table.shape[0]

    @classmethod
    def uniform(cls, H: int, Z: int, A: int, space: str = "latent") -> "Policy":
        return cls(np.full((H, Z, A), 1.0 / A), space)

    @classmethod
    def deterministic(cls, actions: np.ndarray, A: int, space: str = "latent") -> "Policy":
        actions = np.asarray(actions, dtype=int)
        table = np.zeros(actions.shape + (A,))
        np.put_along_axis(table, actions[..., None], 1.0, axis=-1)
        return cls(table, space)

    def key(self) -> bytes:
        return self.table.tobytes()


@dataclass(frozen=True, eq=False)
class MixturePolicy:
    """Distribution over policies; one member is drawn at the start of an episode."""

    policies: tuple
    weights: np.ndarray

    def __init__(self, policies: Sequence[Policy], weights: Sequence[float] | None = None):
        policies = tuple(policies)
        if not policies:
            raise ValueError("empty mixture")
        w = np.full(len(policies), 1.0 / len(policies)) if weights is None else np.asarray(weights, float)
        if w.shape != (len(policies),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("mixture weights must be a distribution over members")
        object.__setattr__(self, "policies", policies)
        object.__setattr__(self, "weights", _frozen(w))


@dataclass(frozen=True, eq=False)
class ValueTables:
    Q: np.ndarray
    V: np.ndarray
    J: float
    greedy: Policy


@dataclass(frozen=True, eq=False)
class OccupancyTable:
    d_sa: np.ndarray

    @property
    def d_s(self) -> np.ndarray:
        return self.d_sa.sum(axis=-1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    hindsight: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states, int))
        object.__setattr__(self, "actions", _frozen(self.actions, int))
        object.__setattr__(self, "rewards", _frozen(self.rewards))
        if self.hindsight is not None:
            object.__setattr__(self, "hindsight", _frozen(self.hindsight, int))
            if len(self.hindsight) != len(self.states):
                raise ValueError("hindsight states must cover every step")
        if not len(self.states) == len(self.actions) == len(self.rewards):
            raise ValueError("trajectory fields differ in length")

    @property
    def H(self) -> int:
        return len(self.states)

    @property
    def ret(self) -> float:
        return float(np.sum(self.rewards))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    message: str = "ok"
    where: tuple = ()

    def __bool__(self) -> bool:
        return self.ok


def validate_mdp(M: TabularMDP, check_total_reward: bool = True, max_enum_horizon: int = 6) -> ValidationReport:
    """Check distribution invariants; returns the first violation found."""
    if np.any(M.init < 0) or abs(M.init.sum() - 1.0) > PROB_TOL:
        return ValidationReport(False, f"init sums to {M.init.sum()!r}", ("init",))
    for h, s, a in itertools.product(range(M.H - 1), range(M.S), range(M.A)):
        row = M.trans[h, s, a]
        if np.any(row < 0) or abs(row.sum() - 1.0) > PROB_TOL:
            return ValidationReport(False, f"transition row sums to {row.sum()!r}", ("trans", h + 1, s, a))
    if np.any(M.reward_grid < 0) or np.any(M.reward_grid > 1):
        return ValidationReport(False, "reward support outside [0, 1]", ("reward_grid",))
    if len(np.unique(M.reward_grid)) != len(M.reward_grid):
        return ValidationReport(False, "reward support entries repeat", ("reward_grid",))
    for h, s, a in itertools.product(range(M.H), range(M.S), range(M.A)):
        row = M.reward_probs[h, s, a]
        if np.any(row < 0) or abs(row.sum() - 1.0) > PROB_TOL:
            return ValidationReport(False, f"reward row sums to {row.sum()!r}", ("reward", h + 1, s, a))
    if check_total_reward:
        if M.H <= max_enum_horizon:
            worst = _max_total_reward(M)
            if worst > 1.0 + 1e-12:
                return ValidationReport(False, f"total reward can reach {worst!r}", ("total_reward",))
        else:
            warnings.warn("total-reward bound not checked for H > %d" % max_enum_horizon, stacklevel=2)
    return ValidationReport(True)


def _max_total_reward(M: TabularMDP) -> float:
    """Largest reachable sum of reward-support values, by DP over reachable states."""
    top = np.array([[[M.reward_grid[row > 0].max() for row in sa] for sa in st] for st in M.reward_probs])
    reach = M.init > 0
    best_to_go = np.zeros(M.S)
    # backward: best achievable sum from (h, s) along positive-probability paths
    for h in range(M.H - 1, -1, -1):
        q = top[h].copy()
        if h < M.H - 1:
            nxt = np.where(M.trans[h] > 0, best_to_go[None, None, :], -np.inf).max(axis=-1)
            q = q + nxt
        best_to_go = q.max(axis=-1)
    return float(best_to_go[reach].max())


def _next_values(M: TabularMDP, h: int, f) -> np.ndarray:
    """E[V_f(s_{h+1}) | s, a] for layer h (1-based); zero at h = H."""
    if h == M.H:
        return np.zeros((M.S, M.A))
    f = np.asarray(f, dtype=float)
    v = f.max(axis=-1) if f.ndim == 2 else f
    return M.trans[h - 1] @ v


def bellman_backup(M: TabularMDP, h: int, f=None) -> np.ndarray:
    """[T_h f](s, a) = E[r_h + max_a' f(s_{h+1}, a') | s, a]; f over S x A or S."""
    if not 1 <= h <= M.H:
        raise ValueError(f"layer {h} outside 1..{M.H}")
    if f is None or h == M.H:
        return M.mean_reward[h - 1].copy()
    return M.mean_reward[h - 1] + _next_values(M, h, f)


def _greedy(Q: np.ndarray, space: str) -> Policy:
    return Policy.deterministic(np.argmax(Q, axis=-1), Q.shape[-1], space)


def value_iteration(M: TabularMDP, space: str = "latent") -> ValueTables:
    Q = np.zeros((M.H, M.S, M.A))
    V = np.zeros((M.H, M.S))
    for h in range(M.H, 0, -1):
        Q[h - 1] = M.mean_reward[h - 1] + (M.trans[h - 1] @ V[h] if h < M.H else 0.0)
        V[h - 1] = Q[h - 1].max(axis=-1)
    return ValueTables(Q, V, float(M.init @ V[0]), _greedy(Q, space))


def _check_policy(M: TabularMDP, pi: Policy) -> None:
    if pi.table.shape != (M.H, M.S, M.A):
        raise ValueError(f"policy shape {pi.table.shape} does not match MDP {(M.H, M.S, M.A)}")


def policy_value(M: TabularMDP, pi: Policy) -> ValueTables:
    _check_policy(M, pi)
    Q = np.zeros((M.H, M.S, M.A))
    V = np.zeros((M.H, M.S))
    for h in range(M.H, 0, -1):
        Q[h - 1] = M.mean_reward[h - 1] + (M.trans[h - 1] @ V[h] if h < M.H else 0.0)
        V[h - 1] = np.sum(pi.table[h - 1] * Q[h - 1], axis=-1)
    return ValueTables(Q, V, float(M.init @ V[0]), _greedy(Q, pi.space))


def mixture_value(M: TabularMDP, pi: Policy | MixturePolicy) -> float:
    if isinstance(pi, MixturePolicy):
        return float(sum(w * policy_value(M, p).J for p, w in zip(pi.policies, pi.weights)))
    return policy_value(M, pi).J


def occupancy(M: TabularMDP, pi: Policy) -> OccupancyTable:
    _check_policy(M, pi)
    d = np.zeros((M.H, M.S, M.A))
    ds = M.init.copy()
    for h in range(M.H):
        d[h] = ds[:, None] * pi.table[h]
        if h < M.H - 1:
            ds = np.einsum("sa,sat->t", d[h], M.trans[h])
    return OccupancyTable(d)


def _draw(cdf_row: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf_row, u * cdf_row[-1], side="right")), len(cdf_row) - 1)


def sample_trajectory(
    M: TabularMDP, pi: Policy | MixturePolicy, rng: np.random.Generator, start: int | None = None
) -> Trajectory:
    """Roll out one episode; ``start`` fixes the first state instead of drawing it."""
    if isinstance(pi, MixturePolicy):
        pi = pi.policies[_draw(np.cumsum(pi.weights), rng.random())]
    _check_policy(M, pi)
    cinit, ctrans, crew = M.cdfs()
    cpol = np.cumsum(pi.table, axis=-1)
    states = np.empty(M.H, dtype=int)
    actions = np.empty(M.H, dtype=int)
    rewards = np.empty(M.H)
    s = _draw(cinit, rng.random()) if start is None else int(start)
    for h in range(M.H):
        a = _draw(cpol[h, s], rng.random())
        states[h], actions[h] = s, a
        rewards[h] = M.reward_grid[_draw(crew[h, s, a], rng.random())]
        if h < M.H - 1:
            s = _draw(ctrans[h, s, a], rng.random())
    return Trajectory(states, actions, rewards)


def enumerate_deterministic_policies(H: int, Z: int, A: int, space: str = "latent"):
    """All A^(H*Z) deterministic non-stationary policies (small sizes only)."""
    for acts in itertools.product(range(A), repeat=H * Z):
        yield Policy.deterministic(np.array(acts).reshape(H, Z), A, space)


# JSON -----------------------------------------------------------------------


def mdp_to_dict(M: TabularMDP) -> dict:
    grid = M.reward_grid.tolist()
    return {
        "H": M.H,
        "S": M.S,
        "A": M.A,
        "init": M.init.tolist(),
        "trans": M.trans.tolist(),
        "reward": [
            [[{"support": grid, "probs": M.reward_probs[h, s, a].tolist()} for a in range(M.A)] for s in range(M.S)]
            for h in range(M.H)
        ],
    }


def mdp_from_dict(d: dict) -> TabularMDP:
    H, S, A = int(d["H"]), int(d["S"]), int(d["A"])
    cells = [c for layer in d["reward"] for row in layer for c in row]
    grid = np.unique(np.concatenate([np.asarray(c["support"], float) for c in cells]))
    probs = np.zeros((H * S * A, len(grid)))
    for i, c in enumerate(cells):
        idx = np.searchsorted(grid, np.asarray(c["support"], float))
        np.add.at(probs[i], idx, np.asarray(c["probs"], float))
    trans = np.asarray(d["trans"], float).reshape(H - 1, S, A, S) if H > 1 else np.zeros((0, S, A, S))
    return TabularMDP(np.asarray(d["init"], float), trans, probs.reshape(H, S, A, len(grid)), grid)


def dumps_mdp(M: TabularMDP) -> str:
    # json uses the shortest repr that round-trips each double exactly
    return json.dumps(mdp_to_dict(M))


def loads_mdp(text: str) -> TabularMDP:
    return mdp_from_dict(json.loads(text))


def mdp_equal(M1: TabularMDP, M2: TabularMDP) -> bool:
    return (
        np.array_equal(M1.init, M2.init)
        and np.array_equal(M1.trans, M2.trans)
        and np.array_equal(M1.reward_probs, M2.reward_probs)
        and np.array_equal(M1.reward_grid, M2.reward_grid)
    )


def random_mdp(S: int, A: int, H: int, rng: np.random.Generator, reward_levels: int = 2, sparsity: float = 0.0) -> TabularMDP:
    """Random instance whose rewards sum to at most 1 along any path."""
    init = rng.dirichlet(np.ones(S))
    trans = rng.dirichlet(np.ones(S), size=(max(H - 1, 0), S, A))
    if sparsity > 0 and H > 1:
        mask = rng.random(trans.shape) < sparsity
        mask[..., 0] = False
        trans = np.where(mask, 0.0, trans)
        trans /= trans.sum(axis=-1, keepdims=True)
    grid = np.linspace(0.0, 1.0 / H, reward_levels)
    probs = rng.dirichlet(np.ones(reward_levels), size=(H, S, A))
    return TabularMDP(init, trans.reshape(max(H - 1, 0), S, A, S), probs, grid)
