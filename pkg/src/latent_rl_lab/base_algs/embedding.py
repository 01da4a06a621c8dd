"""Random Rademacher embeddings of pushforward-coverable transition kernels and the
clipped-linear helper classes built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from latent_rl_lab.latent import Decoder
from latent_rl_lab.mdp import TabularMDP, value_iteration
from latent_rl_lab.oracle import CoverabilityReport


def clip(x):
    """Clamp to [0, 2]."""
    return np.clip(x, 0.0, 2.0)


@dataclass(frozen=True, eq=False)
class FiniteQClass:
    """``tables[i, h-1, z, a]`` for member i; ``labels[i]`` records provenance."""

    tables: np.ndarray
    labels: tuple

    def __post_init__(self):
        t = np.asarray(self.tables, dtype=float)
        if t.ndim != 4 or t.shape[0] == 0:
            raise ValueError("class must be a nonempty (n, H, Z, A) array")
        t.setflags(write=False)
        object.__setattr__(self, "tables", t)
        if len(self.labels) != t.shape[0]:
            raise ValueError("one label per member")

    def __len__(self) -> int:
        return self.tables.shape[0]

    @property
    def H(self) -> int:
        return self.tables.shape[1]

    def values(self) -> np.ndarray:
        """(n, H, Z) state values max_a f."""
        return self.tables.max(axis=-1)

    def index(self, label) -> int:
        return self.labels.index(label)


def build_value_class(model_class: Sequence[TabularMDP], decoders: Sequence[Decoder]) -> FiniteQClass:
    """{Q*_M o phi : M in model_class, phi in decoders}, model-major order."""
    tables, labels = [], []
    for m, M in enumerate(model_class):
        Q = value_iteration(M).Q
        for k, phi in enumerate(decoders):
            tables.append(np.stack([Q[h][phi.maps[h]] for h in range(M.H)]))
            labels.append((m, k))
    return FiniteQClass(np.stack(tables), tuple(labels))


def required_dimension(c_push: float, num_functions: int, num_layers: int, delta: float, eps_apx: float) -> int:
    """Smallest integer d with d >= 2^9 C_push ln(16 |F| H / (delta eps)) / eps."""
    return int(math.ceil(2**9 * c_push * math.log(16 * num_functions * num_layers / (delta * eps_apx)) / eps_apx))


def feature_norm_bound(c_push: float, S: int, A: int, num_layers: int) -> float:
    return c_push * (16 * math.log(S * A * num_layers) + 11)


def weight_norm_bound(num_functions: int, num_layers: int) -> float:
    return 16 * math.log(num_functions * num_layers) + 11


@dataclass(frozen=True, eq=False)
class JLEmbedding:
    """Features ``features[h-1, s, a]`` in R^{d+1} and weights ``weights[i, h-1]`` for target i.

    Layer H carries no transition, so its random block is zero.
    """

    d: int
    features: np.ndarray
    W: np.ndarray
    witness: tuple
    weights: np.ndarray
    eps_apx: float
    c_push: float
    seed: int | None = None

    @property
    def H(self) -> int:
        return self.features.shape[0]

    def weight(self, values: np.ndarray) -> np.ndarray:
        """Weight vectors (H, d+1) for a state-value table ``values[h-1, s]``."""
        values = np.asarray(values, dtype=float)
        out = np.zeros((self.H, self.d + 1))
        out[:, 0] = 1.0
        for h in range(self.H - 1):
            out[h, 1:] = self.W @ (np.sqrt(self.witness[h]) * values[h + 1]) / np.sqrt(self.d)
        return out

    def inner(self, w: np.ndarray) -> np.ndarray:
        """Unclipped predictions <w_h, psi_h(s, a)>, shape (H, S, A)."""
        return np.einsum("hsad,hd->hsa", self.features, w)

    def predict(self, w: np.ndarray) -> np.ndarray:
        return clip(self.inner(w))


def _as_state_values(F) -> np.ndarray:
    if isinstance(F, FiniteQClass):
        return F.values()
    F = np.asarray(F, dtype=float)
    return F.max(axis=-1) if F.ndim == 4 else F


def jl_embed(
    M: TabularMDP,
    mu: CoverabilityReport,
    F,
    eps_apx: float,
    delta: float,
    rng: np.random.Generator,
    d: int | None = None,
) -> JLEmbedding:
    """Embed each transition row of M through one Rademacher matrix.

    ``F`` holds the target functions f: either state tables (n, H, S) or a
    FiniteQClass whose state values max_a f are used. It only sizes d and fixes
    which weight vectors are precomputed.
    """
    values = _as_state_values(F)
    witness = tuple(np.asarray(w, float) for w in mu.witness[1:])  # drop the initial-law entry
    if len(witness) != M.H - 1:
        raise ValueError("witness must cover every transition layer")
    for h in range(M.H - 1):
        bad = (M.trans[h] > 0) & (witness[h][None, None, :] == 0)
        if bad.any():
            s, a, s2 = np.argwhere(bad)[0]
            raise ValueError(f"witness has zero mass at layer {h + 2} state {s2} reachable from ({s}, {a})")
    layers = max(M.H - 1, 1)
    if d is None:
        d = required_dimension(mu.coefficient, len(values), layers, delta, eps_apx)
    W = rng.choice(np.array([-1.0, 1.0]), size=(d, M.S))
    features = np.zeros((M.H, M.S, M.A, d + 1))
    features[:, :, :, 0] = M.mean_reward
    for h in range(M.H - 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(witness[h] > 0, M.trans[h] / np.sqrt(witness[h]), 0.0)
        features[h, :, :, 1:] = u @ W.T / np.sqrt(d)
    emb = JLEmbedding(d, features, W, witness, np.zeros((0, M.H, d + 1)), eps_apx, mu.coefficient)
    weights = np.stack([emb.weight(v) for v in values]) if len(values) else np.zeros((0, M.H, d + 1))
    return JLEmbedding(d, features, W, witness, weights, eps_apx, mu.coefficient)


def backup_targets(M: TabularMDP, values: np.ndarray) -> np.ndarray:
    """Exact T_h f_{h+1}(s, a) for state tables ``values`` (n, H, S); shape (n, H, S, A)."""
    n = values.shape[0]
    out = np.broadcast_to(M.mean_reward, (n, M.H, M.S, M.A)).copy()
    for h in range(M.H - 1):
        out[:, h] += np.einsum("sat,nt->nsa", M.trans[h], values[:, h + 1])
    return out


def embedding_error(emb: JLEmbedding, M: TabularMDP, F) -> np.ndarray:
    """E_{mu_h x Unif(A)}[(clip<w_f, psi> - T_h f)^2] for each target and transition layer."""
    values = _as_state_values(F)
    target = backup_targets(M, values)
    pred = clip(np.einsum("hsad,nhd->nhsa", emb.features, emb.weights))
    sq = (pred - target) ** 2
    err = np.zeros((len(values), max(M.H - 1, 0)))
    for h in range(M.H - 1):
        err[:, h] = np.einsum("s,nsa->n", emb.witness[h], sq[:, h]) / M.A
    return err


def norm_stats(emb: JLEmbedding) -> tuple[float, float]:
    """(max ||psi||^2 over cells, max ||w_f||^2 over targets and layers)."""
    psi = float(np.max(np.sum(emb.features**2, axis=-1)))
    w = float(np.max(np.sum(emb.weights**2, axis=-1))) if len(emb.weights) else 0.0
    return psi, w


def build_completeness_class(
    embeddings: Sequence[JLEmbedding],
    decoders: Sequence[Decoder],
    weight_norm_bound: float,
    net_resolution: float | None = None,
) -> FiniteQClass:
    """Clipped linear functions (x, a) -> clip<psi_m(phi(x), a), w>.

    The weight net of embedding m holds its exact target weights and, for a finite
    ``net_resolution``, their per-coordinate roundings that lie inside the norm ball.
    Labels are (model index, decoder index, net index).
    """
    if len(decoders) == 0:
        raise ValueError("decoder class is empty")
    if len(embeddings) == 0:
        raise ValueError("no embeddings supplied")
    tables, labels = [], []
    for m, emb in enumerate(embeddings):
        net = [w for w in emb.weights]
        if net_resolution is not None and np.isfinite(net_resolution):
            for w in emb.weights:
                q = np.round(w / net_resolution) * net_resolution
                if np.max(np.sum(q**2, axis=-1)) <= weight_norm_bound and not np.array_equal(q, w):
                    net.append(q)
        for k, phi in enumerate(decoders):
            for j, w in enumerate(net):
                pred = emb.predict(w)  # (H, S, A)
                tables.append(np.stack([pred[h][phi.maps[h]] for h in range(emb.H)]))
                labels.append((m, k, j))
    return FiniteQClass(np.stack(tables), tuple(labels))
