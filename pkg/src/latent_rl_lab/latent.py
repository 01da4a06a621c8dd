"""Decodable emissions, decoders and latent-dynamics MDPs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from latent_rl_lab.mdp import (
    PROB_TOL,
    Policy,
    TabularMDP,
    Trajectory,
    _frozen,
    mdp_from_dict,
    mdp_to_dict,
)


@dataclass(frozen=True, eq=False)
class EmissionProcess:
    """``probs[h-1, s, x]`` = psi_h(x | s)."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))
        if self.probs.ndim != 3:
            raise ValueError("emission table must have shape (H, S, X)")
        rows = self.probs.sum(axis=-1)
        if np.any(self.probs < 0) or np.any(np.abs(rows - 1.0) > PROB_TOL):
            raise ValueError("emission rows must be distributions")

    @classmethod
    def shared(cls, table, H: int) -> "EmissionProcess":
        table = np.asarray(table, dtype=float)
        return cls(np.broadcast_to(table, (H,) + table.shape))

    @classmethod
    def from_maps(cls, maps, X: int) -> "EmissionProcess":
        """Deterministic emission from per-layer maps ``maps[h-1, s] -> x``."""
        maps = np.asarray(maps, dtype=int)
        probs = np.zeros(maps.shape + (X,))
        np.put_along_axis(probs, maps[..., None], 1.0, axis=-1)
        return cls(probs)

    @property
    def H(self) -> int:
        return self.probs.shape[0]

    @property
    def S(self) -> int:
        return self.probs.shape[1]

    @property
    def X(self) -> int:
        return self.probs.shape[2]


@dataclass(frozen=True, eq=False)
class Decoder:
    """``maps[h-1, x]`` = phi_h(x); ``flagged`` marks observations outside every support."""

    maps: np.ndarray
    S: int
    flagged: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "maps", _frozen(self.maps, int))
        if self.maps.ndim != 2:
            raise ValueError("decoder maps must have shape (H, X)")
        if self.maps.size and (self.maps.min() < 0 or self.maps.max() >= self.S):
            raise ValueError("decoder labels outside the latent alphabet")
        if self.flagged is not None:
            object.__setattr__(self, "flagged", _frozen(self.flagged, bool))

    @property
    def H(self) -> int:
        return self.maps.shape[0]

    @property
    def X(self) -> int:
        return self.maps.shape[1]

    def onehot(self, h: int) -> np.ndarray:
        """(X, S) indicator matrix of phi_h."""
        out = np.zeros((self.X, self.S))
        out[np.arange(self.X), self.maps[h - 1]] = 1.0
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, Decoder) and self.S == other.S and np.array_equal(self.maps, other.maps)

    __hash__ = None

    @classmethod
    def constant(cls, H: int, X: int, S: int, label: int = 0) -> "Decoder":
        return cls(np.full((H, X), label), S)


@dataclass(frozen=True, eq=False)
class DecoderClass:
    members: tuple

    def __init__(self, members: Sequence[Decoder]):
        members = tuple(members)
        if not members:
            raise ValueError("decoder class must be nonempty")
        shape = (members[0].H, members[0].X, members[0].S)
        if any((d.H, d.X, d.S) != shape for d in members):
            raise ValueError("decoders must share (H, X, S)")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, i: int) -> Decoder:
        return self.members[i]

    def __iter__(self):
        return iter(self.members)

    @property
    def H(self) -> int:
        return self.members[0].H

    @property
    def X(self) -> int:
        return self.members[0].X

    @property
    def S(self) -> int:
        return self.members[0].S

    def stacked(self) -> np.ndarray:
        """(n, H, X) array of labels."""
        return np.stack([d.maps for d in self.members])

    def duplicates(self) -> list[tuple[int, int]]:
        out = []
        for i in range(len(self)):
            for j in range(i):
                if self.members[i] == self.members[j]:
                    out.append((j, i))
                    break
        return out


@dataclass(frozen=True, eq=False)
class LatentDynamicsMDP:
    base: TabularMDP
    emission: EmissionProcess
    obs: TabularMDP
    true_decoder: Decoder

    @property
    def H(self) -> int:
        return self.base.H

    @property
    def S(self) -> int:
        return self.base.S

    @property
    def X(self) -> int:
        return self.obs.S

    @property
    def A(self) -> int:
        return self.base.A


def check_decodable(psi: EmissionProcess):
    """Return (True, None) or (False, (h, s, s', x)) for the first shared observation."""
    support = psi.probs > 0
    for h in range(psi.H):
        owner = np.full(psi.X, -1)
        for s in range(psi.S):
            for x in np.flatnonzero(support[h, s]):
                if owner[x] >= 0:
                    return False, (h + 1, int(owner[x]), s, int(x))
                owner[x] = s
    return True, None


def invert_emission(psi: EmissionProcess) -> Decoder:
    ok, where = check_decodable(psi)
    if not ok:
        raise ValueError(f"emission is not decodable: layer {where[0]}, states {where[1]} and {where[2]} share x={where[3]}")
    support = psi.probs > 0
    covered = support.any(axis=1)
    maps = np.where(covered, np.argmax(support, axis=1), 0)
    return Decoder(maps, psi.S, flagged=~covered)


def compose(M_lat: TabularMDP, psi: EmissionProcess) -> LatentDynamicsMDP:
    if psi.H != M_lat.H or psi.S != M_lat.S:
        raise ValueError(f"emission shape {(psi.H, psi.S)} does not match base MDP {(M_lat.H, M_lat.S)}")
    phi = invert_emission(psi)
    H, X = psi.H, psi.X
    init = M_lat.init[phi.maps[0]] * psi.probs[0, phi.maps[0], np.arange(X)]
    trans = np.zeros((H - 1, X, M_lat.A, X))
    for h in range(1, H):
        lab_now, lab_next = phi.maps[h - 1], phi.maps[h]
        own = psi.probs[h, lab_next, np.arange(X)]
        trans[h - 1] = M_lat.trans[h - 1][lab_now][:, :, lab_next] * own[None, None, :]
    reward = np.stack([M_lat.reward_probs[h][phi.maps[h]] for h in range(H)])
    obs = TabularMDP(init, trans, reward, M_lat.reward_grid)
    return LatentDynamicsMDP(M_lat, psi, obs, phi)


def compose_policy(pi: Policy, phi: Decoder) -> Policy:
    if pi.H != phi.H:
        raise ValueError("policy and decoder horizons differ")
    table = np.stack([pi.table[h][phi.maps[h]] for h in range(pi.H)])
    return Policy(table, "observation")


def compress_trajectory(tau: Trajectory, phi: Decoder) -> Trajectory:
    if tau.H != phi.H:
        raise ValueError("trajectory and decoder horizons differ")
    states = phi.maps[np.arange(tau.H), tau.states]
    return Trajectory(states, tau.actions, tau.rewards)


# JSON -----------------------------------------------------------------------


def emission_to_list(psi: EmissionProcess) -> list:
    out = []
    for h in range(psi.H):
        layer = []
        for s in range(psi.S):
            xs = np.flatnonzero(psi.probs[h, s] > 0)
            layer.append({"support": xs.tolist(), "probs": psi.probs[h, s, xs].tolist()})
        out.append(layer)
    return out


def emission_from_list(rows: list, X: int) -> EmissionProcess:
    H, S = len(rows), len(rows[0])
    probs = np.zeros((H, S, X))
    for h in range(H):
        for s in range(S):
            probs[h, s, rows[h][s]["support"]] = rows[h][s]["probs"]
    return EmissionProcess(probs)


def latent_to_dict(L: LatentDynamicsMDP, decoders: DecoderClass | None = None) -> dict:
    d = mdp_to_dict(L.obs)
    d["X"] = L.X
    d["base"] = mdp_to_dict(L.base)
    d["emission"] = emission_to_list(L.emission)
    decs = decoders if decoders is not None else DecoderClass([L.true_decoder])
    d["decoders"] = [dec.maps.tolist() for dec in decs]
    return d


def latent_from_dict(d: dict) -> tuple[LatentDynamicsMDP, DecoderClass]:
    base = mdp_from_dict(d["base"])
    psi = emission_from_list(d["emission"], int(d["X"]))
    L = compose(base, psi)
    decoders = DecoderClass([Decoder(np.asarray(m, int), base.S) for m in d["decoders"]])
    return L, decoders


def dumps_latent(L: LatentDynamicsMDP, decoders: DecoderClass | None = None) -> str:
    return json.dumps(latent_to_dict(L, decoders))
