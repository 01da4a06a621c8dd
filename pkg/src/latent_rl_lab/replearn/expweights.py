"""Derandomized exponential weights for online decoder classification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from latent_rl_lab.latent import Decoder, DecoderClass


def expweights_weights(mistakes: np.ndarray) -> np.ndarray:
    """Rows of exp(-mistakes) normalized per layer, computed in log space. ``mistakes`` is (H, n)."""
    logw = -np.asarray(mistakes, dtype=float)
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def label_marginals(Phi: DecoderClass, q: np.ndarray) -> np.ndarray:
    """P_{phi ~ q_h}(phi_h(x) = s), shape (H, X, S)."""
    maps = Phi.stacked()  # (n, H, X)
    out = np.zeros((Phi.H, Phi.X, Phi.S))
    for h in range(Phi.H):
        np.add.at(out[h], (np.arange(Phi.X)[None, :].repeat(len(Phi), 0), maps[:, h]), q[h][:, None])
    return out


def mode_decoder(Phi: DecoderClass, q: np.ndarray) -> Decoder:
    """Per-observation plurality label under q; ties go to the smallest state."""
    return Decoder(np.argmax(label_marginals(Phi, q), axis=-1), Phi.S)


def count_mistakes(Phi: DecoderClass, history) -> np.ndarray:
    """Mistake counts (H, n). ``history[h]`` is a list of (x, label) pairs for layer h+1."""
    maps = Phi.stacked()
    m = np.zeros((Phi.H, len(Phi)))
    for h, pairs in enumerate(history):
        if len(pairs):
            xs, ys = np.asarray(pairs, dtype=int).T
            m[h] = (maps[:, h, xs] != ys[None, :]).sum(axis=1)
    return m


def expweights_dr_step(Phi: DecoderClass, history) -> Decoder:
    """Improper mode decoder from the exponential weights over ``Phi``."""
    if len(Phi) == 0:
        raise ValueError("decoder class is empty")
    return mode_decoder(Phi, expweights_weights(count_mistakes(Phi, history)))


@dataclass
class ClassificationTracker:
    """Incremental ExpWeights.Dr state with exact regret accounting.

    ``regret`` accumulates sum_h E^{pi_t}[1{phi_bar_h(x_h) != phi*_h(x_h)}] from the
    exact observation occupancy of each round's policy; ``expected_loss`` does the
    same for the randomized predictor q.
    """

    Phi: DecoderClass
    mistakes: np.ndarray = None
    regret: float = 0.0
    expected_loss: float = 0.0
    emitted: list = field(default_factory=list)
    updates: int = 0

    def __post_init__(self):
        if len(self.Phi) == 0:
            raise ValueError("decoder class is empty")
        if self.mistakes is None:
            self.mistakes = np.zeros((self.Phi.H, len(self.Phi)))

    @property
    def weights(self) -> np.ndarray:
        return expweights_weights(self.mistakes)

    def decoder(self) -> Decoder:
        return mode_decoder(self.Phi, self.weights)

    def emit(self) -> Decoder:
        phi = self.decoder()
        self.emitted.append(phi)
        return phi

    def update(self, xs, labels) -> None:
        """Add one trajectory's hindsight pairs (one observation per layer)."""
        maps = self.Phi.stacked()
        h = np.arange(self.Phi.H)
        xs, labels = np.asarray(xs, dtype=int), np.asarray(labels, dtype=int)
        self.mistakes += (maps[:, h, xs] != labels[None, :]).T
        self.updates += 1

    def round_loss(self, d_x: np.ndarray, phi_star: Decoder, phi: Decoder | None = None) -> tuple[float, float]:
        """(mode loss, randomized loss) under observation occupancy ``d_x`` (H, X)."""
        phi = phi if phi is not None else self.decoder()
        wrong = phi.maps != phi_star.maps
        marg = label_marginals(self.Phi, self.weights)
        p_wrong = 1.0 - np.take_along_axis(marg, phi_star.maps[..., None], axis=-1)[..., 0]
        return float(np.sum(d_x * wrong)), float(np.sum(d_x * p_wrong))

    def record(self, d_x: np.ndarray, phi_star: Decoder, phi: Decoder | None = None) -> float:
        mode, rand = self.round_loss(d_x, phi_star, phi)
        self.regret += mode
        self.expected_loss += rand
        return mode


def regret_bound(H: int, num_decoders: int, delta: float = 0.1) -> float:
    """8 H ln|Phi| + 16 H ln(2H / delta)."""
    return 8 * H * np.log(num_decoders) + 16 * H * np.log(2 * H / delta)
