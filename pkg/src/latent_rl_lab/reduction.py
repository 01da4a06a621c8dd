"""The observable-to-latent reduction, its representation learners, exact risk
accounting and the hardness probe."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from latent_rl_lab.base_algs.embedding import FiniteQClass, build_value_class
from latent_rl_lab.base_algs.golf import golf, golf_beta
from latent_rl_lab.envs import EnvBundle
from latent_rl_lab.latent import Decoder, DecoderClass, LatentDynamicsMDP, compose_policy, compress_trajectory
from latent_rl_lab.mdp import MixturePolicy, Policy, TabularMDP, Trajectory, occupancy, policy_value, sample_trajectory, value_iteration
from latent_rl_lab.replearn.expweights import ClassificationTracker
from latent_rl_lab.replearn.selfpredict import SelfPredictOpt, c_cov_surrogate, selfpredict_beta

MODES = ("hindsight", "self-predictive")


@dataclass(frozen=True)
class ProtocolConfig:
    T: int
    K: int
    mode: str = "hindsight"
    gamma: float | None = None
    member: int = 0
    feed_all: bool = False
    timing: bool = False

    def __post_init__(self):
        if self.T < 1 or self.K < 1:
            raise ValueError("T and K must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "self-predictive" and (self.gamma is None or self.gamma <= 0):
            raise ValueError("self-predictive mode needs gamma > 0")


def hindsight_annotate(tau: Trajectory, phi_star: Decoder) -> Trajectory:
    """Attach the revealed latent states phi*_h(x_h)."""
    return Trajectory(tau.states, tau.actions, tau.rewards, phi_star.maps[np.arange(tau.H), tau.states])


def risk_eval(M_obs: TabularMDP, pi: Policy | MixturePolicy) -> float:
    """J* - J(pi), exact; mixtures are averaged member-wise."""
    j_star = value_iteration(M_obs).J
    if isinstance(pi, MixturePolicy):
        return float(sum(w * (j_star - policy_value(M_obs, p).J) for p, w in zip(pi.policies, pi.weights)))
    return float(j_star - policy_value(M_obs, pi).J)


class _ValueCache:
    def __init__(self, M: TabularMDP):
        self.M = M
        self.j_star = value_iteration(M).J
        self._cache: dict[bytes, float] = {}

    def risk(self, pi: Policy) -> float:
        key = pi.key()
        if key not in self._cache:
            self._cache[key] = float(self.j_star - policy_value(self.M, pi).J)
        return self._cache[key]


# representation learners --------------------------------------------------------


class OracleLearner:
    """Always returns a fixed decoder (typically phi*)."""

    mode = None

    def __init__(self, phi: Decoder):
        self.phi = phi

    def decoder(self) -> Decoder:
        return self.phi

    def observe_epoch(self, epoch_trajs, all_trajs, rng) -> None:
        pass


class HindsightLearner:
    """ExpWeights.Dr fed one uniformly drawn episode of the K + 1 in each epoch.

    ``feed_all`` (non-canonical) feeds every episode instead.
    """

    mode = "hindsight"

    def __init__(self, Phi: DecoderClass, phi_star: Decoder, feed_all: bool = False):
        self.tracker = ClassificationTracker(Phi)
        self.phi_star = phi_star
        self.feed_all = feed_all
        self.fed_indices: list[int] = []

    def decoder(self) -> Decoder:
        return self.tracker.emit()

    def observe_epoch(self, epoch_trajs, all_trajs, rng) -> None:
        chosen = range(len(epoch_trajs)) if self.feed_all else [int(rng.integers(len(epoch_trajs)))]
        for i in chosen:
            tau = hindsight_annotate(epoch_trajs[i], self.phi_star)
            self.tracker.update(tau.states, tau.hindsight)
            self.fed_indices.append(i)


class SelfPredictiveLearner:
    """SelfPredict.Opt over all data collected so far."""

    mode = "self-predictive"

    def __init__(self, model_class, Phi: DecoderClass, L_class, gamma: float, T: int, c_cov: float):
        self.c_cov = c_cov
        self.beta = selfpredict_beta(c_cov, Phi.H, T)
        self.est = SelfPredictOpt(tuple(model_class), Phi, tuple(L_class), gamma, self.beta)
        self.data = self.est.new_data()
        self.t = 0
        self.last_report = None

    def decoder(self) -> Decoder:
        self.t += 1
        _, phi, self.last_report = self.est.step(self.data, self.t)
        return phi

    def observe_epoch(self, epoch_trajs, all_trajs, rng) -> None:
        for tau in epoch_trajs:
            self.data.add(tau)


def make_rep_learner(bundle: EnvBundle, cfg: ProtocolConfig, oracle: bool = False):
    L = bundle.member(cfg.member)
    if oracle:
        return OracleLearner(L.true_decoder)
    if cfg.mode == "hindsight":
        return HindsightLearner(bundle.decoders, L.true_decoder, cfg.feed_all)
    if bundle.L_lat is None:
        raise ValueError("self-predictive mode needs a mismatch-complete latent class")
    return SelfPredictiveLearner(bundle.model_class, bundle.decoders, bundle.L_lat, cfg.gamma, cfg.T, c_cov_surrogate(bundle.base))


# the reduction ---------------------------------------------------------------------


CSV_FIELDS = (
    "run_id",
    "mode",
    "env",
    "N",
    "T",
    "K",
    "gamma",
    "seed",
    "t",
    "k",
    "episode_return",
    "exact_risk",
    "class_mistakes_cum",
    "selfpred_objective",
    "wall_ms",
)


@dataclass
class O2LResult:
    rows: list
    epoch_risks: np.ndarray
    epoch_policies: list
    final_mixture: MixturePolicy
    risk_obs: float
    class_regret: float
    decoder_accuracy: np.ndarray
    episodes: int
    meta: dict = field(default_factory=dict)


def _decoder_accuracy(d_x: np.ndarray, phi: Decoder, phi_star: Decoder) -> float:
    return float(np.mean(np.sum(d_x * (phi.maps == phi_star.maps), axis=1)))


def o2l_run(
    L: LatentDynamicsMDP,
    rep_learner,
    base_factory: Callable[[np.random.Generator], object],
    cfg: ProtocolConfig,
    rng: np.random.Generator,
    run_info: dict | None = None,
) -> O2LResult:
    """T epochs; each deploys K episodes of a fresh base algorithm through phi_t plus one
    episode of its final policy, then updates the representation learner."""
    if rep_learner.mode is not None and rep_learner.mode != cfg.mode:
        raise ValueError(f"representation learner mode {rep_learner.mode!r} does not match protocol mode {cfg.mode!r}")
    info = dict(run_info or {})
    vc = _ValueCache(L.obs)
    phi_star = L.true_decoder
    tracker = getattr(rep_learner, "tracker", None)
    rows, epoch_risks, epoch_policies, accuracy = [], [], [], []
    all_trajs: list[Trajectory] = []
    class_regret = 0.0
    alg_rng, env_rng, rep_rng = rng.spawn(3)
    for t in range(1, cfg.T + 1):
        t0 = time.perf_counter()
        phi = rep_learner.decoder()
        alg = base_factory(alg_rng)
        epoch, pols = [], []
        for k in range(1, cfg.K + 2):
            pi_lat = alg.policy() if k <= cfg.K else alg.final_policy()
            pi = compose_policy(pi_lat, phi)
            tau = sample_trajectory(L.obs, pi, env_rng)
            if k <= cfg.K:
                alg.update(compress_trajectory(tau, phi))
            epoch.append(tau)
            pols.append(pi)
        risk_final = vc.risk(pols[-1])
        epoch_risks.append(risk_final)
        epoch_policies.append(pols[-1])
        if tracker is not None:
            d_x = np.mean([occupancy(L.obs, p).d_s for p in pols], axis=0)
            class_regret += tracker.record(d_x, phi_star, phi)
        accuracy.append(_decoder_accuracy(occupancy(L.obs, pols[-1]).d_s, phi, phi_star))
        all_trajs.extend(epoch)
        rep_learner.observe_epoch(epoch, all_trajs, rep_rng)
        report = getattr(rep_learner, "last_report", None)
        wall = int(round((time.perf_counter() - t0) * 1000)) if cfg.timing else 0
        for k, (tau, p) in enumerate(zip(epoch, pols), start=1):
            rows.append(
                {
                    **info,
                    "mode": cfg.mode,
                    "T": cfg.T,
                    "K": cfg.K,
                    "gamma": cfg.gamma if cfg.gamma is not None else "",
                    "t": t,
                    "k": k,
                    "episode_return": tau.ret,
                    "exact_risk": vc.risk(p),
                    "class_mistakes_cum": class_regret if tracker is not None else "",
                    "selfpred_objective": report.objective if report is not None else "",
                    "wall_ms": wall,
                }
            )
    risks = np.array(epoch_risks)
    mixture = MixturePolicy(epoch_policies)
    return O2LResult(
        rows,
        risks,
        epoch_policies,
        mixture,
        float(risks.mean()),
        class_regret,
        np.array(accuracy),
        cfg.T * (cfg.K + 1),
        {"j_star": vc.j_star},
    )


def standalone_base_risk(
    M_lat: TabularMDP, base_factory: Callable[[np.random.Generator], object], K: int, rng: np.random.Generator, runs: int = 50
) -> float:
    """Mean over independent runs of J* - J(final policy) after K episodes with true states."""
    vc = _ValueCache(M_lat)
    risks = []
    for _ in range(runs):
        alg = base_factory(rng)
        for _ in range(K):
            alg.update(sample_trajectory(M_lat, alg.policy(), rng))
        risks.append(vc.risk(alg.final_policy()))
    return float(np.mean(risks))


# hardness probe ------------------------------------------------------------------


def golf_probe_algorithm(oracle: bool = False, delta: float = 0.1, c: float = 2.0):
    """GOLF on observations with F = G = {Q*_M o phi}; the oracle arm keeps only the
    member's own decoder."""

    def run(bundle: EnvBundle, i: int, risk_target: float, episode_cap: int, rng: np.random.Generator) -> int:
        F = build_value_class(bundle.model_class, bundle.decoders.members)
        if oracle:
            j = F.labels.index((0, i))
            F = FiniteQClass(F.tables[j : j + 1], (F.labels[j],))
        beta = golf_beta(episode_cap, bundle.base.H, len(F), len(F), delta, c)
        res = golf(F, F, beta, episode_cap, bundle.member(i).obs, rng, stop_risk=risk_target)
        return res.episodes if res.mixture_risk <= risk_target else episode_cap

    return run


@dataclass
class HardnessResult:
    N: int
    members: np.ndarray
    episodes: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.episodes))


def hardness_probe(
    Ns: Sequence[int],
    algorithm,
    risk_target: float,
    episode_cap: int,
    rng: np.random.Generator,
    num_members: int = 10,
    env_factory=None,
) -> list[HardnessResult]:
    """Episodes-to-target for uniformly drawn family members, per N; failures count as the cap."""
    from latent_rl_lab.envs import make_tree_env

    env_factory = env_factory or make_tree_env
    if len(Ns) == 0:
        raise ValueError("no family sizes given")
    out = []
    for N in Ns:
        bundle = env_factory(N)
        members = rng.integers(0, bundle.num_members, size=num_members)
        eps = [algorithm(bundle, int(i), risk_target, episode_cap, rng) for i in members]
        out.append(HardnessResult(int(N), members, np.array(eps)))
    return out
