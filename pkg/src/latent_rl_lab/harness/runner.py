"""Experiment execution: one deterministic run per (config, seed), plus sweeps."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from latent_rl_lab.base_algs.golf import TRACE_FIELDS, coverable_classes, golf, golf_beta
from latent_rl_lab.base_algs.ucbvi import KnownModelPlanner, ucbvi_base
from latent_rl_lab.envs import EnvBundle, make_env
from latent_rl_lab.harness.config import ConfigError, ExperimentConfig, set_path, substream, validate
from latent_rl_lab.harness.io import csv_text, json_text, write_csv
from latent_rl_lab.latent import latent_from_dict
from latent_rl_lab.reduction import CSV_FIELDS, ProtocolConfig, golf_probe_algorithm, hardness_probe, make_rep_learner, o2l_run
from latent_rl_lab.replearn.selfpredict import pulsar_bound, run_selfpredict_rounds

HARDNESS_FIELDS = ("run_id", "N", "seed", "draw", "member", "episodes")
SELFPRED_FIELDS = ("run_id", "seed", "t", "m_hat", "phi_hat", "hellinger_sum", "optimism_gap", "objective", "clamp_events", "pulsar_lhs")
GOLF_FIELDS = ("run_id", "seed") + TRACE_FIELDS
HEADLINE = {"o2l": "risk_obs", "hardness": "median_episodes", "selfpredict": "pulsar_lhs", "golf": "mixture_risk"}


def build_bundle(cfg: ExperimentConfig, seed: int) -> EnvBundle:
    env = cfg.env
    if "path" in env:
        import json

        L, decoders = latent_from_dict(json.loads(Path(env["path"]).read_text()))
        return EnvBundle(L.base, (L.emission,), decoders, (L.base,), metadata={"name": "file", "path": env["path"]})
    params = {k: v for k, v in env.items() if k not in ("family", "seed")}
    rng = substream(env.get("seed", seed), "env-gen")
    return make_env(env["family"], rng, **params)


def _base_factory(cfg: ExperimentConfig, bundle: EnvBundle):
    M = bundle.base
    K = cfg.protocol.get("K")
    if cfg.algorithm["base"] == "known":
        return lambda rng: KnownModelPlanner(M)
    bonus = cfg.algorithm["bonus_scale"]
    return lambda rng: ucbvi_base(M.S, M.A, M.H, bonus, rng, num_episodes=K)


def run_id(cfg: ExperimentConfig, seed: int) -> str:
    return f"{cfg.name}-s{seed}"


def execute(cfg: ExperimentConfig, seed: int, timing: bool = False) -> dict:
    """Run one seed; returns {"fields", "rows", "summary"} without touching the filesystem."""
    rid = run_id(cfg, seed)
    bundle = build_bundle(cfg, seed)
    N = bundle.metadata.get("N", "")
    summary = {"run_id": rid, "name": cfg.name, "experiment": cfg.experiment, "seed": seed, "env": cfg.env.get("family", "file")}
    if cfg.experiment == "o2l":
        p = cfg.protocol
        mode = "self-predictive" if cfg.algorithm["rep"] == "self-predictive" else "hindsight"
        pc = ProtocolConfig(p["T"], p["K"], mode, p.get("gamma"), p["member"], bool(cfg.algorithm.get("feed_all", False)), timing)
        if pc.member >= bundle.num_members:
            raise ConfigError(f"protocol.member: index {pc.member} out of range for {bundle.num_members} members")
        rep = make_rep_learner(bundle, pc, oracle=cfg.algorithm["rep"] == "oracle")
        info = {"run_id": rid, "env": summary["env"], "N": N, "seed": seed}
        res = o2l_run(bundle.member(pc.member), rep, _base_factory(cfg, bundle), pc, substream(seed, "protocol"), info)
        summary.update(
            risk_obs=res.risk_obs,
            class_regret=res.class_regret,
            episodes=res.episodes,
            final_decoder_accuracy=float(res.decoder_accuracy[-1]),
            member=pc.member,
            T=pc.T,
            K=pc.K,
        )
        return {"fields": CSV_FIELDS, "rows": res.rows, "summary": summary}
    if cfg.experiment == "hardness":
        h = cfg.hardness
        alg = golf_probe_algorithm(oracle=h["oracle"])
        out = hardness_probe([bundle.metadata["N"]], alg, h["risk_target"], h["episode_cap"], substream(seed, "protocol"), h["num_members"])[0]
        rows = [
            {"run_id": rid, "N": out.N, "seed": seed, "draw": j, "member": int(m), "episodes": int(e)}
            for j, (m, e) in enumerate(zip(out.members, out.episodes))
        ]
        summary.update(N=out.N, median_episodes=out.median, oracle=h["oracle"], risk_target=h["risk_target"], episode_cap=h["episode_cap"])
        return {"fields": HARDNESS_FIELDS, "rows": rows, "summary": summary}
    if cfg.experiment == "golf":
        a, T = cfg.algorithm, cfg.protocol["T"]
        F, G, star = coverable_classes(bundle, substream(seed, "algorithm"), a["eps_apx"], a["delta"])
        beta = golf_beta(T, bundle.base.H, len(F), len(G), a["delta"], a["c"])
        res = golf(F, G, beta, T, bundle.member(0).obs, substream(seed, "protocol"), realizable_index=star)
        rows = [{"run_id": rid, "seed": seed, **r} for r in res.trace_rows()]
        summary.update(
            mixture_risk=res.mixture_risk,
            cumulative_regret=float(res.regret.sum()),
            realizable_in_set=bool(res.realizable_in_set.all()),
            fallback_events=res.fallback_events,
            beta=beta,
            F_size=len(F),
            G_size=len(G),
            T=T,
        )
        return {"fields": GOLF_FIELDS, "rows": rows, "summary": summary}
    # selfpredict
    if bundle.L_lat is None:
        raise ConfigError("env: self-prediction needs a family with a mismatch-complete class (lock or random)")
    p = cfg.protocol
    run = run_selfpredict_rounds(bundle.member(0), bundle.model_class, bundle.decoders, bundle.L_lat, p["gamma"], p["T"], substream(seed, "protocol"))
    rows = [{"run_id": rid, "seed": seed, **r.as_dict(), "pulsar_lhs": r.pulsar_lhs} for r in run.reports]
    bound = pulsar_bound(len(bundle.model_class), len(bundle.L_lat), len(bundle.decoders), bundle.base.H, p["T"])
    summary.update(pulsar_lhs=run.reports[-1].pulsar_lhs, pulsar_bound=bound, beta=run.beta, c_cov=run.c_cov, T=p["T"])
    return {"fields": SELFPRED_FIELDS, "rows": rows, "summary": summary}


def write_run(out_dir: Path, cfg: ExperimentConfig, seed: int, result: dict) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{run_id(cfg, seed)}.csv"
    json_path = out_dir / f"{run_id(cfg, seed)}.json"
    csv_path.write_text(csv_text(result["fields"], result["rows"]))
    json_path.write_text(json_text(result["summary"]))
    return csv_path, json_path


def _job(args):
    raw, base_dir, seed, out_dir, timing = args
    cfg = validate(raw, base_dir)
    res = execute(cfg, seed, timing)
    write_run(Path(out_dir), cfg, seed, res)
    return res["summary"]


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        env = os.environ.get("LATENT_RL_LAB_JOBS")
        jobs = int(env) if env else 1
    return max(1, int(jobs))


def _map(tasks, jobs: int):
    if jobs == 1 or len(tasks) <= 1:
        return [_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_job, tasks))


def run_config(raw: dict, base_dir: str | Path, out_dir: str | Path, jobs: int = 1, timing: bool = False) -> list[dict]:
    cfg = validate(raw, base_dir)
    tasks = [(raw, str(base_dir), s, str(out_dir), timing) for s in cfg.seeds]
    return _map(tasks, jobs)


def run_sweep(raw: dict, base_dir, out_dir, param: str, values, jobs: int = 1) -> list[dict]:
    """Per-value median and IQR of the headline metric across seeds."""
    if not values:
        raise ConfigError("sweep: values list is empty")
    if param in ("seeds", "protocol.seeds"):
        raw = set_path(raw, "protocol.seeds", [int(v) for v in values])
        cfg = validate(raw, base_dir)
        sums = run_config(raw, base_dir, Path(out_dir) / "seeds", jobs)
        return [_aggregate("seeds", sums, HEADLINE[cfg.experiment])]
    tasks, groups = [], []
    for v in values:
        r = set_path(raw, param, v)
        cfg = validate(r, base_dir)
        sub = Path(out_dir) / f"{param}={v}"
        groups.append((v, len(cfg.seeds), HEADLINE[cfg.experiment]))
        tasks.extend((r, str(base_dir), s, str(sub), False) for s in cfg.seeds)
    sums = _map(tasks, jobs)
    table, i = [], 0
    for v, n, key in groups:
        table.append(_aggregate(v, sums[i : i + n], key))
        i += n
    write_csv(Path(out_dir) / "sweep.csv", ("param", "value", "metric", "median", "q25", "q75", "n"), [{"param": param, **row} for row in table])
    return table


def _aggregate(value, summaries, key) -> dict:
    xs = np.array([s[key] for s in summaries], dtype=float)
    return {
        "value": value,
        "metric": key,
        "median": float(np.median(xs)),
        "q25": float(np.percentile(xs, 25)),
        "q75": float(np.percentile(xs, 75)),
        "n": len(xs),
    }
