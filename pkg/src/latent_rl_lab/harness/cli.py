"""Command line entry point: verify, run, sweep and env export."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from latent_rl_lab.harness.config import ConfigError, load_config, parse_value, substream
from latent_rl_lab.harness.io import jsonl_text
from latent_rl_lab.harness.runner import resolve_jobs, run_config, run_sweep


def _raw(path: str) -> tuple[dict, Path]:
    cfg = load_config(path)  # validates and names the failing field
    p = Path(path)
    raw = json.loads(p.read_text()) if p.suffix == ".json" else yaml.safe_load(p.read_text())
    return raw, p.parent, cfg


def cmd_verify(args) -> int:
    from latent_rl_lab.oracle import run_structural_suite

    records = run_structural_suite(args.num_instances, args.seed, args.tol)
    text = jsonl_text(records)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    failed = [r for r in records if not r["pass"]]
    if failed:
        f = failed[0]
        print(
            f"FAIL {f['identity_name']} instance_seed={f['instance_seed']} residual={f['max_residual']:.3e} ({len(failed)} failures)",
            file=sys.stderr,
        )
        return 1
    print(f"ok: {len(records)} checks over {args.num_instances} instances", file=sys.stderr)
    return 0


def _apply_seed(raw: dict, seed):
    if seed is not None:
        raw = dict(raw)
        raw["protocol"] = {**raw["protocol"], "seeds": [seed]}
    return raw


def cmd_run(args) -> int:
    raw, base_dir, cfg = _raw(args.config)
    raw = _apply_seed(raw, args.seed)
    out = Path(args.out or cfg.output) / cfg.name
    sums = run_config(raw, base_dir, out, resolve_jobs(args.jobs), args.timing)
    for s in sums:
        print(json.dumps(s, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    raw, base_dir, cfg = _raw(args.config)
    raw = _apply_seed(raw, args.seed)
    values = [parse_value(v) for v in args.values.split(",") if v.strip()] if args.values else []
    out = Path(args.out or cfg.output) / cfg.name / "sweep"
    table = run_sweep(raw, base_dir, out, args.param, values, resolve_jobs(args.jobs))
    print("value\tmetric\tmedian\tq25\tq75\tn")
    for row in table:
        print(f"{row['value']}\t{row['metric']}\t{row['median']:.6g}\t{row['q25']:.6g}\t{row['q75']:.6g}\t{row['n']}")
    return 0


def cmd_env_export(args) -> int:
    from latent_rl_lab.envs import make_env
    from latent_rl_lab.latent import dumps_latent

    params = {}
    for item in args.param or []:
        if "=" not in item:
            raise ConfigError(f"--param: expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        params[k] = parse_value(v)
    bundle = make_env(args.family, substream(args.seed, "env-gen"), **params)
    if not 0 <= args.member < bundle.num_members:
        raise ConfigError(f"--member: index {args.member} out of range for {bundle.num_members} members")
    text = dumps_latent(bundle.member(args.member), bundle.decoders)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latent-rl-lab", description="Exact tabular experiments for RL under latent dynamics.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the structural-identity suite")
    v.add_argument("--tol", type=float, default=1e-9)
    v.add_argument("--num-instances", type=int, default=50)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="JSONL report path (default: stdout)")
    v.set_defaults(func=cmd_verify)

    for name, fn, helptext in (("run", cmd_run, "run a configured experiment"), ("sweep", cmd_sweep, "sweep one config parameter")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--config", required=True)
        r.add_argument("--out", help="output directory (default: the config's output field)")
        r.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
        r.add_argument("--jobs", type=int, help="parallel workers (default: $LATENT_RL_LAB_JOBS or 1)")
        if name == "run":
            r.add_argument("--timing", action="store_true", help="record wall_ms (outputs are then not byte-stable)")
        else:
            r.add_argument("--param", required=True, help="dotted config path, e.g. env.N")
            r.add_argument("--values", required=True, help="comma-separated values")
        r.set_defaults(func=fn)

    e = sub.add_parser("env", help="environment utilities")
    esub = e.add_subparsers(dest="env_command", required=True)
    ex = esub.add_parser("export", help="write an environment member as JSON")
    ex.add_argument("--family", required=True)
    ex.add_argument("--param", action="append", help="key=value, repeatable")
    ex.add_argument("--member", type=int, default=0)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--out")
    ex.set_defaults(func=cmd_env_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
