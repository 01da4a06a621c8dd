"""Experiment configuration: YAML or JSON files validated into plain dataclasses."""

from __future__ import annotations

import copy
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

EXPERIMENTS = ("o2l", "hardness", "selfpredict", "golf")
FAMILIES = ("tree", "cb", "lock", "random")
BASES = ("ucbvi", "known")
REPS = ("hindsight", "self-predictive", "oracle")


class ConfigError(ValueError):
    """Validation failure; the message starts with the offending field path."""


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, seed-derived generator; streams with different names are independent."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class ExperimentConfig:
    name: str
    experiment: str
    env: dict
    algorithm: dict
    protocol: dict
    seeds: list
    output: str = "out"
    tol: dict = field(default_factory=dict)
    hardness: dict = field(default_factory=dict)
    source: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "experiment": self.experiment,
            "env": self.env,
            "algorithm": self.algorithm,
            "protocol": {**self.protocol, "seeds": list(self.seeds)},
            "output": self.output,
            "tol": self.tol,
            "hardness": self.hardness,
        }


def _req(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"{path}.{key}: required field is missing" if path else f"{key}: required field is missing")
    return d[key]


def _num(d: dict, key: str, path: str, lo=None, hi=None, integer=False, default=None):
    if key not in d or d[key] is None:
        if default is None:
            raise ConfigError(f"{path}.{key}: required field is missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    if integer and float(v) != int(v):
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    v = int(v) if integer else float(v)
    if lo is not None and v < lo:
        raise ConfigError(f"{path}.{key}: must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}.{key}: must be <= {hi}, got {v}")
    return v


def _validate_env(env: dict, base_dir: Path) -> dict:
    if not isinstance(env, dict):
        raise ConfigError("env: expected a mapping")
    env = dict(env)
    if "path" in env:
        p = Path(env["path"])
        if not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"env.path: file not found: {env['path']}")
        env["path"] = str(p)
        return env
    fam = _req(env, "family", "env")
    if fam not in FAMILIES:
        raise ConfigError(f"env.family: unknown family {fam!r}; expected one of {FAMILIES}")
    if fam in ("tree", "cb"):
        N = _num(env, "N", "env", lo=4, integer=True)
        if fam == "tree" and N & (N - 1):
            raise ConfigError(f"env.N: tree family needs a power of two, got {N}")
    elif fam == "lock":
        _num(env, "H", "env", lo=2, hi=12, integer=True)
        _num(env, "num_decoys", "env", lo=1, integer=True, default=1)
    else:
        for k in ("S", "X", "A", "H"):
            _num(env, k, "env", lo=1, integer=True)
        if env["X"] < env["S"]:
            raise ConfigError("env.X: must be at least env.S")
        _num(env, "mix", "env", lo=0.0, hi=1.0, default=0.5)
    if "seed" in env:
        _num(env, "seed", "env", lo=0, integer=True)
    return env


def validate(raw: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at top level")
    base_dir = Path(base_dir)
    name = str(_req(raw, "name", ""))
    experiment = raw.get("experiment", "o2l")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown kind {experiment!r}; expected one of {EXPERIMENTS}")
    env = _validate_env(_req(raw, "env", ""), base_dir)
    alg = dict(raw.get("algorithm") or {})
    alg.setdefault("base", "ucbvi")
    alg.setdefault("rep", "hindsight")
    if alg["base"] not in BASES:
        raise ConfigError(f"algorithm.base: unknown base algorithm {alg['base']!r}; expected one of {BASES}")
    if alg["rep"] not in REPS:
        raise ConfigError(f"algorithm.rep: unknown representation learner {alg['rep']!r}; expected one of {REPS}")
    alg["bonus_scale"] = _num(alg, "bonus_scale", "algorithm", lo=0.0, default=1.0)
    proto = dict(_req(raw, "protocol", ""))
    seeds = proto.pop("seeds", None)
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("protocol.seeds: must be a nonempty list of integers")
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError(f"protocol.seeds[{i}]: expected a nonnegative integer, got {s!r}")
    hard = dict(raw.get("hardness") or {})
    if experiment in ("o2l", "selfpredict", "golf"):
        proto["T"] = _num(proto, "T", "protocol", lo=1, integer=True)
    if experiment == "o2l":
        proto["K"] = _num(proto, "K", "protocol", lo=1, integer=True)
        proto["member"] = _num(proto, "member", "protocol", lo=0, integer=True, default=0)
    if alg["rep"] == "self-predictive" or experiment == "selfpredict":
        proto["gamma"] = _num(proto, "gamma", "protocol", lo=1e-12)
    if experiment == "hardness":
        hard["risk_target"] = _num(hard, "risk_target", "hardness", lo=0.0, hi=1.0, default=0.5)
        hard["episode_cap"] = _num(hard, "episode_cap", "hardness", lo=1, integer=True, default=4000)
        hard["num_members"] = _num(hard, "num_members", "hardness", lo=1, integer=True, default=10)
        hard["oracle"] = bool(hard.get("oracle", False))
        if env.get("family") != "tree":
            raise ConfigError("env.family: the hardness probe runs on the tree family")
    if experiment == "golf":
        alg["eps_apx"] = _num(alg, "eps_apx", "algorithm", lo=1e-6, hi=1.0, default=0.25)
        alg["delta"] = _num(alg, "delta", "algorithm", lo=1e-9, hi=1.0, default=0.1)
        alg["c"] = _num(alg, "c", "algorithm", lo=0.0, default=2.0)
        if env.get("family") not in ("lock", "random"):
            raise ConfigError("env.family: GOLF runs need a family with a mismatch-complete class (lock or random)")
    tol = dict(raw.get("tol") or {})
    for k in tol:
        _num(tol, k, "tol", lo=0.0)
    return ExperimentConfig(name, experiment, env, alg, proto, list(seeds), str(raw.get("output", "out")), tol, hard)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    text = path.read_text()
    raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    cfg = validate(raw, path.parent)
    cfg.source = str(path)
    return cfg


def set_path(raw: dict, dotted: str, value) -> dict:
    """Copy of ``raw`` with ``dotted`` (e.g. ``env.N``) set; the path must already exist."""
    out = copy.deepcopy(raw)
    keys = dotted.split(".")
    node = out
    for i, k in enumerate(keys[:-1]):
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"{'.'.join(keys[: i + 1])}: unknown parameter path")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"{dotted}: unknown parameter path")
    node[keys[-1]] = value
    return out


def parse_value(text: str):
    """Numbers as decimal doubles (ints kept integral); anything else as YAML scalars."""
    v = yaml.safe_load(text)
    return v
