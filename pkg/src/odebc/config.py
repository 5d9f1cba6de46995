"""JSON run configuration: defaults, file loading, overrides, builders.

A config is a plain dict with sections `world`, `solver`, `search`,
`metric`, `run`. Files are JSON; a previously written run manifest (which
wraps the resolved config) is accepted anywhere a config file is.
"""

from __future__ import annotations

import copy
import json
import os

from .errors import ValidationError
from .metrics import Metric, get_metric
from .model import GmmWorld
from .sampler import SolverConfig, SolverKind
from .schedule import (
    DiscreteSchedule,
    make_linear_vp_schedule,
    resample_timesteps,
    uniform_continuous_plan,
)
from .worldgen import world_from_spec

SECTIONS = ("world", "solver", "search", "metric", "run")

DEFAULTS = {
    "world": {
        "shape": [8, 8, 1],
        "block": 2,
        "tau": 0.05,
        "components": [
            {"weight": 0.9, "std": 0.35,
             "mean": {"texture": "gradient", "amplitude": 2.0}},
            # same gradient plus a checker offset that block-averages to
            # zero: the LR observation can never tell the two modes apart
            {"weight": 0.1, "std": 0.35,
             "mean": {"sum": [
                 {"texture": "gradient", "amplitude": 2.0},
                 {"texture": "checker", "amplitude": 0.35},
             ]}},
        ],
    },
    "solver": {
        "kind": "ddim",
        "steps": 50,
        "noise_seed": 0,
        "total_steps": 1000,
        "beta_1": 1e-4,
        "beta_t": 0.02,
    },
    "search": {
        "candidates": 64,
        "candidate_seed": 7,
        "references": 16,
        "reference_seed": 11,
        "n_random": 32,
    },
    "metric": {"name": "l2"},
    "run": {
        "seed": 0,
        "out": "out",
        "workers": None,  # falls back to ODEBC_WORKERS, then 1
        "pairs": 32,
        "pairs_dir": None,
        "test_pairs": 8,
        "test_seed": 2,
        "holdout": 16,
        "holdout_seed": 13,
        "solvers": None,
        "sizes": None,
        "repeats": 8,
        "k_fixed": 200,
        "conditions": 10,
        "condition_seed": 5,
        "random_seed": 77,
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config {path} must be a JSON object")
    if "config" in data and "command" in data:  # a run manifest
        data = data["config"]
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ValidationError(
            f"config {path}: unknown section(s) {sorted(unknown)}")
    return data


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_set(config: dict, expr: str) -> None:
    """Apply one `section.key[.key]=json-value` override in place."""
    if "=" not in expr:
        raise ValidationError(f"--set needs section.key=value, got {expr!r}")
    dotted, _, raw = expr.partition("=")
    keys = dotted.split(".")
    if len(keys) < 2 or keys[0] not in SECTIONS:
        raise ValidationError(
            f"--set key {dotted!r} must start with one of {SECTIONS}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are convenient on the command line
    node = config
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = value


def resolve_config(path=None, sets=(), workers=None, seed=None,
                   out=None) -> dict:
    config = default_config()
    if path is not None:
        config = deep_merge(config, load_config(path))
    for expr in sets:
        apply_set(config, expr)
    if workers is not None:
        config["run"]["workers"] = workers
    if seed is not None:
        config["run"]["seed"] = seed
    if out is not None:
        config["run"]["out"] = out
    if config["run"]["workers"] is None:
        config["run"]["workers"] = int(os.environ.get("ODEBC_WORKERS", "1"))
    config["run"]["workers"] = int(config["run"]["workers"])
    if config["run"]["workers"] < 1:
        raise ValidationError("run.workers must be >= 1")
    return config


def build_world(config: dict) -> GmmWorld:
    return world_from_spec(config["world"])


def build_schedule(solver_section: dict) -> DiscreteSchedule:
    return make_linear_vp_schedule(
        int(solver_section.get("total_steps", 1000)),
        float(solver_section.get("beta_1", 1e-4)),
        float(solver_section.get("beta_t", 0.02)),
    )


_KINDS = {kind.value: kind for kind in SolverKind}


def build_solver(solver_section: dict,
                 schedule: DiscreteSchedule | None = None) -> SolverConfig:
    name = solver_section.get("kind", "ddim")
    if name not in _KINDS:
        raise ValidationError(
            f"solver.kind {name!r} not one of {sorted(_KINDS)}")
    kind = _KINDS[name]
    if schedule is None:
        schedule = build_schedule(solver_section)
    steps = int(solver_section.get("steps", 50))
    if kind is SolverKind.EULER_REF:
        plan = uniform_continuous_plan(steps)
    else:
        plan = resample_timesteps(schedule, steps)
    return SolverConfig(kind=kind, schedule=schedule, plan=plan,
                        noise_seed=int(solver_section.get("noise_seed", 0)))


def build_metric(config: dict, world: GmmWorld | None = None) -> Metric:
    name = config["metric"].get("name", "l2")
    shape = world.shape if world is not None and name == "gradperc" else None
    return get_metric(name, shape=shape)


def write_manifest(out_dir, command: str, config: dict) -> None:
    payload = {"command": command, "config": config}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
