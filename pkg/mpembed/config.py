"""Experiment configuration loading and validation utilities."""

from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import yaml

from .cache_core import VALID_ASSOCIATIVITIES, HashKind, ReplacementPolicy
from .numerics import Precision, RoundingMode

SEED_ENV_VAR = "MPEMBED_SEED"
COMMANDS = ("simulate", "train_toy", "bench")
TRACE_KINDS = ("zipf", "phased", "uniform", "file")
OPTIMIZER_KINDS = ("adagrad", "sgd")

DEFAULTS: Dict[str, dict] = {
    "simulate": {
        "seed": None,
        "workers": 1,
        "output_dir": "results/simulate",
        "trace": {
            "kind": "zipf",
            "num_rows": 100_000,
            "iterations": 10_000,
            "batch_rows": 100,
            "exponent": 1.05,
            "phases": 64,
            "path": None,
        },
        "embedding": {
            "dim": 16,
            "precision": "int8",
            "rounding": "nearest",
            "hash": "modulo",
            "learning_rate": 0.01,
        },
        "grid": {
            "policies": ["lru", "lfu"],
            "cache_ratios": [0.05, 0.1, 0.3, 0.5],
            "associativities": [1],
        },
    },
    "train_toy": {
        "seeds": [0, 1, 2, 3, 4],
        "workers": 1,
        "output_dir": "results/train_toy",
        "cache_dir": ".cache/toy",
        "task": {
            "num_tables": 4,
            "rows_per_table": [2000, 5000, 10000, 20000],
            "dim": 16,
            "examples": 200_000,
            "zipf_exponent": 1.05,
            "label_noise": 0.0,
            "test_fraction": 0.1,
            "seed": None,
        },
        "optimizer": {
            "kind": "adagrad",
            "learning_rate": 0.05,
            "epsilon": 1e-8,
            "batch_size": 128,
            "epochs": 3,
            "init_scale": 0.1,
        },
        "grid": {
            "precisions": ["int4", "int2"],
            "roundings": ["nearest", "stochastic"],
            "caches": [{"ratio": 0.0}],
        },
    },
    "bench": {
        "seed": None,
        "output_dir": "results/bench",
        "hit_rates": [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0],
        "num_rows": 100_000,
        "hot_rows": 1000,
        "dim": 64,
        "precision": "int8",
        "accesses": 20_000,
        "repeats": 3,
        "learning_rate": 0.01,
    },
}

CACHE_ENTRY_KEYS = {"ratio", "associativity", "policy", "hash"}


def deep_merge(base: dict, override: dict) -> dict:
    """Deep merge override into base; lists are replaced, not merged."""
    result = copy.deepcopy(base)
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def load_config_file(path: Union[str, Path]) -> dict:
    """Load a YAML (or JSON) file and return an object (empty dict for empty files)."""
    with open(path, "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping, got {type(data).__name__}")
    return data


def parse_overrides(items: Iterable[str]) -> dict:
    """Turn ["trace.num_rows=1000", ...] into a nested dict; values use YAML scalar rules."""
    result: dict = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"Override must look like key.path=value, got {item!r}")
        node = result
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"Override {item!r} conflicts with an earlier value")
        node[parts[-1]] = yaml.safe_load(raw)
    return result


def default_seed() -> int:
    """MPEMBED_SEED when set, else 0."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or not raw.strip():
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}")


def load_experiment_config(
    command: str,
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Sequence[str]] = None,
) -> dict:
    """Command defaults <- config file <- --set overrides, with seeds resolved."""
    if command not in DEFAULTS:
        raise ValueError(f"Unknown command {command!r}; expected one of {COMMANDS}")
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is not None:
        cfg = deep_merge(cfg, load_config_file(path))
    if overrides:
        cfg = deep_merge(cfg, parse_overrides(overrides))

    if "seed" in cfg and cfg["seed"] is None:
        cfg["seed"] = default_seed()
    task = cfg.get("task")
    if isinstance(task, dict) and task.get("seed") is None:
        task["seed"] = default_seed()
    return cfg


# =============================================================================
# VALIDATION
# =============================================================================

def _unknown_keys(cfg: dict, defaults: dict, prefix: str, errors: List[str]) -> None:
    for key, value in cfg.items():
        dotted = f"{prefix}{key}"
        if key not in defaults:
            errors.append(f"unknown key: {dotted}")
        elif isinstance(defaults[key], dict):
            if isinstance(value, dict):
                _unknown_keys(value, defaults[key], f"{dotted}.", errors)
            else:
                errors.append(f"{dotted} must be a mapping")


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_int(value, name: str, minimum: int, errors: List[str]) -> None:
    if not _is_int(value) or value < minimum:
        errors.append(f"{name} must be an integer >= {minimum}, got {value!r}")


def _check_number(value, name: str, low: float, high: float, errors: List[str]) -> None:
    if not _is_number(value) or not low <= value <= high:
        errors.append(f"{name} must be a number in [{low}, {high}], got {value!r}")


def _check_parse(parser, value, name: str, errors: List[str]) -> None:
    try:
        parser(value)
    except (ValueError, KeyError, TypeError):
        errors.append(f"{name}: invalid value {value!r}")


def _check_list(value, name: str, errors: List[str]) -> bool:
    if not isinstance(value, list):
        errors.append(f"{name} must be a list, got {value!r}")
        return False
    return True


def _validate_simulate(cfg: dict, errors: List[str]) -> None:
    trace = cfg["trace"]
    if trace["kind"] not in TRACE_KINDS:
        errors.append(f"trace.kind must be one of {TRACE_KINDS}, got {trace['kind']!r}")
    if trace["kind"] == "file" and not trace.get("path"):
        errors.append("trace.path is required when trace.kind is 'file'")
    _check_int(trace["num_rows"], "trace.num_rows", 1, errors)
    _check_int(trace["iterations"], "trace.iterations", 1, errors)
    _check_int(trace["batch_rows"], "trace.batch_rows", 1, errors)
    _check_int(trace["phases"], "trace.phases", 1, errors)
    if not _is_number(trace["exponent"]) or trace["exponent"] <= 0:
        errors.append(f"trace.exponent must be > 0, got {trace['exponent']!r}")

    emb = cfg["embedding"]
    _check_int(emb["dim"], "embedding.dim", 1, errors)
    _check_parse(Precision.parse, emb["precision"], "embedding.precision", errors)
    _check_parse(RoundingMode.parse, emb["rounding"], "embedding.rounding", errors)
    _check_parse(HashKind.parse, emb["hash"], "embedding.hash", errors)
    if not _is_number(emb["learning_rate"]) or emb["learning_rate"] <= 0:
        errors.append(f"embedding.learning_rate must be > 0, got {emb['learning_rate']!r}")

    grid = cfg["grid"]
    sizes = []
    for key in ("policies", "cache_ratios", "associativities"):
        if _check_list(grid[key], f"grid.{key}", errors):
            sizes.append(len(grid[key]))
    if isinstance(grid["policies"], list):
        for p in grid["policies"]:
            _check_parse(ReplacementPolicy.parse, p, "grid.policies", errors)
    if isinstance(grid["cache_ratios"], list):
        for r in grid["cache_ratios"]:
            _check_number(r, "grid.cache_ratios entry", 0.0, 1.0, errors)
    if isinstance(grid["associativities"], list):
        for a in grid["associativities"]:
            if a not in VALID_ASSOCIATIVITIES:
                errors.append(f"grid.associativities entry must be one of {VALID_ASSOCIATIVITIES}, got {a!r}")
    if 0 in sizes:
        errors.append("empty experiment grid")
    _check_int(cfg["workers"], "workers", 1, errors)
    _check_int(cfg["seed"], "seed", 0, errors)


def _validate_train_toy(cfg: dict, errors: List[str]) -> None:
    task = cfg["task"]
    _check_int(task["num_tables"], "task.num_tables", 2, errors)
    _check_int(task["dim"], "task.dim", 4, errors)
    _check_int(task["examples"], "task.examples", 2, errors)
    _check_int(task["seed"], "task.seed", 0, errors)
    if _check_list(task["rows_per_table"], "task.rows_per_table", errors):
        if len(task["rows_per_table"]) != task["num_tables"]:
            errors.append("task.rows_per_table must have one entry per table")
        for n in task["rows_per_table"]:
            _check_int(n, "task.rows_per_table entry", 1, errors)
    if not _is_number(task["zipf_exponent"]) or task["zipf_exponent"] <= 0:
        errors.append(f"task.zipf_exponent must be > 0, got {task['zipf_exponent']!r}")
    _check_number(task["label_noise"], "task.label_noise", 0.0, 1.0, errors)
    if not _is_number(task["test_fraction"]) or not 0.0 < task["test_fraction"] < 1.0:
        errors.append(f"task.test_fraction must be in (0, 1), got {task['test_fraction']!r}")

    opt = cfg["optimizer"]
    if opt["kind"] not in OPTIMIZER_KINDS:
        errors.append(f"optimizer.kind must be one of {OPTIMIZER_KINDS}, got {opt['kind']!r}")
    for key in ("learning_rate", "epsilon", "init_scale"):
        if not _is_number(opt[key]) or opt[key] <= 0:
            errors.append(f"optimizer.{key} must be > 0, got {opt[key]!r}")
    _check_int(opt["batch_size"], "optimizer.batch_size", 1, errors)
    _check_int(opt["epochs"], "optimizer.epochs", 1, errors)

    grid = cfg["grid"]
    sizes = []
    for key, parser in (("precisions", Precision.parse), ("roundings", RoundingMode.parse)):
        if _check_list(grid[key], f"grid.{key}", errors):
            sizes.append(len(grid[key]))
            for value in grid[key]:
                _check_parse(parser, value, f"grid.{key}", errors)
    if _check_list(grid["caches"], "grid.caches", errors):
        sizes.append(len(grid["caches"]))
        for n, entry in enumerate(grid["caches"]):
            name = f"grid.caches[{n}]"
            if not isinstance(entry, dict):
                errors.append(f"{name} must be a mapping")
                continue
            for key in sorted(set(entry) - CACHE_ENTRY_KEYS):
                errors.append(f"unknown key: {name}.{key}")
            _check_number(entry.get("ratio", 0.0), f"{name}.ratio", 0.0, 1.0, errors)
            if entry.get("associativity", 1) not in VALID_ASSOCIATIVITIES:
                errors.append(f"{name}.associativity must be one of {VALID_ASSOCIATIVITIES}")
            _check_parse(ReplacementPolicy.parse, entry.get("policy", "lfu"), f"{name}.policy", errors)
            _check_parse(HashKind.parse, entry.get("hash", "modulo"), f"{name}.hash", errors)
    if 0 in sizes:
        errors.append("empty experiment grid")
    if _check_list(cfg["seeds"], "seeds", errors):
        if not cfg["seeds"]:
            errors.append("seeds must not be empty")
        for s in cfg["seeds"]:
            _check_int(s, "seeds entry", 0, errors)
    _check_int(cfg["workers"], "workers", 1, errors)


def _validate_bench(cfg: dict, errors: List[str]) -> None:
    if _check_list(cfg["hit_rates"], "hit_rates", errors):
        if not cfg["hit_rates"]:
            errors.append("empty experiment grid")
        for h in cfg["hit_rates"]:
            _check_number(h, "hit_rates entry", 0.0, 1.0, errors)
    _check_int(cfg["num_rows"], "num_rows", 2, errors)
    _check_int(cfg["hot_rows"], "hot_rows", 1, errors)
    if _is_int(cfg["hot_rows"]) and _is_int(cfg["num_rows"]) and cfg["hot_rows"] >= cfg["num_rows"]:
        errors.append("hot_rows must be smaller than num_rows")
    _check_int(cfg["dim"], "dim", 1, errors)
    _check_parse(Precision.parse, cfg["precision"], "precision", errors)
    _check_int(cfg["accesses"], "accesses", 1, errors)
    _check_int(cfg["repeats"], "repeats", 1, errors)
    _check_int(cfg["seed"], "seed", 0, errors)
    if not _is_number(cfg["learning_rate"]) or cfg["learning_rate"] <= 0:
        errors.append(f"learning_rate must be > 0, got {cfg['learning_rate']!r}")


_VALIDATORS = {
    "simulate": _validate_simulate,
    "train_toy": _validate_train_toy,
    "bench": _validate_bench,
}


def validate_config(command: str, cfg: Dict) -> List[str]:
    """
    Validate a merged experiment config.

    Unknown keys are reported with their dotted path; value checks only run
    once the structure is known to be sound.
    """
    if command not in DEFAULTS:
        return [f"Unknown command {command!r}; expected one of {COMMANDS}"]
    errors: List[str] = []
    _unknown_keys(cfg, DEFAULTS[command], "", errors)
    if errors:
        return errors
    try:
        _VALIDATORS[command](cfg, errors)
    except (KeyError, TypeError) as exc:
        errors.append(f"malformed config: {exc}")
    return errors
