"""Turn engine outputs into pandas tables, CSV files and console text."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import pandas as pd

from .mp_table import compression_factor, format_factor
from .toy_model import TrainingGridResult
from .trace_sim import SimReport

NOT_AVAILABLE = "N/A"

SIM_COLUMNS = [
    "policy",
    "associativity",
    "num_sets",
    "cache_ratio",
    "hit_rate",
    "hits",
    "misses",
    "bypasses",
    "evictions",
    "compression_factor",
]


def _fixed(value, places: int = 5):
    if isinstance(value, float):
        return format_factor(value, places)
    return value


def format_decimals(df: pd.DataFrame, places: int = 5) -> pd.DataFrame:
    """Render every float cell as fixed-point text, rounded half-up."""
    out = df.copy()
    for column in out.columns:
        if pd.api.types.is_float_dtype(out[column]) or out[column].dtype == object:
            out[column] = out[column].map(lambda v: _fixed(v, places))
    out.columns = [_fixed(c, places) for c in out.columns]
    return out


def write_csv(df: pd.DataFrame, path: Union[str, Path], places: int = 5) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    format_decimals(df, places).to_csv(path, index=False, lineterminator="\n")
    return path


def write_json(record, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(record, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


# =============================================================================
# SIMULATION
# =============================================================================

def sim_frame(reports: Iterable[SimReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        record = report.to_dict()
        rows.append({column: record.get(column) for column in SIM_COLUMNS})
    if not rows:
        return pd.DataFrame(columns=SIM_COLUMNS)
    return pd.DataFrame(rows, columns=SIM_COLUMNS)


def hit_rate_matrix(reports: Iterable[SimReport]) -> pd.DataFrame:
    """Policy x associativity rows, one hit-rate column per cache ratio."""
    frame = sim_frame(reports)
    if frame.empty:
        return pd.DataFrame(columns=["policy", "associativity"])
    matrix = frame.pivot_table(
        index=["policy", "associativity"],
        columns="cache_ratio",
        values="hit_rate",
        aggfunc="first",
    )
    matrix = matrix.sort_index(axis=0).sort_index(axis=1)
    matrix.columns = [float(c) for c in matrix.columns]
    return matrix.reset_index()


# =============================================================================
# TOY TRAINING
# =============================================================================

ACCURACY_COLUMNS = [
    "config",
    "precision",
    "rounding",
    "cache_ratio",
    "associativity",
    "policy",
    "compression_factor",
    "accuracy",
    "log_loss",
    "accuracy_drop_pct",
    "diverged_runs",
]


def accuracy_frame(result: TrainingGridResult) -> pd.DataFrame:
    """One row per configuration; diverged cells show N/A."""
    rows = []
    for summary in result.summaries:
        config = summary.config
        drop = summary.median_drop
        accuracy = summary.median_accuracy
        log_loss = summary.median_log_loss
        rows.append(
            {
                "config": summary.label,
                "precision": config.precision.name.lower(),
                "rounding": config.rounding.value,
                "cache_ratio": config.cache_ratio,
                "associativity": config.associativity if config.cache_ratio > 0 else 0,
                "policy": config.policy.value if config.cache_ratio > 0 else "-",
                "compression_factor": format_factor(
                    compression_factor(config.precision, config.dim, config.cache_ratio, config.policy)
                ),
                "accuracy": format_factor(accuracy) if accuracy is not None else NOT_AVAILABLE,
                "log_loss": format_factor(log_loss) if log_loss is not None else NOT_AVAILABLE,
                "accuracy_drop_pct": format_factor(drop, 3) if drop is not None else NOT_AVAILABLE,
                "diverged_runs": summary.diverged_runs,
            }
        )
    return pd.DataFrame(rows, columns=ACCURACY_COLUMNS)


def metrics_records(result: TrainingGridResult) -> List[dict]:
    """Per-run metrics for the metrics JSON file."""
    records = []
    for summary in result.summaries:
        for run, drop in zip(summary.runs, summary.drops):
            records.append(
                {
                    "config": run.label,
                    "seed": run.seed,
                    "test_accuracy": None if run.diverged else run.test_accuracy,
                    "log_loss": None if run.diverged else run.log_loss,
                    "train_loss": None if run.diverged else run.train_loss,
                    "cache_hit_rate": run.cache_hit_rate,
                    "accuracy_drop_pct": drop,
                    "diverged": run.diverged,
                    "errors": list(run.errors),
                }
            )
    return records


# =============================================================================
# BENCH / CONSOLE
# =============================================================================

BENCH_COLUMNS = [
    "target_hit_rate",
    "observed_hit_rate",
    "fetch_rows_per_s",
    "update_rows_per_s",
]


def bench_frame(points: Sequence) -> pd.DataFrame:
    rows = [
        {
            "target_hit_rate": p.target_hit_rate,
            "observed_hit_rate": p.observed_hit_rate,
            "fetch_rows_per_s": p.fetch_rows_per_s,
            "update_rows_per_s": p.update_rows_per_s,
        }
        for p in points
    ]
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def format_table(df: pd.DataFrame, places: int = 5) -> str:
    if df.empty:
        return "(no rows)"
    return format_decimals(df, places).to_string(index=False)
