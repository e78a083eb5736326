# =============================================================================
# MPEMBED - EXPERIMENT RUNNERS
# =============================================================================
# Orchestrates the config-driven commands over their experiment grids.
#
# KEY PRINCIPLES:
# - Grid cells change configuration only, never the engines
# - One cell = one independent, single-threaded run (parallel across cells)
# - Deterministic: same config + seed -> same reports and CSV bytes
# - Failed cells are reported per cell; the rest of the grid still runs
#
# COMMANDS:
# - simulate:  trace -> replay over policy x cache ratio x associativity
# - train-toy: toy task -> training over precision x rounding x cache
# - bench:     fetch / update throughput vs constructed hit rate
# =============================================================================

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .cache_core import CacheConfig, HashKind, HighPrecisionCache, ReplacementPolicy
from .mp_table import EmbeddingConfig, MixedPrecisionEmbedding, QuantizedTable
from .numerics import Precision, RoundingMode
from .reports import (
    accuracy_frame,
    bench_frame,
    hit_rate_matrix,
    metrics_records,
    write_csv,
    write_json,
)
from .toy_model import (
    OptimizerConfig,
    ToyTaskConfig,
    TrainingGridResult,
    load_or_generate_task,
    run_training_grid,
)
from .trace_sim import (
    AccessTrace,
    SimReport,
    gen_phased_trace,
    gen_uniform_trace,
    gen_zipf_trace,
    hit_rate_trace,
    read_trace,
    replay,
)
from .validation_report import CheckResult, validate_sim_report

logger = logging.getLogger(__name__)

BENCH_WARMUP_TOUCHES = 16


# =============================================================================
# SIMULATE
# =============================================================================

@dataclass(frozen=True)
class SimCell:
    policy: ReplacementPolicy
    cache_ratio: float
    associativity: int

    @property
    def name(self) -> str:
        return f"sim_{self.policy.value}_a{self.associativity}_r{self.cache_ratio:g}"


@dataclass
class SimCellResult:
    cell: SimCell
    report: Optional[SimReport] = None
    checks: List[CheckResult] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)


@dataclass
class SimulateResult:
    cells: List[SimCellResult] = field(default_factory=list)
    files: List[Path] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    @property
    def reports(self) -> List[SimReport]:
        return [c.report for c in self.cells if c.report is not None]


def build_trace(trace_cfg: Dict, seed: int) -> AccessTrace:
    """Generate (or read) the trace named by a simulate `trace` section."""
    kind = trace_cfg["kind"]
    num_rows = trace_cfg["num_rows"]
    iterations = trace_cfg["iterations"]
    batch = trace_cfg["batch_rows"]
    if kind == "zipf":
        return gen_zipf_trace(num_rows, iterations, batch, trace_cfg["exponent"], seed)
    if kind == "phased":
        phases = trace_cfg["phases"]
        return gen_phased_trace(
            num_rows, phases, max(1, iterations // phases), trace_cfg["exponent"], seed, batch
        )
    if kind == "uniform":
        return gen_uniform_trace(num_rows, iterations, batch, seed)
    if kind == "file":
        return read_trace(trace_cfg["path"])
    raise ValueError(f"Unknown trace kind {kind!r}")


def simulate_cells(grid: Dict) -> List[SimCell]:
    return [
        SimCell(ReplacementPolicy.parse(p), float(r), int(a))
        for p, r, a in itertools.product(
            grid["policies"], grid["cache_ratios"], grid["associativities"]
        )
    ]


def _replay_cell(job: Tuple[AccessTrace, EmbeddingConfig, SimCell, int, float]) -> SimCellResult:
    trace, emb_config, cell, seed, learning_rate = job
    result = SimCellResult(cell)
    try:
        config = EmbeddingConfig(
            dim=emb_config.dim,
            precision=emb_config.precision,
            rounding=emb_config.rounding,
            cache_ratio=cell.cache_ratio,
            associativity=cell.associativity,
            policy=cell.policy,
            hash=emb_config.hash,
        )
        result.report = replay(trace, config, seed=seed, learning_rate=learning_rate)
        result.checks = validate_sim_report(result.report)
        result.errors.extend(f"{c.name}: {c.message}" for c in result.checks if not c.passed)
    except Exception as exc:  # reported per cell
        logger.exception("Simulation cell %s failed", cell.name)
        result.errors.append(str(exc))
    return result


def run_simulate(cfg: Dict, output_dir: Optional[Path] = None, workers: Optional[int] = None) -> SimulateResult:
    """
    Replay one trace over the policy x ratio x associativity grid.

    Writes one JSON report per cell plus hit_rates.csv into output_dir.
    """
    seed = cfg["seed"]
    workers = workers or cfg["workers"]
    output_dir = Path(output_dir or cfg["output_dir"])
    emb = cfg["embedding"]
    emb_config = EmbeddingConfig(
        dim=emb["dim"],
        precision=emb["precision"],
        rounding=emb["rounding"],
        hash=emb["hash"],
    )
    cells = simulate_cells(cfg["grid"])
    if not cells:
        raise ValueError("empty experiment grid")

    trace = build_trace(cfg["trace"], seed)
    logger.info(
        "Simulating %d cells over a %s trace (%d iterations, %d accesses)",
        len(cells), cfg["trace"]["kind"], len(trace), trace.total_accesses,
    )
    jobs = [(trace, emb_config, cell, seed, emb["learning_rate"]) for cell in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cell_results = list(pool.map(_replay_cell, jobs))
    else:
        cell_results = [_replay_cell(job) for job in jobs]

    result = SimulateResult(cells=cell_results)
    for cell_result in cell_results:
        result.errors.extend(f"{cell_result.cell.name}: {e}" for e in cell_result.errors)
        if cell_result.report is not None:
            result.files.append(
                write_json(cell_result.report.to_dict(), output_dir / f"{cell_result.cell.name}.json")
            )
    result.files.append(write_csv(hit_rate_matrix(result.reports), output_dir / "hit_rates.csv"))
    return result


# =============================================================================
# TRAIN-TOY
# =============================================================================

@dataclass
class TrainToyResult:
    grid: TrainingGridResult
    files: List[Path] = field(default_factory=list)

    @property
    def errors(self) -> List[str]:
        return self.grid.errors


def toy_configs(grid: Dict, dim: int) -> List[EmbeddingConfig]:
    """precision x rounding x cache entries, in config order."""
    configs = []
    for precision, rounding, cache in itertools.product(
        grid["precisions"], grid["roundings"], grid["caches"]
    ):
        configs.append(
            EmbeddingConfig(
                dim=dim,
                precision=precision,
                rounding=rounding,
                cache_ratio=float(cache.get("ratio", 0.0)),
                associativity=int(cache.get("associativity", 1)),
                policy=cache.get("policy", "lfu"),
                hash=cache.get("hash", "modulo"),
            )
        )
    return configs


def run_train_toy(cfg: Dict, output_dir: Optional[Path] = None, workers: Optional[int] = None) -> TrainToyResult:
    """Train the toy task over the grid and write metrics.json + accuracy_drop.csv."""
    workers = workers or cfg["workers"]
    output_dir = Path(output_dir or cfg["output_dir"])
    task_cfg = ToyTaskConfig(**cfg["task"])
    optimizer = OptimizerConfig(**cfg["optimizer"])
    configs = toy_configs(cfg["grid"], task_cfg.dim)
    if not configs:
        raise ValueError("empty experiment grid")

    task = load_or_generate_task(task_cfg, cfg["cache_dir"])
    grid = run_training_grid(task, configs, optimizer, cfg["seeds"], workers)
    result = TrainToyResult(grid)
    result.files.append(write_json(metrics_records(grid), output_dir / "metrics.json"))
    result.files.append(write_csv(accuracy_frame(grid), output_dir / "accuracy_drop.csv"))
    return result


# =============================================================================
# BENCH
# =============================================================================

@dataclass
class BenchPoint:
    target_hit_rate: float
    observed_hit_rate: float
    fetch_rows_per_s: float
    update_rows_per_s: float


@dataclass
class BenchResult:
    points: List[BenchPoint] = field(default_factory=list)
    files: List[Path] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)


def _bench_embedding(cfg: Dict, seed: int) -> MixedPrecisionEmbedding:
    """Direct-mapped LFU cache with one set per hot row, hot rows warmed in."""
    num_rows, hot_rows, dim = cfg["num_rows"], cfg["hot_rows"], cfg["dim"]
    table = QuantizedTable(num_rows, dim, Precision.parse(cfg["precision"]))
    cache = HighPrecisionCache(
        CacheConfig(hot_rows, 1, dim, ReplacementPolicy.LFU, HashKind.MODULO), num_rows
    )
    emb = MixedPrecisionEmbedding(table, cache, RoundingMode.NEAREST, seed)
    for _ in range(BENCH_WARMUP_TOUCHES):
        for i in range(hot_rows):
            emb.update(i, emb.fetch(i))
    emb.reset_stats()
    return emb


def bench_point(cfg: Dict, hit_rate: float, seed: int) -> BenchPoint:
    """Median fetch and update throughput over cfg['repeats'] runs at one hit rate."""
    fetch_rates, update_rates, observed = [], [], []
    lr = np.float32(cfg["learning_rate"])
    for repeat in range(cfg["repeats"]):
        emb = _bench_embedding(cfg, seed)
        trace = hit_rate_trace(
            cfg["num_rows"], cfg["hot_rows"], hit_rate, cfg["accesses"], seed + repeat
        )
        rows = np.concatenate(trace.iterations).tolist()

        start = time.perf_counter()
        fetched = [emb.fetch(i) for i in rows]
        fetch_rates.append(len(rows) / max(time.perf_counter() - start, 1e-9))

        updated = [x - lr for x in fetched]
        start = time.perf_counter()
        for i, x in zip(rows, updated):
            emb.update(i, x)
        update_rates.append(len(rows) / max(time.perf_counter() - start, 1e-9))
        observed.append(emb.stats.hit_rate)

    return BenchPoint(
        target_hit_rate=float(hit_rate),
        observed_hit_rate=float(np.median(observed)),
        fetch_rows_per_s=float(np.median(fetch_rates)),
        update_rows_per_s=float(np.median(update_rates)),
    )


def check_bench_monotonic(points: List[BenchPoint]) -> List[str]:
    """Adjacent hit-rate points where update throughput went down."""
    ordered = sorted(points, key=lambda p: p.target_hit_rate)
    problems = []
    for low, high in zip(ordered, ordered[1:]):
        if high.update_rows_per_s < low.update_rows_per_s:
            problems.append(
                f"update throughput fell from {low.update_rows_per_s:.0f} rows/s at hit rate "
                f"{low.target_hit_rate:g} to {high.update_rows_per_s:.0f} rows/s at {high.target_hit_rate:g}"
            )
    return problems


def check_bench_trend(points: List[BenchPoint]) -> List[str]:
    """
    Update throughput at the highest hit rate must beat the lowest.

    Adjacent dips only warn through check_bench_monotonic; an inverted
    end-to-end ordering is an error.
    """
    ordered = sorted(points, key=lambda p: p.target_hit_rate)
    if len(ordered) < 2 or ordered[0].target_hit_rate == ordered[-1].target_hit_rate:
        return []
    low, high = ordered[0], ordered[-1]
    if high.update_rows_per_s > low.update_rows_per_s:
        return []
    return [
        f"update throughput at hit rate {high.target_hit_rate:g} ({high.update_rows_per_s:.0f} rows/s) "
        f"does not exceed hit rate {low.target_hit_rate:g} ({low.update_rows_per_s:.0f} rows/s)"
    ]


def run_bench(cfg: Dict, output_dir: Optional[Path] = None) -> BenchResult:
    output_dir = Path(output_dir or cfg["output_dir"])
    result = BenchResult()
    for hit_rate in cfg["hit_rates"]:
        point = bench_point(cfg, hit_rate, cfg["seed"])
        logger.info(
            "Bench hit rate %.2f: fetch %.0f rows/s, update %.0f rows/s",
            hit_rate, point.fetch_rows_per_s, point.update_rows_per_s,
        )
        result.points.append(point)
    result.warnings = check_bench_monotonic(result.points)
    for warning in result.warnings:
        logger.warning(warning)
    result.errors = check_bench_trend(result.points)
    for error in result.errors:
        logger.error(error)
    result.files.append(write_csv(bench_frame(result.points), output_dir / "bench.csv"))
    return result


# =============================================================================
# END OF EXPERIMENT RUNNERS
# =============================================================================
