# =============================================================================
# MPEMBED - TOY RECOMMENDATION TASK
# =============================================================================
# Teacher-student click task used to measure accuracy drop per embedding
# configuration.
#
# MODEL (K tables, one row x_k per table per example, dimension d):
#   z    = SUM_{a<b} dot(x_a, x_b) / sqrt(d)
#        = (|SUM_k x_k|^2 - SUM_k |x_k|^2) / (2 sqrt(d))
#   p    = sigmoid(z)
#   loss = log(1 + e^z) - y z
#   dloss/dx_a = (p - y) * (SUM_k x_k - x_a) / sqrt(d)
#
# DATA:
# - teacher rows ~ N(0, 1)
# - per-table indices Zipf-distributed over a per-table random permutation
# - y ~ Bernoulli(sigmoid(z_teacher)), flipped with probability label_noise
# - first (1 - test_fraction) of the examples train, the rest test
#
# TRAINING:
# - student rows ~ N(0, init_scale^2), loaded through from_dense
# - per mini-batch: fetch_many -> analytic grads -> dedup -> optimizer step
#   (row-wise AdaGrad or SGD) -> update through the mixed-precision table
# - non-finite loss ends the run as diverged
# =============================================================================

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .mp_table import EmbeddingConfig, MixedPrecisionEmbedding, accuracy_drop
from .numerics import Precision, RoundingMode
from .sparse_optim import (
    GradientBatch,
    RowWiseAdagradState,
    apply_rowwise_adagrad,
    apply_sgd,
    dedup,
)
from .trace_sim import ZipfSampler

logger = logging.getLogger(__name__)

EVAL_CHUNK = 4096
OPTIMIZERS = ("adagrad", "sgd")


# =============================================================================
# TASK
# =============================================================================

@dataclass(frozen=True)
class ToyTaskConfig:
    num_tables: int = 4
    rows_per_table: Tuple[int, ...] = (2000, 5000, 10000, 20000)
    dim: int = 16
    examples: int = 200_000
    zipf_exponent: float = 1.05
    label_noise: float = 0.0
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rows_per_table", tuple(int(n) for n in self.rows_per_table))

    def validate(self) -> List[str]:
        """Return a list of problems; empty when the config is usable."""
        errors = []
        if self.num_tables < 2:
            errors.append(f"num_tables must be >= 2, got {self.num_tables}")
        if len(self.rows_per_table) != self.num_tables:
            errors.append(
                f"rows_per_table has {len(self.rows_per_table)} entries, expected {self.num_tables}"
            )
        if any(n < 1 for n in self.rows_per_table):
            errors.append("rows_per_table entries must be >= 1")
        if self.dim < 4:
            errors.append(f"dim must be >= 4, got {self.dim}")
        if self.examples < 2:
            errors.append(f"examples must be >= 2, got {self.examples}")
        if not self.zipf_exponent > 0:
            errors.append(f"zipf_exponent must be > 0, got {self.zipf_exponent}")
        if not 0.0 <= self.label_noise <= 1.0:
            errors.append(f"label_noise must be in [0, 1], got {self.label_noise}")
        if not 0.0 < self.test_fraction < 1.0:
            errors.append(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        return errors

    def cache_key(self) -> str:
        canonical = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class ToyDataset:
    indices: np.ndarray  # (m, K) int64
    labels: np.ndarray  # (m,) float32

    def __len__(self) -> int:
        return int(self.labels.size)


@dataclass
class ToyTask:
    config: ToyTaskConfig
    train: ToyDataset
    test: ToyDataset
    teacher: List[np.ndarray]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def pairwise_logits(rows: Sequence[np.ndarray]) -> np.ndarray:
    """Sum of pairwise row dot products over sqrt(d), one value per example."""
    dim = rows[0].shape[-1]
    total = sum(rows)
    squares = sum(np.einsum("bd,bd->b", r, r) for r in rows)
    return (np.einsum("bd,bd->b", total, total) - squares) / (2.0 * math.sqrt(dim))


def gen_task(config: ToyTaskConfig) -> ToyTask:
    """Draw teacher tables, examples and labels; deterministic per config.seed."""
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))

    rng = np.random.default_rng([config.seed, 0])
    teacher = [
        rng.standard_normal((n, config.dim)).astype(np.float32)
        for n in config.rows_per_table
    ]
    indices = np.empty((config.examples, config.num_tables), dtype=np.int64)
    for k, n in enumerate(config.rows_per_table):
        permutation = rng.permutation(n)
        ranks = ZipfSampler(n, config.zipf_exponent).sample(rng, config.examples)
        indices[:, k] = permutation[ranks]

    rows = [teacher[k][indices[:, k]].astype(np.float64) for k in range(config.num_tables)]
    probs = _sigmoid(pairwise_logits(rows))
    labels = rng.random(config.examples) < probs
    flips = rng.random(config.examples) < config.label_noise
    labels = (labels ^ flips).astype(np.float32)

    n_train = int(round(config.examples * (1.0 - config.test_fraction)))
    n_train = min(max(n_train, 1), config.examples - 1)
    return ToyTask(
        config=config,
        train=ToyDataset(indices[:n_train], labels[:n_train]),
        test=ToyDataset(indices[n_train:], labels[n_train:]),
        teacher=teacher,
    )


def load_or_generate_task(config: ToyTaskConfig, cache_dir: Union[str, Path]) -> ToyTask:
    """Reuse a cached dataset file keyed by the config hash, else build and save it."""
    path = Path(cache_dir) / f"toy-{config.cache_key()[:16]}.npz"
    if path.exists():
        logger.info("Loading cached toy task from %s", path)
        with np.load(path) as data:
            return ToyTask(
                config=config,
                train=ToyDataset(data["train_indices"], data["train_labels"]),
                test=ToyDataset(data["test_indices"], data["test_labels"]),
                teacher=[data[f"teacher_{k}"] for k in range(config.num_tables)],
            )

    task = gen_task(config)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"teacher_{k}": t for k, t in enumerate(task.teacher)}
    np.savez(
        path,
        train_indices=task.train.indices,
        train_labels=task.train.labels,
        test_indices=task.test.indices,
        test_labels=task.test.labels,
        **arrays,
    )
    logger.info("Generated toy task (%d examples) and cached it at %s", config.examples, path)
    return task


# =============================================================================
# LOSS / EVALUATION
# =============================================================================

def loss_and_grads(
    rows: Sequence[np.ndarray],
    labels: np.ndarray,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Per-example log-loss and its gradient with respect to every fetched row.

    Args:
        rows: K arrays of shape (B, d), row of table k for each example
        labels: (B,) values in {0, 1}

    Returns:
        (losses (B,), grads: K arrays (B, d)); dtype follows the inputs
    """
    dim = rows[0].shape[-1]
    z = pairwise_logits(rows)
    y = np.asarray(labels, dtype=z.dtype)
    losses = np.logaddexp(0.0, z) - y * z
    residual = (_sigmoid(z) - y)[:, None]
    total = sum(rows)
    grads = [residual * (total - r) / math.sqrt(dim) for r in rows]
    return losses, grads


def _gather(table: Union[MixedPrecisionEmbedding, np.ndarray], idx: np.ndarray) -> np.ndarray:
    if isinstance(table, MixedPrecisionEmbedding):
        return table.fetch_many(idx)
    return np.asarray(table, dtype=np.float32)[idx]


def evaluate(
    tables: Sequence[Union[MixedPrecisionEmbedding, np.ndarray]],
    dataset: ToyDataset,
) -> Tuple[float, float]:
    """
    Accuracy (threshold 0.5) and mean log-loss of `tables` on `dataset`.

    Plain arrays are accepted so the teacher tables can be scored directly.
    """
    correct = 0
    loss_sum = 0.0
    for start in range(0, len(dataset), EVAL_CHUNK):
        idx = dataset.indices[start:start + EVAL_CHUNK]
        y = dataset.labels[start:start + EVAL_CHUNK]
        rows = [_gather(t, idx[:, k]) for k, t in enumerate(tables)]
        z = pairwise_logits(rows)
        loss_sum += float(np.sum(np.logaddexp(0.0, z) - y * z))
        correct += int(np.sum((z > 0) == (y > 0.5)))
    n = max(len(dataset), 1)
    return correct / n, loss_sum / n


# =============================================================================
# TRAINING
# =============================================================================

@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adagrad"
    learning_rate: float = 0.05
    epsilon: float = 1e-8
    batch_size: int = 128
    epochs: int = 3
    init_scale: float = 0.1

    def validate(self) -> List[str]:
        errors = []
        if self.kind not in OPTIMIZERS:
            errors.append(f"optimizer kind must be one of {OPTIMIZERS}, got {self.kind!r}")
        if not self.learning_rate > 0:
            errors.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.epsilon > 0:
            errors.append(f"epsilon must be > 0, got {self.epsilon}")
        if self.batch_size < 1:
            errors.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            errors.append(f"epochs must be >= 1, got {self.epochs}")
        if not self.init_scale > 0:
            errors.append(f"init_scale must be > 0, got {self.init_scale}")
        return errors


@dataclass
class TrainMetrics:
    """Outcome of one (configuration, seed) training run."""
    label: str
    seed: int
    test_accuracy: float = float("nan")
    log_loss: float = float("nan")
    train_loss: float = float("nan")
    cache_hit_rate: float = 0.0
    diverged: bool = False
    errors: List[str] = field(default_factory=list)


def baseline_config(dim: int) -> EmbeddingConfig:
    return EmbeddingConfig(dim=dim, precision=Precision.FP32, rounding=RoundingMode.NEAREST)


def train(
    task: ToyTask,
    emb_config: EmbeddingConfig,
    optimizer: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
) -> TrainMetrics:
    """
    Train student tables at `emb_config` and score them on the test split.

    Initialization and example order depend only on `seed`, so every
    configuration sees the same starting point and batches.
    """
    errors = optimizer.validate()
    if emb_config.dim != task.config.dim:
        errors.append(f"embedding dim {emb_config.dim} does not match task dim {task.config.dim}")
    if errors:
        raise ValueError("; ".join(errors))

    metrics = TrainMetrics(label=emb_config.label, seed=seed)
    init_rng = np.random.default_rng([seed, 1])
    order_rng = np.random.default_rng([seed, 2])
    tables = [
        MixedPrecisionEmbedding.from_dense(
            (init_rng.standard_normal((n, task.config.dim)) * optimizer.init_scale).astype(np.float32),
            emb_config,
            seed=seed,
            table_id=k,
        )
        for k, n in enumerate(task.config.rows_per_table)
    ]
    for table in tables:
        table.reset_stats()
    states = [RowWiseAdagradState.zeros(t.num_rows, optimizer.epsilon) for t in tables]

    train_set = task.train
    for epoch in range(optimizer.epochs):
        order = order_rng.permutation(len(train_set))
        loss_sum = 0.0
        for start in range(0, len(order), optimizer.batch_size):
            batch_idx = order[start:start + optimizer.batch_size]
            idx = train_set.indices[batch_idx]
            rows = [t.fetch_many(idx[:, k]) for k, t in enumerate(tables)]
            losses, grads = loss_and_grads(rows, train_set.labels[batch_idx])
            if not (np.all(np.isfinite(losses)) and all(np.all(np.isfinite(g)) for g in grads)):
                metrics.diverged = True
                metrics.errors.append(
                    f"training diverged at epoch {epoch} example {start} (non-finite loss)"
                )
                logger.warning("%s seed %d diverged at epoch %d", metrics.label, seed, epoch)
                return metrics
            loss_sum += float(np.sum(losses))
            for k, table in enumerate(tables):
                batch = dedup(GradientBatch(idx[:, k], grads[k], optimizer.learning_rate))
                if optimizer.kind == "adagrad":
                    apply_rowwise_adagrad(table, batch, states[k])
                else:
                    apply_sgd(table, batch)
                table.advance_iteration()
        metrics.train_loss = loss_sum / max(len(order), 1)
        logger.debug("%s seed %d epoch %d train loss %.5f", metrics.label, seed, epoch, metrics.train_loss)

    metrics.test_accuracy, metrics.log_loss = evaluate(tables, task.test)
    if not np.isfinite(metrics.log_loss):
        metrics.diverged = True
        metrics.errors.append("test log-loss is non-finite")
    hits = sum(t.stats.hits for t in tables)
    updates = sum(t.stats.updates for t in tables)
    metrics.cache_hit_rate = hits / updates if updates else 0.0
    logger.info(
        "%s seed %d: accuracy %.5f log-loss %.5f",
        metrics.label, seed, metrics.test_accuracy, metrics.log_loss,
    )
    return metrics


# =============================================================================
# GRID
# =============================================================================

@dataclass
class ConfigSummary:
    """Median metrics of one configuration across seeds."""
    config: EmbeddingConfig
    runs: List[TrainMetrics]
    drops: List[Optional[float]]

    @property
    def label(self) -> str:
        return self.config.label

    @property
    def diverged_runs(self) -> int:
        return sum(1 for r in self.runs if r.diverged)

    @property
    def median_accuracy(self) -> Optional[float]:
        values = [r.test_accuracy for r in self.runs if not r.diverged]
        return float(np.median(values)) if values else None

    @property
    def median_log_loss(self) -> Optional[float]:
        values = [r.log_loss for r in self.runs if not r.diverged]
        return float(np.median(values)) if values else None

    @property
    def median_drop(self) -> Optional[float]:
        """None ("N/A") when any seed diverged."""
        if self.diverged_runs or not self.drops or any(d is None for d in self.drops):
            return None
        return float(np.median(self.drops))


@dataclass
class TrainingGridResult:
    summaries: List[ConfigSummary]
    errors: List[str] = field(default_factory=list)

    def summary(self, label: str) -> ConfigSummary:
        for s in self.summaries:
            if s.label == label:
                return s
        raise KeyError(label)


def _run_cell(job: Tuple[ToyTask, EmbeddingConfig, OptimizerConfig, int]) -> TrainMetrics:
    task, emb_config, optimizer, seed = job
    try:
        return train(task, emb_config, optimizer, seed)
    except Exception as exc:  # reported per cell
        logger.exception("Training cell %s seed %d failed", emb_config.label, seed)
        return TrainMetrics(label=emb_config.label, seed=seed, diverged=True, errors=[str(exc)])


def run_training_grid(
    task: ToyTask,
    emb_configs: Sequence[EmbeddingConfig],
    optimizer: OptimizerConfig = OptimizerConfig(),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    workers: int = 1,
) -> TrainingGridResult:
    """
    Train every configuration for every seed; the FP32 baseline is always run.

    Accuracy drop is taken per seed against the baseline of the same seed,
    then the median across seeds is reported.
    """
    baseline = baseline_config(task.config.dim)
    configs = [baseline] + [c for c in emb_configs if c != baseline]
    jobs = [(task, c, optimizer, s) for c in configs for s in seeds]
    logger.info("Training %d configurations x %d seeds", len(configs), len(seeds))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]

    by_config: Dict[EmbeddingConfig, List[TrainMetrics]] = {c: [] for c in configs}
    for (_, config, _, _), metrics in zip(jobs, results):
        by_config[config].append(metrics)

    base_runs = {m.seed: m for m in by_config[baseline]}
    result = TrainingGridResult(summaries=[])
    for config in configs:
        drops: List[Optional[float]] = []
        for run in by_config[config]:
            base = base_runs[run.seed]
            if run.diverged or base.diverged or not base.test_accuracy > 0:
                drops.append(None)
            else:
                drops.append(accuracy_drop(base.test_accuracy, run.test_accuracy))
            result.errors.extend(f"{run.label} seed {run.seed}: {e}" for e in run.errors)
        result.summaries.append(ConfigSummary(config, by_config[config], drops))
    return result


# =============================================================================
# END OF TOY TASK MODULE
# =============================================================================
