# =============================================================================
# MPEMBED - VALIDATION REPORT GENERATOR
# =============================================================================
# Named pass/fail checks over engine outputs and a printable report.
#
# CHECK GROUPS:
# - simulation:  hit/miss accounting, CDF shape, hit-rate range
# - compression: golden factors at d = 128 (LFU counters, 32-bit tags)
# - trends:      32-way LFU > 1-way LFU > 1-way LRU at equal ratio,
#                hit rate non-decreasing in cache ratio,
#                LRU > LFU on phase-shifting traces with small caches
# - numerics:    packed quantize/dequantize equals fake quantization
# =============================================================================

import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cache_core import ReplacementPolicy
from .mp_table import EmbeddingConfig, compression_factor, format_factor
from .numerics import (
    Precision,
    RoundingMode,
    dequantize_row,
    fake_quantize_row,
    quantize_row,
)
from .rng import RngStream
from .trace_sim import SimReport, gen_phased_trace, gen_zipf_trace, replay

logger = logging.getLogger(__name__)

GOLDEN_DIM = 128

# (precision, cache ratio, expected factor) with an LFU cache
GOLDEN_COMPRESSION: List[Tuple[Precision, float, str]] = [
    (Precision.INT8, 0.0, "0.26563"),
    (Precision.INT4, 0.0, "0.14063"),
    (Precision.INT2, 0.0, "0.07813"),
    (Precision.INT4, 0.3, "0.45078"),
    (Precision.INT8, 0.1, "0.37422"),
    (Precision.INT8, 0.05, "0.32383"),
    (Precision.INT4, 0.1, "0.24922"),
    (Precision.INT4, 0.05, "0.19883"),
    (Precision.INT2, 0.1, "0.18672"),
    (Precision.INT2, 0.05, "0.13633"),
]


@dataclass
class CheckResult:
    """Result of a single check."""
    name: str
    passed: bool
    message: str = ""
    value: Optional[float] = None


@dataclass
class ValidationReport:
    """Complete validation report."""
    timestamp: str = ""
    checks: Dict[str, List[CheckResult]] = field(default_factory=dict)

    total_passed: int = 0
    total_failed: int = 0
    overall_passed: bool = False

    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


# =============================================================================
# CHECKS
# =============================================================================

def validate_sim_report(report: SimReport) -> List[CheckResult]:
    """Accounting and shape checks on one replay."""
    results = []

    accounted = report.hits + report.misses == report.updates
    if accounted and report.access_counts is not None:
        accounted = int(np.sum(report.access_counts)) == report.updates
    results.append(CheckResult(
        "hit_miss_accounting", accounted,
        "" if accounted else f"hits {report.hits} + misses {report.misses} != updates {report.updates}",
    ))

    in_range = 0.0 <= report.hit_rate <= 1.0
    results.append(CheckResult(
        "hit_rate_range", in_range,
        "" if in_range else f"hit rate {report.hit_rate} outside [0, 1]",
        report.hit_rate,
    ))

    if report.config.get("num_sets", 0):
        split = report.bypasses + report.evictions + report.cold_fills == report.misses
        results.append(CheckResult(
            "miss_outcomes", split,
            "" if split else "bypasses + evictions + cold fills != misses",
        ))

    if report.updates and report.cdf:
        shares = [point[1] for point in report.cdf]
        monotone = all(b >= a for a, b in zip(shares, shares[1:]))
        results.append(CheckResult(
            "cdf_non_decreasing", monotone, "" if monotone else "CDF decreases",
        ))
        ends = abs(shares[-1] - 1.0) < 1e-9
        results.append(CheckResult(
            "cdf_ends_at_one", ends, "" if ends else f"CDF ends at {shares[-1]}", shares[-1],
        ))
    return results


def validate_compression_golden(dim: int = GOLDEN_DIM) -> List[CheckResult]:
    """Compression factors against the reference table (5 decimals)."""
    results = []
    for precision, ratio, expected in GOLDEN_COMPRESSION:
        value = compression_factor(precision, dim, ratio, ReplacementPolicy.LFU)
        text = format_factor(value)
        passed = text == expected
        results.append(CheckResult(
            f"compression_{precision.name.lower()}_r{ratio:g}",
            passed,
            "" if passed else f"got {text}, expected {expected}",
            value,
        ))
    return results


def _index_reports(reports: Sequence[SimReport]) -> Dict[Tuple[str, int, float], float]:
    return {
        (r.config["policy"], int(r.config["associativity"]), float(r.config["cache_ratio"])): r.hit_rate
        for r in reports
    }


def validate_hit_rate_trends(reports: Sequence[SimReport]) -> List[CheckResult]:
    """
    Ordering checks on a stationary-trace grid.

    Only the comparisons whose cells are present are made.
    """
    index = _index_reports(reports)
    results = []

    groups: Dict[Tuple[str, int], List[Tuple[float, float]]] = {}
    for (policy, alpha, ratio), hit in index.items():
        groups.setdefault((policy, alpha), []).append((ratio, hit))
    for (policy, alpha), points in sorted(groups.items()):
        points.sort()
        if len(points) < 2:
            continue
        bad = [(a, b) for (a, ha), (b, hb) in zip(points, points[1:]) if hb < ha]
        results.append(CheckResult(
            f"monotone_{policy}_a{alpha}",
            not bad,
            "" if not bad else f"hit rate falls between ratios {bad[0][0]:g} and {bad[0][1]:g}",
        ))

    ratios = sorted({ratio for (_, _, ratio) in index})
    for ratio in ratios:
        keys = [("lfu", 32, ratio), ("lfu", 1, ratio), ("lru", 1, ratio)]
        if not all(k in index for k in keys):
            continue
        lfu32, lfu1, lru1 = (index[k] for k in keys)
        passed = lfu32 > lfu1 > lru1
        results.append(CheckResult(
            f"policy_order_r{ratio:g}",
            passed,
            "" if passed else (
                f"expected 32-way LFU {lfu32:.4f} > 1-way LFU {lfu1:.4f} > 1-way LRU {lru1:.4f}"
            ),
        ))
    return results


def validate_phased_trend(lru: SimReport, lfu: SimReport) -> CheckResult:
    passed = lru.hit_rate > lfu.hit_rate
    return CheckResult(
        "phased_lru_beats_lfu",
        passed,
        "" if passed else f"LRU {lru.hit_rate:.4f} <= LFU {lfu.hit_rate:.4f}",
        lru.hit_rate - lfu.hit_rate,
    )


def validate_pack_emulate(samples: int = 300, dim: int = 37, seed: int = 0) -> CheckResult:
    """Packed quantize/dequantize vs fake quantization on random rows, bit-exact."""
    data_rng = np.random.default_rng(seed)
    integer_kinds = [Precision.INT8, Precision.INT4, Precision.INT2]
    for n in range(samples):
        precision = integer_kinds[n % len(integer_kinds)]
        mode = RoundingMode.STOCHASTIC if n % 2 else RoundingMode.NEAREST
        row = (data_rng.standard_normal(dim) * data_rng.uniform(0.01, 10.0)).astype(np.float32)
        stream = RngStream(seed, row=n) if mode is RoundingMode.STOCHASTIC else None
        packed = dequantize_row(quantize_row(row, precision, mode, stream))
        emulated = fake_quantize_row(row, precision, mode, stream)
        if not np.array_equal(packed.view(np.uint32), emulated.view(np.uint32)):
            return CheckResult(
                "pack_emulate_equivalence", False,
                f"sample {n} ({precision.name}, {mode.value}) differs",
            )
    return CheckResult("pack_emulate_equivalence", True, value=float(samples))


# =============================================================================
# QUICK RUN
# =============================================================================

def run_quick_checks(seed: int = 0) -> Dict[str, List[CheckResult]]:
    """Small-scale versions of the headline checks, for the validate command."""
    checks: Dict[str, List[CheckResult]] = {}
    checks["Compression"] = validate_compression_golden()
    checks["Numerics"] = [validate_pack_emulate(seed=seed)]

    stationary = gen_zipf_trace(20_000, 400, 64, 1.05, seed)
    reports = []
    for policy, alpha in (("lru", 1), ("lfu", 1), ("lfu", 32)):
        config = EmbeddingConfig(dim=4, precision=Precision.FP32, policy=policy, associativity=alpha)
        for ratio in (0.05, 0.1):
            reports.append(replay(stationary, config, cache_ratio=ratio, seed=seed))
    checks["Simulation"] = [c for r in reports for c in validate_sim_report(r)]
    checks["Trends"] = validate_hit_rate_trends(reports)

    phased = gen_phased_trace(20_000, 64, 30, 1.05, seed, 64)
    small = EmbeddingConfig(dim=4, precision=Precision.FP32, cache_ratio=0.01)
    checks["Trends"].append(validate_phased_trend(
        replay(phased, small, policy=ReplacementPolicy.LRU, seed=seed),
        replay(phased, small, policy=ReplacementPolicy.LFU, seed=seed),
    ))
    return checks


def generate_validation_report(checks: Dict[str, List[CheckResult]]) -> ValidationReport:
    report = ValidationReport(
        timestamp=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        checks=dict(checks),
    )
    all_checks = [c for group in checks.values() for c in group]
    report.total_passed = sum(1 for c in all_checks if c.passed)
    report.total_failed = sum(1 for c in all_checks if not c.passed)
    report.overall_passed = report.total_failed == 0
    report.errors = [f"{c.name}: {c.message}" for c in all_checks if not c.passed]
    for error in report.errors:
        logger.warning("Check failed: %s", error)
    return report


def format_report(report: ValidationReport) -> str:
    """Format validation report as text."""
    lines = [
        "=" * 60,
        "VALIDATION REPORT",
        "=" * 60,
        f"Date: {report.timestamp}",
    ]
    for group, checks in report.checks.items():
        passed = sum(1 for c in checks if c.passed)
        status = "PASSED" if passed == len(checks) else "FAILED"
        lines.extend(["", f"{group.upper()}: {passed}/{len(checks)} {status}", "-" * 40])
        for check in checks:
            mark = "PASS" if check.passed else "FAIL"
            suffix = f"  {check.message}" if check.message else ""
            lines.append(f"  [{mark}] {check.name}{suffix}")

    lines.extend([
        "",
        "=" * 60,
        f"OVERALL: {'PASSED' if report.overall_passed else 'FAILED'}",
        f"Total: {report.total_passed} passed, {report.total_failed} failed",
        "=" * 60,
    ])
    return "\n".join(lines)


# =============================================================================
# END OF VALIDATION REPORT GENERATOR
# =============================================================================
