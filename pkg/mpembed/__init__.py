# =============================================================================
# MPEMBED - MIXED-PRECISION EMBEDDING PACKAGE
# =============================================================================
# Low-precision embedding tables backed by a small full-precision cache.
#
# Modules:
# - rng: counter-based random streams keyed per (table, row, iteration)
# - numerics: row-wise quantization, FP16 conversion, rounding, bit packing
# - cache_core: n-set, alpha-way full-precision cache with LRU/LFU priorities
# - reference_cache: naive cache simulator used as an oracle
# - mp_table: fetch/update/flush over table + cache, memory accounting
# - snapshot: versioned binary snapshot files
# - sparse_optim: gradient de-duplication, SGD, row-wise AdaGrad
# - trace_sim: synthetic access traces, replay, hit-rate statistics
# - toy_model: teacher-student recommendation task for accuracy drop
# - config: experiment config loading, merging and validation
# - experiments: grid orchestration for the CLI commands
# - reports: tabular report frames and formatting
# - validation_report: named pass/fail checks over engine outputs
# =============================================================================

__version__ = "0.1.0"
