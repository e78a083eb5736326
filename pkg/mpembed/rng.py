# =============================================================================
# MPEMBED - RANDOM STREAMS
# =============================================================================
# Counter-based random streams for stochastic rounding.
#
# KEYING:
# - Philox key     = (seed, table_id)
# - Philox counter = (draw, position, iteration, row)
#
# The lowest counter word is left free for the draws of one stream, so two
# streams that differ in (row, iteration, position) never overlap. Element j
# of a row always consumes draw j of its stream, which makes results
# independent of the order rows are processed in.
# =============================================================================

from dataclasses import dataclass, replace

import numpy as np

_WORD_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Deterministic, splittable random stream."""
    seed: int
    table_id: int = 0
    row: int = 0
    iteration: int = 0
    position: int = 0

    def __post_init__(self):
        for name in ("seed", "table_id", "row", "iteration", "position"):
            value = getattr(self, name)
            if value < 0 or value > _WORD_MASK:
                raise ValueError(f"RngStream.{name} must fit in 64 unsigned bits, got {value}")

    def split(self, **fields) -> "RngStream":
        """Return a stream with some key fields replaced."""
        return replace(self, **fields)

    def advance(self, steps: int = 1) -> "RngStream":
        """Return the stream at the next position."""
        return replace(self, position=self.position + steps)

    def generator(self) -> np.random.Generator:
        key = (self.seed & _WORD_MASK) | ((self.table_id & _WORD_MASK) << 64)
        counter = (
            (self.position << 64)
            | (self.iteration << 128)
            | (self.row << 192)
        )
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def uniforms(self, count: int) -> np.ndarray:
        """Draw `count` uniforms in [0, 1); draw j is the same on every call."""
        return self.generator().random(count)


# =============================================================================
# END OF RANDOM STREAMS
# =============================================================================
