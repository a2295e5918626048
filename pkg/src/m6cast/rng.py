"""Counter-based random streams.

Every Monte-Carlo sample gets its own Philox stream keyed by ``(seed,
sample_index)``, so a sample is reproducible on its own no matter how the
work is split across workers or batches.
"""

from __future__ import annotations

import numpy as np

__all__ = ["sample_generator", "stream"]

_MASK64 = (1 << 64) - 1


def sample_generator(seed: int, sample_index: int, stream_id: int = 0) -> np.random.Generator:
    """Generator for one sample; ``stream_id`` separates independent uses of the same seed."""
    if sample_index < 0:
        raise ValueError("sample index must be non-negative")
    key = np.array([seed & _MASK64, ((stream_id & 0xFFFF) << 48) | sample_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """A single long stream, for work that is not split by sample."""
    return sample_generator(seed, 0, stream_id=(stream_id + 1) & 0xFFFF)
