"""Deterministic random-stream derivation for Monte Carlo sampling.

Every random draw in this package comes from a generator derived as
``stream(seed, tag, *context)``.  The context is an integer tuple fed into a
``SeedSequence`` spawn key, so any piece of a simulation can be reproduced in
isolation and the result never depends on evaluation order.

Replicated sampling additionally uses a fixed chunk width: replicate ``r``
always lands in chunk ``r // CHUNK`` at offset ``r % CHUNK``.  Chunks own
independent streams, which makes replicate values invariant to the total
number requested and lets chunks run in parallel without reordering output.
"""

from __future__ import annotations

import numpy as np

CHUNK = 4096

# Stream namespace tags.  Each sampling site uses its own leading key so that
# no two sites can collide on a derived stream.
TAG_ROUND = 1
TAG_UPDATE_SAMPLE = 2
TAG_PATH_NOISE = 3
TAG_INNER_MOMENTS = 4
TAG_OU_PATH = 5
TAG_NORMALITY = 6
TAG_TIME_SAMPLE = 7
TAG_RUN = 8

_U32 = 0xFFFFFFFF


def stream(seed: int, *context: int) -> np.random.Generator:
    """Generator derived from ``seed`` and an integer context key."""
    key = tuple(int(c) & _U32 for c in context)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def float_key(value: float) -> tuple[int, int]:
    """Encode a float as two 32-bit context words (exact, bit-level)."""
    bits = int(np.float64(value).view(np.uint64))
    return bits >> 32, bits & _U32


def chunks(total: int, width: int = CHUNK) -> list[tuple[int, int, int]]:
    """Fixed-width chunk layout: (chunk_index, start, stop) triples.

    Samplers draw the full chunk width from each chunk's stream and slice,
    so the values at any index never depend on how many were requested.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    return [(i, s, min(s + width, total)) for i, s in enumerate(range(0, total, width))]
