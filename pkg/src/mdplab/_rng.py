"""Keyed deterministic noise streams.

Every random draw in the package is addressed by an integer tuple
``(seed, stream, step)``: the tuple keys a fresh SFC64 generator, so a draw
is a pure function of its address and never depends on execution order,
thread count, or how many other draws happened before it.  Streams are
partitioned into channels so independent uses (system noise, initial draws,
hypothesis sampling, ...) can never collide.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.random import Generator, SFC64, SeedSequence

# channel tags; disjoint high bits of the stream id
CH_SYSTEM = 1
CH_REFERENCE = 2
CH_INIT = 3
CH_PAIR = 4
CH_CHECK = 5
CH_PROBE = 6

_REPLICA_BITS = 40


class RngKey(NamedTuple):
    seed: int
    stream: int


def make_stream(channel: int, replica: int = 0) -> int:
    """Stream id for (channel, replica); replica must fit in 40 bits."""
    if not 0 <= replica < (1 << _REPLICA_BITS):
        raise ValueError(f"replica index {replica} out of range")
    return (channel << _REPLICA_BITS) | replica


def keyed_generator(key: RngKey, step: int = 0) -> Generator:
    """Generator addressed by (seed, stream, step).

    Callers must draw a fixed, documented sequence from the returned
    generator; two different call sites must never share an address.
    """
    return Generator(SFC64(SeedSequence((key.seed, key.stream, step))))


def block_normals(key: RngKey, step: int, shape) -> np.ndarray:
    """Standard-normal block for one time step.

    Row i of the block is particle i's increment for this step, which is
    what makes permutation re-keying and thread-order independence exact.
    """
    return keyed_generator(key, step).standard_normal(shape)


NOISE_CHUNK = 4096


def chunked_normals(key: RngKey, n_steps: int, dim: int) -> np.ndarray:
    """(n_steps, dim) standard normals for a single trajectory.

    Steps are grouped into fixed blocks of NOISE_CHUNK, each addressed by
    its block index, and every block is drawn in full before slicing.  Two
    trajectories on the same key therefore share their noise prefix even
    when their horizons differ.
    """
    if n_steps == 0:
        return np.empty((0, dim))
    blocks = []
    for b in range(0, n_steps, NOISE_CHUNK):
        take = min(NOISE_CHUNK, n_steps - b)
        blocks.append(
            keyed_generator(key, b // NOISE_CHUNK)
            .standard_normal((NOISE_CHUNK, dim))[:take]
        )
    return np.concatenate(blocks, axis=0)
