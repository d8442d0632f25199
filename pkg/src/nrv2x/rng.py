"""Named random sub-streams derived from one master seed.

Each consumer asks for a stream by name (and optional integer keys such as a
UE id).  The stream is a PCG64 generator seeded with
``SeedSequence(master_seed, spawn_key=(crc32(name), *keys))``, so adding a new
consumer never shifts the draws seen by existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np

# Stream names used by the engine; listed so they are greppable.
DROPPING = "dropping"
MOBILITY = "mobility"
TRAFFIC = "traffic"
CHANNEL = "channel"
MAC = "mac"
SYNC = "sync"
RADIO = "radio"


def name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(master_seed: int, name: str, *keys: int) -> np.random.Generator:
    if master_seed < 0:
        raise ValueError(f"master seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence(master_seed, spawn_key=(name_key(name), *(int(k) for k in keys)))
    return np.random.Generator(np.random.PCG64(seq))
