# Seeding scheme follows the per-function seed derivation of sacred's randomness
# helpers: a master seed plus a label deterministically yields an independent stream.

import hashlib
from typing import Union

import numpy as np

MASK_LABEL = "mask"


def stable_hash(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, label: str = "") -> np.random.Generator:
    assert seed >= 0, "Seed must be non-negative"
    sequence = np.random.SeedSequence([seed, stable_hash(label)])
    return np.random.Generator(np.random.Philox(sequence))


def child_rng(rng: np.random.Generator, label: str) -> np.random.Generator:
    seed = int(rng.integers(0, 2**63 - 1))
    return make_rng(seed, label)


def draw_key(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def hash_signs(key: int, coords: Union[np.ndarray, int]) -> np.ndarray:
    """Deterministic uniform signs y_j for coordinates j under a mask key.

    Each coordinate reads the first word of a Philox block whose counter is the coordinate,
    so a sign never depends on which other coordinates are requested.
    """
    coords = np.asarray(coords, dtype=np.int64)
    unique, inverse = np.unique(coords, return_inverse=True)
    philox_key = np.random.SeedSequence([key, stable_hash(MASK_LABEL)]).generate_state(2, dtype=np.uint64)
    bits = np.array(
        [int(np.random.Philox(key=philox_key, counter=coord).random_raw()) >> 63 for coord in unique.tolist()],
        dtype=np.int64,
    )
    return (1 - 2 * bits)[inverse.reshape(-1)].reshape(coords.shape)
