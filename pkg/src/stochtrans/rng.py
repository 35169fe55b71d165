"""Counter-based random streams with order-independent seed derivation."""

import hashlib
import struct

import numpy as np


def derive_seed(master_seed, experiment_id, index):
    """64-bit seed from ``blake2b(master_seed, experiment_id, index)``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", int(master_seed) & 0xFFFFFFFFFFFFFFFF))
    h.update(str(experiment_id).encode("utf-8"))
    h.update(struct.pack("<Q", int(index)))
    return int.from_bytes(h.digest(), "little")


def stream(seed):
    """Philox generator keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def replica_stream(master_seed, experiment_id, index):
    return stream(derive_seed(master_seed, experiment_id, index))
