import hashlib
from typing import Union

import numpy as np

Label = Union[str, int]


def derive_seed(seed: int, *labels: Label) -> int:
    """Split a top-level seed into an independent 64-bit seed per subsystem"""
    path = ":".join([str(seed), *(str(label) for label in labels)])
    return int.from_bytes(hashlib.sha256(path.encode("utf-8")).digest()[:8], "little")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for one task stream, e.g. (seed, attempt index)"""
    return np.random.default_rng([seed, *stream])
