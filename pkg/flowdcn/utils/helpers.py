# flowdcn/utils/helpers.py

"""
Utility functions shared by training, sampling and benchmarking.
"""

# Standard library imports
from hashlib import sha256
from os import environ
from typing import Iterator
from typing import Mapping
from typing import Tuple
from typing import Union

# Third party imports
import numpy as np

# Local imports
from flowdcn._constants import THREADS_ENV
from flowdcn.exceptions import ArgumentException

StreamKey = Union[int, str]


def _key_to_int(key: StreamKey) -> int:
    if isinstance(key, int):
        if key < 0:
            raise ArgumentException(f"RNG stream keys must be non-negative, got {key}", "key")
        return key
    return int.from_bytes(sha256(key.encode("utf-8")).digest()[:8], "little")


def rng_stream(seed: int, *keys: StreamKey) -> np.random.Generator:
    """
    Build a counter-based generator for one named stream.

    The stream depends only on the seed and the keys, never on how many other streams
    were drawn before it, so splitting work across threads or reordering loops does not
    change any random value.

    Args:
        seed: Run seed
        *keys: Stream labels, e.g. ("noise", step) or ("sample", index)

    Returns:
        A numpy Generator backed by Philox
    """
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def parameter_digest(params: Mapping[str, np.ndarray]) -> str:
    """
    SHA-256 over parameter names, shapes, dtypes and raw bytes, in mapping order.

    Args:
        params: Ordered name -> array mapping

    Returns:
        Hex digest string
    """
    digest = sha256()
    for name, value in params.items():
        array = np.ascontiguousarray(value)
        digest.update(name.encode("utf-8"))
        digest.update(str(array.shape).encode("ascii"))
        digest.update(array.dtype.str.encode("ascii"))
        digest.update(array.tobytes())
    return digest.hexdigest()


def worker_threads(requested: int = 1) -> int:
    """
    Number of worker threads to use, capped by FLOWDCN_THREADS when set.

    Args:
        requested: Threads the caller would like

    Returns:
        The effective thread count (at least 1)
    """
    if requested < 1:
        raise ArgumentException(f"Thread count must be >= 1, got {requested}", "threads")
    cap = environ.get(THREADS_ENV)
    if cap is None or cap.strip() == "":
        return requested
    try:
        cap_value = int(cap)
    except ValueError:
        raise ArgumentException(f"{THREADS_ENV} must be an integer, got {cap!r}", THREADS_ENV)
    return max(1, min(requested, cap_value))


def tiles(extent: int, block: int) -> Iterator[Tuple[int, int]]:
    """
    Yield (start, stop) ranges covering [0, extent) in blocks of `block`.

    Args:
        extent: Axis length
        block: Tile length (>= 1)

    Yields:
        Half-open index ranges
    """
    if block < 1:
        raise ArgumentException(f"Tile size must be >= 1, got {block}", "block")
    for start in range(0, extent, block):
        yield start, min(start + block, extent)
