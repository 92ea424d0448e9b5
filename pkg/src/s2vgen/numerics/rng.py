"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is a
hash of an explicit seed plus a path of stream labels, so draws never depend on
call order or on any global state.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


def stream_key(seed: int, *path) -> int:
    payload = json.dumps([int(seed), *[str(p) for p in path]]).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:16], "little")


def stream(seed: int, *path) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *path)))
