"""Seedable deterministic randomness: AES-CTR keystream chopped into ring elements.

Element i under key k is the low 8 bytes of AES-256(k, block=i), so a
(key, counter) pair addresses a unique element and is never reused while the
stream only moves forward.  Roles derive distinct keys from a session seed by
hashing, which makes whole transcripts replayable from the seed set.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

__all__ = ["PrfKey", "PrfStream", "derive_key"]


def derive_key(seed: int | bytes, label: str) -> bytes:
    """32-byte key from a seed and a role label."""
    if isinstance(seed, int):
        seed = seed.to_bytes(16, "little", signed=False)
    return hashlib.sha256(seed + b"/" + label.encode()).digest()


@dataclass
class PrfKey:
    key: bytes  # 32 bytes
    counter: int = 0  # element index, advances monotonically

    def __post_init__(self):
        if len(self.key) != 32:
            raise ValueError("PRF key must be 32 bytes")


class PrfStream:
    """Stateful stream of pseudo-random ring elements over one PrfKey."""

    def __init__(self, key: bytes | PrfKey, counter: int = 0):
        if isinstance(key, PrfKey):
            self._key = key
        else:
            self._key = PrfKey(key, counter)

    @property
    def counter(self) -> int:
        return self._key.counter

    def ring_elements(self, n: int) -> np.ndarray:
        """Next n pseudo-random uint64s; advances the counter by n."""
        out = prf_expand(self._key, n)
        self._key.counter += n
        return out

    def bits(self, n: int) -> np.ndarray:
        """n pseudo-random 64-bit words for boolean (XOR) shares."""
        return self.ring_elements(n)


def prf_expand(k: PrfKey, n: int) -> np.ndarray:
    """Evaluate the PRF at element indices [counter, counter+n).

    Deterministic in (key, counter); does not mutate k.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.empty(0, dtype=np.uint64)
    # CTR keystream starting at block index == element counter; one 16-byte
    # block per element, low half kept.  Seeking is done via the initial
    # counter block, so any (key, counter) is directly addressable.
    iv = struct.pack(">QQ", k.counter >> 64, k.counter & ((1 << 64) - 1))
    enc = Cipher(algorithms.AES(k.key), modes.CTR(iv)).encryptor()
    stream = enc.update(b"\x00" * (16 * n))
    words = np.frombuffer(stream, dtype="<u8")
    return np.ascontiguousarray(words[::2])
