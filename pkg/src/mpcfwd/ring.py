"""Fixed-point encoding and 2-out-of-2 additive secret sharing over Z_{2^ell}.

Reals are represented as two's-complement integers scaled by 2^f inside the
ring Z_L with L = 2^ell.  A secret x is split as

    share_0 = r,    share_1 = x - r  (mod L),    r uniform over Z_L,

so each share alone is marginally uniform and reveals nothing.  Reconstruction
is addition mod L.  All tensor shares carry an explicit public shape; only
values are secret.

This module is pure value arithmetic: no sessions, no communication.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FixedPointConfig",
    "SecretShare",
    "EncodeRangeError",
    "encode",
    "decode",
    "share",
    "reconstruct",
    "serialize_tensor",
    "deserialize_tensor",
]


class EncodeRangeError(ValueError):
    """Raised when a real value does not fit the signed fixed-point range."""


@dataclass(frozen=True)
class FixedPointConfig:
    """Ring and fixed-point parameters.

    Attributes:
        ell: ring bit width (32 or 64).
        f: number of fractional bits, 0 < f < ell/2.
    """

    ell: int = 64
    f: int = 16

    def __post_init__(self):
        if self.ell not in (32, 64):
            raise ValueError(f"ell must be 32 or 64, got {self.ell}")
        if not 0 < self.f < self.ell // 2:
            raise ValueError(f"f must be in (0, {self.ell // 2}), got {self.f}")

    @property
    def modulus(self) -> int:
        return 1 << self.ell

    @property
    def scale(self) -> int:
        return 1 << self.f

    @property
    def max_abs(self) -> float:
        """Largest magnitude encodable signed value, 2^(ell-f-1)."""
        return float(1 << (self.ell - self.f - 1))


DEFAULT_CONFIG = FixedPointConfig()

_U64 = np.uint64
_I64 = np.int64


def _as_u64(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype != _U64:
        a = a.astype(_U64)
    return a


def encode(x, cfg: FixedPointConfig = DEFAULT_CONFIG, f: int | None = None) -> np.ndarray:
    """Encode reals as ring elements: round(x * 2^f) mod 2^ell.

    Rounding is half-away-from-zero so positive and negative values see
    symmetric error.  Raises EncodeRangeError when |x| >= 2^(ell-f-1).
    """
    if f is None:
        f = cfg.f
    a = np.asarray(x, dtype=np.float64)
    limit = float(1 << (cfg.ell - f - 1))
    if np.any(np.abs(a) >= limit):
        raise EncodeRangeError(
            f"value out of range for fixed-point (f={f}): |x| must be < {limit}"
        )
    scaled = np.where(a >= 0, np.floor(a * (1 << f) + 0.5), -np.floor(-a * (1 << f) + 0.5))
    return scaled.astype(np.int64).astype(_U64)


def decode(e, cfg: FixedPointConfig = DEFAULT_CONFIG, f: int | None = None) -> np.ndarray:
    """Decode ring elements to reals; values >= L/2 are negative."""
    if f is None:
        f = cfg.f
    signed = _as_u64(e).astype(_I64)
    return signed.astype(np.float64) / float(1 << f)


@dataclass
class SecretShare:
    """One party's additive share of a scalar or tensor of ring elements.

    Attributes:
        party: holder id, 0 or 1.
        data: uint64 ndarray of ring elements (shape is public).
        cfg: the ring/fixed-point parameters.
        fb: fractional bits of the *secret* this share encodes.  Plain
            integers (bits, one-hot rows, token counts) use fb=0.
    """

    party: int
    data: np.ndarray
    cfg: FixedPointConfig = field(default=DEFAULT_CONFIG)
    fb: int | None = None

    def __post_init__(self):
        if self.party not in (0, 1):
            raise ValueError(f"party must be 0 or 1, got {self.party}")
        self.data = _as_u64(self.data)
        if self.fb is None:
            self.fb = self.cfg.f

    @property
    def shape(self) -> tuple:
        return self.data.shape


@np.errstate(over="ignore")
def share(x, rng, cfg: FixedPointConfig = DEFAULT_CONFIG, fb: int | None = None):
    """Split ring elements into two additive shares.

    Args:
        x: ring elements (uint64 array or anything castable).
        rng: randomness source with ring_elements(n) -> uint64 array.

    Returns:
        (SecretShare party 0, SecretShare party 1).
    """
    v = _as_u64(x)
    r = rng.ring_elements(v.size).reshape(v.shape)
    s0 = r
    s1 = v - r  # uint64 wraparound == mod 2^64
    return (
        SecretShare(0, s0, cfg=cfg, fb=fb),
        SecretShare(1, s1, cfg=cfg, fb=fb),
    )


@np.errstate(over="ignore")
def reconstruct(s0: SecretShare, s1: SecretShare) -> np.ndarray:
    """Add two shares mod L.  Checks party ids and shapes."""
    if s0.party != 0 or s1.party != 1:
        raise ValueError(f"expected parties (0, 1), got ({s0.party}, {s1.party})")
    if s0.data.shape != s1.data.shape:
        raise ValueError(f"share shape mismatch: {s0.data.shape} vs {s1.data.shape}")
    return s0.data + s1.data


# ---------------------------------------------------------------------------
# Tensor wire serialization: shape header then payload.
#   header: rank as u32 LE, then each dim as u32 LE
#   payload: row-major little-endian 8-byte words
# ---------------------------------------------------------------------------

def serialize_tensor(a: np.ndarray) -> bytes:
    a = _as_u64(a)
    header = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a).astype("<u8").tobytes()


def deserialize_tensor(buf: bytes, offset: int = 0):
    """Parse one serialized tensor; returns (array, bytes consumed)."""
    (rank,) = struct.unpack_from("<I", buf, offset)
    dims = struct.unpack_from(f"<{rank}I", buf, offset + 4)
    n = 1
    for d in dims:
        n *= d
    start = offset + 4 + 4 * rank
    end = start + 8 * n
    a = np.frombuffer(buf[start:end], dtype="<u8").reshape(dims).astype(_U64)
    return a, end - offset
