"""Secret-shared tensors and the local (zero-communication) algebra on them.

A SharedTensor is the simulator's handle on one logical value: it carries both
servers' additive shares, the ring config, and the fractional-bit scale of the
encoded secret (fb).  Shares of plain integers (comparison bits, one-hot rows)
use fb=0 so multiplications know how much to truncate.

Everything here is local share arithmetic: addition, negation, public affine
maps, reshapes, reductions.  Anything interactive lives in linear.py and
nonlinear.py.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ring import DEFAULT_CONFIG, FixedPointConfig, SecretShare, decode, encode

__all__ = ["SharedTensor", "share_tensor", "reveal", "truncate_local"]

_I64 = np.int64
_U64 = np.uint64


@dataclass
class SharedTensor:
    s0: np.ndarray
    s1: np.ndarray
    cfg: FixedPointConfig = DEFAULT_CONFIG
    fb: int = -1  # -1 sentinel replaced in __post_init__

    def __post_init__(self):
        self.s0 = np.asarray(self.s0, dtype=_U64)
        self.s1 = np.asarray(self.s1, dtype=_U64)
        if self.s0.shape != self.s1.shape:
            raise ValueError(f"share shapes differ: {self.s0.shape} vs {self.s1.shape}")
        if self.fb < 0:
            self.fb = self.cfg.f

    # -- structure ----------------------------------------------------------

    @property
    def shape(self):
        return self.s0.shape

    @property
    def ndim(self):
        return self.s0.ndim

    @property
    def size(self):
        return self.s0.size

    def share(self, party: int) -> SecretShare:
        return SecretShare(party, (self.s0, self.s1)[party], cfg=self.cfg, fb=self.fb)

    @classmethod
    def from_shares(cls, sh0: SecretShare, sh1: SecretShare) -> "SharedTensor":
        if (sh0.party, sh1.party) != (0, 1):
            raise ValueError("need shares from parties 0 and 1")
        if sh0.fb != sh1.fb:
            raise ValueError("fractional-bit mismatch between shares")
        return cls(sh0.data, sh1.data, cfg=sh0.cfg, fb=sh0.fb)

    def _wrap(self, a0, a1, fb=None):
        return SharedTensor(a0, a1, cfg=self.cfg, fb=self.fb if fb is None else fb)

    def reshape(self, *shape):
        return self._wrap(self.s0.reshape(*shape), self.s1.reshape(*shape))

    def transpose(self, *axes):
        ax = axes or None
        return self._wrap(self.s0.transpose(ax), self.s1.transpose(ax))

    @property
    def mT(self):
        return self._wrap(np.swapaxes(self.s0, -1, -2), np.swapaxes(self.s1, -1, -2))

    def __getitem__(self, idx):
        return self._wrap(self.s0[idx], self.s1[idx])

    def broadcast_to(self, shape):
        return self._wrap(
            np.broadcast_to(self.s0, shape).copy(), np.broadcast_to(self.s1, shape).copy()
        )

    def copy(self):
        return self._wrap(self.s0.copy(), self.s1.copy())

    @staticmethod
    def concat(parts, axis=0):
        first = parts[0]
        if any(p.fb != first.fb for p in parts):
            raise ValueError("concat requires equal fractional bits")
        return first._wrap(
            np.concatenate([p.s0 for p in parts], axis=axis),
            np.concatenate([p.s1 for p in parts], axis=axis),
        )

    @staticmethod
    def stack(parts, axis=0):
        first = parts[0]
        return first._wrap(
            np.stack([p.s0 for p in parts], axis=axis),
            np.stack([p.s1 for p in parts], axis=axis),
        )

    # -- linear local ops ----------------------------------------------------

    def _check(self, other):
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch: {self.shape} vs {other.shape}")
        if self.fb != other.fb:
            raise ValueError(f"fractional-bit mismatch: {self.fb} vs {other.fb}")

    @np.errstate(over="ignore")
    def __add__(self, other):
        if isinstance(other, SharedTensor):
            self._check(other)
            return self._wrap(self.s0 + other.s0, self.s1 + other.s1)
        return self.add_public(other)

    def __radd__(self, other):
        return self.add_public(other)

    @np.errstate(over="ignore")
    def __sub__(self, other):
        if isinstance(other, SharedTensor):
            self._check(other)
            return self._wrap(self.s0 - other.s0, self.s1 - other.s1)
        return self.add_public(-np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return (-self).add_public(other)

    @np.errstate(over="ignore")
    def __neg__(self):
        zero = np.zeros_like(self.s0)
        return self._wrap(zero - self.s0, zero - self.s1)

    @np.errstate(over="ignore")
    def add_public(self, c) -> "SharedTensor":
        """Add a public constant; by convention party 0 absorbs it."""
        enc = encode(np.broadcast_to(np.asarray(c, dtype=np.float64), self.shape),
                     self.cfg, f=self.fb)
        return self._wrap(self.s0 + enc, self.s1)

    @np.errstate(over="ignore")
    def mul_public(self, p, out_fb: int | None = None) -> "SharedTensor":
        """Multiply by a public real (elementwise); truncates the extra scale."""
        pf = encode(np.broadcast_to(np.asarray(p, dtype=np.float64), self.shape),
                    self.cfg, f=self.cfg.f)
        raw = self._wrap(self.s0 * pf, self.s1 * pf, fb=self.fb + self.cfg.f)
        target = self.fb if out_fb is None else out_fb
        return truncate_local(raw, raw.fb - target)

    @np.errstate(over="ignore")
    def mul_public_int(self, k: int) -> "SharedTensor":
        """Exact multiply by a public integer; no truncation, fb unchanged."""
        kk = np.uint64(k % self.cfg.modulus)
        return self._wrap(self.s0 * kk, self.s1 * kk)

    @np.errstate(over="ignore")
    def shift_fb(self, delta: int) -> "SharedTensor":
        """Re-encode to fb+delta fractional bits (exact local upscale)."""
        if delta < 0:
            return truncate_local(self, -delta)
        k = np.uint64(1 << delta)
        return self._wrap(self.s0 * k, self.s1 * k, fb=self.fb + delta)

    def div_pow2(self, k: int) -> "SharedTensor":
        """Divide the value by 2^k, keeping the encoding scale."""
        t = truncate_local(self, k)
        return self._wrap(t.s0, t.s1)

    def sum(self, axis=None, keepdims=False):
        return self._wrap(
            self.s0.sum(axis=axis, keepdims=keepdims, dtype=_U64),
            self.s1.sum(axis=axis, keepdims=keepdims, dtype=_U64),
        )

    def mean(self, axis=-1, keepdims=False):
        n = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims).mul_public(1.0 / n)

    @np.errstate(over="ignore")
    def matmul_public(self, w: np.ndarray, right: bool = True,
                      out_fb: int | None = None) -> "SharedTensor":
        """Multiply by a public real matrix; w is encoded then truncated away.

        right=True computes x @ w, else w @ x.  Batched stacks broadcast per
        numpy matmul rules.
        """
        wf = encode(np.asarray(w, dtype=np.float64), self.cfg, f=self.cfg.f)
        if right:
            a0, a1 = np.matmul(self.s0, wf), np.matmul(self.s1, wf)
        else:
            a0, a1 = np.matmul(wf, self.s0), np.matmul(wf, self.s1)
        raw = SharedTensor(a0, a1, cfg=self.cfg, fb=self.fb + self.cfg.f)
        target = self.fb if out_fb is None else out_fb
        return truncate_local(raw, raw.fb - target)


@np.errstate(over="ignore")
def truncate_local(x: SharedTensor, amount: int) -> SharedTensor:
    """Probabilistic local truncation: each party shifts its own share.

    Party 0 adds half an output ulp first so the combined error is centered.
    The textbook rare failure (shares straddling the ring boundary) has
    probability about |value| / 2^(ell - fb), negligible at desk scale.
    """
    if amount == 0:
        return x
    if amount < 0:
        raise ValueError("truncation amount must be >= 0")
    half = np.uint64(1 << (amount - 1)) if amount >= 1 else np.uint64(0)
    sh = np.int64(amount)
    # bit-reinterpret as signed so the shift is an arithmetic (floor) divide
    shape = x.shape
    s0 = np.ascontiguousarray(np.atleast_1d(x.s0 + half))
    s1 = np.ascontiguousarray(np.atleast_1d(x.s1))
    t0 = ((s0.view(_I64) >> sh).view(_U64)).reshape(shape)
    t1 = ((s1.view(_I64) >> sh).view(_U64)).reshape(shape)
    return SharedTensor(t0.copy(), t1.copy(), cfg=x.cfg, fb=x.fb - amount)


@np.errstate(over="ignore")
def share_tensor(values, rng, cfg: FixedPointConfig = DEFAULT_CONFIG,
                 fb: int | None = None, encoded: bool = False) -> SharedTensor:
    """Encode (unless already ring words) and additively share a tensor."""
    if encoded:
        v = np.asarray(values, dtype=_U64)
    else:
        v = encode(values, cfg, f=cfg.f if fb is None else fb)
    r = rng.ring_elements(v.size).reshape(v.shape)
    return SharedTensor(r, v - r, cfg=cfg, fb=cfg.f if fb is None else fb)


def reveal(x: SharedTensor) -> np.ndarray:
    """Test-side reconstruction straight from both stashes (no protocol)."""
    return decode(x.s0 + x.s1, x.cfg, f=x.fb)
