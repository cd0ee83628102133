"""Nonlinear protocols: comparison, max, exp, reciprocal, sqrt, ReLU, cosine.

Comparison extracts the sign bit of a shared difference in exactly
log2(ell) + 1 = 7 rounds at ell=64:

  round 1      open m = z + r, with r a dealer random carrying both
               arithmetic and boolean (bit-packed) shares.  Then
               z = (m+1) + ~r mod 2^64, where m+1 is public and ~r is
               XOR-shared, so the adder's generate/propagate words cost
               nothing.
  rounds 2-6   Kogge-Stone prefix levels (shifts 1,2,4,8,16) on 64-bit
               packed words; the two word-ANDs of a level share one round.
  round 7      the last combine touches a single bit position, so the level
               and the bit-to-arithmetic conversion fuse: three masked bits
               are opened and the sign assembles locally from dealer-shared
               monomials of the mask bits.

exp is the repeated-squaring approximant (1 + x/2^n)^(2^n) with n=8, run at
8 extra internal fractional bits because squaring chains amplify truncation
noise ~2^n-fold.  Reciprocal and square root are Newton iterations with the
fixed initializers and iteration counts documented on each function; callers
that need a wider domain (layer norm) use sec_rsqrt with more iterations.

The cosine protocol converts shares to binary angle units (the full 64-bit
ring spans one period, so addition wraps exactly at 2*pi), adds a dealer mask
t uniform over the period, and opens delta = x + t in one round -- delta is
marginally uniform whatever x is.  With p = sin(delta), q = cos(delta) public,
p*[u] + q*[v] reconstructs to cos(x) by the angle-difference identity.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .ring import encode
from .runtime import CompareBundle, CosineMask, Session
from .shared import SharedTensor, truncate_local

__all__ = [
    "sec_compare",
    "sec_sign",
    "sec_max",
    "sec_exp",
    "sec_reciprocal",
    "sec_rsqrt",
    "sec_sqrt",
    "sec_div",
    "sec_relu",
    "sec_cosine",
    "sec_sine",
    "EXP_DOMAIN",
]

_U64 = np.uint64
_FULL = np.uint64(0xFFFFFFFFFFFFFFFF)
_ONE = np.uint64(1)
_LEVEL_SHIFTS = (1, 2, 4, 8, 16)

EXP_DOMAIN = (-16.0, 8.0)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

@np.errstate(over="ignore")
def _band_pair(session, phase, u, v, w, z, triples):
    """Two ANDs of XOR-shared words, (u&v, w&z), in a single round."""
    (a, b, c), (A, B, C) = triples
    p0 = np.stack([u[0] ^ a[0], v[0] ^ b[0], w[0] ^ A[0], z[0] ^ B[0]])
    p1 = np.stack([u[1] ^ a[1], v[1] ^ b[1], w[1] ^ A[1], z[1] ^ B[1]])
    r0, _ = session.exchange(phase, p0, p1, tag=b"BAND")
    d, e, D, E = (p0[i] ^ r0[i] for i in range(4))
    x0 = (d & b[0]) ^ (e & a[0]) ^ c[0] ^ (d & e)
    x1 = (d & b[1]) ^ (e & a[1]) ^ c[1]
    y0 = (D & B[0]) ^ (E & A[0]) ^ C[0] ^ (D & E)
    y1 = (D & B[1]) ^ (E & A[1]) ^ C[1]
    return (x0, x1), (y0, y1)


@np.errstate(over="ignore")
def sec_sign(session: Session, phase: str, z: SharedTensor,
             bundle: CompareBundle | None = None) -> SharedTensor:
    """Arithmetic share of the bit [z < 0]; exactly 7 online rounds."""
    if bundle is None:
        bundle = session.dealer.take_compare(z.shape)
    if tuple(bundle.shape) != tuple(z.shape):
        raise ValueError(f"bundle shape {bundle.shape} != operand shape {z.shape}")
    bundle.consume()

    r = bundle.r_arith
    m = session.open(phase, z.s0 + r[0], z.s1 + r[1], tag=b"CMPM")
    mp = m + _ONE  # z = mp + ~r mod 2^64

    s = (bundle.r_bool[0] ^ _FULL, bundle.r_bool[1])  # ~r, xor-shared
    G = (mp & s[0], mp & s[1])
    P = (mp ^ s[0], s[1])

    for lvl, sh in enumerate(_LEVEL_SHIFTS):
        shift = np.uint64(sh)
        gs = (G[0] << shift, G[1] << shift)
        ps = (P[0] << shift, P[1] << shift)
        t_pg, t_pp = _band_pair(session, phase, P, gs, P, ps, bundle.and_triples[lvl])
        G = (G[0] ^ t_pg[0], G[1] ^ t_pg[1])
        P = t_pp

    # last combine, position 62 only: carry into bit 63 is
    # G62 ^ (P62 & G30); sign = mp63 ^ s63 ^ carry
    b62, b30, b63 = np.uint64(62), np.uint64(30), np.uint64(63)
    u = ((P[0] >> b62) & _ONE, (P[1] >> b62) & _ONE)
    v = ((G[0] >> b30) & _ONE, (G[1] >> b30) & _ONE)
    w = ((G[0] >> b62) & _ONE, (G[1] >> b62) & _ONE)
    wp = (w[0] ^ ((s[0] >> b63) & _ONE), w[1] ^ ((s[1] >> b63) & _ONE))

    ab, bb, gb = bundle.fin_bool["a"], bundle.fin_bool["b"], bundle.fin_bool["g"]
    o0 = (u[0] ^ ab[0]) | ((v[0] ^ bb[0]) << _ONE) | ((wp[0] ^ gb[0]) << np.uint64(2))
    o1 = (u[1] ^ ab[1]) | ((v[1] ^ bb[1]) << _ONE) | ((wp[1] ^ gb[1]) << np.uint64(2))
    # pad the unused 61 bits with fresh randomness so the wire word is
    # indistinguishable from any other masked opening
    pad = ~np.uint64(7)
    o0 |= session.streams["s0"].bits(o0.size).reshape(o0.shape) & pad
    o1 |= session.streams["s1"].bits(o1.size).reshape(o1.shape) & pad
    r0, _ = session.exchange(phase, o0, o1, tag=b"CMPF")
    o = o0 ^ r0
    d = o & _ONE
    e = (o >> _ONE) & _ONE
    h = (o >> np.uint64(2)) & _ONE

    # sign = Y xor X with Y = c xor g, X = (d xor a)(e xor b), c public.
    # Over the ring: bit1 xor bit2 = b1 + b2 - 2*b1*b2, and for public d:
    # d xor a = d + (1-2d)*a, so everything expands into dealer-shared
    # monomials {a, b, g, ab, ga, gb, gab} with public coefficients.
    mono = bundle.fin_monomials
    two = np.uint64(2)
    cd = _ONE - two * d      # (1-2d) mod 2^64
    ce = _ONE - two * e
    c = ((mp >> b63) & _ONE) ^ h
    cc = _ONE - two * c

    de = d * e
    x_parts = []
    y_parts = []
    yx_parts = []
    for j in range(2):
        x = (d * ce * mono["b"][j] + e * cd * mono["a"][j] + cd * ce * mono["ab"][j])
        if j == 0:
            x = x + de
        y = cc * mono["g"][j]
        if j == 0:
            y = y + c
        yx = cc * (de * mono["g"][j] + d * ce * mono["gb"][j]
                   + e * cd * mono["ga"][j] + cd * ce * mono["gab"][j]) + c * x
        x_parts.append(x)
        y_parts.append(y)
        yx_parts.append(yx)

    s0 = y_parts[0] + x_parts[0] - two * yx_parts[0]
    s1 = y_parts[1] + x_parts[1] - two * yx_parts[1]
    return SharedTensor(s0, s1, cfg=z.cfg, fb=0)


def sec_compare(session: Session, phase: str, x: SharedTensor, y: SharedTensor,
                bundle: CompareBundle | None = None) -> SharedTensor:
    """Share of the bit (x < y); operands must be in the signed range."""
    if x.fb != y.fb:
        raise ValueError("operands must carry equal fractional bits")
    return sec_sign(session, phase, x - y, bundle=bundle)


def sec_relu(session: Session, phase: str, x: SharedTensor) -> SharedTensor:
    """x * [x > 0]; the bit multiply needs no truncation."""
    from .linear import sec_mul

    pos = sec_sign(session, phase, -x)  # [-x < 0] == [x > 0]
    return sec_mul(session, phase, x, pos)


def sec_max(session: Session, phase: str, v: SharedTensor, axis: int = -1,
            keepdims: bool = False) -> SharedTensor:
    """Tree-reduction maximum along one axis; ceil(log2 n) comparison levels."""
    from .linear import sec_mul

    if v.shape == () or v.size == 0:
        raise ValueError("sec_max needs at least one element")
    axis = axis % v.ndim
    cur = v._wrap(np.moveaxis(v.s0, axis, -1).copy(), np.moveaxis(v.s1, axis, -1).copy())
    while cur.shape[-1] > 1:
        n = cur.shape[-1]
        half = n // 2
        a = cur[..., : 2 * half : 2].copy()
        b = cur[..., 1 : 2 * half : 2].copy()
        lt = sec_compare(session, phase, a, b)
        mx = a + sec_mul(session, phase, b - a, lt)
        if n % 2:
            mx = SharedTensor.concat([mx, cur[..., -1:].copy()], axis=-1)
        cur = mx
    out0 = np.moveaxis(cur.s0, -1, axis)
    out1 = np.moveaxis(cur.s1, -1, axis)
    if not keepdims:
        out0, out1 = out0.squeeze(axis), out1.squeeze(axis)
    return SharedTensor(out0, out1, cfg=v.cfg, fb=v.fb)


# ---------------------------------------------------------------------------
# iterative kernels
# ---------------------------------------------------------------------------

def sec_exp(session: Session, phase: str, x: SharedTensor, squarings: int = 8,
            extra_bits: int | None = None) -> SharedTensor:
    """Repeated-squaring approximant of e^x: (1 + x/2^n)^(2^n), n=8.

    Valid for decoded x in [-16, 8]; far below that range the result
    underflows benignly to 0, above it the ring overflows (documented, not
    trapped).  Exactly `squarings` online rounds.

    By default the chain runs at +8 internal fractional bits, which keeps the
    amplified truncation noise under ~1e-3 across [-4, 4] at the price of a
    ~1e-4 per-sample chance of one large local-truncation error.  Iterative
    callers (reciprocal, inverse root) pass extra_bits=0: their Newton loops
    erase initializer noise, and at base precision the truncation-failure
    odds drop below 1e-9 per element, which matters when one forward pass
    exponentiates tens of thousands of elements.
    """
    cfg = x.cfg
    if extra_bits is None:
        extra_bits = 8
    fp = min(cfg.f + extra_bits, 24)
    from .linear import sec_mul

    lift = fp - x.fb - squarings
    if lift >= 0:
        # x * 2^lift reinterpreted at scale fp IS x / 2^squarings, exactly
        xs_ = x.shift_fb(lift)
        y = SharedTensor(xs_.s0, xs_.s1, cfg=cfg, fb=fp)
    else:
        xe = x.shift_fb(fp - x.fb) if fp > x.fb else x
        y = xe.div_pow2(squarings)
    y = y.add_public(1.0)
    for step in range(squarings):
        # the last squaring truncates straight to the output scale, saving
        # one rounding step
        target = cfg.f if step == squarings - 1 else fp
        y = sec_mul(session, phase, y, y, out_fb=target)
    return y


def exp_oracle(x, squarings: int = 8):
    """The same approximant evaluated in float arithmetic (test oracle)."""
    return (1.0 + np.asarray(x, dtype=np.float64) / 2.0**squarings) ** (2.0**squarings)


def sec_reciprocal(session: Session, phase: str, x: SharedTensor,
                   iters: int = 10) -> SharedTensor:
    """Newton 1/x: y <- y*(2 - x*y), y0 = 3*e^(1/2 - x) + 0.003, 10 iterations.

    Converges for decoded x in roughly (0.05, 600); non-positive inputs give
    unspecified values.
    """
    from .linear import sec_mul

    y = sec_exp(session, phase, (-x).add_public(0.5), extra_bits=0)
    y = y.mul_public(3.0).add_public(0.003)
    for _ in range(iters):
        xy = sec_mul(session, phase, x, y)
        y = sec_mul(session, phase, y, (-xy).add_public(2.0))
    return y


def reciprocal_oracle(x, iters: int = 10):
    x = np.asarray(x, dtype=np.float64)
    y = 3.0 * exp_oracle(0.5 - x) + 0.003
    for _ in range(iters):
        y = y * (2.0 - x * y)
    return y


def sec_rsqrt(session: Session, phase: str, x: SharedTensor, iters: int = 3) -> SharedTensor:
    """Newton x^(-1/2): y <- y*(1.5 - 0.5*x*y^2), y0 = e^(-2.2(x/2+0.2)) + 0.198046875.

    Three iterations match the square-root contract; they only converge well
    for x around [0.7, 50], so wide-domain callers (layer norm) pass more.
    """
    from .linear import sec_mul

    y = sec_exp(session, phase, x.mul_public(-1.1).add_public(-0.44), extra_bits=0)
    y = y.add_public(0.198046875)
    for _ in range(iters):
        y2 = sec_mul(session, phase, y, y)
        xy2 = sec_mul(session, phase, x, y2)
        y = sec_mul(session, phase, y, xy2.mul_public(-0.5).add_public(1.5))
    return y


def rsqrt_oracle(x, iters: int = 3):
    x = np.asarray(x, dtype=np.float64)
    y = exp_oracle(-2.2 * (x / 2.0 + 0.2)) + 0.198046875
    for _ in range(iters):
        y = y * (1.5 - 0.5 * x * y * y)
    return y


def sec_sqrt(session: Session, phase: str, x: SharedTensor, iters: int = 3) -> SharedTensor:
    """sqrt(x) = x * rsqrt(x) with the 3-iteration inverse root."""
    from .linear import sec_mul

    return sec_mul(session, phase, x, sec_rsqrt(session, phase, x, iters=iters))


def sqrt_oracle(x, iters: int = 3):
    return np.asarray(x, dtype=np.float64) * rsqrt_oracle(x, iters=iters)


def sec_div(session: Session, phase: str, x: SharedTensor, y: SharedTensor,
            iters: int = 10) -> SharedTensor:
    """x / y as x * reciprocal(y); inherits the reciprocal domain."""
    from .linear import sec_mul

    return sec_mul(session, phase, x, sec_reciprocal(session, phase, y, iters=iters))


# ---------------------------------------------------------------------------
# cosine
# ---------------------------------------------------------------------------

# 2*pi to 60 decimal places; enough precision for an exact 128-bit reciprocal
_TWO_PI = Fraction(
    6283185307179586476925286766559005768394338798750211641949889, 10**60
)
_RECENTER_RAD = 1 << 20  # public shift making the shared angle positive
_MASK64 = (1 << 64) - 1


def _angle_factor(f: int) -> int:
    """floor(2^(128-f) / (2*pi)): radians-at-scale-f -> binary angle units."""
    return int((Fraction(1 << (128 - f)) / _TWO_PI))


def _to_angle_units(words: np.ndarray, c_fix: int) -> np.ndarray:
    """floor(w * c_fix / 2^64) mod 2^64, exact via big-int arithmetic."""
    flat = words.reshape(-1).tolist()
    out = [((v * c_fix) >> 64) & _MASK64 for v in flat]
    return np.array(out, dtype=_U64).reshape(words.shape)


@np.errstate(over="ignore")
def sec_cosine(session: Session, phase: str, x: SharedTensor,
               mask: CosineMask | None = None) -> SharedTensor:
    """cos(x) with one online round and one ring element sent per party.

    Requires decoded |x| < 2^20.  The revealed delta is uniform over the
    period regardless of x because the mask t is uniform over the full angle
    ring.
    """
    cfg = x.cfg
    if x.fb != cfg.f:
        raise ValueError("cosine expects standard fixed-point operands")
    if mask is None:
        mask = session.dealer.take_cosine(x.shape)
    if tuple(mask.shape) != tuple(x.shape):
        raise ValueError(f"mask shape {mask.shape} != operand shape {x.shape}")
    mask.consume()

    c_fix = _angle_factor(cfg.f)
    c_ring = _RECENTER_RAD << cfg.f
    a0 = _to_angle_units(x.s0 + np.uint64(c_ring), c_fix)
    a1 = _to_angle_units(x.s1, c_fix)
    # undo the recenter shift and the (almost-sure) share wrap, both public
    correction = np.uint64((c_fix + ((c_ring * c_fix) >> 64)) & _MASK64)
    a0 = a0 - correction

    d0 = a0 + mask.t[0]
    d1 = a1 + mask.t[1]
    r0, _ = session.exchange(phase, d0, d1, tag=b"COSD")
    delta = CosineMask.angle_to_radians(d0 + r0)

    p = encode(np.sin(delta), cfg)
    q = encode(np.cos(delta), cfg)
    z0 = p * mask.u[0] + q * mask.v[0]
    z1 = p * mask.u[1] + q * mask.v[1]
    raw = SharedTensor(z0, z1, cfg=cfg, fb=2 * cfg.f)
    return truncate_local(raw, cfg.f)


def sec_sine(session: Session, phase: str, x: SharedTensor,
             mask: CosineMask | None = None) -> SharedTensor:
    """sin(x) = cos(x - pi/2); the phase shift is a public offset."""
    return sec_cosine(session, phase, x.add_public(-np.pi / 2.0), mask=mask)
