"""Interactive linear protocols: Beaver multiplication and matrix products.

Multiplication of shares [u], [v] consumes a dealer triple (a, b, c=a*b):
both parties mask and open d = u - a and e = v - b in a single round, then
assemble [u*v]_j = -j*d*e + [u]_j*e + d*[v]_j + [c]_j locally.  A scalar
multiply therefore moves two ring elements per party (256 bits total at
ell=64).  The matrix variant opens the masked operand matrices in one batched
round regardless of their size, does ring matmuls locally, and truncates once
per output element.

Addition and public affine maps are in shared.py (they cost nothing).
"""

from __future__ import annotations

import numpy as np

from .runtime import BeaverTriple, MatmulTriple, Session
from .shared import SharedTensor, truncate_local

__all__ = ["sec_add", "sec_mul", "sec_matmul", "sec_affine_public"]


def sec_add(x: SharedTensor, y: SharedTensor) -> SharedTensor:
    """Local share addition; zero communication."""
    return x + y


def _target_fb(x, y, out_fb, truncate):
    raw = x.fb + y.fb
    if not truncate:
        return raw
    if out_fb is not None:
        return out_fb
    return min(raw, x.cfg.f) if min(x.fb, y.fb) == 0 else x.cfg.f


@np.errstate(over="ignore")  # ring arithmetic wraps by design
def sec_mul(
    session: Session,
    phase: str,
    x: SharedTensor,
    y: SharedTensor,
    triple: BeaverTriple | None = None,
    truncate: bool = True,
    out_fb: int | None = None,
) -> SharedTensor:
    """Elementwise product of two shared tensors; one online round.

    A fb=0 operand (a bit, a one-hot row) needs no rescale, so truncation
    adapts to the operands' combined fractional bits.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if triple is None:
        triple = session.dealer.take_mul(x.shape)
    if tuple(triple.shape) != tuple(x.shape):
        raise ValueError(f"triple shape {triple.shape} != operand shape {x.shape}")
    triple.consume()
    a, b, c = triple.a, triple.b, triple.c

    d0, d1 = x.s0 - a[0], x.s1 - a[1]
    e0, e1 = y.s0 - b[0], y.s1 - b[1]
    p0 = np.stack([d0, e0])
    p1 = np.stack([d1, e1])
    r0, r1 = session.exchange(phase, p0, p1, tag=b"BMUL")
    d = d0 + r0[0]
    e = e0 + r0[1]
    assert d.shape == x.shape

    z0 = x.s0 * e + d * y.s0 + c[0]
    z1 = x.s1 * e + d * y.s1 + c[1] - d * e  # the -j*d*e term, party 1 only
    raw = SharedTensor(z0, z1, cfg=x.cfg, fb=x.fb + y.fb)
    return truncate_local(raw, raw.fb - _target_fb(x, y, out_fb, truncate))


@np.errstate(over="ignore")
def sec_matmul(
    session: Session,
    phase: str,
    x: SharedTensor,
    y: SharedTensor,
    triple: MatmulTriple | None = None,
    truncate: bool = True,
    out_fb: int | None = None,
) -> SharedTensor:
    """Matrix product of shared tensors (batch dims broadcast like matmul).

    One online round for any operand size: the masked matrices D and E travel
    together, (n*k + k*m) ring elements per party.
    """
    if x.shape[-1] != y.shape[-2]:
        raise ValueError(f"inner dims disagree: {x.shape} @ {y.shape}")
    if x.shape[:-2] != y.shape[:-2]:
        raise ValueError(f"batch dims disagree: {x.shape} vs {y.shape}")
    if triple is None:
        triple = session.dealer.take_matmul(x.shape, y.shape)
    if tuple(triple.a_shape) != tuple(x.shape) or tuple(triple.b_shape) != tuple(y.shape):
        raise ValueError("matmul triple shaped for different operands")
    triple.consume()
    a, b, c = triple.a, triple.b, triple.c

    d0, d1 = x.s0 - a[0], x.s1 - a[1]
    e0, e1 = y.s0 - b[0], y.s1 - b[1]
    p0 = np.concatenate([d0.ravel(), e0.ravel()])
    p1 = np.concatenate([d1.ravel(), e1.ravel()])
    r0, _ = session.exchange(phase, p0, p1, tag=b"BMM ")
    d = d0 + r0[: d0.size].reshape(d0.shape)
    e = e0 + r0[d0.size :].reshape(e0.shape)

    z0 = np.matmul(x.s0, e) + np.matmul(d, y.s0) + c[0]
    z1 = np.matmul(x.s1, e) + np.matmul(d, y.s1) + c[1] - np.matmul(d, e)
    raw = SharedTensor(z0, z1, cfg=x.cfg, fb=x.fb + y.fb)
    return truncate_local(raw, raw.fb - _target_fb(x, y, out_fb, truncate))


def sec_outer(session, phase, x: SharedTensor, y: SharedTensor, **kw) -> SharedTensor:
    """Outer product via column-by-row matmul shapes."""
    return sec_matmul(
        session, phase, x.reshape(*x.shape, 1), y.reshape(*y.shape[:-1], 1, y.shape[-1]), **kw
    )


def sec_affine_public(x: SharedTensor, p, q=None, y: SharedTensor | None = None,
                      const=0.0) -> SharedTensor:
    """p*x (+ q*y) (+ const) with public coefficients; zero communication."""
    out = x.mul_public(p)
    if y is not None:
        out = out + y.mul_public(q if q is not None else 1.0)
    if np.any(np.asarray(const) != 0):
        out = out.add_public(const)
    return out
