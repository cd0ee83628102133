"""Softmax attention and its random-feature approximation, plain and secure.

The plaintext functions are the references every secure variant is tested
against.  Random feature attention replaces the exponential kernel with the
Monte-Carlo estimator

    phi(x) = sqrt(2/M) * cos(W x + b),   rows of W ~ N(0, I/sigma^2),
    b ~ U(0, 2pi),   E[phi(x)^T phi(y)] -> exp((x^T y - 1)/sigma^2)

for unit-norm x, y.  Queries and keys are L2-normalized first so the
norm-dependent prefactor of the kernel estimate is one constant that cancels
in the attention ratio; phi_features can still apply it for direct kernel
experiments.  The feature accumulators make time, memory, and (in the secure
path) communication linear in sequence length, against the quadratic cost of
the softmax path.

Secure variants run on SharedTensors: the projection Wx + b is local because
(W, b) are public via a common seed, the cosine costs one round per feature
tensor, and the remaining products are Beaver matmuls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linear import sec_matmul, sec_mul
from .nonlinear import sec_cosine, sec_exp, sec_max, sec_reciprocal, sec_relu, sec_rsqrt
from .runtime import Session
from .shared import SharedTensor

__all__ = [
    "RfaParams",
    "softmax_ref",
    "softmax_attention_ref",
    "phi_features",
    "rfa_ref",
    "normalize_rows",
    "sec_softmax_attention",
    "sec_rfa",
    "DENOM_EPS",
]

DENOM_EPS = 2.0**-10


@dataclass
class RfaParams:
    """Random feature map shared by both parties through a common seed.

    W stacks as (..., M, d_head) so multiple heads can carry independent
    feature maps drawn from (seed, layer, head).
    """

    W: np.ndarray
    b: np.ndarray
    sigma: float
    M: int
    seed: int

    @classmethod
    def from_seed(cls, seed: int, M: int, d_head: int, sigma: float = 1.0,
                  layer: int = 0, head: int = 0) -> "RfaParams":
        rng = np.random.default_rng([seed & 0x7FFFFFFF, layer, head, 0x5EED])
        w = rng.normal(0.0, 1.0 / sigma, size=(M, d_head))
        b = rng.uniform(0.0, 2.0 * np.pi, size=M)
        return cls(W=w, b=b, sigma=sigma, M=M, seed=seed)

    @classmethod
    def stack(cls, parts: list["RfaParams"]) -> "RfaParams":
        first = parts[0]
        return cls(
            W=np.stack([p.W for p in parts]),
            b=np.stack([p.b for p in parts]),
            sigma=first.sigma,
            M=first.M,
            seed=first.seed,
        )


def softmax_ref(x, axis: int = -1) -> np.ndarray:
    """Max-stabilized softmax; rows sum to one and never overflow."""
    x = np.asarray(x, dtype=np.float64)
    t = x - x.max(axis=axis, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_attention_ref(q, k, v) -> np.ndarray:
    """softmax(q k^T / sqrt(d)) v over the last two axes; batch dims pass through."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) / np.sqrt(q.shape[-1])
    return np.matmul(softmax_ref(scores), v)


def normalize_rows(x, eps: float = 1e-12) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / (np.linalg.norm(x, axis=-1, keepdims=True) + eps)


def phi_features(x, params: RfaParams, prefactor: bool = False) -> np.ndarray:
    """sqrt(2/M) cos(Wx + b) for x of shape (..., d_head) -> (..., M).

    With prefactor=True the exp(||x||^2 / (2 sigma^2)) factor of the
    unnormalized kernel estimator is applied; attention paths skip it because
    unit-normalized inputs make it a constant that cancels in the ratio.
    """
    x = np.asarray(x, dtype=np.float64)
    b = params.b if params.b.ndim == 1 else np.expand_dims(params.b, -2)
    proj = np.matmul(x, np.swapaxes(params.W, -1, -2)) + b
    out = np.sqrt(2.0 / params.M) * np.cos(proj)
    if prefactor:
        nrm = (x * x).sum(axis=-1, keepdims=True)
        out = out * np.exp(nrm / (2.0 * params.sigma**2))
    return out


def _den_floor(n: int) -> float:
    """Lower clamp for the feature-sum denominator.

    Healthy unit-norm inputs keep it above n*exp(-2/sigma^2); collapsed or
    adversarial geometries can drive the Monte-Carlo estimate to zero or
    below, where the Newton reciprocal diverges, so the ratio is floored an
    order of magnitude under the healthy band instead.
    """
    return 0.02 * n


def rfa_ref(q, k, v, params: RfaParams, normalize: bool = True,
            eps: float = DENOM_EPS) -> np.ndarray:
    """Random feature attention via the two accumulators; linear in n.

    Builds sum_i phi(k_i) (x) v_i  (an M x d matrix) and sum_j phi(k_j) once,
    then answers every query with one matvec and a guarded ratio.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if normalize:
        q = normalize_rows(q)
        k = normalize_rows(k)
    pq = phi_features(q, params)                       # (..., n, M)
    pk = phi_features(k, params)
    z = np.matmul(np.swapaxes(pk, -1, -2), v)          # (..., M, d)
    s = pk.sum(axis=-2, keepdims=True)                 # (..., 1, M)
    num = np.matmul(pq, z)                             # (..., n, d)
    den = np.matmul(pq, np.swapaxes(s, -1, -2))        # (..., n, 1)
    return num / np.maximum(den + eps, _den_floor(k.shape[-2]))


# ---------------------------------------------------------------------------
# secure variants
# ---------------------------------------------------------------------------

def sec_softmax_attention(session: Session, phase: str, q: SharedTensor,
                          k: SharedTensor, v: SharedTensor) -> SharedTensor:
    """Secure softmax attention: max-stabilize, exponentiate, divide, weigh.

    Communication is quadratic in sequence length (scores, exps, and the
    probability matrix are all n x n).
    """
    d = q.shape[-1]
    n = k.shape[-2]
    scores = sec_matmul(session, phase, q, k.mT).mul_public(1.0 / np.sqrt(d))
    tau = sec_max(session, phase, scores, axis=-1, keepdims=True)
    # stabilized scores are <= 0, so base precision is both accurate enough
    # under the attention error budget and truncation-failure safe at n^2 scale
    e = sec_exp(session, phase, scores - tau.broadcast_to(scores.shape), extra_bits=0)
    den = e.sum(axis=-1, keepdims=True)                # rows include e^0 = 1
    rec = _sec_reciprocal_scaled(session, phase, den, upper=float(n))
    probs = sec_mul(session, phase, e, rec.broadcast_to(e.shape))
    return sec_matmul(session, phase, probs, v)


def _sec_reciprocal_scaled(session, phase, x: SharedTensor, upper: float) -> SharedTensor:
    """1/x for x in (0, upper]: public pre-scale keeps the Newton
    initializer's exponential argument in range for large sums."""
    kscale = max(1.0, upper / 8.0)
    rec = sec_reciprocal(session, phase, x.mul_public(1.0 / kscale))
    return rec.mul_public(1.0 / kscale)


def _sec_unitize(session, phase, x: SharedTensor, iters: int) -> SharedTensor:
    """Row-normalize shares to unit L2 norm.

    Pre-scales by 1/sqrt(d) (free: normalization is scale-invariant) and
    quarter-scales the squared norm so the inverse-root iteration stays in
    its convergent domain.
    """
    d = x.shape[-1]
    xs = x.mul_public(1.0 / np.sqrt(d))
    sq = sec_mul(session, phase, xs, xs)
    nsq = sq.sum(axis=-1, keepdims=True).add_public(1e-3)  # degenerate-row guard
    inv = sec_rsqrt(session, phase, nsq.mul_public(0.25), iters=iters).mul_public(0.5)
    return sec_mul(session, phase, xs, inv.broadcast_to(xs.shape))


def sec_features(session: Session, phase: str, x: SharedTensor,
                 params: RfaParams) -> SharedTensor:
    """Secure feature map: public projection, one cosine round, public scale."""
    b = params.b if params.b.ndim == 1 else np.expand_dims(params.b, -2)
    pre = x.matmul_public(np.swapaxes(params.W, -1, -2)).add_public(b)
    return sec_cosine(session, phase, pre).mul_public(np.sqrt(2.0 / params.M))


def sec_rfa(session: Session, phase: str, q: SharedTensor, k: SharedTensor,
            v: SharedTensor, params: RfaParams, eps: float = DENOM_EPS,
            norm_iters: int = 20) -> SharedTensor:
    """Secure random feature attention; communication linear in n.

    The key-sum column rides along as an extra matmul column so numerator and
    denominator share one Beaver round.
    """
    d = v.shape[-1]
    qn = _sec_unitize(session, phase, q, norm_iters)
    kn = _sec_unitize(session, phase, k, norm_iters)
    pq = sec_features(session, phase, qn, params)      # (..., n, M)
    pk = sec_features(session, phase, kn, params)
    z = sec_matmul(session, phase, pk.mT, v)           # (..., M, d)
    s = pk.sum(axis=-2, keepdims=True)                 # (..., 1, M)
    aug = SharedTensor.concat([z, s.mT], axis=-1)      # (..., M, d+1)
    nm = sec_matmul(session, phase, pq, aug)           # (..., n, d+1)
    num = nm[..., :d].copy()
    den = nm[..., d:].copy()
    n = k.shape[-2]
    floor = _den_floor(n)
    # max(den + eps, floor) = floor + relu(den + eps - floor)
    den = sec_relu(session, phase, den.add_public(eps - floor)).add_public(floor)
    rec = _sec_reciprocal_scaled(session, phase, den, upper=float(n))
    return sec_mul(session, phase, num, rec.broadcast_to(num.shape))
