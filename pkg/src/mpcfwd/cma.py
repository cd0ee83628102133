"""Covariance Matrix Adaptation Evolution Strategy, (mu/mu_w, lambda) variant.

Standard machinery: rank-based recombination with log-decreasing weights,
cumulative step-size adaptation against the expected chi length, rank-one
plus rank-mu covariance updates, and the h_sigma stall guard.  Updates depend
on candidate *rankings* only, never on loss magnitudes, which is what makes
the search invariant under any strictly increasing transform of the losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["CmaState", "cma_init", "cma_ask", "cma_tell", "default_lambda"]


def default_lambda(d: int) -> int:
    return 4 + int(3 * np.log(d))


@dataclass
class CmaState:
    """Search distribution N(mean, step^2 * C) plus adaptation state."""

    mean: np.ndarray
    step: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int
    lam: int

    # derived strategy constants, fixed by (d, lam)
    mu: int = field(init=False)
    weights: np.ndarray = field(init=False)
    mu_eff: float = field(init=False)
    c_sigma: float = field(init=False)
    d_sigma: float = field(init=False)
    c_c: float = field(init=False)
    c_1: float = field(init=False)
    c_mu: float = field(init=False)
    chi_n: float = field(init=False)

    def __post_init__(self):
        d = self.mean.size
        self.mu = self.lam // 2
        w = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mu_eff = 1.0 / np.sum(self.weights**2)
        self.c_sigma = (self.mu_eff + 2) / (d + self.mu_eff + 5)
        self.d_sigma = (
            1 + 2 * max(0.0, np.sqrt((self.mu_eff - 1) / (d + 1)) - 1) + self.c_sigma
        )
        self.c_c = (4 + self.mu_eff / d) / (d + 4 + 2 * self.mu_eff / d)
        self.c_1 = 2 / ((d + 1.3) ** 2 + self.mu_eff)
        self.c_mu = min(
            1 - self.c_1,
            2 * (self.mu_eff - 2 + 1 / self.mu_eff) / ((d + 2) ** 2 + self.mu_eff),
        )
        self.chi_n = np.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))
        self._validate()

    def _validate(self):
        if self.step <= 0:
            raise ValueError("step size must be positive")
        evals = np.linalg.eigvalsh((self.C + self.C.T) / 2)
        if evals.min() <= 0:
            raise ValueError("covariance must be symmetric positive-definite")

    @property
    def dim(self) -> int:
        return self.mean.size

    def _decompose(self):
        c = (self.C + self.C.T) / 2
        vals, vecs = np.linalg.eigh(c)
        vals = np.maximum(vals, 1e-30)
        root = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
        inv_root = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
        return root, inv_root


def cma_init(d: int, mean=None, step: float = 0.5, lam: int | None = None) -> CmaState:
    return CmaState(
        mean=np.zeros(d) if mean is None else np.asarray(mean, dtype=np.float64).copy(),
        step=float(step),
        C=np.eye(d),
        p_sigma=np.zeros(d),
        p_c=np.zeros(d),
        generation=0,
        lam=lam or default_lambda(d),
    )


def cma_ask(state: CmaState, rng: np.random.Generator) -> np.ndarray:
    """Sample lambda candidates: mean + step * C^(1/2) * N(0, I)."""
    root, _ = state._decompose()
    z = rng.standard_normal((state.lam, state.dim))
    return state.mean + state.step * z @ root.T


def cma_tell(state: CmaState, candidates: np.ndarray, losses) -> CmaState:
    """Rank, recombine, and adapt; returns a fresh state."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != (state.lam,):
        raise ValueError(f"need {state.lam} losses, got {losses.shape}")
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses must be finite")
    candidates = np.asarray(candidates, dtype=np.float64)

    order = np.argsort(losses, kind="stable")
    sel = candidates[order[: state.mu]]
    old_mean = state.mean
    y_i = (sel - old_mean) / state.step
    y_w = state.weights @ y_i
    mean = old_mean + state.step * y_w

    _, inv_root = state._decompose()
    g = state.generation + 1
    p_sigma = (1 - state.c_sigma) * state.p_sigma + np.sqrt(
        state.c_sigma * (2 - state.c_sigma) * state.mu_eff
    ) * (inv_root @ y_w)
    norm_ps = np.linalg.norm(p_sigma)
    h_sig = float(
        norm_ps / np.sqrt(1 - (1 - state.c_sigma) ** (2 * g))
        < (1.4 + 2 / (state.dim + 1)) * state.chi_n
    )
    p_c = (1 - state.c_c) * state.p_c + h_sig * np.sqrt(
        state.c_c * (2 - state.c_c) * state.mu_eff
    ) * y_w

    rank_mu = (state.weights[:, None, None] * (y_i[:, :, None] * y_i[:, None, :])).sum(0)
    c1_term = np.outer(p_c, p_c) + (1 - h_sig) * state.c_c * (2 - state.c_c) * state.C
    C = (
        (1 - state.c_1 - state.c_mu) * state.C
        + state.c_1 * c1_term
        + state.c_mu * rank_mu
    )
    step = state.step * np.exp(
        (state.c_sigma / state.d_sigma) * (norm_ps / state.chi_n - 1)
    )

    return CmaState(
        mean=mean, step=float(step), C=(C + C.T) / 2,
        p_sigma=p_sigma, p_c=p_c, generation=g, lam=state.lam,
    )
