"""Client-side forward-only prompt tuning.

The client owns a frozen random projection A (D x d) and searches the small
subspace with CMA-ES.  One generation runs the loop: sample candidates, clip
to the search box, lift each z to a prompt p = A z, share p freshly to the
servers, let them run the secure forward, collect the logit shares,
reconstruct, and score with plaintext cross-entropy.  The servers never
execute a backward pass or an optimizer step; the ledger keeps explicit
"backward" and "optimizer" rows that stay at zero, next to the forward
traffic this loop actually generates.

A plaintext driver with the same seed discipline mirrors the loop for
oracle runs and fixed-point drift measurements.
"""

from __future__ import annotations

import csv as _csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .cma import cma_ask, cma_init, cma_tell, default_lambda
from .model import (
    ModelConfig,
    ModelWeights,
    PromptBlock,
    SecureModelWeights,
    forward_plain,
    forward_secure,
    share_prompt,
    share_tokens,
)
from .ring import decode, reconstruct
from .runtime import CLIENT, S0, S1, Session

__all__ = [
    "ProjectionMatrix",
    "TuneConfig",
    "TuneRecord",
    "init_projection",
    "project",
    "client_loss",
    "PlainForwardDriver",
    "SecureForwardDriver",
    "tune",
    "load_dataset",
    "save_dataset",
    "make_separable_task",
]

Z_BOX = 5.0        # candidates are clipped to [-Z_BOX, Z_BOX]^d before projection
PROMPT_CLIP = 3.0  # projected prompt entries stay inside backbone statistics


@dataclass
class ProjectionMatrix:
    """Frozen random lift A: R^d -> R^D with entries U(-1/sqrt(d), 1/sqrt(d))."""

    A: np.ndarray
    seed: int

    @property
    def D(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]


def init_projection(D: int, d: int, seed: int) -> ProjectionMatrix:
    if d >= D:
        raise ValueError(f"subspace dim {d} must be smaller than prompt dim {D}")
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 0xA0])
    s = 1.0 / np.sqrt(d)
    return ProjectionMatrix(A=rng.uniform(-s, s, size=(D, d)), seed=seed)


def project(proj: ProjectionMatrix, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (proj.d,):
        raise ValueError(f"expected z of shape ({proj.d},), got {z.shape}")
    return proj.A @ z


def client_loss(logits, label: int) -> float:
    """Cross-entropy with max-stabilized log-sum-exp."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} out of range for {z.size} classes")
    m = z.max()
    return float(np.log(np.exp(z - m).sum()) + m - z[label])


def _batch_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    m = logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(logits - m).sum(axis=-1)) + m[:, 0]
    return float((lse - logits[np.arange(len(labels)), labels]).mean())


# ---------------------------------------------------------------------------
# forward drivers (the only model surface the tuning loop may touch)
# ---------------------------------------------------------------------------

class PlainForwardDriver:
    """Evaluates prompts against the plaintext reference model."""

    def __init__(self, weights: ModelWeights, tokens: np.ndarray):
        self.weights = weights
        self.tokens = np.asarray(tokens, dtype=np.int64)
        self.forward_calls = 0

    def logits(self, prompt: PromptBlock) -> np.ndarray:
        self.forward_calls += 1
        return forward_plain(self.weights, self.tokens, prompt)

    def comm_bytes(self) -> int:
        return 0


class SecureForwardDriver:
    """Shares each candidate prompt freshly and runs the secure forward.

    Logit shares come back to the client over the forward phase; nothing is
    ever ledgered under backward or optimizer, and those rows exist so the
    zeros are visible in reports.
    """

    def __init__(self, session: Session, weights: SecureModelWeights, tokens: np.ndarray):
        self.session = session
        self.weights = weights
        self.tokens = np.asarray(tokens, dtype=np.int64)
        self.forward_calls = 0
        for party in (S0, S1):
            session.ledger.touch("backward", party)
            session.ledger.touch("optimizer", party)
        self._tokens_shared = share_tokens(session, self.tokens, weights.cfg.vocab)

    def logits(self, prompt: PromptBlock) -> np.ndarray:
        self.forward_calls += 1
        s = self.session
        sp = share_prompt(s, prompt)
        shared = forward_secure(s, self.weights, self._tokens_shared, sp)
        s.send("forward", S0, CLIENT, shared.s0, tag=b"LGT0")
        s.send("forward", S1, CLIENT, shared.s1, tag=b"LGT1")
        ring = reconstruct(shared.share(0), shared.share(1))
        return decode(ring, s.cfg, f=shared.fb)

    def comm_bytes(self) -> int:
        return self.session.ledger.bytes_sent("forward")


# ---------------------------------------------------------------------------
# records, configs, datasets
# ---------------------------------------------------------------------------

@dataclass
class TuneConfig:
    d: int = 16
    n_p: int = 4
    lam: int | None = None
    generations: int = 50
    seed: int = 0
    step_init: float = 1.0
    attention_kind: str = "rfa"
    M: int = 64
    sigma: float = 1.0
    network_preset: str = "lan3g"

    @classmethod
    def from_file(cls, path: str) -> "TuneConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = set(raw) - set(known)
        if unknown:
            raise ValueError(f"unknown tuning config keys: {sorted(unknown)}")
        return cls(**known)


@dataclass
class TuneRecord:
    """Per-generation telemetry for one tuning run."""

    best_loss: list[float] = field(default_factory=list)
    mean_loss: list[float] = field(default_factory=list)
    evaluations: list[int] = field(default_factory=list)
    comm_bytes: list[int] = field(default_factory=list)
    forward_count: list[int] = field(default_factory=list)
    optimizer_seconds: float = 0.0

    def append(self, best, mean, evals, comm, fwd):
        self.best_loss.append(float(best))
        self.mean_loss.append(float(mean))
        self.evaluations.append(int(evals))
        self.comm_bytes.append(int(comm))
        self.forward_count.append(int(fwd))

    @property
    def generations(self) -> int:
        return len(self.best_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = _csv.writer(buf)
        w.writerow(["generation", "best_loss", "mean_loss", "evaluations",
                    "comm_bytes", "forward_count"])
        for g in range(self.generations):
            w.writerow([g, self.best_loss[g], self.mean_loss[g],
                        self.evaluations[g], self.comm_bytes[g], self.forward_count[g]])
        return buf.getvalue()


def save_dataset(path: str, labels, sequences):
    with open(path, "w") as fh:
        for lab, seq in zip(labels, sequences):
            fh.write(f"{int(lab)}\t{' '.join(str(int(t)) for t in seq)}\n")


def load_dataset(path: str):
    labels, seqs = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            lab, ids = line.split("\t")
            labels.append(int(lab))
            seqs.append([int(t) for t in ids.split()])
    return np.asarray(labels, dtype=np.int64), np.asarray(seqs, dtype=np.int64)


def make_separable_task(seed: int = 0, n_train: int = 32, vocab: int = 16,
                        seq_len: int = 8, classes: int = 2):
    """Two disjoint token pools, one per class; mean-pooled embeddings of
    disjoint pools are linearly separable with margin."""
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 0x7A5C])
    pool = vocab // classes
    labels = np.arange(n_train) % classes
    seqs = np.stack([
        rng.integers(lab * pool, (lab + 1) * pool, size=seq_len) for lab in labels
    ])
    return labels, seqs


# ---------------------------------------------------------------------------
# the six-step loop
# ---------------------------------------------------------------------------

def _lift(proj: ProjectionMatrix, z: np.ndarray, n_p: int, d_model: int) -> PromptBlock:
    """Search point -> prompt block: clip the box, project, clip the entries."""
    p = project(proj, np.clip(z, -Z_BOX, Z_BOX))
    return PromptBlock.from_vector(np.clip(p, -PROMPT_CLIP, PROMPT_CLIP), n_p, d_model)


def tune(driver, labels: np.ndarray, tcfg: TuneConfig, d_model: int,
         proj: ProjectionMatrix | None = None):
    """Run forward-only tuning; returns (best z, TuneRecord).

    driver exposes logits(prompt) and comm_bytes() and nothing else; the
    loop is gradient-free by construction.
    """
    if tcfg.generations <= 0:
        raise ValueError("budget must be at least one generation")
    D = tcfg.n_p * d_model
    if proj is None:
        proj = init_projection(D, tcfg.d, tcfg.seed)
    lam = tcfg.lam or default_lambda(tcfg.d)
    state = cma_init(tcfg.d, step=tcfg.step_init, lam=lam)
    rng = np.random.default_rng([tcfg.seed & 0x7FFFFFFF, 0xC3A])
    record = TuneRecord()
    best_z = np.zeros(tcfg.d)
    best_loss = np.inf
    opt_seconds = 0.0

    for _gen in range(tcfg.generations):
        candidates = cma_ask(state, rng)
        losses = np.empty(lam)
        for i, z in enumerate(candidates):
            prompt = _lift(proj, z, tcfg.n_p, d_model)
            logits = driver.logits(prompt)
            losses[i] = _batch_loss(np.atleast_2d(logits), labels)
        gen_best = losses.argmin()
        if losses[gen_best] < best_loss:
            best_loss = float(losses[gen_best])
            best_z = np.clip(candidates[gen_best], -Z_BOX, Z_BOX).copy()
        t0 = time.perf_counter()
        state = cma_tell(state, candidates, losses)
        opt_seconds += time.perf_counter() - t0
        record.append(best_loss, losses.mean(), (_gen + 1) * lam,
                      driver.comm_bytes(), driver.forward_calls)

    record.optimizer_seconds = opt_seconds
    return best_z, record


def accuracy(driver, proj: ProjectionMatrix, z: np.ndarray, labels, tcfg: TuneConfig,
             d_model: int) -> float:
    logits = np.atleast_2d(driver.logits(_lift(proj, z, tcfg.n_p, d_model)))
    return float((logits.argmax(axis=-1) == labels).mean())
