"""Toy transformer encoder with prompt injection, plaintext and secret-shared.

The backbone is frozen everywhere: embedding, per-layer Q/K/V/O projections,
post-norm residual blocks (attention then feed-forward, ReLU activation),
mean pooling over non-prompt positions, and a linear classifier head.  The
same graph runs in two modes:

  * forward_plain: float64 reference, bit-replayable from (seed, input).
  * forward_secure: every weight and activation is a SharedTensor; tokens
    enter as secret one-hot rows so the embedding lookup is a Beaver matmul
    and the servers never see an id.

Layer norm composes the generic square-root/reciprocal machinery: the
variance is quarter-scaled into the inverse-root iteration's convergent
domain and given enough iterations to actually converge there, since the
3-step curve only tracks mid-range inputs.

A dry-run on a throwaway session counts every triple, mask, and comparison
bundle a forward consumes, so a real session can be provisioned offline and
then run with a strict dealer (no online generation).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .attention import RfaParams, rfa_ref, sec_rfa, sec_softmax_attention, softmax_attention_ref
from .linear import sec_matmul, sec_mul
from .nonlinear import sec_relu, sec_rsqrt
from .ring import decode, encode, serialize_tensor, deserialize_tensor
from .runtime import CLIENT, DEALER, S0, S1, Session
from .shared import SharedTensor, share_tensor

__all__ = [
    "ModelConfig",
    "ModelWeights",
    "PromptBlock",
    "build_model",
    "forward_plain",
    "forward_secure",
    "layernorm_plain",
    "layernorm_secure",
    "share_model",
    "share_prompt",
    "share_tokens",
    "tokens_to_onehot",
    "plan_forward",
    "save_weights",
    "load_weights",
    "load_tokens",
]

FWD = "forward"


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    d_model: int = 32
    heads: int = 2
    d_ff: int = 64
    vocab: int = 16
    n_max: int = 32
    n_classes: int = 2
    attention_kind: str = "rfa"  # or "softmax"
    rfa_features: int = 64
    rfa_sigma: float = 1.0
    activation: str = "relu"
    eps_ln: float = 1e-2

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.vocab < 2:
            raise ValueError("vocab must be >= 2")
        if self.attention_kind not in ("rfa", "softmax"):
            raise ValueError(f"unknown attention kind {self.attention_kind}")
        if self.activation != "relu":
            raise ValueError("only relu is supported")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads


@dataclass
class PromptBlock:
    """n_p prompt token embeddings prepended to every sequence."""

    emb: np.ndarray  # (n_p, d_model)

    @property
    def n_p(self) -> int:
        return self.emb.shape[0]

    @classmethod
    def from_vector(cls, p: np.ndarray, n_p: int, d_model: int) -> "PromptBlock":
        p = np.asarray(p, dtype=np.float64)
        if p.size != n_p * d_model:
            raise ValueError(f"prompt vector of size {p.size} != {n_p}*{d_model}")
        return cls(p.reshape(n_p, d_model))


@dataclass
class ModelWeights:
    """Named weight tensors plus the config and init seed they came from.

    Forward-only on purpose: there is no gradient state and no backward
    entry point anywhere in this module.
    """

    cfg: ModelConfig
    seed: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value):
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def rfa_params(self, layer: int) -> RfaParams:
        return _rfa_params(self.cfg, self.seed, layer)


def _rfa_params(cfg: ModelConfig, seed: int, layer: int) -> RfaParams:
    """Per-head feature maps, regenerated from the public (seed, layer, head)."""
    return RfaParams.stack([
        RfaParams.from_seed(seed, cfg.rfa_features, cfg.d_head, cfg.rfa_sigma,
                            layer=layer, head=h)
        for h in range(cfg.heads)
    ])


def _weight_names(cfg: ModelConfig):
    yield "emb", (cfg.vocab, cfg.d_model)
    for i in range(cfg.layers):
        for nm in ("wq", "wk", "wv", "wo"):
            yield f"layer{i}.{nm}", (cfg.d_model, cfg.d_model)
        yield f"layer{i}.ln1_g", (cfg.d_model,)
        yield f"layer{i}.ln1_b", (cfg.d_model,)
        yield f"layer{i}.w1", (cfg.d_model, cfg.d_ff)
        yield f"layer{i}.b1", (cfg.d_ff,)
        yield f"layer{i}.w2", (cfg.d_ff, cfg.d_model)
        yield f"layer{i}.b2", (cfg.d_model,)
        yield f"layer{i}.ln2_g", (cfg.d_model,)
        yield f"layer{i}.ln2_b", (cfg.d_model,)
    yield "head_w", (cfg.n_classes, cfg.d_model)
    yield "head_b", (cfg.n_classes,)


def build_model(cfg: ModelConfig, seed: int = 0) -> ModelWeights:
    """Deterministic scaled-Gaussian init; layer norms start at gain 1."""
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 0xD0DE])
    w = ModelWeights(cfg=cfg, seed=seed)
    for name, shape in _weight_names(cfg):
        if name.endswith(("ln1_g", "ln2_g")):
            w[name] = np.ones(shape)
        elif name.endswith(("_b", ".b1", ".b2")) or name.endswith("ln1_b") or name.endswith("ln2_b"):
            w[name] = np.zeros(shape)
        elif name == "emb":
            w[name] = rng.normal(0.0, 1.0, size=shape)
        else:
            fan_in = shape[0]
            w[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
    return w


def layernorm_plain(x, gain, bias, eps: float = 1e-2) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def tokens_to_onehot(tokens, vocab: int) -> np.ndarray:
    t = np.asarray(tokens, dtype=np.int64)
    if np.any(t < 0) or np.any(t >= vocab):
        raise ValueError("token id out of vocabulary")
    return np.eye(vocab, dtype=np.float64)[t]


def forward_plain(w: ModelWeights, tokens, prompt: PromptBlock | None = None) -> np.ndarray:
    """Reference forward: (B, n) int tokens -> (B, C) logits.

    Accepts a single sequence as shape (n,) and returns (C,).
    """
    cfg = w.cfg
    tok = np.asarray(tokens, dtype=np.int64)
    single = tok.ndim == 1
    if single:
        tok = tok[None, :]
    batch, n = tok.shape
    n_p = prompt.n_p if prompt is not None else 0
    if n + n_p > cfg.n_max:
        raise ValueError(f"sequence of {n}+{n_p} exceeds n_max={cfg.n_max}")

    x = w["emb"][tok]  # (B, n, d)
    if prompt is not None:
        x = np.concatenate([np.broadcast_to(prompt.emb, (batch, n_p, cfg.d_model)), x], axis=1)

    for i in range(cfg.layers):
        x = _plain_block(w, i, x)

    pooled = x[:, n_p:, :].mean(axis=1)
    logits = pooled @ w["head_w"].T + w["head_b"]
    return logits[0] if single else logits


def _split_heads(x, heads):
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _plain_block(w: ModelWeights, i: int, x: np.ndarray) -> np.ndarray:
    cfg = w.cfg
    q = _split_heads(x @ w[f"layer{i}.wq"], cfg.heads)
    k = _split_heads(x @ w[f"layer{i}.wk"], cfg.heads)
    v = _split_heads(x @ w[f"layer{i}.wv"], cfg.heads)
    if cfg.attention_kind == "softmax":
        att = softmax_attention_ref(q, k, v)
    else:
        att = rfa_ref(q, k, v, w.rfa_params(i))
    a = _merge_heads(att) @ w[f"layer{i}.wo"]
    x = layernorm_plain(x + a, w[f"layer{i}.ln1_g"], w[f"layer{i}.ln1_b"], cfg.eps_ln)
    h = np.maximum(x @ w[f"layer{i}.w1"] + w[f"layer{i}.b1"], 0.0)
    f = h @ w[f"layer{i}.w2"] + w[f"layer{i}.b2"]
    return layernorm_plain(x + f, w[f"layer{i}.ln2_g"], w[f"layer{i}.ln2_b"], cfg.eps_ln)


# ---------------------------------------------------------------------------
# secure mode
# ---------------------------------------------------------------------------

@dataclass
class SecureModelWeights:
    cfg: ModelConfig
    seed: int
    tensors: dict[str, SharedTensor]

    def __getitem__(self, name: str) -> SharedTensor:
        return self.tensors[name]

    def rfa_params(self, layer: int) -> RfaParams:
        return _rfa_params(self.cfg, self.seed, layer)


def share_model(session: Session, w: ModelWeights, source: str = CLIENT,
                phase: str = "setup") -> SecureModelWeights:
    """Secret-share every weight tensor and ship the shares to the servers.

    source names who performs the sharing (client or dealer); either path is
    supported since the protocol only fixes that servers hold shares.
    """
    if source not in (CLIENT, DEALER):
        raise ValueError("weights must come from the client or the dealer")
    rng = session.input_rng()
    shared = {}
    for name, arr in w.tensors.items():
        st = share_tensor(arr, rng, cfg=session.cfg)
        session.send(phase, source, S0, st.s0, tag=b"WGT0")
        session.send(phase, source, S1, st.s1, tag=b"WGT1")
        shared[name] = st
    return SecureModelWeights(cfg=w.cfg, seed=w.seed, tensors=shared)


def share_tokens(session: Session, tokens, vocab: int, phase: str = FWD) -> SharedTensor:
    """Share token ids as one-hot rows (fb=0) so lookups stay oblivious."""
    oh = tokens_to_onehot(tokens, vocab)
    st = share_tensor(oh.astype(np.uint64), session.input_rng(), cfg=session.cfg,
                      fb=0, encoded=True)
    session.send(phase, CLIENT, S0, st.s0, tag=b"TOK0")
    session.send(phase, CLIENT, S1, st.s1, tag=b"TOK1")
    return st


def share_prompt(session: Session, prompt: PromptBlock, phase: str = FWD) -> SharedTensor:
    """Fresh shares of the prompt block (re-randomized every call)."""
    st = share_tensor(prompt.emb, session.input_rng(), cfg=session.cfg)
    session.send(phase, CLIENT, S0, st.s0, tag=b"PRM0")
    session.send(phase, CLIENT, S1, st.s1, tag=b"PRM1")
    return st


def layernorm_secure(session: Session, x: SharedTensor, gain: SharedTensor,
                     bias: SharedTensor, eps: float = 1e-2, iters: int = 20,
                     phase: str = FWD) -> SharedTensor:
    """(x - mean) * rsqrt(var + eps) * gain + bias over the last axis.

    The quarter-scale trick maps var + eps into the inverse-root iteration's
    convergent region; iters=20 rides the iteration to convergence across
    [1e-2, 32], which the 3-step contract curve cannot do.
    """
    mu = x.mean(axis=-1, keepdims=True)
    c = x - mu.broadcast_to(x.shape)
    sq = sec_mul(session, phase, c, c)
    var = sq.mean(axis=-1, keepdims=True)
    inv = sec_rsqrt(session, phase, var.add_public(eps).mul_public(0.25),
                    iters=iters).mul_public(0.5)
    y = sec_mul(session, phase, c, inv.broadcast_to(c.shape))
    out = sec_mul(session, phase, y, gain.broadcast_to(y.shape))
    return out + bias.broadcast_to(out.shape)


def _sec_linear(session, x: SharedTensor, w: SharedTensor, b: SharedTensor | None = None,
                phase: str = FWD) -> SharedTensor:
    """x @ w (+ b) with secret weights; x is flattened to 2-D for one triple."""
    lead = x.shape[:-1]
    x2 = x.reshape(-1, x.shape[-1])
    y = sec_matmul(session, phase, x2, w)
    y = y.reshape(*lead, w.shape[-1])
    if b is not None:
        y = y + b.broadcast_to(y.shape)
    return y


def _sec_split_heads(x: SharedTensor, heads: int) -> SharedTensor:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _sec_merge_heads(x: SharedTensor) -> SharedTensor:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def forward_secure(session: Session, w: SecureModelWeights, tokens_oh: SharedTensor,
                   prompt: SharedTensor | None = None, phase: str = FWD) -> SharedTensor:
    """Secure forward pass: shared one-hot tokens (B, n, V) -> shared logits (B, C)."""
    cfg = w.cfg
    batch, n, vocab = tokens_oh.shape
    if vocab != cfg.vocab:
        raise ValueError("one-hot width != vocabulary size")
    n_p = prompt.shape[0] if prompt is not None else 0
    if n + n_p > cfg.n_max:
        raise ValueError(f"sequence of {n}+{n_p} exceeds n_max={cfg.n_max}")

    x = _sec_linear(session, tokens_oh, w["emb"], phase=phase)  # exact lookup
    if prompt is not None:
        pb = prompt.reshape(1, n_p, cfg.d_model).broadcast_to((batch, n_p, cfg.d_model))
        x = SharedTensor.concat([pb, x], axis=1)

    for i in range(cfg.layers):
        x = _secure_block(session, w, i, x, phase)

    pooled = x[:, n_p:, :].sum(axis=1).mul_public(1.0 / n)
    logits = sec_matmul(session, phase, pooled, w["head_w"].mT)
    return logits + w["head_b"].reshape(1, -1).broadcast_to(logits.shape)


def _secure_block(session, w: SecureModelWeights, i: int, x: SharedTensor,
                  phase: str) -> SharedTensor:
    cfg = w.cfg
    q = _sec_split_heads(_sec_linear(session, x, w[f"layer{i}.wq"], phase=phase), cfg.heads)
    k = _sec_split_heads(_sec_linear(session, x, w[f"layer{i}.wk"], phase=phase), cfg.heads)
    v = _sec_split_heads(_sec_linear(session, x, w[f"layer{i}.wv"], phase=phase), cfg.heads)
    if cfg.attention_kind == "softmax":
        att = sec_softmax_attention(session, phase, q, k, v)
    else:
        att = sec_rfa(session, phase, q, k, v, w.rfa_params(i))
    a = _sec_linear(session, _sec_merge_heads(att), w[f"layer{i}.wo"], phase=phase)
    x = layernorm_secure(session, x + a, w[f"layer{i}.ln1_g"], w[f"layer{i}.ln1_b"],
                         cfg.eps_ln, phase=phase)
    h = _sec_linear(session, x, w[f"layer{i}.w1"], w[f"layer{i}.b1"], phase=phase)
    h = sec_relu(session, phase, h)
    f = _sec_linear(session, h, w[f"layer{i}.w2"], w[f"layer{i}.b2"], phase=phase)
    return layernorm_secure(session, x + f, w[f"layer{i}.ln2_g"], w[f"layer{i}.ln2_b"],
                            cfg.eps_ln, phase=phase)


def plan_forward(cfg: ModelConfig, batch: int, n: int, n_p: int, seed: int = 0) -> Counter:
    """Dry-run one secure forward on a throwaway session and return the
    dealer consumption plan (what to provision per forward call)."""
    s = Session(seed=seed)
    w = build_model(cfg, seed)
    sw = share_model(s, w)
    tokens = np.zeros((batch, n), dtype=np.int64)
    oh = share_tokens(s, tokens, cfg.vocab)
    prompt = None
    if n_p:
        prompt = share_prompt(s, PromptBlock(np.zeros((n_p, cfg.d_model))))
    before = Counter(s.dealer.consumed)
    forward_secure(s, sw, oh, prompt)
    return s.dealer.consumption_since(before)


# ---------------------------------------------------------------------------
# weight files: ring-serialized tensors + JSON manifest
# ---------------------------------------------------------------------------

def save_weights(w: ModelWeights, path: str):
    from .ring import DEFAULT_CONFIG

    blob = bytearray()
    manifest = {"seed": w.seed, "cfg": w.cfg.__dict__, "tensors": []}
    for name in sorted(w.tensors):
        arr = encode(w.tensors[name], DEFAULT_CONFIG)
        data = serialize_tensor(arr)
        manifest["tensors"].append(
            {"name": name, "shape": list(w.tensors[name].shape),
             "dtype": "fixed64.16", "offset": len(blob), "length": len(data)}
        )
        blob += data
    with open(path, "wb") as fh:
        fh.write(blob)
    with open(path + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_tokens(path: str) -> list[np.ndarray]:
    """Token input files: whitespace-separated integer ids, one sequence per line."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(np.array([int(t) for t in line.split()], dtype=np.int64))
    return out


def load_weights(path: str) -> ModelWeights:
    from .ring import DEFAULT_CONFIG

    with open(path + ".json") as fh:
        manifest = json.load(fh)
    with open(path, "rb") as fh:
        blob = fh.read()
    cfg = ModelConfig(**manifest["cfg"])
    w = ModelWeights(cfg=cfg, seed=manifest["seed"])
    for t in manifest["tensors"]:
        arr, _ = deserialize_tensor(blob, t["offset"])
        w.tensors[t["name"]] = decode(arr, DEFAULT_CONFIG)
    return w
