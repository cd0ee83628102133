"""Benchmark runners and the report schema the CLI emits.

Every row ties one measured operation to its online rounds, bytes per party,
wall-clock estimates under each network preset, and accuracy against the
matching plaintext oracle.  Rows reproduce exactly from (seed, config): the
compute term is the only wall-clock measurement and is reported in its own
column, so modeled network numbers stay deterministic.
"""

from __future__ import annotations

import csv as _csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import attention as att
from . import nonlinear as nl
from .linear import sec_matmul, sec_mul
from .runtime import NETWORK_PRESETS, Session, estimate_time
from .shared import reveal, share_tensor

__all__ = ["BenchmarkReport", "bench_protocols", "bench_attention", "fit_loglog_slope"]

SCHEMA_VERSION = 1


@dataclass
class BenchmarkReport:
    rows: list[dict] = field(default_factory=list)
    schema: int = SCHEMA_VERSION

    def add(self, **row):
        self.rows.append(row)

    def merge(self, other: "BenchmarkReport") -> "BenchmarkReport":
        if other.schema != self.schema:
            raise ValueError(f"schema mismatch: {self.schema} vs {other.schema}")
        return BenchmarkReport(rows=self.rows + other.rows, schema=self.schema)

    _COLUMNS = [
        "operation", "size", "online_rounds", "bytes_per_party", "offline_bytes",
        "accuracy_vs_oracle", "compute_seconds",
        "est_seconds_lan3g", "est_seconds_wan200", "est_seconds_wan100",
        "seed", "note",
    ]

    def to_json(self) -> str:
        return json.dumps({"schema": self.schema, "rows": self.rows}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkReport":
        raw = json.loads(text)
        return cls(rows=raw["rows"], schema=raw["schema"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = _csv.DictWriter(buf, fieldnames=self._COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in self.rows:
            w.writerow(row)
        return buf.getvalue()

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: json.dumps(r, sort_keys=True, default=str))


def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def _estimates(delta, compute_s):
    out = {}
    for name in ("lan3g", "wan200", "wan100"):
        out[f"est_seconds_{name}"] = estimate_time(delta, NETWORK_PRESETS[name], compute_s)
    return out


def _measure(session, label, fn, oracle_err):
    """Run fn under a fresh ledger snapshot, return a report row body."""
    snap = session.ledger.snapshot()
    t0 = time.perf_counter()
    fn()
    compute_s = time.perf_counter() - t0
    delta = session.ledger.delta(snap)
    online = [p for p in delta.phases() if not p.startswith("offline")]
    offline = [p for p in delta.phases() if p.startswith("offline")]
    rounds = sum(delta.rounds(p) for p in online)
    nbytes = max(
        (sum(delta.entry(p, pt).bytes_sent for p in online) for pt in ("s0", "s1")),
        default=0,
    )
    off_bytes = sum(delta.bytes_sent(p) for p in offline)
    row = {
        "operation": label,
        "online_rounds": rounds,
        "bytes_per_party": nbytes,
        "offline_bytes": off_bytes,
        "accuracy_vs_oracle": oracle_err(),
        "compute_seconds": round(compute_s, 6),
    }
    row.update(_estimates(delta, compute_s))
    return row


def bench_protocols(seed: int = 0, tensor: int = 256) -> BenchmarkReport:
    """Round/byte/accuracy microbenchmarks for every protocol primitive."""
    rep = BenchmarkReport()
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 0xBE7C])

    def fresh():
        return Session(seed=seed)

    # scalar multiply: the canonical 1 round / 256 bits
    s = fresh()
    x = share_tensor(np.float64(3.25), s.input_rng())
    y = share_tensor(np.float64(-1.5), s.input_rng())
    out = {}
    row = _measure(s, "mul", lambda: out.update(z=sec_mul(s, "bench/mul", x, y)),
                   lambda: float(abs(reveal(out["z"]) - 3.25 * -1.5)))
    row.update(size="scalar", seed=seed, note="Beaver multiply")
    rep.add(**row)

    # tensor multiply
    s = fresh()
    a = rng.uniform(-4, 4, tensor)
    b = rng.uniform(-4, 4, tensor)
    xa = share_tensor(a, s.input_rng())
    xb = share_tensor(b, s.input_rng())
    row = _measure(s, "mul", lambda: out.update(z=sec_mul(s, "bench/mul", xa, xb)),
                   lambda: float(np.abs(reveal(out["z"]) - a * b).max()))
    row.update(size=str(tensor), seed=seed, note="elementwise")
    rep.add(**row)

    # matmul 8x8
    s = fresh()
    A = rng.uniform(-2, 2, (8, 8))
    B = rng.uniform(-2, 2, (8, 8))
    row = _measure(
        s, "matmul",
        lambda: out.update(z=sec_matmul(s, "bench/mm", share_tensor(A, s.input_rng()),
                                        share_tensor(B, s.input_rng()))),
        lambda: float(np.abs(reveal(out["z"]) - A @ B).max()),
    )
    row.update(size="8x8", seed=seed, note="matrix Beaver")
    rep.add(**row)

    # comparison
    s = fresh()
    a = rng.uniform(-8, 8, tensor)
    b = rng.uniform(-8, 8, tensor)
    row = _measure(
        s, "compare",
        lambda: out.update(z=nl.sec_compare(s, "bench/cmp", share_tensor(a, s.input_rng()),
                                            share_tensor(b, s.input_rng()))),
        lambda: float(np.abs(reveal(out["z"]) - (a < b)).max()),
    )
    row.update(size=str(tensor), seed=seed, note="sign extraction, log2(ell)+1 rounds")
    rep.add(**row)

    # maximum over 8
    s = fresh()
    v = rng.uniform(-8, 8, (tensor // 8, 8))
    row = _measure(
        s, "max",
        lambda: out.update(z=nl.sec_max(s, "bench/max", share_tensor(v, s.input_rng()), axis=-1)),
        lambda: float(np.abs(reveal(out["z"]) - v.max(axis=-1)).max()),
    )
    row.update(size=f"{tensor // 8}x8", seed=seed, note="tree reduction")
    rep.add(**row)

    # exp / reciprocal / sqrt against their same-iteration oracles
    s = fresh()
    xv = rng.uniform(-4, 4, tensor)
    row = _measure(
        s, "exp",
        lambda: out.update(z=nl.sec_exp(s, "bench/exp", share_tensor(xv, s.input_rng()))),
        lambda: float(np.abs(reveal(out["z"]) - nl.exp_oracle(xv)).max()),
    )
    row.update(size=str(tensor), seed=seed, note="repeated squaring, n=8")
    rep.add(**row)

    s = fresh()
    xv = rng.uniform(0.2, 8, tensor)
    row = _measure(
        s, "reciprocal",
        lambda: out.update(z=nl.sec_reciprocal(s, "bench/rec", share_tensor(xv, s.input_rng()))),
        lambda: float(np.abs(reveal(out["z"]) - nl.reciprocal_oracle(xv)).max()),
    )
    row.update(size=str(tensor), seed=seed, note="Newton, 10 iterations")
    rep.add(**row)

    s = fresh()
    xv = rng.uniform(0.1, 8, tensor)
    row = _measure(
        s, "sqrt",
        lambda: out.update(z=nl.sec_sqrt(s, "bench/sqrt", share_tensor(xv, s.input_rng()))),
        lambda: float(np.abs(reveal(out["z"]) - nl.sqrt_oracle(xv)).max()),
    )
    row.update(size=str(tensor), seed=seed, note="Newton inverse root, 3 iterations")
    rep.add(**row)

    # cosine: 1 round, 2*ell bits per value
    s = fresh()
    xv = rng.uniform(-np.pi, np.pi, tensor)
    row = _measure(
        s, "cosine",
        lambda: out.update(z=nl.sec_cosine(s, "bench/cos", share_tensor(xv, s.input_rng()))),
        lambda: float(np.abs(reveal(out["z"]) - np.cos(xv)).max()),
    )
    row.update(size=str(tensor), seed=seed, note="one-round masked angle")
    rep.add(**row)

    # relu
    s = fresh()
    xv = rng.uniform(-4, 4, tensor)
    row = _measure(
        s, "relu",
        lambda: out.update(z=nl.sec_relu(s, "bench/relu", share_tensor(xv, s.input_rng()))),
        lambda: float(np.abs(reveal(out["z"]) - np.maximum(xv, 0)).max()),
    )
    row.update(size=str(tensor), seed=seed, note="compare + bit multiply")
    rep.add(**row)

    return rep


def bench_attention(n_list=(64, 128, 256, 512), kinds=("softmax", "rfa"),
                    d_head: int = 16, M: int = 256, seed: int = 0) -> BenchmarkReport:
    """Bytes/rounds of both secure attentions across sequence lengths,
    plus fitted log-log byte scaling exponents."""
    rep = BenchmarkReport()
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 0xA77E])
    bytes_by_kind = {k: [] for k in kinds}

    for n in n_list:
        q = att.normalize_rows(rng.normal(size=(n, d_head)))
        k = att.normalize_rows(rng.normal(size=(n, d_head)))
        v = rng.normal(size=(n, d_head))
        for kind in kinds:
            s = Session(seed=seed)
            sq = share_tensor(q, s.input_rng())
            sk = share_tensor(k, s.input_rng())
            sv = share_tensor(v, s.input_rng())
            out = {}
            if kind == "softmax":
                ref = att.softmax_attention_ref(q, k, v)
                fn = lambda: out.update(z=att.sec_softmax_attention(s, "bench/att", sq, sk, sv))
            else:
                params = att.RfaParams.from_seed(seed, M, d_head)
                ref = att.rfa_ref(q, k, v, params)
                fn = lambda: out.update(z=att.sec_rfa(s, "bench/att", sq, sk, sv, params))
            row = _measure(s, f"attention/{kind}", fn,
                           lambda: float(np.abs(reveal(out["z"]) - ref).max()))
            row.update(size=str(n), seed=seed, note=f"d_head={d_head} M={M}")
            rep.add(**row)
            bytes_by_kind[kind].append(row["bytes_per_party"])

    for kind in kinds:
        slope = fit_loglog_slope(n_list, bytes_by_kind[kind])
        rep.add(operation=f"attention/{kind}/byte_exponent", size=str(list(n_list)),
                online_rounds=0, bytes_per_party=0, offline_bytes=0,
                accuracy_vs_oracle=slope, compute_seconds=0.0,
                est_seconds_lan3g=0.0, est_seconds_wan200=0.0, est_seconds_wan100=0.0,
                seed=seed, note="fitted log-log slope of bytes vs n")
    return rep
