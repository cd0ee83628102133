"""Two computation servers plus a trusted dealer, with a communication ledger.

The three actors are wired by ordered in-memory channels carrying the wire
format below.  Execution is deterministic lockstep: both servers' local steps
for each protocol round run back to back and every message really is
serialized through its channel, so transcripts are byte-replayable from the
seed set.  The dealer only produces correlated randomness (Beaver triples,
cosine masks, comparison bundles) and is silent during the online phase.

Dealer traffic exploits shared PRF keys: server j and the dealer expand a
common key k_j, so only correction terms ever cross a channel, and they are
ledgered under ``offline/*`` phase labels, separate from online traffic.

Wire message: 4-byte protocol tag, 4-byte phase id, shape header, payload of
little-endian 8-byte words.  The ledger counts payload bytes only, so stated
protocol costs (e.g. 256 bits per scalar multiply) are exact.

Wall-clock estimates combine a measured compute term with a bandwidth/latency
model: seconds = compute + rounds * latency + bytes * 8 / bandwidth.
"""

from __future__ import annotations

import csv as _csv
import io
import json
import struct
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from .prf import PrfStream, derive_key
from .ring import DEFAULT_CONFIG, FixedPointConfig, encode, serialize_tensor

__all__ = [
    "CommLedger",
    "NetworkPreset",
    "NETWORK_PRESETS",
    "Session",
    "Dealer",
    "BeaverTriple",
    "MatmulTriple",
    "CosineMask",
    "CompareBundle",
    "ProvisionError",
    "SingleUseError",
    "estimate_time",
]

S0, S1, DEALER, CLIENT = "s0", "s1", "dealer", "client"


class ProvisionError(RuntimeError):
    """Raised in strict mode when the dealer stash cannot cover a request."""

    def __init__(self, kind, key, requested, available):
        self.kind = kind
        self.key = key
        self.requested = requested
        self.available = available
        super().__init__(
            f"provisioning shortfall: kind={kind} key={key} "
            f"requested={requested} available={available}"
        )


class SingleUseError(RuntimeError):
    """Raised when dealer-produced correlated randomness is consumed twice."""


@dataclass
class NetworkPreset:
    """Link model: bits/second of bandwidth, seconds of per-round latency."""

    name: str
    bandwidth_bps: float
    latency_s: float

    def __post_init__(self):
        if self.bandwidth_bps <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.latency_s < 0:
            raise ValueError("latency must be >= 0")


NETWORK_PRESETS = {
    "lan3g": NetworkPreset("lan3g", 3e9, 0.8e-3),
    "wan200": NetworkPreset("wan200", 200e6, 40e-3),
    "wan100": NetworkPreset("wan100", 100e6, 80e-3),
}


@dataclass
class LedgerEntry:
    rounds: int = 0
    bytes_sent: int = 0
    messages: int = 0


class CommLedger:
    """Per (phase label, party) record of rounds, payload bytes, messages."""

    def __init__(self):
        self._entries: dict[tuple[str, str], LedgerEntry] = defaultdict(LedgerEntry)

    def touch(self, phase: str, party: str):
        """Register a (phase, party) row with zero counts."""
        self._entries[(phase, party)]

    def record(self, phase: str, party: str, nbytes: int, round_step: bool):
        e = self._entries[(phase, party)]
        e.bytes_sent += nbytes
        e.messages += 1
        if round_step:
            e.rounds += 1

    def entry(self, phase: str, party: str) -> LedgerEntry:
        return self._entries.get((phase, party), LedgerEntry())

    def phases(self):
        return sorted({p for (p, _) in self._entries})

    def rounds(self, phase: str | None = None, party: str | None = None) -> int:
        """Round count; across parties the max is the protocol's depth."""
        sel = self._select(phase, party)
        by_party = Counter()
        for (_, pt), e in sel:
            by_party[pt] += e.rounds
        return max(by_party.values(), default=0)

    def bytes_sent(self, phase: str | None = None, party: str | None = None) -> int:
        """Total payload bytes sent by the selected parties."""
        return sum(e.bytes_sent for _, e in self._select(phase, party))

    def max_party_bytes(self, phase: str | None = None) -> int:
        by_party = Counter()
        for (_, pt), e in self._select(phase, None):
            by_party[pt] += e.bytes_sent
        return max(by_party.values(), default=0)

    def messages(self, phase: str | None = None, party: str | None = None) -> int:
        return sum(e.messages for _, e in self._select(phase, party))

    def _select(self, phase, party):
        for (ph, pt), e in self._entries.items():
            if phase is not None and ph != phase:
                continue
            if party is not None and pt != party:
                continue
            yield (ph, pt), e

    def snapshot(self) -> dict:
        return {
            k: LedgerEntry(e.rounds, e.bytes_sent, e.messages)
            for k, e in self._entries.items()
        }

    def delta(self, snap: dict) -> "CommLedger":
        out = CommLedger()
        for k, e in self._entries.items():
            old = snap.get(k, LedgerEntry())
            d = LedgerEntry(
                e.rounds - old.rounds,
                e.bytes_sent - old.bytes_sent,
                e.messages - old.messages,
            )
            if (k in snap) or d.rounds or d.bytes_sent or d.messages:
                out._entries[k] = d
        return out

    def rows(self):
        for (phase, party) in sorted(self._entries):
            e = self._entries[(phase, party)]
            yield {
                "phase": phase,
                "party": party,
                "rounds": e.rounds,
                "bytes": e.bytes_sent,
                "messages": e.messages,
            }

    def to_json(self) -> str:
        return json.dumps(list(self.rows()), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = _csv.DictWriter(buf, fieldnames=["phase", "party", "rounds", "bytes", "messages"])
        w.writeheader()
        for row in self.rows():
            w.writerow(row)
        return buf.getvalue()


def estimate_time(
    ledger: CommLedger,
    net: NetworkPreset | str,
    compute_seconds: float = 0.0,
    phase: str | None = None,
) -> float:
    """Model wall-clock seconds for a ledger (or one phase of it).

    rounds * latency + bytes * 8 / bandwidth + compute.  Both servers send
    concurrently over a full-duplex link, so the transfer term uses the
    busiest party's byte count.
    """
    if isinstance(net, str):
        net = NETWORK_PRESETS[net]
    rounds = ledger.rounds(phase)
    nbytes = ledger.max_party_bytes(phase)
    return compute_seconds + rounds * net.latency_s + nbytes * 8.0 / net.bandwidth_bps


# ---------------------------------------------------------------------------
# Correlated randomness
# ---------------------------------------------------------------------------

class _Consumable:
    __slots__ = ("used",)

    def __init__(self):
        self.used = False

    def consume(self):
        if self.used:
            raise SingleUseError(f"{type(self).__name__} already consumed")
        self.used = True


class BeaverTriple(_Consumable):
    """Elementwise multiplication triple: shares of (a, b, c=a*b mod L)."""

    def __init__(self, a, b, c, shape):
        super().__init__()
        self.a = a  # (share0, share1)
        self.b = b
        self.c = c
        self.shape = shape


class MatmulTriple(_Consumable):
    """Matrix triple: shares of (A, B, C=A@B mod L) for fixed operand shapes."""

    def __init__(self, a, b, c, a_shape, b_shape):
        super().__init__()
        self.a = a
        self.b = b
        self.c = c
        self.a_shape = a_shape
        self.b_shape = b_shape


class CosineMask(_Consumable):
    """Mask for the one-round cosine protocol.

    t lives in binary angle units (the full 64-bit ring maps to one period
    [0, 2pi)), so adding t wraps exactly at the period; u = sin(t) and
    v = cos(t) are fixed-point shares.
    """

    def __init__(self, t, u, v, shape):
        super().__init__()
        self.t = t  # angle-unit shares
        self.u = u  # fixed-point shares of sin(t)
        self.v = v  # fixed-point shares of cos(t)
        self.shape = shape

    @staticmethod
    def angle_to_radians(units) -> np.ndarray:
        return np.asarray(units, dtype=np.uint64).astype(np.float64) * (
            2.0 * np.pi / 2.0**64
        )


class CompareBundle(_Consumable):
    """Correlated randomness for one sign extraction over a tensor.

    Carries a shared random r with both arithmetic and boolean (bit-packed)
    shares, XOR-Beaver word triples for the prefix-adder levels, and the
    final-level bundle: boolean masks for three single-bit openings plus
    arithmetic shares of the monomials over those mask bits, which lets the
    parties assemble an arithmetic share of the sign bit locally.
    """

    def __init__(self, r_arith, r_bool, and_triples, fin_bool, fin_monomials, shape):
        super().__init__()
        self.r_arith = r_arith          # (s0, s1) arithmetic shares of r
        self.r_bool = r_bool            # (w0, w1) xor shares of r, packed words
        self.and_triples = and_triples  # list of levels, each ((a,b,c), (a,b,c))
        self.fin_bool = fin_bool        # dict bit -> (xor share0, share1), bits a,b,g
        self.fin_monomials = fin_monomials  # dict name -> (arith share0, share1)
        self.shape = shape


# dealer stash keys
def _mul_key(shape):
    return ("mul", tuple(shape))


def _matmul_key(a_shape, b_shape):
    return ("matmul", tuple(a_shape), tuple(b_shape))


def _cos_key(shape):
    return ("cos", tuple(shape))


def _cmp_key(shape):
    return ("cmp", tuple(shape))


_COMPARE_LEVELS = 5  # word-packed prefix levels before the fused final level
_MONOMIALS = ("a", "b", "g", "ab", "ga", "gb", "gab")


class Dealer:
    """Generates correlated randomness offline and stashes per-server parts.

    Server j's raw randomness comes from the PRF key it shares with the
    dealer, so only correction shares are transmitted (to server 1), and the
    transfer is ledgered under an ``offline/...`` phase.
    """

    def __init__(self, session: "Session"):
        self._s = session
        self._stash: dict[tuple, deque] = defaultdict(deque)
        self.consumed = Counter()
        self.generated = Counter()

    # -- generation ---------------------------------------------------------

    @np.errstate(over="ignore")
    def beaver_triples(self, shape, count: int = 1):
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        for _ in range(count):
            a0, b0, c0 = (self._rand0(n, shape) for _ in range(3))
            a1, b1 = (self._rand1(n, shape) for _ in range(2))
            c = (a0 + a1) * (b0 + b1)
            c1 = c - c0
            self._dealer_send("offline/beaver", c1)
            self._stash[_mul_key(shape)].append(
                BeaverTriple((a0, a1), (b0, b1), (c0, c1), tuple(shape))
            )
            self.generated[_mul_key(shape)] += 1

    @np.errstate(over="ignore")
    def matmul_triples(self, a_shape, b_shape, count: int = 1):
        a_shape, b_shape = tuple(a_shape), tuple(b_shape)
        c_shape = a_shape[:-1] + (b_shape[-1],)
        na = int(np.prod(a_shape, dtype=np.int64))
        nb = int(np.prod(b_shape, dtype=np.int64))
        nc = int(np.prod(c_shape, dtype=np.int64))
        for _ in range(count):
            a0 = self._rand0(na, a_shape)
            b0 = self._rand0(nb, b_shape)
            c0 = self._rand0(nc, c_shape)
            a1 = self._rand1(na, a_shape)
            b1 = self._rand1(nb, b_shape)
            c = np.matmul(a0 + a1, b0 + b1)
            c1 = c - c0
            self._dealer_send("offline/beaver", c1)
            self._stash[_matmul_key(a_shape, b_shape)].append(
                MatmulTriple((a0, a1), (b0, b1), (c0, c1), a_shape, b_shape)
            )
            self.generated[_matmul_key(a_shape, b_shape)] += 1

    @np.errstate(over="ignore")
    def cosine_masks(self, shape, count: int = 1):
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        cfg = self._s.cfg
        for _ in range(count):
            t0, u0, v0 = (self._rand0(n, shape) for _ in range(3))
            t1 = self._rand1(n, shape)
            t = t0 + t1  # uniform angle units == uniform over one period
            t_rad = CosineMask.angle_to_radians(t)
            u1 = encode(np.sin(t_rad), cfg) - u0
            v1 = encode(np.cos(t_rad), cfg) - v0
            self._dealer_send("offline/cosine", u1)
            self._dealer_send("offline/cosine", v1)
            self._stash[_cos_key(shape)].append(
                CosineMask((t0, t1), (u0, u1), (v0, v1), tuple(shape))
            )
            self.generated[_cos_key(shape)] += 1

    @np.errstate(over="ignore")
    def compare_bundles(self, shape, count: int = 1):
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        one = np.uint64(1)
        for _ in range(count):
            r0 = self._rand0(n, shape)
            r1 = self._rand1(n, shape)
            r = r0 + r1
            rho0 = self._rand0(n, shape)
            rho1 = r ^ rho0
            self._dealer_send("offline/compare", rho1)

            levels = []
            for _lvl in range(_COMPARE_LEVELS):
                pair = []
                for _t in range(2):
                    a0 = self._rand0(n, shape)
                    b0 = self._rand0(n, shape)
                    c0 = self._rand0(n, shape)
                    a1 = self._rand1(n, shape)
                    b1 = self._rand1(n, shape)
                    c1 = ((a0 ^ a1) & (b0 ^ b1)) ^ c0
                    self._dealer_send("offline/compare", c1)
                    pair.append(((a0, a1), (b0, b1), (c0, c1)))
                levels.append(tuple(pair))

            # final level: random bits a, b, g with xor shares, plus
            # arithmetic shares of all monomials over them
            bits = {}
            vals = {}
            for name in ("a", "b", "g"):
                x0 = self._rand0(n, shape) & one
                x1 = self._rand1(n, shape) & one
                bits[name] = (x0, x1)
                vals[name] = x0 ^ x1
            monos = {}
            for name in _MONOMIALS:
                m = np.ones(n, dtype=np.uint64).reshape(shape)
                for ch in name:
                    m = m * vals[ch]
                m0 = self._rand0(n, shape)
                m1 = m - m0
                self._dealer_send("offline/compare", m1)
                monos[name] = (m0, m1)

            self._stash[_cmp_key(shape)].append(
                CompareBundle((r0, r1), (rho0, rho1), levels, bits, monos, tuple(shape))
            )
            self.generated[_cmp_key(shape)] += 1

    # -- consumption --------------------------------------------------------

    def take_mul(self, shape) -> BeaverTriple:
        return self._take(_mul_key(shape), lambda: self.beaver_triples(shape))

    def take_matmul(self, a_shape, b_shape) -> MatmulTriple:
        return self._take(
            _matmul_key(a_shape, b_shape),
            lambda: self.matmul_triples(a_shape, b_shape),
        )

    def take_cosine(self, shape) -> CosineMask:
        return self._take(_cos_key(shape), lambda: self.cosine_masks(shape))

    def take_compare(self, shape) -> CompareBundle:
        return self._take(_cmp_key(shape), lambda: self.compare_bundles(shape))

    def _take(self, key, gen):
        q = self._stash[key]
        if not q:
            if self._s.strict_provisioning:
                raise ProvisionError(key[0], key, 1, 0)
            gen()
        self.consumed[key] += 1
        return q.popleft()

    def provision(self, plan: Counter | dict, multiplier: int = 1):
        """Pre-generate everything a consumption plan calls for."""
        for key, cnt in plan.items():
            total = cnt * multiplier
            kind = key[0]
            if kind == "mul":
                self.beaver_triples(key[1], total)
            elif kind == "matmul":
                self.matmul_triples(key[1], key[2], total)
            elif kind == "cos":
                self.cosine_masks(key[1], total)
            elif kind == "cmp":
                self.compare_bundles(key[1], total)
            else:
                raise ValueError(f"unknown stash kind {kind}")

    def consumption_since(self, snap: Counter) -> Counter:
        out = Counter()
        for k, v in self.consumed.items():
            d = v - snap.get(k, 0)
            if d:
                out[k] = d
        return out

    # -- internals ----------------------------------------------------------

    def _rand0(self, n, shape):
        return self._s.streams[S0].ring_elements(n).reshape(shape)

    def _rand1(self, n, shape):
        return self._s.streams[S1].ring_elements(n).reshape(shape)

    def _dealer_send(self, phase, arr):
        self._s.send(phase, DEALER, S1, arr, tag=b"CRND")


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------

@dataclass
class _Message:
    phase: str
    sender: str
    receiver: str
    wire: bytes
    seq: int
    online: bool


class _Channel:
    """Ordered, reliable in-memory channel between two actors."""

    def __init__(self):
        self._q: deque[_Message] = deque()

    def push(self, msg: _Message):
        self._q.append(msg)

    def pop(self) -> _Message:
        return self._q.popleft()

    def __len__(self):
        return len(self._q)


class Session:
    """One execution context: two servers, a dealer, a client, one ledger.

    Args:
        cfg: ring / fixed-point parameters.
        seed: master seed; per-role PRF keys are derived from it.
        record_transcript: keep full message log (bytes) for audits.
        strict_provisioning: dealer stash misses raise instead of lazily
            generating; used to validate static cost plans and the
            offline/online separation.
    """

    def __init__(
        self,
        cfg: FixedPointConfig = DEFAULT_CONFIG,
        seed: int = 0,
        record_transcript: bool = False,
        strict_provisioning: bool = False,
    ):
        self.cfg = cfg
        self.seed = seed
        self.strict_provisioning = strict_provisioning
        self.ledger = CommLedger()
        self.transcript: list[_Message] | None = [] if record_transcript else None
        self.streams = {
            S0: PrfStream(derive_key(seed, "s0")),
            S1: PrfStream(derive_key(seed, "s1")),
            CLIENT: PrfStream(derive_key(seed, "client")),
        }
        self.dealer = Dealer(self)
        self.online = False
        self._seq = 0
        self._phase_ids: dict[str, int] = {}
        self._channels: dict[tuple[str, str], _Channel] = defaultdict(_Channel)

    # -- messaging ----------------------------------------------------------

    def _phase_id(self, phase: str) -> int:
        if phase not in self._phase_ids:
            self._phase_ids[phase] = len(self._phase_ids)
        return self._phase_ids[phase]

    def _wire(self, tag: bytes, phase: str, arr: np.ndarray) -> bytes:
        header = tag[:4].ljust(4, b"\x00") + struct.pack("<I", self._phase_id(phase))
        return header + serialize_tensor(arr)

    def _deliver(self, phase, sender, receiver, arr, tag, round_step) -> np.ndarray:
        arr = np.asarray(arr, dtype=np.uint64)
        wire = self._wire(tag, phase, arr)
        msg = _Message(phase, sender, receiver, wire, self._seq, self.online)
        self._seq += 1
        ch = self._channels[(sender, receiver)]
        ch.push(msg)
        # payload bytes only; headers are wire framing, not protocol cost
        self.ledger.record(phase, sender, arr.size * 8, round_step)
        if self.transcript is not None:
            self.transcript.append(msg)
        out = ch.pop()
        from .ring import deserialize_tensor

        got, _ = deserialize_tensor(out.wire, 8)
        return got

    def exchange(self, phase: str, a0: np.ndarray, a1: np.ndarray, tag: bytes = b"XCHG"):
        """Symmetric S0<->S1 exchange; one online round.

        Returns (what s0 received, what s1 received).
        """
        if not self.online:
            self.online = True
        r1 = self._deliver(phase, S0, S1, a0, tag, round_step=True)
        r0 = self._deliver(phase, S1, S0, a1, tag, round_step=True)
        return r0, r1

    def open(self, phase: str, s0: np.ndarray, s1: np.ndarray, tag: bytes = b"OPEN"):
        """Reconstruct a shared value publicly (both servers learn it)."""
        r0, r1 = self.exchange(phase, s0, s1, tag)
        return s0 + r0  # == s1 + r1

    def send(self, phase: str, sender: str, receiver: str, arr, tag: bytes = b"SEND"):
        """One-way message (dealer corrections, client I/O); one round step."""
        return self._deliver(phase, sender, receiver, arr, tag, round_step=True)

    # -- convenience --------------------------------------------------------

    def input_rng(self):
        return self.streams[CLIENT]

    def dealer_quiet_online(self) -> bool:
        """True when no transcript message touches the dealer while online."""
        if self.transcript is None:
            raise ValueError("needs record_transcript=True")
        return not any(
            m.online and (m.sender == DEALER or m.receiver == DEALER)
            for m in self.transcript
        )

    def transcript_digest(self) -> bytes:
        import hashlib

        if self.transcript is None:
            raise ValueError("needs record_transcript=True")
        h = hashlib.sha256()
        for m in self.transcript:
            h.update(m.sender.encode())
            h.update(m.receiver.encode())
            h.update(m.wire)
        return h.digest()
