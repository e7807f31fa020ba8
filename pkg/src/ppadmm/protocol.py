"""Master and edge state machines for encrypted distributed ADMM.

Two variants share one message vocabulary:

* ``basic``: each iteration the edge returns the encrypted block update and
  the master answers with freshly encrypted ``z`` and ``-v``.
* ``collaborative``: the master hands edges ``p^2`` and ``phi(p^2)`` once;
  afterwards edges reduce ciphertexts modulo ``p^2`` and evaluate the
  ``p^2`` half of every encryption exponentiation on masked exponents,
  leaving the master only ``q^2``-side work.

Masking adds a random multiple of ``n * lambda`` to each exponent.  That keeps
``g**e`` unchanged but does not hide ``e mod phi(p^2)``, which equals the
quantized value itself, so edges can read the quantized ``z`` and ``-v``.
Since ``p^2`` and ``n`` together also reveal ``p``, this variant trades
confidentiality against edges for speed.
"""
from __future__ import annotations

import hashlib
import logging
import random
import threading
import time
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import paillier as pl
from .admm import NodePartition, Problem, global_zv_update, split_problem, spd_inverse
from .quantize import (ClampStats, QuantSpec, combined_quantized_update, gamma1, gamma2,
                       inverse_quantize_x, plaintext_bound)
from .transport import (Delivery, Endpoint, Envelope, FrameError, Tag, Transcript,
                        decode_ints, decode_matrix, decode_text, decode_vectors,
                        encode_ints, encode_matrix, encode_text, encode_vectors)

log = logging.getLogger(__name__)

VARIANTS = ("basic", "collaborative")


class ProtocolError(RuntimeError):
    pass


class HandshakeError(ProtocolError):
    pass


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class SessionConfig:
    K: int
    key_bits: int
    delta: int
    z_min: float
    z_max: float
    rho: float = 1.0
    lam: float = 1.0
    iter_max: int = 100
    variant: str = "basic"
    y_scaling: str = "full"
    session_id: int = 1
    mask_bits: int = 64
    timeout: float = 30.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.K < 1 or self.iter_max < 1:
            raise ValueError("K and iter_max must be positive")

    @property
    def spec(self) -> QuantSpec:
        return QuantSpec(self.delta, self.z_min, self.z_max)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SessionConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in kinds:
                continue
            kind = kinds[key]
            if kind in ("int", int):
                values[key] = int(raw)
            elif kind in ("float", float):
                values[key] = float(raw)
            else:
                values[key] = raw
        return cls(**values)

    def digest(self) -> bytes:
        """Hash of the parameters every node must agree on."""
        shared = (self.delta, repr(float(self.z_min)), repr(float(self.z_max)),
                  repr(float(self.rho)), repr(float(self.lam)), self.variant, self.K)
        return hashlib.sha256(repr(shared).encode()).digest()


def _init_text(cfg: SessionConfig, pk: pl.PublicKey, k: int) -> str:
    return cfg.to_text() + f"n={pk.n}\ng={pk.g}\nnode={k}\n"


def _parse_init(text: str) -> Tuple[SessionConfig, pl.PublicKey, int]:
    extra = {}
    for line in text.splitlines():
        key, _, raw = line.partition("=")
        if key in ("n", "g", "node"):
            extra[key] = int(raw)
    return SessionConfig.from_text(text), pl.PublicKey(extra["n"], extra["g"]), extra["node"]


# -------------------------------------------------------- shared arithmetic

def clip_to(spec: QuantSpec, values) -> np.ndarray:
    return np.clip(np.asarray(values, dtype=float), spec.z_min, spec.z_max)


def quantize_zv(z_k, v_k, spec: QuantSpec, stats: Optional[ClampStats] = None):
    return gamma2(z_k, spec, stats), gamma2(-np.asarray(v_k, dtype=float), spec, stats)


def decode_block(q_x, spec: QuantSpec, B_bar, z_k, v_k) -> np.ndarray:
    """Real block update from its integer image, using the clipped inputs the quantizers saw."""
    z_used = clip_to(spec, z_k)
    negv_used = clip_to(spec, -np.asarray(v_k, dtype=float))
    return inverse_quantize_x(q_x, spec, clip_to(spec, B_bar), z_used, -negv_used)


def block_inverse(gram: np.ndarray, rho: float) -> np.ndarray:
    return spd_inverse(gram + rho * np.eye(gram.shape[0]))


def obfuscate(values: Sequence[int], period: int, mask_bits: int,
              rng: random.Random) -> Tuple[List[int], List[int]]:
    """Add a fresh random multiple of ``period`` (= n * lambda) to each value.

    ``mask_bits = 0`` disables masking (every multiplier is zero).
    """
    masks = [rng.randrange(1, 1 << mask_bits) if mask_bits > 0 else 0 for _ in values]
    return [int(v) + s * period for v, s in zip(values, masks)], masks


def deobfuscate(masked: Sequence[int], masks: Sequence[int], period: int) -> List[int]:
    return [m - s * period for m, s in zip(masked, masks)]


def reduce_exponents(exponents: Sequence[int], g_p2: int, p2: int, phi_p2: int,
                     engine: pl.PowEngine) -> List[int]:
    """Edge-side p^2 half of g**e: g_p2**(e mod phi(p^2)) mod p^2."""
    return [engine.pow(g_p2, e % phi_p2, p2, "p2") for e in exponents]


# -------------------------------------------------------------------- trace

@dataclass
class RoundTiming:
    start: float = 0.0  # master finished its sends
    down_done: float = 0.0  # last edge had its message delivered
    edge_done: float = 0.0  # last edge sent its reply
    up_done: float = 0.0  # last reply delivered to the master
    end: float = 0.0  # master finished the round's local work
    edge_finish: Dict[int, float] = field(default_factory=dict)


@dataclass
class IterationTiming:
    t: int
    rounds: List[RoundTiming] = field(default_factory=list)

    @property
    def comm(self) -> float:
        return sum((r.down_done - r.start) + (r.up_done - r.edge_done) for r in self.rounds)

    @property
    def local(self) -> float:
        return sum((r.edge_done - r.down_done) + (r.end - r.up_done) for r in self.rounds)

    @property
    def edge_wait(self) -> List[float]:
        """Spread (max - min) of edge completion times, one value per round."""
        return [max(r.edge_finish.values()) - min(r.edge_finish.values())
                for r in self.rounds if r.edge_finish]

    @property
    def master_wait(self) -> float:
        """Time the master sat idle waiting for edges, summed over rounds."""
        return sum(r.up_done - r.start for r in self.rounds)


class SessionTrace:
    """Timestamps collected from all roles (they share one monotonic clock)."""

    def __init__(self):
        self._lock = threading.Lock()
        self.session_start = 0.0
        self.pre_end = 0.0
        self.session_end = 0.0
        self.iterations: List[IterationTiming] = []
        self._edge: Dict[Tuple[int, int, int], Tuple[float, float]] = {}

    def edge_round(self, k: int, t: int, rnd: int, delivered: float, replied: float) -> None:
        with self._lock:
            self._edge[(t, rnd, k)] = (delivered, replied)

    def edge_times(self, t: int, rnd: int, K: int) -> Dict[int, Tuple[float, float]]:
        with self._lock:
            return {k: self._edge[(t, rnd, k)] for k in range(K) if (t, rnd, k) in self._edge}

    @property
    def t_pre(self) -> float:
        return self.pre_end - self.session_start

    @property
    def t_total(self) -> float:
        return self.session_end - self.session_start

    def accounted_total(self) -> float:
        return self.t_pre + sum(it.local + it.comm for it in self.iterations)


# --------------------------------------------------------------------- edge

class EdgeNode:
    """Holds one column block; never sees y, the private key or plaintext z/v."""

    def __init__(self, endpoint: Endpoint, engine: Optional[pl.PowEngine] = None,
                 trace: Optional[SessionTrace] = None, timeout: float = 30.0):
        self.ep = endpoint
        self.first_timeout = timeout
        self.engine = engine if engine is not None else pl.PowEngine()
        self.trace = trace
        self.cfg: Optional[SessionConfig] = None
        self.pk: Optional[pl.PublicKey] = None
        self.k = -1
        self.q_B: Optional[np.ndarray] = None
        self.alpha: List[pl.Ciphertext] = []
        self.crt_p2: Optional[Tuple[int, int]] = None
        self.error: Optional[BaseException] = None

    def run(self) -> None:
        try:
            while True:
                d = self.ep.recv(self.cfg.timeout if self.cfg else self.first_timeout)
                if not self._handle(d):
                    return
        except BaseException as exc:  # reported by the session runner
            self.error = exc
            log.exception("edge %s aborted", self.k)

    def _send(self, tag: Tag, t: int, payload: bytes) -> None:
        self.ep.send(Envelope(tag, self.cfg.session_id, t, payload))

    def _mark(self, t: int, rnd: int, d: Delivery) -> None:
        # recorded before replying so the master always finds it
        if self.trace is not None:
            self.trace.edge_round(self.k, t, rnd, d.delivered_at, time.monotonic())

    def _handle(self, d: Delivery) -> bool:
        env = d.envelope
        if self.cfg is not None and env.session != self.cfg.session_id:
            raise ProtocolError(f"message for session {env.session}")
        if env.tag == Tag.InitTask:
            text, off = decode_text(env.payload)
            gram, off = decode_matrix(env.payload, off)
            if off != len(env.payload):
                raise FrameError("trailing bytes in InitTask")
            self.cfg, self.pk, self.k = _parse_init(text)
            B = block_inverse(gram, self.cfg.rho)
            self.q_B = gamma2(B * self.cfg.rho, self.cfg.spec)
            self._send(Tag.BMatrix, 0, self.cfg.digest() + encode_matrix(B))
        elif env.tag == Tag.CrtParams:
            (vals,) = decode_vectors(env.payload, 1)
            p2, phi_p2 = vals
            self.crt_p2 = (p2, phi_p2)
        elif env.tag == Tag.AlphaCipher:
            (vals,) = decode_vectors(env.payload, 1)
            bound = self.cfg.spec.squared_max
            self.alpha = [pl.Ciphertext(v, self.pk.n, bound) for v in vals]
        elif env.tag == Tag.ZVCipher:
            zs, negvs = decode_vectors(env.payload, 2)
            self._mark(env.iteration, 0, d)
            out = self._block_update(zs, negvs)
            vals = [c.value for c in out]
            self._send(Tag.XCipher, env.iteration, encode_ints(vals))
            if self.cfg.variant == "collaborative":
                p2 = self.crt_p2[0]
                self._send(Tag.ReducedX, env.iteration, encode_ints([v % p2 for v in vals]))
        elif env.tag == Tag.ObfuscatedZV:
            if self.crt_p2 is None:
                raise ProtocolError("no CRT parameters received")
            p2, phi_p2 = self.crt_p2
            g_p2 = self.pk.g % p2
            a, b = decode_vectors(env.payload, 2)
            self._mark(env.iteration, 1, d)
            ra = reduce_exponents(a, g_p2, p2, phi_p2, self.engine)
            rb = reduce_exponents(b, g_p2, p2, phi_p2, self.engine)
            self._send(Tag.ReducedZV, env.iteration, encode_vectors(ra, rb))
        elif env.tag == Tag.Done:
            return False
        else:
            raise ProtocolError(f"edge cannot handle {env.tag.name}")
        return True

    def _block_update(self, zs: List[int], negvs: List[int]) -> List[pl.Ciphertext]:
        pk, bound = self.pk, self.cfg.spec.linear_max
        if len(zs) != len(self.alpha) or len(negvs) != len(self.alpha):
            raise ProtocolError("ciphertext vector length does not match the block")
        summed = [pl.hom_add(pl.Ciphertext(a, pk.n, bound), pl.Ciphertext(b, pk.n, bound), pk)
                  for a, b in zip(zs, negvs)]
        prod = pl.hom_matvec(self.q_B.tolist(), summed, pk, self.engine)
        out = [pl.hom_add(a, p, pk) for a, p in zip(self.alpha, prod)]
        for c in out:
            pl.ensure_no_wrap(c)
        return out


# ------------------------------------------------------------------- master

@dataclass
class MasterState:
    x: np.ndarray
    z: np.ndarray
    v: np.ndarray
    t: int = 0


class MasterNode:
    """Key holder: splits the problem, decrypts block updates, owns z and v."""

    def __init__(self, prob: Problem, cfg: SessionConfig, keys: pl.Keypair,
                 endpoints: Sequence[Endpoint], seed: int = 0,
                 engine: Optional[pl.PowEngine] = None,
                 trace: Optional[SessionTrace] = None):
        if len(endpoints) != cfg.K:
            raise ValueError("one endpoint per edge required")
        self.prob, self.cfg, self.keys = prob, cfg, keys
        self.eps = list(endpoints)
        self.engine = engine if engine is not None else pl.PowEngine()
        self.trace = trace if trace is not None else SessionTrace()
        self.rng = random.Random(f"{seed}:enc")
        self.mask_rng = random.Random(f"{seed}:mask")
        self.spec = cfg.spec
        self.partition: NodePartition = split_problem(prob, cfg.K)
        n = self.partition.N
        self.state = MasterState(np.zeros(n), np.zeros(n), np.zeros(n))
        self.B: List[np.ndarray] = []
        self.alpha: List[np.ndarray] = []
        self.clamps = ClampStats()
        self.history: List[np.ndarray] = []
        self.q_history: List[List[List[int]]] = []
        self.op_history: List[Tuple[Dict[str, int], float]] = []
        self._check_capacity()

    # -- helpers
    def _check_capacity(self) -> None:
        widest = max(self.partition.widths)
        bound = plaintext_bound(self.spec, widest)
        if bound >= self.keys.public.n:
            raise pl.PlaintextOverflowError(
                f"update plaintexts need {bound.bit_length()} bits but n has "
                f"{self.keys.public.key_bits}; lower delta or use a larger key")

    def _send_all(self, tag: Tag, t: int, payloads: Sequence[bytes]) -> None:
        for ep, body in zip(self.eps, payloads):
            ep.send(Envelope(tag, self.cfg.session_id, t, body))

    def _recv(self, k: int, tag: Tag, t: int) -> Delivery:
        d = self.eps[k].recv(self.cfg.timeout)
        env = d.envelope
        if env.tag != tag or env.iteration != t or env.session != self.cfg.session_id:
            raise ProtocolError(f"edge {k}: expected {tag.name}@{t}, got {env.tag.name}@{env.iteration}")
        return d

    def _encrypt(self, m: int) -> int:
        pk, sk, crt = self.keys
        if self.cfg.variant == "collaborative":
            return pl.crt_encrypt(m, pk, sk, crt, self.rng, engine=self.engine).value
        return pl.encrypt(m, pk, self.rng, engine=self.engine).value

    # -- phases
    def phase_init(self) -> None:
        pk = self.keys.public
        A = self.prob.A
        payloads = []
        for k in range(self.cfg.K):
            A_k = A[:, self.partition.block(k)]
            payloads.append(encode_text(_init_text(self.cfg, pk, k)) + encode_matrix(A_k.T @ A_k))
        self._send_all(Tag.InitTask, 0, payloads)
        digest = self.cfg.digest()
        target = self.prob.y if self.cfg.y_scaling == "full" else self.prob.y / self.cfg.K
        for k in range(self.cfg.K):
            env = self._recv(k, Tag.BMatrix, 0).envelope
            if env.payload[:32] != digest:
                raise HandshakeError(f"edge {k} disagrees on shared parameters")
            B, off = decode_matrix(env.payload, 32)
            if off != len(env.payload):
                raise FrameError("trailing bytes in BMatrix")
            self.B.append(B)
            A_k = A[:, self.partition.block(k)]
            self.alpha.append(B @ (A_k.T @ target))
        if self.cfg.variant == "collaborative":
            crt = self.keys.crt
            self._send_all(Tag.CrtParams, 0, [encode_ints([crt.p2, crt.phi_p2])] * self.cfg.K)

    def phase_share(self) -> None:
        payloads = []
        for k in range(self.cfg.K):
            q = gamma1(self.alpha[k], self.spec, self.clamps)
            payloads.append(encode_ints([self._encrypt(int(m)) for m in q]))
        self._send_all(Tag.AlphaCipher, 0, payloads)
        # the first iteration runs the loop body on encryptions of z = v = 0
        self._distribute_zv(1)

    def _zv_plain(self, k: int):
        blk = self.partition.block(k)
        return quantize_zv(self.state.z[blk], self.state.v[blk], self.spec, self.clamps)

    def _distribute_zv(self, t: int) -> None:
        payloads = []
        for k in range(self.cfg.K):
            qz, qv = self._zv_plain(k)
            payloads.append(encode_vectors([self._encrypt(int(m)) for m in qz],
                                           [self._encrypt(int(m)) for m in qv]))
        self._send_all(Tag.ZVCipher, t, payloads)

    def _collect_x(self, t: int, timing: RoundTiming) -> List[List[int]]:
        pk, sk, crt = self.keys
        up_done, edge_done, finish = 0.0, 0.0, {}
        decoded = []
        cts = []
        for k in range(self.cfg.K):
            d = self._recv(k, Tag.XCipher, t)
            (vals,) = decode_vectors(d.envelope.payload, 1)
            reduced = None
            if self.cfg.variant == "collaborative":
                d2 = self._recv(k, Tag.ReducedX, t)
                (reduced,) = decode_vectors(d2.envelope.payload, 1)
                d = d2
            up_done = max(up_done, d.delivered_at)
            edge_done = max(edge_done, d.sent_at)
            finish[k] = d.sent_at
            cts.append((vals, reduced))
        timing.up_done, timing.edge_done, timing.edge_finish = up_done, edge_done, finish
        for k, (vals, reduced) in enumerate(cts):
            if len(vals) != self.partition.widths[k]:
                raise ProtocolError(f"edge {k} returned {len(vals)} values")
            q = []
            for i, v in enumerate(vals):
                c = pl.Ciphertext(v, pk.n, 0)
                if reduced is None:
                    q.append(pl.decrypt(c, pk, sk, self.engine))
                else:
                    q.append(pl.crt_decrypt(c, pk, sk, crt, self.engine, reduced_p2=reduced[i]))
            decoded.append(q)
        return decoded

    def _update(self, q_blocks: List[List[int]]) -> None:
        st = self.state
        parts = []
        for k, q in enumerate(q_blocks):
            blk = self.partition.block(k)
            parts.append(decode_block(q, self.spec, self.B[k] * self.cfg.rho, st.z[blk], st.v[blk]))
        st.x = np.concatenate(parts)
        st.z, st.v = global_zv_update(st.x, st.v, self.cfg.lam, self.cfg.rho)
        st.t += 1

    def _collab_encrypt_zv(self, t: int, timing: RoundTiming) -> RoundTiming:
        """Two extra rounds: masked exponents out, p^2 halves back, ciphertexts out."""
        pk, sk, crt = self.keys
        period = pk.n * sk.carmichael
        plains, payloads = [], []
        for k in range(self.cfg.K):
            qz, qv = self._zv_plain(k)
            oz, _ = obfuscate([int(m) for m in qz], period, self.cfg.mask_bits, self.mask_rng)
            ov, _ = obfuscate([int(m) for m in qv], period, self.cfg.mask_bits, self.mask_rng)
            plains.append(([int(m) for m in qz], [int(m) for m in qv]))
            payloads.append(encode_vectors(oz, ov))
        self._send_all(Tag.ObfuscatedZV, t, payloads)
        nxt = RoundTiming(start=time.monotonic())
        timing.end = nxt.start
        halves = []
        for k in range(self.cfg.K):
            d = self._recv(k, Tag.ReducedZV, t)
            a, b = decode_vectors(d.envelope.payload, 2)
            nxt.up_done = max(nxt.up_done, d.delivered_at)
            nxt.edge_done = max(nxt.edge_done, d.sent_at)
            nxt.edge_finish[k] = d.sent_at
            halves.append((a, b))
        out = []
        for k, ((qz, qv), (rz, rv)) in enumerate(zip(plains, halves)):
            if len(rz) != len(qz) or len(rv) != len(qv):
                raise ProtocolError(f"edge {k} returned a short reduced vector")
            vecs = []
            for ms, rs in ((qz, rz), (qv, rv)):
                cs = []
                for m, res_p in zip(ms, rs):
                    if not 0 <= res_p < crt.p2:
                        raise ProtocolError(f"edge {k} returned an out-of-range residue")
                    res_q = self.engine.pow(crt.g_q2, m % crt.phi_q2, crt.q2, "q2")
                    gm = crt.recombine(res_p, res_q)
                    r = pl.random_unit(pk.n, self.rng)
                    cs.append(gm * pl.crt_pow(r, pk.n, sk, crt, self.engine) % pk.n2)
                vecs.append(cs)
            out.append(encode_vectors(*vecs))
        self._send_all(Tag.ZVCipher, t + 1, out)
        return nxt

    def iterate(self, t: int) -> None:
        it = IterationTiming(t)
        first = RoundTiming(start=self._round_start)
        it.rounds.append(first)
        q_blocks = self._collect_x(t, first)
        edge_times = self.trace.edge_times(t, 0, self.cfg.K)
        first.down_done = max((v[0] for v in edge_times.values()), default=first.start)
        self.q_history.append(q_blocks)
        self._update(q_blocks)
        self.history.append(self.state.x.copy())
        last = t >= self.cfg.iter_max
        if not last:
            if self.cfg.variant == "collaborative":
                second = self._collab_encrypt_zv(t, first)
                edge_times = self.trace.edge_times(t, 1, self.cfg.K)
                second.down_done = max((v[0] for v in edge_times.values()), default=second.start)
                it.rounds.append(second)
                first = second
            else:
                self._distribute_zv(t + 1)
        now = time.monotonic()
        first.end = now
        self._round_start = now
        self.op_history.append((dict(self.engine.counter.counts), self.engine.counter.cost))
        self.trace.iterations.append(it)

    def run(self) -> MasterState:
        tr = self.trace
        tr.session_start = time.monotonic()
        self.phase_init()
        self.phase_share()
        self._round_start = tr.pre_end = time.monotonic()
        self.pre_ops = (dict(self.engine.counter.counts), self.engine.counter.cost)
        for t in range(1, self.cfg.iter_max + 1):
            self.iterate(t)
        tr.session_end = time.monotonic()
        self._send_all(Tag.Done, self.cfg.iter_max, [b""] * self.cfg.K)
        return self.state


# --------------------------------------------------------------- reference

@dataclass
class ReferenceRun:
    history: np.ndarray
    q_history: List[List[List[int]]]
    clamps: ClampStats


def quantized_reference(prob: Problem, cfg: SessionConfig,
                        modulus: Optional[int] = None) -> ReferenceRun:
    """The master's loop with encryption removed: integer images are formed in the clear.

    With ``modulus`` set, images are reduced modulo it exactly as decryption
    would return them.
    """
    part = split_problem(prob, cfg.K)
    spec = cfg.spec
    stats = ClampStats()
    target = prob.y if cfg.y_scaling == "full" else prob.y / cfg.K
    Bs, q_alpha, q_B = [], [], []
    for k in range(cfg.K):
        A_k = prob.A[:, part.block(k)]
        B = block_inverse(A_k.T @ A_k, cfg.rho)
        Bs.append(B)
        q_B.append(gamma2(B * cfg.rho, spec))
        q_alpha.append(gamma1(B @ (A_k.T @ target), spec, stats))
    n = part.N
    x, z, v = np.zeros(n), np.zeros(n), np.zeros(n)
    hist, qh = [], []
    for _ in range(cfg.iter_max):
        blocks, parts = [], []
        for k in range(cfg.K):
            blk = part.block(k)
            qz, qv = quantize_zv(z[blk], v[blk], spec, stats)
            q = combined_quantized_update(q_alpha[k], q_B[k], qz, qv)
            q = [int(e) % modulus if modulus else int(e) for e in q]
            blocks.append(q)
            parts.append(decode_block(q, spec, Bs[k] * cfg.rho, z[blk], v[blk]))
        x = np.concatenate(parts)
        z, v = global_zv_update(x, v, cfg.lam, cfg.rho)
        hist.append(x.copy())
        qh.append(blocks)
    return ReferenceRun(np.array(hist), qh, stats)


# ------------------------------------------------------------------ session

@dataclass
class SessionResult:
    history: np.ndarray
    state: MasterState
    trace: SessionTrace
    transcript: Transcript
    master_ops: pl.OpCounter
    edge_ops: List[pl.OpCounter]
    q_history: List[List[List[int]]]
    op_history: list
    pre_ops: tuple
    clamps: ClampStats
    partition: NodePartition


def run_session(prob: Problem, cfg: SessionConfig, keys: Optional[pl.Keypair] = None,
                network=None, seed: int = 0, backend: str = "native") -> SessionResult:
    """Run a full master/edge session with edges on threads.

    ``network`` is any object with ``master_ends``, ``edge_ends``,
    ``transcript`` and ``close()``; defaults to a zero-delay simulated network.
    """
    from .transport import SimulatedNetwork

    if keys is None:
        keys = pl.keygen(cfg.key_bits, random.Random(f"{seed}:keys"))
    own = network is None
    net = network if network is not None else SimulatedNetwork(cfg.K, seed=seed)
    trace = SessionTrace()
    edge_ops = [pl.OpCounter() for _ in range(cfg.K)]
    edges = [EdgeNode(net.edge_ends[k], pl.PowEngine(backend, edge_ops[k]), trace, cfg.timeout)
             for k in range(cfg.K)]
    threads = [threading.Thread(target=e.run, name=f"edge{k}", daemon=True)
               for k, e in enumerate(edges)]
    for th in threads:
        th.start()
    master_ops = pl.OpCounter()
    master = MasterNode(prob, cfg, keys, net.master_ends, seed,
                        pl.PowEngine(backend, master_ops), trace)
    try:
        state = master.run()
    except BaseException:
        errors = [e.error for e in edges if e.error is not None]
        if errors:
            raise ProtocolError(f"edge failure: {errors[0]!r}") from errors[0]
        raise
    finally:
        for th in threads:
            th.join(cfg.timeout)
        if own:
            net.close()
    for e in edges:
        if e.error is not None:
            raise ProtocolError(f"edge {e.k} failed: {e.error!r}")
    return SessionResult(np.array(master.history), state, trace, net.transcript, master_ops,
                         edge_ops, master.q_history, master.op_history, master.pre_ops,
                         master.clamps, master.partition)
