"""Paillier keys, encryption, homomorphic operations and the CRT-split paths.

All values are plain Python ints.  Every modular exponentiation goes through
a :class:`PowEngine`, which both selects the arithmetic backend and counts
the work done in each modulus space so protocol variants can be compared.
"""
from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import gmpy2

from . import bigint

MR_ROUNDS = 40
TOY_KEY_BITS = 64
SUPPORTED_KEY_BITS = (TOY_KEY_BITS, 1024, 2048, 4096)
KEY_FORMAT_VERSION = 1


class KeyGenerationError(RuntimeError):
    pass


class PlaintextRangeError(ValueError):
    pass


class KeyMismatchError(ValueError):
    pass


class PlaintextOverflowError(ArithmeticError):
    """Accumulated homomorphic plaintext may have wrapped modulo n."""


# ------------------------------------------------------------------ engines

@dataclass
class OpCounter:
    """Modular exponentiations tallied by modulus space.

    ``cost`` weights each call by exponent bits times squared modulus bits,
    which tracks schoolbook work and lets half-size CRT exponentiations be
    compared with full-size ones.
    """

    counts: Dict[str, int] = field(default_factory=dict)
    cost: float = 0.0

    def add(self, space: str, calls: int, exp_bits: int, mod_bits: int) -> None:
        self.counts[space] = self.counts.get(space, 0) + calls
        self.cost += float(calls) * max(exp_bits, 1) * mod_bits * mod_bits

    def total(self) -> int:
        return sum(self.counts.values())

    def reset(self) -> None:
        self.counts.clear()
        self.cost = 0.0


class PowEngine:
    """Backend for modular exponentiation.

    ``native`` uses GMP, ``builtin`` uses Python's ``pow`` and ``fft`` runs the
    FFT/Barrett exponentiation from :mod:`ppadmm.bigint`.
    """

    BACKENDS = ("native", "builtin", "fft")

    def __init__(self, backend: str = "native", counter: Optional[OpCounter] = None):
        if backend not in self.BACKENDS:
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.counter = counter if counter is not None else OpCounter()

    def pow(self, base: int, exp: int, mod: int, space: str = "n2") -> int:
        self.counter.add(space, 1, exp.bit_length(), mod.bit_length())
        if self.backend == "native":
            return int(gmpy2.powmod(base, exp, mod))
        if self.backend == "builtin":
            return pow(base, exp, mod)
        return bigint.powmod(base % mod, exp, mod)

    def multi_pow_rows(self, matrix: Sequence[Sequence[int]], bases: Sequence[int], mod: int,
                       space: str = "n2", window: int = 5) -> List[int]:
        """For each row, prod_j bases[j]**row[j] mod ``mod``.

        The native backend shares one fixed-base window table per column across
        all rows; other backends fall back to independent exponentiations.
        """
        rows = [list(map(int, r)) for r in matrix]
        if not rows:
            return []
        width = len(bases)
        if any(len(r) != width for r in rows):
            raise ValueError("row width does not match the number of bases")
        top_bits = max((e.bit_length() for r in rows for e in r), default=0)
        self.counter.add(space, len(rows) * width, top_bits, mod.bit_length())
        if self.backend != "native":
            out = []
            for r in rows:
                acc = 1 % mod
                for b, e in zip(bases, r):
                    if e:
                        p = pow(b, e, mod) if self.backend == "builtin" else bigint.powmod(b % mod, e, mod)
                        acc = acc * p % mod
                out.append(acc)
            return out
        m = gmpy2.mpz(mod)
        windows = max(1, -(-top_bits // window))
        mask = (1 << window) - 1
        tables = []
        for b in bases:
            col = []
            cur = gmpy2.mpz(b) % m
            for _ in range(windows):
                entry = [gmpy2.mpz(1), cur]
                for _d in range(2, 1 << window):
                    entry.append(entry[-1] * cur % m)
                col.append(entry)
                cur = entry[-1] * cur % m
            tables.append(col)
        out = []
        for r in rows:
            acc = gmpy2.mpz(1)
            for col, e in zip(tables, r):
                t = 0
                while e:
                    d = e & mask
                    if d:
                        acc = acc * col[t][d] % m
                    e >>= window
                    t += 1
            out.append(int(acc % m))
        return out


_DEFAULT_ENGINE = PowEngine("native")


def _engine(engine: Optional[PowEngine]) -> PowEngine:
    return engine if engine is not None else _DEFAULT_ENGINE


# --------------------------------------------------------------------- keys

@dataclass(frozen=True)
class PublicKey:
    n: int
    g: int

    @property
    def n2(self) -> int:
        return self.n * self.n

    @property
    def key_bits(self) -> int:
        return self.n.bit_length()

    def to_bytes(self) -> bytes:
        return (struct.pack("!BH", KEY_FORMAT_VERSION, self.key_bits)
                + bigint.encode_wire(self.n) + bigint.encode_wire(self.g))

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicKey":
        version, _bits = struct.unpack_from("!BH", data, 0)
        if version != KEY_FORMAT_VERSION:
            raise ValueError(f"unsupported key record version {version}")
        n, off = bigint.decode_wire(data, 3)
        g, off = bigint.decode_wire(data, off)
        if off != len(data):
            raise ValueError("trailing bytes in public key record")
        return cls(n, g)


@dataclass(frozen=True)
class PrivateKey:
    p: int
    q: int
    carmichael: int  # lcm(p-1, q-1)
    mu: int  # inverse of L(g**carmichael mod n^2) modulo n

    def to_bytes(self) -> bytes:
        body = b"".join(bigint.encode_wire(v) for v in (self.p, self.q, self.carmichael, self.mu))
        return struct.pack("!B", KEY_FORMAT_VERSION) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "PrivateKey":
        if data[0] != KEY_FORMAT_VERSION:
            raise ValueError(f"unsupported key record version {data[0]}")
        vals, off = [], 1
        for _ in range(4):
            v, off = bigint.decode_wire(data, off)
            vals.append(v)
        if off != len(data):
            raise ValueError("trailing bytes in private key record")
        return cls(*vals)


@dataclass(frozen=True)
class CrtContext:
    """Material for splitting work modulo n^2 into work modulo p^2 and q^2."""

    p2: int
    q2: int
    g_p2: int
    g_q2: int
    phi_p2: int
    phi_q2: int
    inv_p2_mod_q2: int

    @classmethod
    def build(cls, p: int, q: int, g: int) -> "CrtContext":
        p2, q2 = p * p, q * q
        return cls(p2, q2, g % p2, g % q2, p * (p - 1), q * (q - 1), pow(p2, -1, q2))

    @property
    def n2(self) -> int:
        return self.p2 * self.q2

    def recombine(self, res_p2: int, res_q2: int) -> int:
        """The unique x mod n^2 with x = res_p2 (mod p^2) and x = res_q2 (mod q^2)."""
        h = (res_q2 - res_p2) * self.inv_p2_mod_q2 % self.q2
        return (res_p2 + h * self.p2) % self.n2


class Keypair(NamedTuple):
    public: PublicKey
    private: PrivateKey
    crt: CrtContext


def is_probable_prime(n: int, rng: random.Random, rounds: int = MR_ROUNDS) -> bool:
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
    for sp in small:
        if n % sp == 0:
            return n == sp
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random, attempts: int) -> int:
    for _ in range(attempts):
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        if is_probable_prime(cand, rng):
            return cand
    raise KeyGenerationError(f"no {bits}-bit prime found in {attempts} candidates")


def _l_function(x: int, n: int) -> int:
    return (x - 1) // n


def _private_from_primes(p: int, q: int, g: int) -> Optional[PrivateKey]:
    n = p * q
    lam = math.lcm(p - 1, q - 1)
    u = _l_function(pow(g, lam, n * n), n)
    if math.gcd(u, n) != 1:
        return None
    return PrivateKey(p, q, lam, pow(u, -1, n))


def keygen(key_bits: int = 2048, rng: Optional[random.Random] = None, *,
           random_g: bool = False, primes: Optional[Tuple[int, int]] = None,
           g: Optional[int] = None, max_attempts: int = 100_000,
           strict: bool = True) -> Keypair:
    """Generate a Paillier key pair with its CRT context.

    ``primes`` and ``g`` are test hooks that pin the key material; with
    ``primes=(5, 7)`` the modulus is 35 and ``g`` defaults to 36.  ``strict=False``
    admits any even size from 32 bits, for experiments between the standard sizes.
    """
    rng = rng if rng is not None else random.SystemRandom()
    if primes is not None:
        p, q = primes
        if p == q or not (is_probable_prime(p, rng) and is_probable_prime(q, rng)):
            raise KeyGenerationError("forced primes must be distinct primes")
    else:
        if strict and key_bits not in SUPPORTED_KEY_BITS:
            raise ValueError(f"key_bits must be one of {SUPPORTED_KEY_BITS}")
        if key_bits < 32 or key_bits % 2:
            raise ValueError("key_bits must be even and at least 32")
        half = key_bits // 2
        min_gap = 1 << max(half - 8, 1)
        for _ in range(1000):
            p = _random_prime(half, rng, max_attempts)
            q = _random_prime(half, rng, max_attempts)
            if abs(p - q) >= min_gap and (p * q).bit_length() == key_bits:
                break
        else:
            raise KeyGenerationError("could not draw a balanced prime pair")
    n = p * q
    n2 = n * n
    if g is not None:
        if math.gcd(g, n) != 1 or not 0 < g < n2:
            raise KeyGenerationError("g must be a unit below n^2")
        sk = _private_from_primes(p, q, g)
        if sk is None:
            raise KeyGenerationError("L(g^lambda) is not invertible for the given g")
    elif random_g:
        for _ in range(max_attempts):
            g = rng.randrange(2, n2)
            if math.gcd(g, n) != 1:
                continue
            sk = _private_from_primes(p, q, g)
            if sk is not None:
                break
        else:
            raise KeyGenerationError("no valid random g found")
    else:
        g = n + 1
        sk = _private_from_primes(p, q, g)
        assert sk is not None
    pk = PublicKey(n, g)
    return Keypair(pk, sk, CrtContext.build(p, q, g))


# --------------------------------------------------------------- ciphertexts

@dataclass(frozen=True)
class Ciphertext:
    """A ciphertext plus bookkeeping for plaintext-growth checks.

    ``bound`` is an upper bound on the plaintext integer carried through
    homomorphic operations; ``depth`` counts scalar multiplications.
    """

    value: int
    n: int
    bound: int
    depth: int = 0

    def fits(self) -> bool:
        return self.bound < self.n


def random_unit(n: int, rng: random.Random) -> int:
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def _check_plaintext(m: int, pk: PublicKey) -> None:
    if not 0 <= m < pk.n:
        raise PlaintextRangeError(f"plaintext outside [0, n): {m}")


def encrypt(m: int, pk: PublicKey, rng: Optional[random.Random] = None, *,
            r: Optional[int] = None, engine: Optional[PowEngine] = None) -> Ciphertext:
    """c = g**m * r**n mod n^2 computed directly in the n^2 space."""
    _check_plaintext(m, pk)
    eng = _engine(engine)
    if r is None:
        r = random_unit(pk.n, rng if rng is not None else random.SystemRandom())
    n2 = pk.n2
    c = eng.pow(pk.g, m, n2, "n2") * eng.pow(r, pk.n, n2, "n2") % n2
    return Ciphertext(c, pk.n, m)


def decrypt(c: Ciphertext, pk: PublicKey, sk: PrivateKey,
            engine: Optional[PowEngine] = None) -> int:
    _same_key(c, pk)
    x = _engine(engine).pow(c.value, sk.carmichael, pk.n2, "n2")
    return _l_function(x, pk.n) * sk.mu % pk.n


def _same_key(c: Ciphertext, pk: PublicKey) -> None:
    if c.n != pk.n:
        raise KeyMismatchError("ciphertext was produced under a different key")
    if not 0 <= c.value < pk.n2:
        raise PlaintextRangeError("ciphertext value outside [0, n^2)")


def hom_add(c1: Ciphertext, c2: Ciphertext, pk: PublicKey) -> Ciphertext:
    _same_key(c1, pk)
    _same_key(c2, pk)
    return Ciphertext(c1.value * c2.value % pk.n2, pk.n, c1.bound + c2.bound,
                      max(c1.depth, c2.depth))


def hom_scalar_mul(k: int, c: Ciphertext, pk: PublicKey,
                   engine: Optional[PowEngine] = None) -> Ciphertext:
    if k < 0:
        raise ValueError("scalar must be nonnegative")
    _same_key(c, pk)
    v = _engine(engine).pow(c.value, k, pk.n2, "n2")
    return Ciphertext(v, pk.n, k * c.bound, c.depth + 1)


def hom_matvec(matrix: Sequence[Sequence[int]], cts: Sequence[Ciphertext], pk: PublicKey,
               engine: Optional[PowEngine] = None) -> List[Ciphertext]:
    """Row-wise homomorphic dot products with a nonnegative integer matrix."""
    for c in cts:
        _same_key(c, pk)
    eng = _engine(engine)
    values = eng.multi_pow_rows(matrix, [c.value for c in cts], pk.n2, "n2")
    depth = max((c.depth for c in cts), default=0) + 1
    out = []
    for row, v in zip(matrix, values):
        bound = sum(int(k) * c.bound for k, c in zip(row, cts))
        out.append(Ciphertext(v, pk.n, bound, depth))
    return out


def ensure_no_wrap(c: Ciphertext) -> None:
    if not c.fits():
        raise PlaintextOverflowError(
            f"plaintext bound has {c.bound.bit_length()} bits, modulus n has {c.n.bit_length()}")


# ---------------------------------------------------------------- CRT paths

def _reduced_pow(base: int, exp: int, mod: int, phi: int, prime: int,
                 eng: PowEngine, space: str) -> int:
    # Euler reduction of the exponent is only valid for bases coprime to the modulus
    residue = base % prime
    if residue == 1:
        # base = 1 (mod p) has multiplicative order dividing p modulo p^2
        return eng.pow(base, exp % phi % prime, mod, space)
    if residue:
        return eng.pow(base, exp % phi, mod, space)
    return eng.pow(base, exp, mod, space)


def crt_pow(base: int, exp: int, sk: PrivateKey, crt: CrtContext,
            engine: Optional[PowEngine] = None) -> int:
    """base**exp mod n^2 through the two half-size spaces."""
    eng = _engine(engine)
    a = _reduced_pow(base % crt.p2, exp, crt.p2, crt.phi_p2, sk.p, eng, "p2")
    b = _reduced_pow(base % crt.q2, exp, crt.q2, crt.phi_q2, sk.q, eng, "q2")
    return crt.recombine(a, b)


def crt_encrypt(m: int, pk: PublicKey, sk: PrivateKey, crt: CrtContext,
                rng: Optional[random.Random] = None, *, r: Optional[int] = None,
                engine: Optional[PowEngine] = None) -> Ciphertext:
    """Same ciphertext as :func:`encrypt` for the same ``r``, at half-size cost."""
    _check_plaintext(m, pk)
    eng = _engine(engine)
    if r is None:
        r = random_unit(pk.n, rng if rng is not None else random.SystemRandom())
    gm = crt.recombine(_reduced_pow(crt.g_p2, m, crt.p2, crt.phi_p2, sk.p, eng, "p2"),
                       _reduced_pow(crt.g_q2, m, crt.q2, crt.phi_q2, sk.q, eng, "q2"))
    rn = crt_pow(r, pk.n, sk, crt, eng)
    return Ciphertext(gm * rn % pk.n2, pk.n, m)


def crt_decrypt(c: Ciphertext, pk: PublicKey, sk: PrivateKey, crt: CrtContext,
                engine: Optional[PowEngine] = None, *,
                reduced_p2: Optional[int] = None) -> int:
    """Decrypt with c**lambda evaluated modulo p^2 and q^2 and recombined.

    ``reduced_p2`` lets a caller supply ``c mod p^2`` computed elsewhere.
    """
    _same_key(c, pk)
    eng = _engine(engine)
    cp = c.value % crt.p2 if reduced_p2 is None else reduced_p2
    if cp != c.value % crt.p2:
        raise ValueError("supplied p^2 residue does not match the ciphertext")
    a = _reduced_pow(cp, sk.carmichael, crt.p2, crt.phi_p2, sk.p, eng, "p2")
    b = _reduced_pow(c.value % crt.q2, sk.carmichael, crt.q2, crt.phi_q2, sk.q, eng, "q2")
    x = crt.recombine(a, b)
    return _l_function(x, pk.n) * sk.mu % pk.n
