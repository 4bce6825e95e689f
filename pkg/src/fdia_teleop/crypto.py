"""ElGamal over the prime-order subgroup of Z_p^*, p = 2q + 1.

Besides the textbook scheme this module holds the fixed-point signal
encoding used to put real-valued controller signals on the wire, and the
keyless ``malleate`` transform that an in-path attacker uses to multiply the
hidden plaintext by a public constant.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

MR_ROUNDS = 40  # 4**-40 = 2**-80 error bound

_SMALL_PRIMES = [p for p in range(3, 2000) if all(p % d for d in range(2, int(p ** 0.5) + 1))]


class SafePrimeError(RuntimeError):
    def __init__(self, bits: int, attempts: int):
        super().__init__(f"no {bits}-bit safe prime found after {attempts} candidates")
        self.attempts = attempts


class EncodingOverflow(OverflowError):
    pass


def is_probable_prime(n: int, rng: random.Random | None = None, rounds: int = MR_ROUNDS) -> bool:
    """Miller-Rabin test; false-positive probability below ``4**-rounds``."""
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for sp in _SMALL_PRIMES:
        if n == sp:
            return True
        if n % sp == 0:
            return False
    rng = rng or random.Random(n)
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def gen_safe_prime(bits: int, rng: random.Random, max_attempts: int = 1_000_000) -> tuple[int, int]:
    """Return ``(p, q)`` with ``p = 2q + 1`` both prime and ``p`` exactly ``bits`` bits long."""
    for attempt in range(1, max_attempts + 1):
        q = rng.getrandbits(bits - 1) | (1 << (bits - 2)) | 1
        # p = 2q+1 divisible by a small prime sp iff q = (sp-1)/2 mod sp
        if any(q % sp in (0, (sp - 1) // 2) and q != sp for sp in _SMALL_PRIMES):
            continue
        if is_probable_prime(q, rng) and is_probable_prime(2 * q + 1, rng):
            return 2 * q + 1, q
    raise SafePrimeError(bits, max_attempts)


@dataclass(frozen=True)
class PublicKey:
    p: int
    q: int
    gen: int
    h: int

    def validate(self) -> None:
        if self.p != 2 * self.q + 1:
            raise ValueError("p must equal 2q + 1")
        if not (is_probable_prime(self.p) and is_probable_prime(self.q)):
            raise ValueError("p and q must be prime")
        if self.gen == 1 or pow(self.gen, self.q, self.p) != 1:
            raise ValueError("gen must generate the order-q subgroup")
        if pow(self.h, self.q, self.p) != 1:
            raise ValueError("h is not in the order-q subgroup")


@dataclass(frozen=True)
class SecretKey:
    s: int


@dataclass(frozen=True)
class Ciphertext:
    c1: int
    c2: int


def make_keys(p: int, q: int, gen: int, s: int) -> tuple[PublicKey, SecretKey]:
    if not 0 < s < q:
        raise ValueError("secret exponent must lie in (0, q)")
    pk = PublicKey(p, q, gen, pow(gen, s, p))
    pk.validate()
    return pk, SecretKey(s)


def keygen(bits: int = 64, seed: int = 0) -> tuple[PublicKey, SecretKey]:
    """Deterministic key generation for a ``bits``-bit safe prime modulus."""
    if not 16 <= bits <= 2048:
        raise ValueError("bits must be within [16, 2048]")
    rng = random.Random(f"keygen:{bits}:{seed}")
    p, q = gen_safe_prime(bits, rng)
    while True:
        # squares generate the whole order-q subgroup (q prime) unless they equal 1
        gen = pow(rng.randrange(2, p - 1), 2, p)
        if gen != 1:
            break
    s = rng.randrange(1, q)
    return make_keys(p, q, gen, s)


def encrypt(m: int, pk: PublicKey, r: int) -> Ciphertext:
    if not 1 <= m <= pk.p - 1:
        raise ValueError("plaintext must lie in [1, p-1]")
    if not 1 <= r < pk.q:
        raise ValueError("nonce must lie in [1, q-1]")
    return Ciphertext(pow(pk.gen, r, pk.p), m * pow(pk.h, r, pk.p) % pk.p)


def random_nonce(pk: PublicKey, rng: random.Random) -> int:
    return rng.randrange(1, pk.q)


def decrypt(c: Ciphertext, sk: SecretKey, pk: PublicKey) -> int:
    if not (1 <= c.c1 <= pk.p - 1 and 1 <= c.c2 <= pk.p - 1):
        raise ValueError("ciphertext components must lie in [1, p-1]")
    return pow(c.c1, -sk.s, pk.p) * c.c2 % pk.p


def hom_mul(a: Ciphertext, b: Ciphertext, pk: PublicKey) -> Ciphertext:
    return Ciphertext(a.c1 * b.c1 % pk.p, a.c2 * b.c2 % pk.p)


def malleate(c: Ciphertext, k: int, p: int) -> Ciphertext:
    """Scale the hidden plaintext by ``k`` knowing only the modulus ``p``."""
    k %= p
    if k == 0:
        raise ValueError("malleation gain must be invertible mod p")
    return Ciphertext(c.c1, k * c.c2 % p)


def gain_to_residue(gain: Fraction | int | float, p: int) -> int:
    """Map a rational gain a/b to a * b^-1 mod p (-1 -> p-1, 1/2 -> inv(2))."""
    g = Fraction(gain).limit_denominator(1 << 32) if isinstance(gain, float) else Fraction(gain)
    if g == 0:
        raise ValueError("zero gain has no residue")
    return g.numerator * pow(g.denominator, -1, p) % p


# -- fixed-point signal encoding ------------------------------------------

@dataclass(frozen=True)
class EncodingParams:
    """Signed fixed-point mapping of reals into Z_p^* with ``gamma`` fractional bits.

    Exact zero has no representative in Z_p^*, so it is sent as the one-LSB
    residue 1. Both one-LSB residues (1 and p-1) decode to zero: a
    dead band of one quantum either side that keeps negation exact.
    """
    gamma: int
    p: int

    @property
    def q(self) -> int:
        return (self.p - 1) // 2

    @property
    def quantum(self) -> float:
        return math.ldexp(1.0, -self.gamma)

    @property
    def limit(self) -> int:
        return self.q // 2


def encode(value: float, enc: EncodingParams) -> int:
    if not math.isfinite(value):
        raise EncodingOverflow(f"cannot encode {value!r}")
    n = round(math.ldexp(value, enc.gamma))
    if abs(n) >= enc.limit:
        raise EncodingOverflow(f"|{value}| * 2^{enc.gamma} exceeds q/2")
    if n == 0:
        return 1
    return n % enc.p


def decode_signed(m: int, enc: EncodingParams) -> int:
    m %= enc.p
    return m - enc.p if m > enc.p // 2 else m


def is_implausible(m: int, enc: EncodingParams) -> bool:
    return abs(decode_signed(m, enc)) >= enc.limit


def decode(m: int, enc: EncodingParams) -> tuple[float, bool]:
    """Return ``(value, implausible)``; implausible values are returned as-is."""
    n = decode_signed(m, enc)
    if abs(n) == 1:
        n = 0
    return math.ldexp(float(n), -enc.gamma) + 0.0, abs(n) >= enc.limit


def quantize(value: float, enc: EncodingParams) -> float:
    return decode(encode(value, enc), enc)[0]


# -- key files --------------------------------------------------------------

def write_key_file(path: str | Path, pk: PublicKey, sk: SecretKey | None = None) -> None:
    """Write p, q, gen, h and optionally s as newline-separated decimals."""
    fields = [pk.p, pk.q, pk.gen, pk.h] + ([sk.s] if sk is not None else [])
    Path(path).write_text("".join(f"{v}\n" for v in fields))


def read_key_file(path: str | Path) -> tuple[PublicKey, SecretKey | None]:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) not in (4, 5):
        raise ValueError(f"{path}: expected 4 or 5 decimal fields, got {len(lines)}")
    vals = [int(x) for x in lines]
    pk = PublicKey(*vals[:4])
    pk.validate()
    sk = SecretKey(vals[4]) if len(vals) == 5 else None
    if sk is not None and pow(pk.gen, sk.s, pk.p) != pk.h:
        raise ValueError(f"{path}: secret exponent does not match h")
    return pk, sk
