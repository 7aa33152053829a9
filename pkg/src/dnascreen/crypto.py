"""Prime-order group backends, hash-to-group, signatures, and channel AEAD.

Two interchangeable group backends sit behind one interface:

- ``test``: the order-11 subgroup of the integers mod 23 generated by 2.
  Small enough that every algebraic property can be checked by brute force.
- ``prod``: the prime-order subgroup of quadratic residues mod the RFC 3526
  3072-bit safe prime (generator 2). Roughly 128-bit classical security.

All protocol logic above this module is backend-generic: it sees only
``GroupElement`` and ``Scalar``. Signatures are Ed25519 over canonical
encodings, and the record AEAD is ChaCha20-Poly1305 with the 64-bit
per-direction sequence number baked into the nonce.
"""

import hashlib

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import AuthenticationFailure, DecodeError

# RFC 3526 group 15 (3072-bit MODP). p is a safe prime: q = (p-1)/2 is prime,
# and 2 generates the order-q subgroup of quadratic residues (p = 7 mod 8).
_RFC3526_3072_P = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AAAC42DAD33170D04507A33"
    "A85521ABDF1CBA64ECFB850458DBEF0A8AEA71575D060C7DB3970F85A6E1E4C7"
    "ABF5AE8CDB0933D71E8C94E04A25619DCEE3D2261AD2EE6BF12FFA06D98A0864"
    "D87602733EC86A64521F2B18177B200CBBE117577A615D6C770988C0BAD946E2"
    "08E24FA074E5AB3143DB5BFCE0FD108E4B82D120A93AD2CAFFFFFFFFFFFFFFFF",
    16,
)


class GroupBackend:
    """A cyclic group of prime order q inside the integers mod p."""

    def __init__(self, name: str, p: int, q: int, g: int,
                 element_size: int, scalar_size: int):
        self.name = name
        self.p = p
        self.q = q
        self.g = g
        self.element_size = element_size
        self.scalar_size = scalar_size
        self.generator = GroupElement(self, g)
        self.identity = GroupElement(self, 1)

    def scalar(self, v: int) -> "Scalar":
        return Scalar(self, v % self.q)

    def element(self, v: int) -> "GroupElement":
        """Wrap v, validating subgroup membership."""
        if not 1 <= v < self.p or pow(v, self.q, self.p) != 1:
            raise DecodeError(f"{v} is not in the order-{self.q} subgroup")
        return GroupElement(self, v)

    def random_scalar(self, rng) -> "Scalar":
        return Scalar(self, rng.randrange(self.q))

    def random_nonzero_scalar(self, rng) -> "Scalar":
        return Scalar(self, rng.randrange(1, self.q))

    def decode_element(self, b: bytes) -> "GroupElement":
        if len(b) != self.element_size:
            raise DecodeError("bad element width")
        return self.element(int.from_bytes(b, "big"))

    def decode_scalar(self, b: bytes) -> "Scalar":
        if len(b) != self.scalar_size:
            raise DecodeError("bad scalar width")
        v = int.from_bytes(b, "big")
        if v >= self.q:
            raise DecodeError("scalar out of range")
        return Scalar(self, v)

    def hash_to_group(self, msg: bytes) -> "GroupElement":
        return hash_to_group(msg, self)

    def all_elements(self) -> list["GroupElement"]:
        """Every group element; only sensible for the test backend."""
        if self.q > 4096:
            raise ValueError("enumeration is for the small test backend")
        out = [self.identity]
        x = self.generator
        for _ in range(self.q - 1):
            out.append(x)
            x = x.mul(self.generator)
        return out

    def __repr__(self):
        return f"GroupBackend({self.name})"


class GroupElement:
    """Element of the backend's prime-order subgroup."""

    __slots__ = ("backend", "value")

    def __init__(self, backend: GroupBackend, value: int):
        self.backend = backend
        self.value = value

    def exp(self, e: "Scalar") -> "GroupElement":
        return GroupElement(self.backend, pow(self.value, e.value, self.backend.p))

    def mul(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.backend, (self.value * other.value) % self.backend.p)

    def is_identity(self) -> bool:
        return self.value == 1

    def encode(self) -> bytes:
        return self.value.to_bytes(self.backend.element_size, "big")

    def __eq__(self, other):
        return (isinstance(other, GroupElement)
                and self.backend is other.backend
                and self.value == other.value)

    def __hash__(self):
        return hash((self.backend.name, self.value))

    def __repr__(self):
        return f"GroupElement({self.value} mod {self.backend.p})"


class Scalar:
    """Integer modulo the group order q."""

    __slots__ = ("backend", "value")

    def __init__(self, backend: GroupBackend, value: int):
        self.backend = backend
        self.value = value % backend.q

    def mul(self, other: "Scalar") -> "Scalar":
        return Scalar(self.backend, (self.value * other.value) % self.backend.q)

    def add(self, other: "Scalar") -> "Scalar":
        return Scalar(self.backend, (self.value + other.value) % self.backend.q)

    def inverse(self) -> "Scalar":
        if self.value == 0:
            raise ZeroDivisionError("zero scalar has no inverse")
        return Scalar(self.backend, pow(self.value, -1, self.backend.q))

    def encode(self) -> bytes:
        return self.value.to_bytes(self.backend.scalar_size, "big")

    def __eq__(self, other):
        return (isinstance(other, Scalar)
                and self.backend is other.backend
                and self.value == other.value)

    def __hash__(self):
        return hash((self.backend.name, "scalar", self.value))

    def __repr__(self):
        return f"Scalar({self.value} mod {self.backend.q})"


def exp(base: GroupElement, e: Scalar) -> GroupElement:
    """base^e in the group. exp(exp(x,a),b) == exp(x, a*b mod q)."""
    return base.exp(e)


def hash_to_group(msg: bytes, backend: GroupBackend) -> GroupElement:
    """Deterministically map bytes into the group, never hitting the identity.

    Test backend: g^(SHA-256(msg) mod q), with a remap of the identity to g.
    Prod backend: square a SHAKE-256 expansion of msg mod p, landing in the
    quadratic-residue subgroup with unknown discrete log; identity remaps to g.
    """
    if backend.name == "test":
        e = int.from_bytes(hashlib.sha256(msg).digest(), "big") % backend.q
        elt = backend.generator.exp(Scalar(backend, e))
    else:
        width = (backend.p.bit_length() + 7) // 8
        x = int.from_bytes(hashlib.shake_256(msg).digest(width), "big")
        x = (x % (backend.p - 1)) + 1
        elt = GroupElement(backend, pow(x, 2, backend.p))
    if elt.is_identity():
        return backend.generator
    return elt


TEST_BACKEND = GroupBackend("test", p=23, q=11, g=2, element_size=4, scalar_size=4)

_prod = None


def prod_backend() -> GroupBackend:
    global _prod
    if _prod is None:
        p = _RFC3526_3072_P
        _prod = GroupBackend("prod", p=p, q=(p - 1) // 2, g=2,
                             element_size=384, scalar_size=384)
    return _prod


def get_backend(name: str) -> GroupBackend:
    if name == "test":
        return TEST_BACKEND
    if name == "prod":
        return prod_backend()
    raise ValueError(f"unknown backend {name!r}")


# --- signatures -------------------------------------------------------------

class VerifyKey:
    __slots__ = ("_raw",)

    def __init__(self, raw: bytes):
        if len(raw) != 32:
            raise DecodeError("verify key must be 32 bytes")
        self._raw = raw

    def verify(self, msg: bytes, sig: bytes) -> bool:
        """True iff sig was made by the matching signing key over exactly msg."""
        try:
            Ed25519PublicKey.from_public_bytes(self._raw).verify(sig, msg)
            return True
        except (InvalidSignature, ValueError):
            return False

    def encode(self) -> bytes:
        return self._raw

    def __eq__(self, other):
        return isinstance(other, VerifyKey) and self._raw == other._raw

    def __hash__(self):
        return hash(self._raw)

    def __repr__(self):
        return f"VerifyKey({self._raw.hex()[:12]})"


class SigningKey:
    __slots__ = ("_seed", "_key")

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise DecodeError("signing key seed must be 32 bytes")
        self._seed = seed
        self._key = Ed25519PrivateKey.from_private_bytes(seed)

    @classmethod
    def generate(cls, rng) -> "SigningKey":
        return cls(rng.randbytes(32))

    def sign(self, msg: bytes) -> bytes:
        return self._key.sign(msg)

    @property
    def verify_key(self) -> VerifyKey:
        return VerifyKey(self._key.public_key().public_bytes_raw())

    def encode(self) -> bytes:
        return self._seed


def sign(sk: SigningKey, msg: bytes) -> bytes:
    return sk.sign(msg)


def verify(pk: VerifyKey, msg: bytes, sig: bytes) -> bool:
    return pk.verify(msg, sig)


# --- authenticated encryption ------------------------------------------------

KEY_SIZE = 32

# Sequence value reserved for handshake finished messages so that data
# records can start at sequence 0, which is what the cross-connection
# record-swap experiment depends on.
FIN_SEQ = 2 ** 64 - 1


def _nonce(seq: int) -> bytes:
    if not 0 <= seq < 2 ** 64:
        raise ValueError("sequence number out of range")
    return b"\x00\x00\x00\x00" + seq.to_bytes(8, "big")


def aead_seal(key: bytes, seq: int, plaintext: bytes) -> bytes:
    if len(key) != KEY_SIZE:
        raise ValueError("AEAD key must be 32 bytes")
    return ChaCha20Poly1305(key).encrypt(_nonce(seq), plaintext, b"")


def aead_open(key: bytes, seq: int, ciphertext: bytes) -> bytes:
    if len(key) != KEY_SIZE:
        raise ValueError("AEAD key must be 32 bytes")
    try:
        return ChaCha20Poly1305(key).decrypt(_nonce(seq), ciphertext, b"")
    except InvalidTag:
        raise AuthenticationFailure("record failed authentication") from None
