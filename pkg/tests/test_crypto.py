"""Group backends, hash-to-group, signatures, and the record AEAD."""

import random

import pytest

from dnascreen.crypto import (
    FIN_SEQ,
    TEST_BACKEND,
    aead_open,
    aead_seal,
    exp,
    get_backend,
    hash_to_group,
    prod_backend,
    SigningKey,
)
from dnascreen.errors import AuthenticationFailure, DecodeError

B = TEST_BACKEND


def test_test_backend_parameters():
    assert (B.p, B.q, B.g) == (23, 11, 2)
    assert pow(B.g, B.q, B.p) == 1
    assert len(B.all_elements()) == 11
    assert len({e.value for e in B.all_elements()}) == 11


def test_exp_identity_exponent():
    assert exp(B.generator, B.scalar(1)).value == 2


def test_exp_known_value():
    # modular-exponentiation oracle: 2^5 mod 23
    assert exp(B.generator, B.scalar(5)).value == pow(2, 5, 23) == 9


def test_exp_composition_law_exhaustive():
    # exp(exp(x,a),b) == exp(x, a*b mod q), brute force over the whole group
    for x in B.all_elements():
        for a in range(B.q):
            for b in range(B.q):
                lhs = exp(exp(x, B.scalar(a)), B.scalar(b))
                rhs = exp(x, B.scalar((a * b) % B.q))
                assert lhs == rhs


def test_exp_composition_spec_example():
    lhs = exp(exp(B.generator, B.scalar(3)), B.scalar(4))
    assert lhs == exp(B.generator, B.scalar(12 % 11))
    assert lhs.value == 2


def test_hash_to_group_deterministic():
    assert hash_to_group(b"abc", B) == hash_to_group(b"abc", B)


def test_hash_to_group_never_identity():
    rng = random.Random(7)
    for _ in range(500):
        msg = rng.randbytes(rng.randrange(1, 20))
        assert not hash_to_group(msg, B).is_identity()


def test_hash_to_group_identity_remap_rule():
    # find a message whose hash is 0 mod 11; the remap must yield g
    import hashlib
    for i in range(10000):
        msg = b"probe-%d" % i
        if int.from_bytes(hashlib.sha256(msg).digest(), "big") % B.q == 0:
            assert hash_to_group(msg, B) == B.generator
            return
    pytest.fail("no zero-exponent message found in range")


def test_hash_to_group_collision_scan():
    # 1000 random distinct inputs never collide as (input -> element) pairs
    # in the sense of determinism; element collisions themselves are expected
    # in an 11-element group, so check stability instead of injectivity.
    rng = random.Random(11)
    seen = {}
    for _ in range(1000):
        msg = rng.randbytes(16)
        v = hash_to_group(msg, B).value
        if msg in seen:
            assert seen[msg] == v
        seen[msg] = v
    # distinct messages spread over more than one element
    assert len(set(seen.values())) > 1


def test_element_membership_validation():
    with pytest.raises(DecodeError):
        B.element(5)  # 5 is not in the order-11 subgroup mod 23
    with pytest.raises(DecodeError):
        B.element(0)
    assert B.element(4).value == 4


def test_sign_verify_roundtrip_tamper_wrongkey():
    rng = random.Random(1)
    sk = SigningKey.generate(rng)
    sk2 = SigningKey.generate(rng)
    m = b"screen this order"
    sig = sk.sign(m)
    assert sk.verify_key.verify(m, sig)
    assert not sk.verify_key.verify(m + b"\x00", sig)
    assert not sk2.verify_key.verify(m, sig)


def test_signature_negative_matrix():
    # no vector verifies under any key other than its signer's (5 keys x 5 msgs)
    rng = random.Random(2)
    keys = [SigningKey.generate(rng) for _ in range(5)]
    msgs = [b"msg-%d" % i for i in range(5)]
    for i, sk in enumerate(keys):
        for m in msgs:
            sig = sk.sign(m)
            for j, other in enumerate(keys):
                assert other.verify_key.verify(m, sig) == (i == j)


def test_aead_roundtrip():
    key = bytes(range(32))
    assert aead_open(key, 0, aead_seal(key, 0, b"payload")) == b"payload"


def test_aead_seq_mismatch():
    key = bytes(range(32))
    ct = aead_seal(key, 0, b"payload")
    with pytest.raises(AuthenticationFailure):
        aead_open(key, 1, ct)


def test_aead_wrong_key_and_mutation():
    key = bytes(range(32))
    other = bytes(31 for _ in range(32))
    ct = aead_seal(key, 3, b"payload")
    with pytest.raises(AuthenticationFailure):
        aead_open(other, 3, ct)
    for i in range(len(ct)):
        broken = bytearray(ct)
        broken[i] ^= 0x01
        with pytest.raises(AuthenticationFailure):
            aead_open(key, 3, bytes(broken))


def test_aead_same_key_same_seq_swap_accepted():
    # the latent weakness the simulator must be able to exhibit: records from
    # two sessions under the same key at equal positions are interchangeable
    key = bytes(range(32))
    ct_a = aead_seal(key, 0, b"session A answer")
    ct_b = aead_seal(key, 0, b"session B answer")
    assert aead_open(key, 0, ct_b) == b"session B answer"
    assert aead_open(key, 0, ct_a) == b"session A answer"


def test_fin_seq_reserved():
    assert FIN_SEQ == 2 ** 64 - 1


def test_prod_backend_group_law():
    P = prod_backend()
    assert pow(P.g, P.q, P.p) == 1
    rng = random.Random(3)
    x = hash_to_group(b"order", P)
    a, b = P.random_scalar(rng), P.random_scalar(rng)
    assert exp(exp(x, a), b) == exp(x, a.mul(b))
    assert not hash_to_group(b"anything", P).is_identity()
    assert get_backend("prod") is P
