import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sha256
from ssi_access.crypto_core import (
    SeededEntropy,
    canonical_parse,
    canonicalize,
    digest,
    digest_hex,
    generate_keypair,
    is_canonical,
    public_key_of,
    sign,
    verify,
)
from ssi_access.errors import CanonicalizationError, MalformedKeyError, MalformedSeedError

# RFC 8032 section 7.1, test 1 (empty message)
RFC_SK = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
RFC_PK = bytes.fromhex("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
RFC_SIG = bytes.fromhex(
    "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
)


def test_rfc8032_vector():
    kp = generate_keypair(RFC_SK)
    assert kp.public_key == RFC_PK
    assert sign(RFC_SK, b"") == RFC_SIG
    assert verify(RFC_PK, b"", RFC_SIG)


def test_keypair_deterministic_and_zero_seed():
    s = bytes(range(32))
    assert generate_keypair(s) == generate_keypair(s)
    assert generate_keypair(bytes(32)).public_key != generate_keypair(s).public_key
    assert public_key_of(s) == generate_keypair(s).public_key


@pytest.mark.parametrize("seed", [b"", b"x" * 31, b"x" * 33, "a" * 32])
def test_malformed_seed(seed):
    with pytest.raises(MalformedSeedError):
        generate_keypair(seed)


def test_sign_rejects_bad_key():
    with pytest.raises(MalformedKeyError):
        sign(b"short", b"m")


def test_hello_round_trip():
    kp = generate_keypair(bytes(32))
    assert verify(kp.public_key, b"hello", sign(kp.private_key, b"hello"))


def test_verify_malformed_inputs_are_false():
    kp = generate_keypair(bytes(32))
    sig = sign(kp.private_key, b"m")
    assert not verify(b"\x00" * 5, b"m", sig)
    assert not verify(kp.public_key, b"m", sig[:-1])
    assert not verify(kp.public_key, b"m", None)


def test_keypair_repr_hides_private_key():
    kp = generate_keypair(bytes(range(32)))
    assert kp.private_key.hex() not in repr(kp)


def test_digest_known_vector():
    assert digest_hex(b"abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert digest(b"abc") == sha256(b"abc")


def test_digest_extension_corpus():
    rng = random.Random(20240601)
    inputs, digests = set(), set()
    for _ in range(10_000):
        x = rng.randbytes(rng.randrange(0, 64))
        a, b = digest(x), digest(x + b"\x00")
        assert a != b
        assert a == sha256(x)
        inputs.add(x)
        digests.add(a)
    assert len(digests) == len(inputs)


@settings(max_examples=1000)
@given(st.binary(min_size=32, max_size=32), st.binary(max_size=256))
def test_sign_verify_round_trip(seed, msg):
    kp = generate_keypair(seed)
    assert verify(kp.public_key, msg, sign(kp.private_key, msg))


@settings(max_examples=300)
@given(st.binary(min_size=32, max_size=32), st.binary(min_size=1, max_size=64), st.data())
def test_single_byte_mutation_fails(seed, msg, data):
    kp = generate_keypair(seed)
    sig = sign(kp.private_key, msg)
    which = data.draw(st.sampled_from(["msg", "sig"]))
    target = bytearray(msg if which == "msg" else sig)
    i = data.draw(st.integers(0, len(target) - 1))
    target[i] ^= data.draw(st.integers(1, 255))
    if which == "msg":
        assert not verify(kp.public_key, bytes(target), sig)
    else:
        assert not verify(kp.public_key, msg, bytes(target))


# JSON values that survive a round trip (no floats: canonical text of floats is
# left to json and not part of any ledger format here)
json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**53), 2**53) | st.text(max_size=12),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=20,
)


def test_canonical_bytes_literal():
    assert canonicalize({"b": 1, "a": [True, None, "é"]}) == b'{"a":[true,null,"\xc3\xa9"],"b":1}'
    assert canonicalize({"k": b"\x01\xff"}) == b'{"k":"01ff"}'
    assert canonicalize({3, 1, 2}) == b"[1,2,3]"


def test_canonical_key_order():
    assert canonicalize({"b": 1, "a": 2}) == canonicalize({"a": 2, "b": 1})
    assert digest(canonicalize({"v": "V1"})) != digest(canonicalize({"v": "V2"}))


@given(st.dictionaries(st.text(max_size=6), json_values, max_size=6), st.randoms())
def test_canonical_permutation_invariant_and_idempotent(d, r):
    items = list(d.items())
    r.shuffle(items)
    c = canonicalize(d)
    assert canonicalize(dict(items)) == c
    assert canonicalize(canonical_parse(c)) == c
    assert is_canonical(c)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf, {1: "int key"}, object()])
def test_canonical_rejects(bad):
    with pytest.raises(CanonicalizationError):
        canonicalize({"x": bad} if not isinstance(bad, dict) else bad)


def test_canonical_parse_rejects_nan_and_bad_utf8():
    with pytest.raises(CanonicalizationError):
        canonical_parse(b'{"x":NaN}')
    with pytest.raises(CanonicalizationError):
        canonical_parse(b"\xff")
    assert not is_canonical(b'{"b":1, "a":2}')


def test_seeded_entropy_reproducible():
    assert SeededEntropy(5).randbytes(16) == SeededEntropy(5).randbytes(16)
    assert SeededEntropy(5)(8) != SeededEntropy(6)(8)
