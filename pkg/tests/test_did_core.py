import random
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_env
from oracles import base32_lower, did_of
from ssi_access.clock import LogicalClock
from ssi_access.crypto_core import SeededEntropy, canonical_parse, canonicalize, digest, generate_keypair
from ssi_access.did_core import (
    DID_PATTERN,
    Challenge,
    DIDDocument,
    NonceCache,
    build_document,
    derive_did,
    did_auth,
    is_did,
    prove_control,
    verify_control,
)
from ssi_access.errors import (
    DIDAuthError,
    DocumentError,
    ExpiredChallengeError,
    NonceReusedError,
    ResolutionError,
    SSIError,
    TransportError,
    UnknownChallengeError,
)
from ssi_access.transport import FaultPlan, InProcessTransport

# frozen from the independent base32 oracle
RFC_PK = bytes.fromhex("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
RFC_DID = "did:sim:eh7ddx5bksrgcytl7bkai36se4"


def test_base32_oracle_matches_rfc4648():
    # RFC 4648 section 10 vectors, lowercased and unpadded
    for raw, enc in [(b"", ""), (b"f", "my"), (b"fo", "mzxq"), (b"foo", "mzxw6"), (b"foobar", "mzxw6ytboi")]:
        assert base32_lower(raw) == enc


def test_frozen_did():
    assert did_of(RFC_PK) == RFC_DID
    assert derive_did(RFC_PK) == RFC_DID


def test_did_shape_and_collision_scan():
    rng = random.Random(7)
    pattern = re.compile(r"^did:sim:[a-z2-7]{26}$")
    dids = set()
    for _ in range(10_000):
        pk = generate_keypair(rng.randbytes(32)).public_key
        d = derive_did(pk)
        assert pattern.match(d) and DID_PATTERN.match(d)
        assert d == did_of(pk)
        dids.add(d)
    assert len(dids) == 10_000


@settings(max_examples=200)
@given(st.binary(min_size=32, max_size=32))
def test_derivation_is_pure(seed):
    pk = generate_keypair(seed).public_key
    assert derive_did(pk) == derive_did(bytes(pk)) == did_of(pk)
    assert is_did(derive_did(pk))


def test_build_document():
    k = generate_keypair(bytes(32))
    doc = build_document([k])
    assert doc.id == derive_did(k.public_key)
    assert doc.public_keys == (("key-1", k.public_key),) and doc.authentication == ("key-1",)
    assert doc.service_endpoints == ()
    assert DIDDocument.from_dict(doc.to_dict()) == doc
    with pytest.raises(DocumentError):
        build_document([k], authentication=["key-9"])
    with pytest.raises(DocumentError):
        DIDDocument("did:sim:" + "a" * 26, (("key-1", k.public_key),), ("key-1",))
    with pytest.raises(DocumentError):
        DIDDocument.from_dict({"id": doc.id})


def _challenge(nonce=b"\x01" * 16, responder="did:sim:" + "b" * 26):
    return Challenge(nonce, "did:sim:" + "a" * 26, responder, 0, 100)


def test_control_proofs():
    k1, k2 = generate_keypair(b"\x01" * 32), generate_keypair(b"\x02" * 32)
    doc = build_document([k1, k2], authentication=["key-1"])
    ch = _challenge(responder=doc.id)
    assert verify_control(doc, ch, prove_control(doc.id, ch, k1.private_key))
    # key-2 is listed but not an authentication key
    assert not verify_control(doc, ch, prove_control(doc.id, ch, k2.private_key, key_id="key-2"))
    assert not verify_control(doc, ch, prove_control(doc.id, ch, k2.private_key, key_id="key-1"))
    proof = prove_control(doc.id, ch, k1.private_key)
    assert not verify_control(doc, _challenge(b"\x02" * 16, doc.id), proof)


def test_challenge_message_round_trip():
    ch = _challenge()
    assert Challenge.from_message(ch.to_message()) == ch
    assert ch.signing_bytes() == canonicalize(ch.to_message())
    assert not ch.expired(100) and ch.expired(101)


def test_nonce_cache():
    cache = NonceCache()
    ch = _challenge()
    cache.issue(ch)
    with pytest.raises(NonceReusedError):
        cache.issue(ch)
    assert cache.consume(ch.nonce, 5) == ch
    with pytest.raises(NonceReusedError):
        cache.consume(ch.nonce, 6)
    with pytest.raises(UnknownChallengeError):
        cache.consume(b"\x09" * 16, 6)
    late = _challenge(b"\x03" * 16)
    cache.issue(late)
    with pytest.raises(ExpiredChallengeError):
        cache.consume(late.nonce, 500)


def test_nonce_not_burnt_when_check_fails():
    cache = NonceCache()
    ch = _challenge()
    cache.issue(ch)

    def boom(_):
        raise DIDAuthError("nope")

    with pytest.raises(DIDAuthError):
        cache.consume(ch.nonce, 1, boom)
    assert cache.consume(ch.nonce, 1) == ch


def _parties():
    env = make_env()
    return env, env.wallet("issuer"), env.wallet("holder")


def test_did_auth_two_registered_parties():
    env, a, b = _parties()
    ch = did_auth(b, a, env.view(), env.clock, rng=SeededEntropy(1))
    assert ch.peer_dids == (b.public_did, a.public_did)
    assert len(ch.session_id) == 32
    # each side logged the four messages
    assert len(a.transcript(b.public_did)) == 4 and len(b.transcript(a.public_did)) == 4


def test_did_auth_unregistered_responder():
    env, a, b = _parties()
    stranger = env.wallet("stranger", register=False)
    with pytest.raises(ResolutionError) as ei:
        did_auth(b, stranger, env.view(), env.clock)
    assert ei.value.code == "resolution_failure"


def test_replayed_transcript_rejected():
    env, a, b = _parties()
    t = InProcessTransport()
    did_auth(b, a, env.view(), env.clock, t, rng=SeededEntropy(2))
    msgs = [canonical_parse(data) for _, data in t.sent]
    # responder's proof replayed to the initiator, and the initiator's to the responder
    with pytest.raises(NonceReusedError):
        b.auth_party(b.public_did, env.view(), env.clock).accept(msgs[1])
    with pytest.raises(NonceReusedError):
        a.auth_party(a.public_did, env.view(), env.clock).accept(msgs[3])


def _mutate(value):
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return value + 1
    if re.fullmatch(r"[0-9a-f]+", value) and len(value) % 2 == 0:
        return ("1" if value[0] == "0" else "0") + value[1:]
    return value[:-1] + ("a" if value[-1] != "a" else "b")


FIELDS = [
    (0, f) for f in ("type", "nonce", "did", "peer", "issued_at", "ttl")
] + [(1, f) for f in ("type", "nonce", "did", "key_id", "proof")] + [
    (2, f) for f in ("type", "nonce", "did", "peer", "issued_at", "ttl")
] + [(3, f) for f in ("type", "nonce", "did", "key_id", "proof")]


@pytest.mark.parametrize("index,name", FIELDS)
def test_any_tampered_field_aborts(index, name):
    env, a, b = _parties()

    def tamper(i, data):
        if i != index:
            return data
        msg = canonical_parse(data)
        assert name in msg
        msg[name] = _mutate(msg[name])
        return canonicalize(msg)

    with pytest.raises(SSIError):
        did_auth(b, a, env.view(), env.clock, InProcessTransport(FaultPlan(tamper=tamper)), rng=SeededEntropy(3))


@pytest.mark.parametrize("plan", [FaultPlan(drop=1.0), FaultPlan(duplicate=1.0)])
def test_transport_faults_abort(plan):
    env, a, b = _parties()
    with pytest.raises((SSIError, TransportError)):
        did_auth(b, a, env.view(), env.clock, InProcessTransport(plan), rng=SeededEntropy(4))


def test_leftover_duplicate_is_refused():
    env, a, b = _parties()
    t = InProcessTransport(FaultPlan(reorder=1.0, duplicate=1.0))
    did_auth(b, a, env.view(), env.clock, t, rng=SeededEntropy(4))
    leftover = canonical_parse(t.receive("initiator"))
    assert leftover["type"] == "response"
    with pytest.raises(NonceReusedError):
        b.auth_party(b.public_did, env.view(), env.clock).accept(leftover)


def test_expired_response_rejected():
    env, a, b = _parties()

    class SlowTransport(InProcessTransport):
        def send(self, to, data):
            if len(self.sent) == 1:
                env.clock.advance(101)
            super().send(to, data)

    with pytest.raises(ExpiredChallengeError):
        did_auth(b, a, env.view(), env.clock, SlowTransport(), ttl=100)
