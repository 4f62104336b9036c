"""DIDs, DID Documents and mutual DID Auth.

A DID is ``did:sim:`` followed by the unpadded lowercase base32 of the first
16 bytes of the public key's digest. DID Auth is a two-challenge exchange:

    initiator  -> responder : challenge(nI)
    responder  -> initiator : response(nI), challenge(nR)
    initiator  -> responder : response(nR)

Each side verifies the peer's proof against the peer's ledger-resolved
document and burns the nonce in its own cache.
"""

from __future__ import annotations

import base64
import logging
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol, Sequence

from .clock import LogicalClock
from .crypto_core import (
    KeyPair,
    canonical_parse,
    canonicalize,
    digest,
    sign,
    system_entropy,
    verify,
)
from .errors import (
    BadProofError,
    CanonicalizationError,
    DIDNotFoundError,
    DocumentError,
    ExpiredChallengeError,
    MessageError,
    NonceReusedError,
    ResolutionError,
    UnknownChallengeError,
)

logger = logging.getLogger(__name__)

DID_METHOD = "sim"
DID_PREFIX = f"did:{DID_METHOD}:"
DID_PATTERN = re.compile(r"^did:sim:[a-z2-7]{26}$")
NONCE_LEN = 16
DEFAULT_TTL = 100


def derive_did(public_key: bytes) -> str:
    ident = base64.b32encode(digest(bytes(public_key))[:16]).decode("ascii")
    return DID_PREFIX + ident.rstrip("=").lower()


def is_did(value: str) -> bool:
    return isinstance(value, str) and bool(DID_PATTERN.match(value))


@dataclass(frozen=True)
class DIDDocument:
    id: str
    public_keys: tuple[tuple[str, bytes], ...]
    authentication: tuple[str, ...]
    service_endpoints: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.public_keys:
            raise DocumentError("document needs at least one public key")
        ids = [kid for kid, _ in self.public_keys]
        if len(set(ids)) != len(ids):
            raise DocumentError("duplicate key ids")
        if derive_did(self.public_keys[0][1]) != self.id:
            raise DocumentError("id does not derive from the first public key")
        unknown = [kid for kid in self.authentication if kid not in ids]
        if unknown:
            raise DocumentError(f"authentication references unknown key ids {unknown}")

    def key(self, key_id: str) -> bytes | None:
        for kid, pk in self.public_keys:
            if kid == key_id:
                return pk
        return None

    def authentication_keys(self) -> list[tuple[str, bytes]]:
        return [(kid, pk) for kid, pk in self.public_keys if kid in self.authentication]

    def verify(self, message: bytes, signature: bytes, key_id: str | None = None) -> bool:
        """True if an authentication key (``key_id`` if given) signed ``message``."""
        for kid, pk in self.authentication_keys():
            if key_id is not None and kid != key_id:
                continue
            if verify(pk, message, signature):
                return True
        return False

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "public_keys": [{"id": kid, "public_key": pk.hex()} for kid, pk in self.public_keys],
            "authentication": list(self.authentication),
            "service_endpoints": [{"type": t, "locator": loc} for t, loc in self.service_endpoints],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DIDDocument":
        try:
            return cls(
                id=data["id"],
                public_keys=tuple(
                    (k["id"], bytes.fromhex(k["public_key"])) for k in data["public_keys"]
                ),
                authentication=tuple(data["authentication"]),
                service_endpoints=tuple(
                    (s["type"], s["locator"]) for s in data.get("service_endpoints", [])
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DocumentError(f"malformed document: {exc}") from exc


def build_document(
    keys: Sequence[KeyPair | bytes],
    service_endpoints: Iterable[tuple[str, str]] = (),
    authentication: Sequence[str] | None = None,
) -> DIDDocument:
    if not keys:
        raise DocumentError("empty key list")
    pks = [k.public_key if isinstance(k, KeyPair) else bytes(k) for k in keys]
    public_keys = tuple((f"key-{i}", pk) for i, pk in enumerate(pks, start=1))
    if authentication is None:
        authentication = [kid for kid, _ in public_keys]
    return DIDDocument(
        id=derive_did(pks[0]),
        public_keys=public_keys,
        authentication=tuple(authentication),
        service_endpoints=tuple(service_endpoints),
    )


# -- control proofs ------------------------------------------------------------


@dataclass(frozen=True)
class Challenge:
    nonce: bytes
    challenger_did: str
    responder_did: str
    issued_at: int
    ttl: int = DEFAULT_TTL

    def expired(self, now: int) -> bool:
        return now - self.issued_at > self.ttl

    def to_message(self) -> dict[str, Any]:
        return {
            "type": "challenge",
            "nonce": self.nonce.hex(),
            "did": self.challenger_did,
            "peer": self.responder_did,
            "issued_at": self.issued_at,
            "ttl": self.ttl,
        }

    @classmethod
    def from_message(cls, msg: dict[str, Any]) -> "Challenge":
        if msg.get("type") != "challenge":
            raise MessageError(f"expected challenge, got {msg.get('type')!r}")
        try:
            nonce = bytes.fromhex(msg["nonce"])
            ch = cls(nonce, msg["did"], msg["peer"], int(msg["issued_at"]), int(msg["ttl"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MessageError(f"malformed challenge: {exc}") from exc
        if len(nonce) != NONCE_LEN:
            raise MessageError("nonce must be 16 bytes")
        return ch

    def signing_bytes(self) -> bytes:
        return canonicalize(self.to_message())


@dataclass(frozen=True)
class ControlProof:
    did: str
    key_id: str
    signature: bytes


def prove_control(did: str, challenge: Challenge, private_key: bytes, key_id: str = "key-1") -> ControlProof:
    return ControlProof(did, key_id, sign(private_key, challenge.signing_bytes()))


def verify_control(document: DIDDocument, challenge: Challenge, proof: ControlProof) -> bool:
    if proof.did != document.id or challenge.responder_did != document.id:
        return False
    if proof.key_id not in document.authentication:
        return False
    return document.verify(challenge.signing_bytes(), proof.signature, key_id=proof.key_id)


class NonceCache:
    """Outstanding and consumed nonces for one party.

    Consumed nonces are kept until their challenge's ttl has elapsed; after
    that any replay fails the expiry check anyway.
    """

    def __init__(self) -> None:
        self._outstanding: dict[bytes, Challenge] = {}
        self._consumed: dict[bytes, int] = {}
        self._lock = threading.Lock()

    def issue(self, challenge: Challenge) -> None:
        with self._lock:
            if challenge.nonce in self._outstanding or challenge.nonce in self._consumed:
                raise NonceReusedError("nonce already issued")
            self._outstanding[challenge.nonce] = challenge

    def consume(self, nonce: bytes, now: int, check=None) -> Challenge:
        """Atomically look up, validate and burn ``nonce``.

        ``check(challenge)`` runs under the lock and must raise to reject; the
        nonce is burnt only if it returns.
        """
        with self._lock:
            self._prune(now)
            if nonce in self._consumed:
                raise NonceReusedError("nonce already consumed")
            challenge = self._outstanding.get(nonce)
            if challenge is None:
                raise UnknownChallengeError("no outstanding challenge for nonce")
            if challenge.expired(now):
                del self._outstanding[nonce]
                raise ExpiredChallengeError("challenge ttl elapsed")
            if check is not None:
                check(challenge)
            del self._outstanding[nonce]
            self._consumed[nonce] = challenge.issued_at + challenge.ttl
            return challenge

    def was_consumed(self, nonce: bytes) -> bool:
        return nonce in self._consumed

    def _prune(self, now: int) -> None:
        for n in [n for n, until in self._consumed.items() if until < now]:
            del self._consumed[n]


class DIDResolver(Protocol):
    def resolve_did(self, did: str) -> DIDDocument: ...


@dataclass(frozen=True)
class AuthenticatedChannel:
    session_id: bytes
    peer_dids: tuple[str, str]
    established_at: int


def session_id_for(dids: tuple[str, str], nonces: tuple[bytes, bytes]) -> bytes:
    return digest(canonicalize({"dids": list(dids), "nonces": [n.hex() for n in nonces]}))


@dataclass
class DIDAuthParty:
    """One endpoint of a DID Auth exchange, bound to a single local DID."""

    did: str
    keypair: KeyPair
    nonce_cache: NonceCache
    resolver: DIDResolver
    clock: LogicalClock
    rng: Any = field(default_factory=system_entropy)
    ttl: int = DEFAULT_TTL
    key_id: str = "key-1"

    def challenge(self, peer_did: str) -> Challenge:
        ch = Challenge(self.rng.randbytes(NONCE_LEN), self.did, peer_did, self.clock.now(), self.ttl)
        self.nonce_cache.issue(ch)
        return ch

    def respond(self, message: dict[str, Any]) -> dict[str, Any]:
        ch = Challenge.from_message(message)
        if ch.responder_did != self.did:
            raise MessageError("challenge addressed to a different DID")
        proof = prove_control(self.did, ch, self.keypair.private_key, self.key_id)
        return {
            "type": "response",
            "nonce": ch.nonce.hex(),
            "did": self.did,
            "key_id": proof.key_id,
            "proof": proof.signature.hex(),
        }

    def accept(self, message: dict[str, Any]) -> Challenge:
        if message.get("type") != "response":
            raise MessageError(f"expected response, got {message.get('type')!r}")
        try:
            nonce = bytes.fromhex(message["nonce"])
            proof = ControlProof(message["did"], message["key_id"], bytes.fromhex(message["proof"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MessageError(f"malformed response: {exc}") from exc

        def check(ch: Challenge) -> None:
            if proof.did != ch.responder_did:
                raise BadProofError("response from unexpected DID")
            try:
                doc = self.resolver.resolve_did(proof.did)
            except DIDNotFoundError as exc:
                raise ResolutionError(f"cannot resolve {proof.did}") from exc
            if not verify_control(doc, ch, proof):
                raise BadProofError("control proof does not verify")

        return self.nonce_cache.consume(nonce, self.clock.now(), check)


def _peer_resolvable(resolver: DIDResolver, did: str) -> None:
    try:
        resolver.resolve_did(did)
    except DIDNotFoundError as exc:
        raise ResolutionError(f"cannot resolve {did}") from exc


def _send(transport, to: str, message: dict[str, Any], log) -> None:
    data = canonicalize(message)
    log("out", data)
    transport.send(to, data)


def _receive(transport, me: str, log) -> dict[str, Any]:
    data = transport.receive(me)
    log("in", data)
    try:
        msg = canonical_parse(data)
    except CanonicalizationError as exc:
        raise MessageError(f"undecodable message: {exc}") from exc
    if not isinstance(msg, dict):
        raise MessageError("message is not a record")
    return msg


def did_auth(
    initiator_wallet,
    responder_wallet,
    ledger_view: DIDResolver,
    clock: LogicalClock,
    transport=None,
    *,
    initiator_did: str | None = None,
    responder_did: str | None = None,
    ttl: int = DEFAULT_TTL,
    rng=None,
) -> AuthenticatedChannel:
    """Run mutual DID Auth between two wallets over ``transport``.

    By default the responder answers with its public DID and the initiator
    uses its pairwise DID for that peer, if one exists.
    """
    from .transport import InProcessTransport

    transport = transport or InProcessTransport()
    r_did = responder_did or responder_wallet.public_did
    i_did = initiator_did or initiator_wallet.did_for(r_did)
    _peer_resolvable(ledger_view, r_did)
    _peer_resolvable(ledger_view, i_did)

    init = initiator_wallet.auth_party(i_did, ledger_view, clock, ttl=ttl, rng=rng)
    resp = responder_wallet.auth_party(r_did, ledger_view, clock, ttl=ttl, rng=rng)
    i_log = initiator_wallet.message_logger(r_did, clock)
    r_log = responder_wallet.message_logger(i_did, clock)
    I, R = "initiator", "responder"

    ch_i = init.challenge(r_did)
    _send(transport, R, ch_i.to_message(), i_log)

    msg = _receive(transport, R, r_log)
    _send(transport, I, resp.respond(msg), r_log)
    ch_r = resp.challenge(msg["did"])
    _send(transport, I, ch_r.to_message(), r_log)

    init.accept(_receive(transport, I, i_log))
    _send(transport, R, init.respond(_receive(transport, I, i_log)), i_log)

    resp.accept(_receive(transport, R, r_log))

    channel = AuthenticatedChannel(
        session_id=session_id_for((i_did, r_did), (ch_i.nonce, ch_r.nonce)),
        peer_dids=(i_did, r_did),
        established_at=clock.now(),
    )
    logger.debug("DID Auth channel %s established", channel.session_id.hex()[:12])
    return channel
