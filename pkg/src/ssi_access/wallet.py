"""Per-actor wallet: keys, pairwise DIDs, credentials and message log."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Any, Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .clock import LogicalClock
from .credential_engine import VerifiableCredential
from .crypto_core import KeyPair, canonical_parse, canonicalize, digest, generate_keypair, system_entropy
from .did_core import DEFAULT_TTL, DIDAuthParty, NonceCache, derive_did
from .errors import (
    CanonicalizationError,
    CorruptPayloadError,
    ForeignHolderError,
    WalletAuthError,
    WalletError,
)
from .identity_ledger import LedgerNode, Steward, register_did

MAGIC = b"SSIW"
VERSION = 1
_HEADER = struct.Struct(">4sH16s12sI")  # magic, version, salt, nonce, ciphertext length
_SCRYPT = dict(n=2**14, r=8, p=1, dklen=32)


@dataclass
class Relation:
    peer_did: str
    local_did: str
    keypair: KeyPair


@dataclass
class MessageRecord:
    direction: str  # "in" | "out"
    peer: str
    message: bytes
    at: int


@dataclass
class Wallet:
    owner_label: str
    master_seed: bytes
    relations: list[Relation] = field(default_factory=list)
    credentials: list[VerifiableCredential] = field(default_factory=list)
    message_log: list[MessageRecord] = field(default_factory=list)
    nonce_cache: NonceCache = field(default_factory=NonceCache, compare=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.master_seed) != 32:
            raise WalletError("master seed must be 32 bytes")

    def __repr__(self) -> str:
        return f"Wallet({self.owner_label!r}, did={self.public_did})"

    @property
    def root_keypair(self) -> KeyPair:
        return generate_keypair(digest(self.master_seed + b"root"))

    @property
    def public_did(self) -> str:
        return derive_did(self.root_keypair.public_key)

    def dids(self) -> set[str]:
        return {self.public_did} | {r.local_did for r in self.relations}

    def relation_for(self, peer_did: str) -> Relation | None:
        for r in self.relations:
            if r.peer_did == peer_did:
                return r
        return None

    def did_for(self, peer_did: str) -> str:
        rel = self.relation_for(peer_did)
        return rel.local_did if rel else self.public_did

    def keypair_for(self, did: str) -> KeyPair:
        if did == self.public_did:
            return self.root_keypair
        for r in self.relations:
            if r.local_did == did:
                return r.keypair
        raise WalletError(f"wallet does not control {did}")

    def register_public_did(self, ledger: LedgerNode, endorser: Steward | None, service_endpoints=()):
        return register_did(ledger, self.root_keypair, endorser, service_endpoints)[1]

    def get_credential(self, cred_id: str) -> VerifiableCredential | None:
        for c in self.credentials:
            if c.cred_id == cred_id:
                return c
        return None

    def auth_party(self, did: str, resolver, clock: LogicalClock, ttl: int = DEFAULT_TTL, rng=None) -> DIDAuthParty:
        return DIDAuthParty(did, self.keypair_for(did), self.nonce_cache, resolver, clock, rng or system_entropy(), ttl)

    def message_logger(self, peer: str, clock: LogicalClock) -> Callable[[str, bytes], None]:
        def log(direction: str, data: bytes) -> None:
            self.message_log.append(MessageRecord(direction, peer, bytes(data), clock.now()))

        return log

    def transcript(self, peer: str) -> list[bytes]:
        return [m.message for m in self.message_log if m.peer == peer]

    # serialization ------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "owner_label": self.owner_label,
            "master_seed": self.master_seed.hex(),
            "relations": [
                {"peer_did": r.peer_did, "local_did": r.local_did, "private_key": r.keypair.private_key.hex()}
                for r in self.relations
            ],
            "credentials": [c.to_dict() for c in self.credentials],
            "message_log": [
                {"direction": m.direction, "peer": m.peer, "message": m.message.hex(), "at": m.at}
                for m in self.message_log
            ],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Wallet":
        return cls(
            owner_label=d["owner_label"],
            master_seed=bytes.fromhex(d["master_seed"]),
            relations=[
                Relation(r["peer_did"], r["local_did"], generate_keypair(bytes.fromhex(r["private_key"])))
                for r in d["relations"]
            ],
            credentials=[VerifiableCredential.from_dict(c) for c in d["credentials"]],
            message_log=[
                MessageRecord(m["direction"], m["peer"], bytes.fromhex(m["message"]), m["at"])
                for m in d["message_log"]
            ],
        )


def create_wallet(owner_label: str, master_seed: bytes) -> Wallet:
    return Wallet(owner_label, bytes(master_seed))


def create_pairwise_did(wallet: Wallet, peer_did: str, ledger: LedgerNode, anchor_endorsement: Steward) -> str:
    """Return the wallet's DID dedicated to ``peer_did``, registering it on first use."""
    existing = wallet.relation_for(peer_did)
    if existing is not None:
        return existing.local_did
    kp = generate_keypair(digest(wallet.master_seed + peer_did.encode("utf-8")))
    did, _ = register_did(ledger, kp, anchor_endorsement)
    wallet.relations.append(Relation(peer_did, did, kp))
    return did


def store_credential(wallet: Wallet, credential: VerifiableCredential) -> None:
    if credential.holder_did not in wallet.dids():
        raise ForeignHolderError(f"credential is held by {credential.holder_did}, not this wallet")
    if wallet.get_credential(credential.cred_id) is None:
        wallet.credentials.append(credential)


def _key(passphrase: str, salt: bytes) -> bytes:
    return hashlib.scrypt(passphrase.encode("utf-8"), salt=salt, **_SCRYPT)


def export_wallet(wallet: Wallet, passphrase: str, rng=None) -> bytes:
    rng = rng or system_entropy()
    salt, nonce = rng.randbytes(16), rng.randbytes(12)
    plaintext = canonicalize(wallet.to_dict())
    ct_len = len(plaintext) + 16
    header = _HEADER.pack(MAGIC, VERSION, salt, nonce, ct_len)
    return header + AESGCM(_key(passphrase, salt)).encrypt(nonce, plaintext, header)


def import_wallet(data: bytes, passphrase: str) -> Wallet:
    if len(data) < _HEADER.size:
        raise CorruptPayloadError("payload shorter than envelope header")
    header = data[: _HEADER.size]
    magic, version, salt, nonce, ct_len = _HEADER.unpack(header)
    if magic != MAGIC:
        raise CorruptPayloadError("bad magic")
    if version != VERSION:
        raise CorruptPayloadError(f"unsupported wallet version {version}")
    ciphertext = data[_HEADER.size :]
    if len(ciphertext) != ct_len:
        raise CorruptPayloadError("ciphertext length does not match header")
    try:
        plaintext = AESGCM(_key(passphrase, salt)).decrypt(nonce, ciphertext, header)
    except InvalidTag as exc:
        raise WalletAuthError("wrong passphrase or tampered wallet") from exc
    try:
        return Wallet.from_dict(canonical_parse(plaintext))
    except (CanonicalizationError, KeyError, TypeError, ValueError) as exc:
        raise CorruptPayloadError(f"undecodable wallet body: {exc}") from exc
