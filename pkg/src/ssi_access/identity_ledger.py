"""Permissioned, append-only identity ledger.

Stores DID registrations, credential schemas, credential hashes and
revocation-registry updates as hash-chained transactions. A single
:class:`IdentityLedger` holds the durable log; :class:`LedgerNode` objects
give it a VALIDATOR (read/write) or OBSERVER (read-only) face.

Payloads by kind::

    DID_REG       {"document": <DIDDocument>}
    SCHEMA        {"schema_id", "name", "claim_names"}
    CRED_HASH     {"cred_hash", "registry_id", "revocation_index"}
    REVOC_UPDATE  {"op": "create"}
                  {"op": "revoke", "registry_id", "indices", "state_digest"}
"""

from __future__ import annotations

import enum
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import hashchain
from .clock import LogicalClock
from .crypto_core import KeyPair, canonicalize, digest, digest_hex, sign, verify
from .did_core import DIDDocument, build_document, derive_did
from .errors import (
    AuthorizationError,
    BadSignatureError,
    DIDNotFoundError,
    DocumentError,
    EndorsementError,
    InvalidPayloadError,
    LedgerCorruptError,
    ObserverWriteError,
    OutOfRangeError,
    UnknownIndexError,
    UnknownRegistryError,
    UnknownSchemaError,
    UnknownSubmitterError,
)

logger = logging.getLogger(__name__)


class TxnKind(str, enum.Enum):
    DID_REG = "DID_REG"
    SCHEMA = "SCHEMA"
    CRED_HASH = "CRED_HASH"
    REVOC_UPDATE = "REVOC_UPDATE"


class NodeRole(str, enum.Enum):
    VALIDATOR = "VALIDATOR"
    OBSERVER = "OBSERVER"


# -- genesis ----------------------------------------------------------------------


@dataclass(frozen=True)
class TrustAnchor:
    did: str
    public_key: bytes

    def document(self) -> DIDDocument:
        return build_document([self.public_key])


@dataclass(frozen=True)
class GenesisConfig:
    trust_anchors: tuple[TrustAnchor, ...]

    def __post_init__(self) -> None:
        if not self.trust_anchors:
            raise InvalidPayloadError("genesis needs at least one trust anchor")
        for a in self.trust_anchors:
            if derive_did(a.public_key) != a.did:
                raise InvalidPayloadError(f"anchor {a.did} does not derive from its key")

    def anchor(self, did: str) -> TrustAnchor | None:
        for a in self.trust_anchors:
            if a.did == did:
                return a
        return None

    def to_dict(self) -> dict[str, Any]:
        return {"trust_anchors": [{"did": a.did, "public_key": a.public_key.hex()} for a in self.trust_anchors]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GenesisConfig":
        try:
            anchors = tuple(
                TrustAnchor(a["did"], bytes.fromhex(a["public_key"])) for a in data["trust_anchors"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidPayloadError(f"malformed genesis: {exc}") from exc
        return cls(anchors)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_bytes(canonicalize(self.to_dict()) + b"\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "GenesisConfig":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


class Steward:
    """A trust anchor that holds its signing key and endorses registrations."""

    def __init__(self, keypair: KeyPair):
        self.keypair = keypair
        self.did = derive_did(keypair.public_key)

    @property
    def anchor(self) -> TrustAnchor:
        return TrustAnchor(self.did, self.keypair.public_key)

    def endorse(self, draft: "TxnDraft") -> "Endorsement":
        return Endorsement(self.did, sign(self.keypair.private_key, draft.signing_bytes()))


# -- transactions ------------------------------------------------------------------


def signing_bytes(kind: str, payload: dict[str, Any], submitter_did: str) -> bytes:
    return canonicalize({"kind": str(kind), "payload": payload, "submitter_did": submitter_did})


@dataclass(frozen=True)
class Endorsement:
    anchor_did: str
    signature: bytes

    def to_dict(self) -> dict[str, Any]:
        return {"anchor_did": self.anchor_did, "signature": self.signature.hex()}


@dataclass(frozen=True)
class TxnDraft:
    kind: TxnKind
    payload: dict[str, Any]
    submitter_did: str
    submitter_sig: bytes

    def signing_bytes(self) -> bytes:
        return signing_bytes(self.kind.value, self.payload, self.submitter_did)


def make_draft(kind: TxnKind | str, payload: dict[str, Any], submitter_did: str, private_key: bytes) -> TxnDraft:
    kind = TxnKind(kind)
    # round-trip through canonical form so the stored payload is exactly what was signed
    payload = json.loads(canonicalize(payload))
    sig = sign(private_key, signing_bytes(kind.value, payload, submitter_did))
    return TxnDraft(kind, payload, submitter_did, sig)


@dataclass(frozen=True)
class IdentityTransaction:
    seq_no: int
    kind: TxnKind
    payload: dict[str, Any]
    submitter_did: str
    submitter_sig: bytes
    endorsement: dict[str, Any] | None
    prev_hash: str
    timestamp: int
    txn_hash: str

    @classmethod
    def from_dict(cls, e: dict[str, Any]) -> "IdentityTransaction":
        return cls(
            seq_no=e["seq_no"],
            kind=TxnKind(e["kind"]),
            payload=e["payload"],
            submitter_did=e["submitter_did"],
            submitter_sig=bytes.fromhex(e["submitter_sig"]),
            endorsement=e.get("endorsement"),
            prev_hash=e["prev_hash"],
            timestamp=e["timestamp"],
            txn_hash=e["txn_hash"],
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq_no": self.seq_no,
            "kind": self.kind.value,
            "payload": self.payload,
            "submitter_did": self.submitter_did,
            "submitter_sig": self.submitter_sig.hex(),
            "endorsement": self.endorsement,
            "prev_hash": self.prev_hash,
            "timestamp": self.timestamp,
            "txn_hash": self.txn_hash,
        }


@dataclass(frozen=True)
class Receipt:
    seq_no: int
    txn_hash: str
    registry_id: str | None = None


@dataclass(frozen=True)
class RevocationState:
    registry_id: str
    issuer_did: str
    revoked_indices: frozenset[int]
    state_digest: str
    issued_count: int
    at_seq: int


@dataclass(frozen=True)
class SchemaRecord:
    schema_id: str
    name: str
    claim_names: tuple[str, ...]


def schema_id_for(name: str, claim_names: Sequence[str]) -> str:
    return digest_hex(canonicalize({"name": name, "claim_names": list(claim_names)}))


def registry_id_for(issuer_did: str, seq_no: int) -> str:
    return digest_hex(canonicalize({"issuer_did": issuer_did, "seq_no": seq_no}))


def next_state_digest(prev_state: str, newly_revoked: Iterable[int]) -> str:
    return digest_hex(bytes.fromhex(prev_state) + canonicalize(sorted(newly_revoked)))


# -- replayed state ------------------------------------------------------------------


@dataclass
class _Registry:
    registry_id: str
    issuer_did: str
    created_at: int
    issued: int = 0
    revoked: dict[int, int] = field(default_factory=dict)  # index -> seq_no of revocation
    state: str = ""


class LedgerState:
    """State obtained by folding transactions in order. Also validates them."""

    def __init__(self, genesis: GenesisConfig):
        self.genesis = genesis
        self.dids: dict[str, DIDDocument] = {}
        self.did_seq: dict[str, int] = {}
        self.schemas: dict[str, SchemaRecord] = {}
        self.registries: dict[str, _Registry] = {}
        self.cred_hashes: dict[str, int] = {}
        self.height = 0

    def document(self, did: str) -> DIDDocument | None:
        doc = self.dids.get(did)
        if doc is not None:
            return doc
        anchor = self.genesis.anchor(did)
        return anchor.document() if anchor is not None else None

    # validation runs before append; apply runs after
    def validate(self, draft: TxnDraft, endorsement: Endorsement | None) -> None:
        kind, payload, did = draft.kind, draft.payload, draft.submitter_did
        if not isinstance(payload, dict):
            raise InvalidPayloadError("payload must be a record")
        msg = draft.signing_bytes()
        if kind is TxnKind.DID_REG:
            try:
                doc = DIDDocument.from_dict(payload.get("document", {}))
            except DocumentError as exc:
                raise InvalidPayloadError(str(exc)) from exc
            if doc.id != did:
                raise InvalidPayloadError("DID_REG must be submitted by the DID it registers")
            current = self.document(did)
            if current is None:
                if endorsement is None:
                    raise EndorsementError("new DID registration needs a trust-anchor endorsement")
                anchor = self.genesis.anchor(endorsement.anchor_did)
                if anchor is None or not verify(anchor.public_key, msg, endorsement.signature):
                    raise EndorsementError("invalid trust-anchor endorsement")
                if not doc.verify(msg, draft.submitter_sig):
                    raise BadSignatureError("registration not signed by the registered key")
            elif not current.verify(msg, draft.submitter_sig):
                raise BadSignatureError("key rotation not signed by the current key")
            return

        current = self.document(did)
        if current is None:
            raise UnknownSubmitterError(f"submitter {did} is not registered")
        if not current.verify(msg, draft.submitter_sig):
            raise BadSignatureError("submitter signature does not verify")

        if kind is TxnKind.SCHEMA:
            names = payload.get("claim_names")
            if not isinstance(names, list) or len(set(names)) != len(names):
                raise InvalidPayloadError("claim_names must be a list of unique names")
            if payload.get("schema_id") != schema_id_for(payload.get("name", ""), names):
                raise InvalidPayloadError("schema_id does not recompute")
        elif kind is TxnKind.CRED_HASH:
            reg = self._registry(payload.get("registry_id"))
            if reg.issuer_did != did:
                raise AuthorizationError("only the registry issuer may record credentials in it")
            if payload.get("revocation_index") != reg.issued:
                raise InvalidPayloadError(f"revocation_index must be {reg.issued}")
            if not isinstance(payload.get("cred_hash"), str) or len(payload["cred_hash"]) != 64:
                raise InvalidPayloadError("cred_hash must be a 32-byte hex digest")
        elif kind is TxnKind.REVOC_UPDATE:
            op = payload.get("op")
            if op == "create":
                return
            if op != "revoke":
                raise InvalidPayloadError(f"unknown revocation op {op!r}")
            reg = self._registry(payload.get("registry_id"))
            if reg.issuer_did != did:
                raise AuthorizationError("only the registry issuer may revoke")
            indices = payload.get("indices")
            if not isinstance(indices, list) or not indices or indices != sorted(set(indices)):
                raise InvalidPayloadError("indices must be a sorted non-empty set")
            for i in indices:
                if not isinstance(i, int) or not 0 <= i < reg.issued:
                    raise UnknownIndexError(f"index {i!r} was never issued")
                if i in reg.revoked:
                    raise InvalidPayloadError(f"index {i} already revoked")
            if payload.get("state_digest") != next_state_digest(reg.state, indices):
                raise InvalidPayloadError("state_digest does not follow the registry chain")

    def _registry(self, registry_id: Any) -> _Registry:
        reg = self.registries.get(registry_id) if isinstance(registry_id, str) else None
        if reg is None:
            raise UnknownRegistryError(f"unknown registry {registry_id!r}")
        return reg

    def apply(self, txn: IdentityTransaction) -> None:
        p = txn.payload
        if txn.kind is TxnKind.DID_REG:
            doc = DIDDocument.from_dict(p["document"])
            self.dids[doc.id] = doc
            self.did_seq[doc.id] = txn.seq_no
        elif txn.kind is TxnKind.SCHEMA:
            self.schemas[p["schema_id"]] = SchemaRecord(p["schema_id"], p["name"], tuple(p["claim_names"]))
        elif txn.kind is TxnKind.CRED_HASH:
            self.cred_hashes.setdefault(p["cred_hash"], txn.seq_no)
            self.registries[p["registry_id"]].issued += 1
        elif txn.kind is TxnKind.REVOC_UPDATE:
            if p["op"] == "create":
                rid = registry_id_for(txn.submitter_did, txn.seq_no)
                self.registries[rid] = _Registry(rid, txn.submitter_did, txn.seq_no, state=rid)
            else:
                reg = self.registries[p["registry_id"]]
                for i in p["indices"]:
                    reg.revoked[i] = txn.seq_no
                reg.state = p["state_digest"]
        self.height = txn.seq_no

    def revocation_state(self, registry_id: str) -> RevocationState:
        reg = self._registry(registry_id)
        return RevocationState(
            reg.registry_id, reg.issuer_did, frozenset(reg.revoked), reg.state, reg.issued, self.height
        )


# -- the ledger ----------------------------------------------------------------------


class IdentityLedger:
    """The shared durable log. Use :class:`LedgerNode` for role-checked access."""

    def __init__(
        self,
        genesis: GenesisConfig,
        clock: LogicalClock | None = None,
        path: str | os.PathLike | None = None,
    ):
        self.genesis = genesis
        self.clock = clock or LogicalClock()
        self._log = hashchain.JsonlLog(path)
        self._entries: list[dict[str, Any]] = []
        self._txns: list[IdentityTransaction] = []
        self._state = LedgerState(genesis)
        self._lock = threading.RLock()
        existing = self._log.load()
        if existing:
            check = hashchain.check_entries(existing)
            if not check:
                raise LedgerCorruptError(check.detail, check.first_bad_seq)
            for e in existing:
                self._commit(e, persist=False)

    # writes -----------------------------------------------------------------

    def _submit(self, draft: TxnDraft, endorsement: Endorsement | None = None) -> Receipt:
        with self._lock:
            self._state.validate(draft, endorsement)
            body = {
                "seq_no": len(self._entries) + 1,
                "kind": draft.kind.value,
                "payload": draft.payload,
                "submitter_did": draft.submitter_did,
                "submitter_sig": draft.submitter_sig.hex(),
                "endorsement": endorsement.to_dict() if endorsement else None,
                "prev_hash": self._entries[-1]["txn_hash"] if self._entries else hashchain.GENESIS_PREV,
                "timestamp": self.clock.now(),
            }
            entry = hashchain.seal(body)
            txn = self._commit(entry, persist=True)
            registry_id = None
            if txn.kind is TxnKind.REVOC_UPDATE and txn.payload.get("op") == "create":
                registry_id = registry_id_for(txn.submitter_did, txn.seq_no)
            logger.debug("identity txn %d %s", txn.seq_no, txn.kind.value)
            return Receipt(txn.seq_no, txn.txn_hash, registry_id)

    def _commit(self, entry: dict[str, Any], persist: bool) -> IdentityTransaction:
        txn = IdentityTransaction.from_dict(entry)
        if persist:
            self._log.append(entry)  # durable before the receipt exists
        self._entries.append(entry)
        self._txns.append(txn)
        self._state.apply(txn)
        return txn

    # reads --------------------------------------------------------------------

    def height(self) -> int:
        return len(self._entries)

    def entries(self) -> list[dict[str, Any]]:
        return list(self._entries)

    def read(self, seq_no: int) -> IdentityTransaction:
        txns = self._txns
        if not isinstance(seq_no, int) or not 1 <= seq_no <= len(txns):
            raise OutOfRangeError(f"seq_no {seq_no!r} outside [1, {len(txns)}]")
        return txns[seq_no - 1]

    def read_entry(self, seq_no: int) -> dict[str, Any]:
        self.read(seq_no)
        return self._entries[seq_no - 1]

    def verify_chain(self) -> bool:
        return hashchain.check_entries(self.entries()).ok

    def _state_at(self, at_seq: int | None) -> LedgerState:
        height = self.height()
        if at_seq is None or at_seq == height:
            return self._state
        if not isinstance(at_seq, int) or not 0 <= at_seq <= height:
            raise OutOfRangeError(f"at_seq {at_seq!r} outside [0, {height}]")
        state = LedgerState(self.genesis)
        for txn in self._txns[:at_seq]:
            state.apply(txn)
        return state

    def resolve_did(self, did: str, at_seq: int | None = None) -> DIDDocument:
        doc = self._state_at(at_seq).document(did)
        if doc is None:
            raise DIDNotFoundError(f"{did} not registered")
        return doc

    def is_registered(self, did: str, at_seq: int | None = None) -> bool:
        return self._state_at(at_seq).document(did) is not None

    def revocation_state(self, registry_id: str, at_seq: int | None = None) -> RevocationState:
        return self._state_at(at_seq).revocation_state(registry_id)

    def revocation_receipt(self, registry_id: str, index: int) -> Receipt | None:
        reg = self._state._registry(registry_id)
        seq = reg.revoked.get(index)
        return None if seq is None else Receipt(seq, self._entries[seq - 1]["txn_hash"])

    def get_schema(self, schema_id: str, at_seq: int | None = None) -> SchemaRecord:
        rec = self._state_at(at_seq).schemas.get(schema_id)
        if rec is None:
            raise UnknownSchemaError(f"schema {schema_id} not published")
        return rec

    def cred_hash_seq(self, cred_hash: str, at_seq: int | None = None) -> int | None:
        return self._state_at(at_seq).cred_hashes.get(cred_hash)

    def close(self) -> None:
        self._log.close()


class LedgerNode:
    """Role-checked access to an :class:`IdentityLedger`."""

    def __init__(self, ledger: IdentityLedger, role: NodeRole = NodeRole.VALIDATOR):
        self.ledger = ledger
        self.role = NodeRole(role)

    @property
    def genesis(self) -> GenesisConfig:
        return self.ledger.genesis

    def submit(self, draft: TxnDraft, endorsement: Endorsement | None = None) -> Receipt:
        if self.role is not NodeRole.VALIDATOR:
            raise ObserverWriteError("observer nodes do not accept writes")
        return self.ledger._submit(draft, endorsement)

    def height(self) -> int:
        return self.ledger.height()

    def entries(self) -> list[dict[str, Any]]:
        return self.ledger.entries()

    def read(self, seq_no: int) -> IdentityTransaction:
        return self.ledger.read(seq_no)

    def read_entry(self, seq_no: int) -> dict[str, Any]:
        return self.ledger.read_entry(seq_no)

    def resolve_did(self, did: str, at_seq: int | None = None) -> DIDDocument:
        return self.ledger.resolve_did(did, at_seq)

    def is_registered(self, did: str, at_seq: int | None = None) -> bool:
        return self.ledger.is_registered(did, at_seq)

    def revocation_state(self, registry_id: str, at_seq: int | None = None) -> RevocationState:
        return self.ledger.revocation_state(registry_id, at_seq)

    def revocation_receipt(self, registry_id: str, index: int) -> Receipt | None:
        return self.ledger.revocation_receipt(registry_id, index)

    def get_schema(self, schema_id: str, at_seq: int | None = None) -> SchemaRecord:
        return self.ledger.get_schema(schema_id, at_seq)

    def cred_hash_seq(self, cred_hash: str, at_seq: int | None = None) -> int | None:
        return self.ledger.cred_hash_seq(cred_hash, at_seq)

    def verify_chain(self) -> bool:
        return self.ledger.verify_chain()


class LedgerView:
    """Identity view answered directly from a ledger at a pinned height.

    Same surface as the bridge's view, so verification code and decision
    replay can use either.
    """

    lag_cycles = 0
    stale = False
    available = True

    def __init__(self, ledger: IdentityLedger | LedgerNode, at_seq: int | None = None):
        self._ledger = ledger
        self.head_seq = ledger.height() if at_seq is None else at_seq
        if not 0 <= self.head_seq <= ledger.height():
            raise OutOfRangeError(f"at_seq {at_seq} beyond ledger height")

    def resolve_did(self, did: str) -> DIDDocument:
        return self._ledger.resolve_did(did, self.head_seq)

    def revocation_state(self, registry_id: str) -> RevocationState:
        return self._ledger.revocation_state(registry_id, self.head_seq)

    def cred_hash_seq(self, cred_hash: str) -> int | None:
        return self._ledger.cred_hash_seq(cred_hash, self.head_seq)


def register_did(
    node: LedgerNode,
    keypair: KeyPair,
    endorser: Steward | None,
    service_endpoints: Iterable[tuple[str, str]] = (),
) -> tuple[str, Receipt]:
    """Register the DID of ``keypair`` (endorsed by ``endorser`` when new)."""
    doc = build_document([keypair], service_endpoints)
    draft = make_draft(TxnKind.DID_REG, {"document": doc.to_dict()}, doc.id, keypair.private_key)
    endorsement = endorser.endorse(draft) if endorser is not None else None
    return doc.id, node.submit(draft, endorsement)
