"""Verifiable credentials with salted hash-tree commitments.

Each claim becomes a leaf ``digest(salt || canonical([name, value]))``; the
issuer signs the tree root and metadata, never the values. A presentation
reveals a subset of leaves with their authentication paths and is signed by
the holder over a verifier-supplied nonce.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Protocol, Sequence

from .crypto_core import canonicalize, digest, digest_hex, sign, system_entropy
from .did_core import DIDDocument
from .errors import (
    AuthorizationError,
    ClaimMismatchError,
    DIDNotFoundError,
    NoSuchCredentialError,
    SSIError,
    UnknownClaimError,
    UnknownIndexError,
    UnknownRegistryError,
)
from .identity_ledger import (
    LedgerNode,
    Receipt,
    RevocationState,
    TxnKind,
    make_draft,
    next_state_digest,
    schema_id_for,
)
from .reasons import Reason

logger = logging.getLogger(__name__)

SALT_LEN = 16
EMPTY_ROOT = digest(b"")


# -- hash tree ----------------------------------------------------------------------


def leaf_hash(salt: bytes, name: str, value: str) -> bytes:
    return digest(bytes(salt) + canonicalize([name, value]))


def _parent(left: bytes, right: bytes) -> bytes:
    return digest(left + right)


def tree_levels(leaves: Sequence[bytes]) -> list[list[bytes]]:
    """All levels bottom-up. Odd levels pair their last node with itself."""
    if not leaves:
        return [[EMPTY_ROOT]]
    levels = [list(leaves)]
    while len(levels[-1]) > 1:
        cur = levels[-1]
        if len(cur) % 2:
            cur = cur + [cur[-1]]
        levels.append([_parent(cur[i], cur[i + 1]) for i in range(0, len(cur), 2)])
    return levels


def tree_root(leaves: Sequence[bytes]) -> bytes:
    return tree_levels(leaves)[-1][0]


def tree_path(leaves: Sequence[bytes], index: int) -> list[bytes]:
    path = []
    for level in tree_levels(leaves)[:-1]:
        sib = index ^ 1
        path.append(level[sib] if sib < len(level) else level[index])
        index //= 2
    return path


def path_root(leaf: bytes, index: int, path: Sequence[bytes]) -> bytes:
    """Fold ``path`` into a root. Raises ValueError for an index the path cannot
    place uniquely: out of range, or a right child paired with itself (only a
    trailing left node is ever duplicated)."""
    if not 0 <= index < 2 ** len(path):
        raise ValueError(f"index {index} out of range for a path of length {len(path)}")
    h = leaf
    for sib in path:
        if index % 2 == 0:
            h = _parent(h, sib)
        elif sib == h:
            raise ValueError("right child cannot be its own sibling")
        else:
            h = _parent(sib, h)
        index //= 2
    return h


# -- data types -------------------------------------------------------------------------


@dataclass(frozen=True)
class CredentialSchema:
    name: str
    claim_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.claim_names)) != len(self.claim_names):
            raise ClaimMismatchError("claim names must be unique")

    @property
    def schema_id(self) -> str:
        return schema_id_for(self.name, self.claim_names)

    def payload(self) -> dict[str, Any]:
        return {"schema_id": self.schema_id, "name": self.name, "claim_names": list(self.claim_names)}


@dataclass(frozen=True)
class CredentialMetadata:
    """Everything the issuer signs; what a presentation always carries."""

    cred_id: str
    schema_id: str
    issuer_did: str
    holder_did: str
    commitment_root: str
    valid_from: int
    valid_until: int
    registry_id: str
    revocation_index: int
    issuer_signature: str = ""

    def unsigned(self) -> dict[str, Any]:
        return {
            "cred_id": self.cred_id,
            "schema_id": self.schema_id,
            "issuer_did": self.issuer_did,
            "holder_did": self.holder_did,
            "commitment_root": self.commitment_root,
            "valid_from": self.valid_from,
            "valid_until": self.valid_until,
            "registry_id": self.registry_id,
            "revocation_index": self.revocation_index,
        }

    def to_dict(self) -> dict[str, Any]:
        d = self.unsigned()
        d["issuer_signature"] = self.issuer_signature
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CredentialMetadata":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})

    def signing_bytes(self) -> bytes:
        return canonicalize(self.unsigned())

    @property
    def cred_hash(self) -> str:
        """The value published on the identity ledger."""
        return digest_hex(canonicalize(self.unsigned()))


def compute_cred_id(fields: Mapping[str, Any]) -> str:
    return digest_hex(canonicalize({k: v for k, v in fields.items() if k != "cred_id"}))


@dataclass(frozen=True)
class VerifiableCredential:
    metadata: CredentialMetadata
    claims: tuple[tuple[str, str], ...]
    claim_salts: tuple[bytes, ...]

    @property
    def cred_id(self) -> str:
        return self.metadata.cred_id

    @property
    def holder_did(self) -> str:
        return self.metadata.holder_did

    @property
    def issuer_did(self) -> str:
        return self.metadata.issuer_did

    def claim(self, name: str) -> str | None:
        return dict(self.claims).get(name)

    def leaves(self) -> list[bytes]:
        return [leaf_hash(s, n, v) for (n, v), s in zip(self.claims, self.claim_salts)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "metadata": self.metadata.to_dict(),
            "claims": [[n, v] for n, v in self.claims],
            "claim_salts": [s.hex() for s in self.claim_salts],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "VerifiableCredential":
        return cls(
            CredentialMetadata.from_dict(d["metadata"]),
            tuple((n, v) for n, v in d["claims"]),
            tuple(bytes.fromhex(s) for s in d["claim_salts"]),
        )


@dataclass(frozen=True)
class DisclosedClaim:
    name: str
    value: str
    salt: bytes
    index: int
    path: tuple[bytes, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "value": self.value,
            "salt": self.salt.hex(),
            "index": self.index,
            "path": [p.hex() for p in self.path],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DisclosedClaim":
        return cls(d["name"], d["value"], bytes.fromhex(d["salt"]), d["index"], tuple(bytes.fromhex(p) for p in d["path"]))


@dataclass(frozen=True)
class Presentation:
    metadata: CredentialMetadata
    disclosed: tuple[DisclosedClaim, ...]
    nonce: bytes
    holder_signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return canonicalize(
            {
                "metadata": self.metadata.to_dict(),
                "disclosed": [c.to_dict() for c in self.disclosed],
                "nonce": self.nonce.hex(),
            }
        )

    def disclosed_claims(self) -> dict[str, str]:
        return {c.name: c.value for c in self.disclosed}

    def to_dict(self) -> dict[str, Any]:
        return {
            "metadata": self.metadata.to_dict(),
            "disclosed": [c.to_dict() for c in self.disclosed],
            "nonce": self.nonce.hex(),
            "holder_signature": self.holder_signature.hex(),
        }

    def to_bytes(self) -> bytes:
        return canonicalize(self.to_dict())

    @property
    def digest(self) -> str:
        return digest_hex(self.to_bytes())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Presentation":
        return cls(
            CredentialMetadata.from_dict(d["metadata"]),
            tuple(DisclosedClaim.from_dict(c) for c in d["disclosed"]),
            bytes.fromhex(d["nonce"]),
            bytes.fromhex(d["holder_signature"]),
        )


@dataclass(frozen=True)
class VerificationReport:
    issuer_sig_ok: bool
    holder_sig_ok: bool
    integrity_ok: bool
    not_revoked: bool
    not_expired: bool
    checked_at_seq: int
    failure_reasons: tuple[Reason, ...] = ()

    @property
    def ok(self) -> bool:
        return self.issuer_sig_ok and self.holder_sig_ok and self.integrity_ok and self.not_revoked and self.not_expired


class IdentityView(Protocol):
    head_seq: int

    def resolve_did(self, did: str) -> DIDDocument: ...
    def revocation_state(self, registry_id: str) -> RevocationState: ...
    def cred_hash_seq(self, cred_hash: str) -> int | None: ...


# -- operations ---------------------------------------------------------------------------


def publish_schema(issuer_wallet, schema: CredentialSchema, ledger: LedgerNode, issuer_did: str | None = None) -> Receipt:
    did = issuer_did or issuer_wallet.public_did
    kp = issuer_wallet.keypair_for(did)
    return ledger.submit(make_draft(TxnKind.SCHEMA, schema.payload(), did, kp.private_key))


def create_registry(issuer_wallet, ledger: LedgerNode, issuer_did: str | None = None) -> str:
    did = issuer_did or issuer_wallet.public_did
    kp = issuer_wallet.keypair_for(did)
    receipt = ledger.submit(make_draft(TxnKind.REVOC_UPDATE, {"op": "create"}, did, kp.private_key))
    return receipt.registry_id


def issue(
    issuer_wallet,
    holder_did: str,
    schema: CredentialSchema | str,
    claims: Mapping[str, str],
    validity: tuple[int, int],
    registry_id: str,
    ledger: LedgerNode,
    *,
    issuer_did: str | None = None,
    rng=None,
) -> VerifiableCredential:
    """Issue a credential and record its hash on the identity ledger.

    Claims are laid out in schema order. The returned credential still has to
    be handed to the holder's wallet.
    """
    rng = rng or system_entropy()
    issuer_did = issuer_did or issuer_wallet.public_did
    kp = issuer_wallet.keypair_for(issuer_did)
    schema_id = schema if isinstance(schema, str) else schema.schema_id
    record = ledger.get_schema(schema_id)
    unknown = sorted(set(claims) - set(record.claim_names))
    if unknown:
        raise ClaimMismatchError(f"claims not in schema: {unknown}")
    for name, value in claims.items():
        if not isinstance(value, str):
            raise ClaimMismatchError(f"claim {name!r} must be a string")
    reg = ledger.revocation_state(registry_id)
    if reg.issuer_did != issuer_did:
        raise AuthorizationError("registry belongs to another issuer")
    valid_from, valid_until = validity

    ordered_claims = tuple((n, claims[n]) for n in record.claim_names if n in claims)
    salts = tuple(rng.randbytes(SALT_LEN) for _ in ordered_claims)
    root = tree_root([leaf_hash(s, n, v) for (n, v), s in zip(ordered_claims, salts)])
    fields = {
        "schema_id": schema_id,
        "issuer_did": issuer_did,
        "holder_did": holder_did,
        "commitment_root": root.hex(),
        "valid_from": int(valid_from),
        "valid_until": int(valid_until),
        "registry_id": registry_id,
        "revocation_index": reg.issued_count,
    }
    meta = CredentialMetadata(cred_id=compute_cred_id(fields), **fields)
    meta = replace(meta, issuer_signature=sign(kp.private_key, meta.signing_bytes()).hex())
    payload = {"cred_hash": meta.cred_hash, "registry_id": registry_id, "revocation_index": meta.revocation_index}
    ledger.submit(make_draft(TxnKind.CRED_HASH, payload, issuer_did, kp.private_key))
    logger.info("issued credential %s to %s", meta.cred_id[:12], holder_did)
    return VerifiableCredential(meta, ordered_claims, salts)


def present(holder_wallet, credential: VerifiableCredential | str, disclosed_names, nonce: bytes) -> Presentation:
    cred_id = credential if isinstance(credential, str) else credential.cred_id
    cred = holder_wallet.get_credential(cred_id)
    if cred is None:
        raise NoSuchCredentialError(f"credential {cred_id} not in wallet")
    names = [n for n, _ in cred.claims]
    wanted = set(disclosed_names)
    unknown = sorted(wanted - set(names))
    if unknown:
        raise UnknownClaimError(f"credential has no claims {unknown}")
    leaves = cred.leaves()
    disclosed = tuple(
        DisclosedClaim(n, v, cred.claim_salts[i], i, tuple(tree_path(leaves, i)))
        for i, (n, v) in enumerate(cred.claims)
        if n in wanted
    )
    unsigned = Presentation(cred.metadata, disclosed, bytes(nonce))
    kp = holder_wallet.keypair_for(cred.holder_did)
    return replace(unsigned, holder_signature=sign(kp.private_key, unsigned.signing_bytes()))


def _resolve(view: IdentityView, did: str) -> DIDDocument | None:
    try:
        return view.resolve_did(did)
    except (DIDNotFoundError, SSIError):
        return None


def verify(presentation: Presentation, identity_view: IdentityView, now: int) -> VerificationReport:
    """Check signatures, commitments, ledger hash, revocation and validity.

    Never raises for a bad presentation; failures land in the report.
    """
    reasons: list[Reason] = []
    meta = presentation.metadata

    issuer_doc = _resolve(identity_view, meta.issuer_did)
    try:
        issuer_ok = issuer_doc is not None and issuer_doc.verify(
            meta.signing_bytes(), bytes.fromhex(meta.issuer_signature)
        )
    except (ValueError, TypeError):
        issuer_ok = False
    if not issuer_ok:
        reasons.append(Reason.ISSUER_SIG)

    holder_doc = _resolve(identity_view, meta.holder_did)
    try:
        holder_ok = holder_doc is not None and holder_doc.verify(
            presentation.signing_bytes(), presentation.holder_signature
        )
    except (ValueError, TypeError):
        holder_ok = False
    if not holder_ok:
        reasons.append(Reason.HOLDER_SIG)

    integrity_ok = _integrity(presentation, identity_view)
    if not integrity_ok:
        reasons.append(Reason.INTEGRITY)

    try:
        state = identity_view.revocation_state(meta.registry_id)
        not_revoked = state.issuer_did == meta.issuer_did and meta.revocation_index not in state.revoked_indices
    except (UnknownRegistryError, SSIError):
        not_revoked = False
    if not not_revoked:
        reasons.append(Reason.REVOKED)

    not_expired = True
    if now < meta.valid_from:
        not_expired = False
        reasons.append(Reason.NOT_YET_VALID)
    elif now > meta.valid_until:
        not_expired = False
        reasons.append(Reason.EXPIRED)

    return VerificationReport(
        issuer_ok, holder_ok, integrity_ok, not_revoked, not_expired, identity_view.head_seq, tuple(reasons)
    )


def _integrity(presentation: Presentation, view: IdentityView) -> bool:
    meta = presentation.metadata
    try:
        root = bytes.fromhex(meta.commitment_root)
        if compute_cred_id(meta.unsigned()) != meta.cred_id:
            return False
        seen = set()
        for c in presentation.disclosed:
            if c.name in seen or len(c.salt) != SALT_LEN or not isinstance(c.index, int) or c.index < 0:
                return False
            seen.add(c.name)
            if path_root(leaf_hash(c.salt, c.name, c.value), c.index, c.path) != root:
                return False
        return view.cred_hash_seq(meta.cred_hash) is not None
    except (ValueError, TypeError, SSIError):
        return False


def revoke(issuer_wallet, registry_id: str, revocation_index: int, ledger: LedgerNode, issuer_did: str | None = None) -> Receipt:
    """Revoke one index. Revoking an already-revoked index returns the
    original receipt without writing."""
    state = ledger.revocation_state(registry_id)
    issuer_did = issuer_did or issuer_wallet.public_did
    if state.issuer_did != issuer_did or state.issuer_did not in issuer_wallet.dids():
        raise AuthorizationError("only the registry's issuer may revoke")
    if not 0 <= revocation_index < state.issued_count:
        raise UnknownIndexError(f"index {revocation_index} was never issued")
    if revocation_index in state.revoked_indices:
        return ledger.revocation_receipt(registry_id, revocation_index)
    payload = {
        "op": "revoke",
        "registry_id": registry_id,
        "indices": [revocation_index],
        "state_digest": next_state_digest(state.state_digest, [revocation_index]),
    }
    kp = issuer_wallet.keypair_for(issuer_did)
    return ledger.submit(make_draft(TxnKind.REVOC_UPDATE, payload, issuer_did, kp.private_key))
