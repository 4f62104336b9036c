"""Verifier-contract runtime with a hash-chained access log.

A contract is a declarative :class:`AccessPolicy` run by a fixed two-phase
engine: credential verification against an identity view, then policy
evaluation of the disclosed claims and invocation context. Every decision is
appended to the log; unauthorized invocations are logged without one.

Claims with these names are interpreted by the policy phase:

* ``vehicle``  - must equal the invoking context's vehicle DID
* ``location`` - must equal the context location
* ``slot``     - ``HH:MM-HH:MM``; the decision time must fall inside it
"""

from __future__ import annotations

import enum
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from . import hashchain
from .clock import LogicalClock, minute_of_day, weekday
from .credential_engine import Presentation
from .credential_engine import verify as verify_presentation
from .crypto_core import canonicalize, digest_hex, sign, verify
from .errors import (
    BridgeError,
    ContractNotFoundError,
    DIDNotFoundError,
    LedgerCorruptError,
    MalformedPolicyError,
    RuntimeContractError,
    UnauthorizedCallerError,
    UnregisteredOwnerError,
    AuthorizationError,
)
from .reasons import Reason, ordered

logger = logging.getLogger(__name__)

WILDCARD = "*"
DEFAULT_FRESHNESS_BOUND = 2


class Outcome(str, enum.Enum):
    GRANT = "GRANT"
    DENY = "DENY"


class AuthKind(str, enum.Enum):
    DEPLOY = "DEPLOY"
    UPDATE_POLICY = "UPDATE_POLICY"
    INVOKE = "INVOKE"


class ReplayedInvocationError(UnauthorizedCallerError):
    code = "replayed_invocation"


# -- policy -----------------------------------------------------------------------


@dataclass(frozen=True)
class TimeWindow:
    weekdays: frozenset[int]
    start: int
    end: int

    def contains(self, t: int) -> bool:
        return weekday(t) in self.weekdays and self.start <= minute_of_day(t) < self.end

    def to_dict(self) -> dict[str, Any]:
        return {"weekdays": sorted(self.weekdays), "start": self.start, "end": self.end}


ALL_WEEK = frozenset(range(7))


@dataclass(frozen=True)
class AccessPolicy:
    allowed_vehicles: frozenset[str]
    allowed_locations: frozenset[str] = frozenset()
    time_windows: tuple[TimeWindow, ...] = ()
    required_claims: tuple[tuple[str, str], ...] = ()
    max_validity: int | None = None

    def validate(self) -> None:
        for w in self.time_windows:
            if not (isinstance(w.start, int) and isinstance(w.end, int) and 0 <= w.start < w.end <= 1440):
                raise MalformedPolicyError(f"time window {w.start}-{w.end} is not 0 <= start < end <= 1440")
            if not w.weekdays or not set(w.weekdays) <= ALL_WEEK:
                raise MalformedPolicyError("weekdays must be a non-empty subset of 0..6")
        names = [n for n, _ in self.required_claims]
        if len(set(names)) != len(names):
            raise MalformedPolicyError("required claim listed twice")
        if self.max_validity is not None and (not isinstance(self.max_validity, int) or self.max_validity < 0):
            raise MalformedPolicyError("max_validity must be a non-negative integer")

    @property
    def policy_id(self) -> str:
        return digest_hex(canonicalize(self.to_dict()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "allowed_vehicles": sorted(self.allowed_vehicles),
            "allowed_locations": sorted(self.allowed_locations),
            "time_windows": [w.to_dict() for w in self.time_windows],
            "required_claims": [[n, v] for n, v in self.required_claims],
            "max_validity": self.max_validity,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AccessPolicy":
        try:
            windows = tuple(
                TimeWindow(frozenset(w.get("weekdays", range(7))), w["start"], w["end"])
                for w in d.get("time_windows", [])
            )
            req = d.get("required_claims", [])
            if isinstance(req, Mapping):
                req = list(req.items())
            policy = cls(
                allowed_vehicles=frozenset(d.get("allowed_vehicles", [])),
                allowed_locations=frozenset(d.get("allowed_locations", [])),
                time_windows=windows,
                required_claims=tuple((n, v) for n, v in req),
                max_validity=d.get("max_validity"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedPolicyError(f"malformed policy: {exc}") from exc
        policy.validate()
        return policy


@dataclass(frozen=True)
class InvocationContext:
    vehicle_did: str
    location: str
    time: int

    def to_dict(self) -> dict[str, Any]:
        return {"vehicle_did": self.vehicle_did, "location": self.location, "time": self.time}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "InvocationContext":
        return cls(d["vehicle_did"], d["location"], d["time"])


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    reasons: tuple[Reason, ...]
    checked_at_seq: int | None
    decided_at: int

    @property
    def granted(self) -> bool:
        return self.outcome is Outcome.GRANT

    def to_dict(self) -> dict[str, Any]:
        return {
            "outcome": self.outcome.value,
            "reasons": [r.value for r in self.reasons],
            "checked_at_seq": self.checked_at_seq,
            "decided_at": self.decided_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Decision":
        return cls(Outcome(d["outcome"]), tuple(Reason(r) for r in d["reasons"]), d["checked_at_seq"], d["decided_at"])


def parse_slot(slot: str) -> tuple[int, int] | None:
    try:
        a, b = slot.split("-")
        (h1, m1), (h2, m2) = (map(int, a.split(":")), map(int, b.split(":")))
    except (ValueError, AttributeError):
        return None
    start, end = h1 * 60 + m1, h2 * 60 + m2
    if not 0 <= start < end <= 1440 or not (0 <= m1 < 60 and 0 <= m2 < 60):
        return None
    return start, end


def evaluate_policy(policy: AccessPolicy, presentation: Presentation, context: InvocationContext) -> list[Reason]:
    """Policy phase only. Returns every violated condition."""
    claims = presentation.disclosed_claims()
    meta = presentation.metadata
    failed: list[Reason] = []

    if context.vehicle_did not in policy.allowed_vehicles or claims.get("vehicle", context.vehicle_did) != context.vehicle_did:
        failed.append(Reason.VEHICLE_NOT_ALLOWED)

    loc_ok = not policy.allowed_locations or context.location in policy.allowed_locations
    if not loc_ok or claims.get("location", context.location) != context.location:
        failed.append(Reason.LOCATION_NOT_ALLOWED)

    t = context.time
    in_window = not policy.time_windows or any(w.contains(t) for w in policy.time_windows)
    if "slot" in claims:
        slot = parse_slot(claims["slot"])
        in_window = in_window and slot is not None and slot[0] <= minute_of_day(t) < slot[1]
    if not in_window:
        failed.append(Reason.OUTSIDE_TIME_WINDOW)

    for name, expected in policy.required_claims:
        if name not in claims or (expected != WILDCARD and claims[name] != expected):
            failed.append(Reason.CLAIM_MISMATCH)
            break

    if policy.max_validity is not None and meta.valid_until - meta.valid_from > policy.max_validity:
        failed.append(Reason.EXPIRED)
    return failed


@dataclass(frozen=True)
class ViewFacts:
    """What the runtime knew about its identity view when deciding."""

    available: bool
    head_seq: int | None
    lag_cycles: int
    stale: bool

    def to_dict(self) -> dict[str, Any]:
        return {"available": self.available, "head_seq": self.head_seq, "lag_cycles": self.lag_cycles, "stale": self.stale}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ViewFacts":
        return cls(d["available"], d["head_seq"], d["lag_cycles"], d["stale"])


def decide(policy: AccessPolicy, presentation: Presentation, context: InvocationContext, view, facts: ViewFacts) -> Decision:
    """Both phases, deny-overrides. ``view`` may be None when unavailable."""
    if view is None or not facts.available:
        return Decision(Outcome.DENY, (Reason.STALE_LEDGER_VIEW,), None, context.time)
    report = verify_presentation(presentation, view, context.time)
    failed = list(report.failure_reasons) + evaluate_policy(policy, presentation, context)
    if facts.stale:
        failed.append(Reason.STALE_LEDGER_VIEW)
    if failed:
        return Decision(Outcome.DENY, tuple(ordered(failed)), report.checked_at_seq, context.time)
    return Decision(Outcome.GRANT, (Reason.OK,), report.checked_at_seq, context.time)


# -- contracts and transactions -------------------------------------------------------------


@dataclass
class VerifierContract:
    address: str
    owner_did: str
    policy: AccessPolicy
    allowed_invokers: frozenset[str]
    invoker_keys: dict[str, list[bytes]] = field(repr=False, default_factory=dict)
    active: bool = True
    version: int = 0
    used_nonces: set[str] = field(default_factory=set, repr=False)


@dataclass(frozen=True)
class AuthTransaction:
    seq_no: int
    kind: AuthKind
    contract_address: str
    caller_did: str
    caller_sig: str
    payload: dict[str, Any]
    decision: Decision | None
    prev_hash: str
    timestamp: int
    txn_hash: str

    @classmethod
    def from_dict(cls, e: Mapping[str, Any]) -> "AuthTransaction":
        dec = e.get("decision")
        return cls(
            e["seq_no"], AuthKind(e["kind"]), e["contract_address"], e["caller_did"], e["caller_sig"], e["payload"],
            Decision.from_dict(dec) if dec is not None else None,
            e["prev_hash"], e["timestamp"], e["txn_hash"],
        )


@dataclass(frozen=True)
class InvokeReceipt:
    seq_no: int
    txn_hash: str
    decision: Decision


def contract_address_for(owner_did: str, seq_no: int) -> str:
    return digest_hex(canonicalize({"owner_did": owner_did, "seq_no": seq_no}))


def deploy_message(owner_did: str, policy: AccessPolicy, vehicles: Iterable[str]) -> bytes:
    return canonicalize({"action": "DEPLOY", "owner_did": owner_did, "policy": policy.to_dict(), "vehicles": sorted(vehicles)})


def update_message(address: str, policy: AccessPolicy, version: int) -> bytes:
    return canonicalize({"action": "UPDATE_POLICY", "contract": address, "policy": policy.to_dict(), "version": version})


def invoke_message(address: str, caller_did: str, presentation_digest: str, context: InvocationContext) -> bytes:
    return canonicalize({
        "action": "INVOKE", "contract": address, "caller_did": caller_did,
        "presentation_digest": presentation_digest, "context": context.to_dict(),
    })


def sign_invocation(private_key: bytes, address: str, caller_did: str, presentation: Presentation, context: InvocationContext) -> bytes:
    return sign(private_key, invoke_message(address, caller_did, presentation.digest, context))


def sign_policy_update(private_key: bytes, address: str, policy: AccessPolicy, version: int) -> bytes:
    return sign(private_key, update_message(address, policy, version))


def _keys_ok(keys: Iterable[bytes], message: bytes, signature: bytes) -> bool:
    return any(verify(pk, message, signature) for pk in keys)


class _ContractTable:
    """Contract state folded from the log; shared by the live runtime and replay."""

    def __init__(self) -> None:
        self.contracts: dict[str, VerifierContract] = {}

    def apply(self, txn: AuthTransaction) -> None:
        p = txn.payload
        if txn.kind is AuthKind.DEPLOY:
            keys = {did: [bytes.fromhex(k) for k in ks] for did, ks in p["invoker_keys"].items()}
            self.contracts[txn.contract_address] = VerifierContract(
                txn.contract_address, p["owner_did"], AccessPolicy.from_dict(p["policy"]),
                frozenset([p["owner_did"], *p["vehicles"]]), keys,
            )
        elif txn.kind is AuthKind.UPDATE_POLICY:
            c = self.contracts[txn.contract_address]
            c.policy = AccessPolicy.from_dict(p["policy"])
            c.version = p["version"]
        elif txn.kind is AuthKind.INVOKE and txn.decision is not None:
            self.contracts[txn.contract_address].used_nonces.add(p["presentation"]["nonce"])


class AuthorizationRuntime:
    """Executes deploy / update / invoke in one total order.

    ``view_provider`` returns a fresh identity view (normally the bridge's
    oracle client) and may raise :class:`ViewUnavailableError`.
    """

    def __init__(
        self,
        view_provider: Callable[[], Any],
        clock: LogicalClock | None = None,
        path: str | os.PathLike | None = None,
    ):
        self.view_provider = view_provider
        self.clock = clock or LogicalClock()
        self._log = hashchain.JsonlLog(path)
        self._entries: list[dict[str, Any]] = []
        self._txns: list[AuthTransaction] = []
        self._table = _ContractTable()
        self._lock = threading.RLock()
        existing = self._log.load()
        if existing:
            check = hashchain.check_entries(existing)
            if not check:
                raise LedgerCorruptError(check.detail, check.first_bad_seq)
            for e in existing:
                self._commit(e, persist=False)

    # log ----------------------------------------------------------------------

    def _append(self, kind: AuthKind, address: str | None, caller: str, payload: dict[str, Any],
                decision: Decision | None = None, caller_sig: bytes = b"") -> AuthTransaction:
        seq = len(self._entries) + 1
        body = {
            "seq_no": seq,
            "kind": kind.value,
            "contract_address": address if address is not None else contract_address_for(caller, seq),
            "caller_did": caller,
            "caller_sig": caller_sig.hex(),
            "payload": payload,
            "decision": decision.to_dict() if decision is not None else None,
            "prev_hash": self._entries[-1]["txn_hash"] if self._entries else hashchain.GENESIS_PREV,
            "timestamp": self.clock.now(),
        }
        return self._commit(hashchain.seal(body), persist=True)

    def _commit(self, entry: dict[str, Any], persist: bool) -> AuthTransaction:
        txn = AuthTransaction.from_dict(entry)
        if persist:
            self._log.append(entry)
        self._entries.append(entry)
        self._txns.append(txn)
        self._table.apply(txn)
        return txn

    @property
    def contracts(self) -> dict[str, VerifierContract]:
        return self._table.contracts

    def contract(self, address: str) -> VerifierContract:
        c = self._table.contracts.get(address)
        if c is None:
            raise ContractNotFoundError(f"no contract at {address}")
        return c

    def _view(self):
        try:
            return self.view_provider()
        except BridgeError as exc:
            logger.warning("identity view unavailable: %s", exc)
            return None

    # operations ---------------------------------------------------------------

    def deploy(self, owner_wallet, policy: AccessPolicy, vehicle_dids: Iterable[str], owner_did: str | None = None) -> str:
        policy.validate()
        owner_did = owner_did or owner_wallet.public_did
        vehicles = sorted(set(vehicle_dids))
        view = self._view()
        if view is None:
            raise UnregisteredOwnerError("cannot check owner registration: identity view unavailable")
        keys: dict[str, list[str]] = {}
        for did in [owner_did, *vehicles]:
            try:
                doc = view.resolve_did(did)
            except DIDNotFoundError as exc:
                if did == owner_did:
                    raise UnregisteredOwnerError(f"owner {did} is not on the identity ledger") from exc
                raise RuntimeContractError(f"vehicle {did} is not on the identity ledger") from exc
            keys[did] = [pk.hex() for _, pk in doc.authentication_keys()]
        msg = deploy_message(owner_did, policy, vehicles)
        sig = sign(owner_wallet.keypair_for(owner_did).private_key, msg)
        if not _keys_ok([bytes.fromhex(k) for k in keys[owner_did]], msg, sig):
            raise AuthorizationError("deploy signature does not match the owner's registered key")
        with self._lock:
            payload = {"owner_did": owner_did, "policy": policy.to_dict(), "vehicles": vehicles, "invoker_keys": keys}
            txn = self._append(AuthKind.DEPLOY, None, owner_did, payload, caller_sig=sig)
        logger.info("deployed contract %s for %d vehicle(s)", txn.contract_address[:12], len(vehicles))
        return txn.contract_address

    def update_policy(self, address: str, policy: AccessPolicy, signer_did: str, signature: bytes) -> AuthTransaction:
        with self._lock:
            c = self.contract(address)
            policy.validate()
            version = c.version + 1
            if signer_did != c.owner_did or not _keys_ok(
                c.invoker_keys.get(c.owner_did, []), update_message(address, policy, version), signature
            ):
                raise AuthorizationError("only the contract owner may update its policy")
            txn = self._append(AuthKind.UPDATE_POLICY, address, signer_did,
                               {"policy": policy.to_dict(), "version": version}, caller_sig=signature)
            return txn

    def invoke(self, address: str, caller_did: str, presentation: Presentation, context: InvocationContext,
               caller_signature: bytes = b"") -> InvokeReceipt:
        with self._lock:
            c = self.contract(address)
            if not c.active:
                raise RuntimeContractError("contract is inactive")
            pdigest = presentation.digest

            def reject(err: UnauthorizedCallerError, why: str):
                self._append(AuthKind.INVOKE, address, caller_did,
                             {"rejected": why, "presentation_digest": pdigest}, caller_sig=caller_signature)
                raise err

            if caller_did not in c.allowed_invokers:
                reject(UnauthorizedCallerError(f"{caller_did} may not invoke this contract"), "unauthorized_caller")
            msg = invoke_message(address, caller_did, pdigest, context)
            if not _keys_ok(c.invoker_keys.get(caller_did, []), msg, caller_signature):
                reject(UnauthorizedCallerError("invocation signature does not verify"), "bad_signature")
            if presentation.nonce.hex() in c.used_nonces:
                reject(ReplayedInvocationError("presentation nonce already used"), "replayed_nonce")

            view = self._view()
            if view is None:
                facts = ViewFacts(False, None, 0, True)
            else:
                facts = ViewFacts(True, view.head_seq, getattr(view, "lag_cycles", 0), bool(getattr(view, "stale", False)))
            decision = decide(c.policy, presentation, context, view, facts)
            payload = {
                "presentation": presentation.to_dict(),
                "presentation_digest": pdigest,
                "context": context.to_dict(),
                "view": facts.to_dict(),
            }
            txn = self._append(AuthKind.INVOKE, address, caller_did, payload, decision, caller_signature)
        logger.info("contract %s: %s %s", address[:12], decision.outcome.value, [r.value for r in decision.reasons])
        return InvokeReceipt(txn.seq_no, txn.txn_hash, decision)

    # reads ---------------------------------------------------------------------

    def read_decision(self, receipt: InvokeReceipt | int) -> Decision:
        seq = receipt.seq_no if isinstance(receipt, InvokeReceipt) else receipt
        if not 1 <= seq <= len(self._txns) or self._txns[seq - 1].decision is None:
            raise ContractNotFoundError(f"no decision at seq_no {seq}")
        return self._txns[seq - 1].decision

    def audit_log(self, address: str) -> list[AuthTransaction]:
        if address not in self._table.contracts:
            raise ContractNotFoundError(f"no contract at {address}")
        return [t for t in self._txns if t.contract_address == address]

    def transactions(self) -> list[AuthTransaction]:
        return list(self._txns)

    def entries(self) -> list[dict[str, Any]]:
        return list(self._entries)

    def height(self) -> int:
        return len(self._entries)

    def verify_chain(self) -> bool:
        return hashchain.check_entries(self.entries()).ok

    def close(self) -> None:
        self._log.close()


@dataclass(frozen=True)
class ReplayMismatch:
    seq_no: int
    stored: dict[str, Any] | None
    recomputed: dict[str, Any] | None


def replay_decisions(auth_entries: Iterable[Mapping[str, Any]], identity_ledger) -> list[ReplayMismatch]:
    """Recompute every stored decision from the two logs alone.

    Identity state is taken directly from ``identity_ledger`` at each decision's
    ``checked_at_seq``. Returns the decisions that differ (empty = all reproduce).
    """
    from .identity_ledger import LedgerView

    table = _ContractTable()
    mismatches = []
    for entry in auth_entries:
        txn = AuthTransaction.from_dict(entry)
        if txn.kind is AuthKind.INVOKE and txn.decision is not None:
            c = table.contracts[txn.contract_address]
            p = txn.payload
            facts = ViewFacts.from_dict(p["view"])
            view = LedgerView(identity_ledger, facts.head_seq) if facts.available else None
            again = decide(c.policy, Presentation.from_dict(p["presentation"]), InvocationContext.from_dict(p["context"]), view, facts)
            if canonicalize(again.to_dict()) != canonicalize(txn.decision.to_dict()):
                mismatches.append(ReplayMismatch(txn.seq_no, txn.decision.to_dict(), again.to_dict()))
        table.apply(txn)
    return mismatches
