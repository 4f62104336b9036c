"""Vehicle endpoint: proximity session, presentation relay, door lock."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

from .authorization_runtime import AuthorizationRuntime, Decision, InvocationContext, sign_invocation
from .clock import LogicalClock
from .credential_engine import Presentation
from .crypto_core import canonical_parse, canonicalize, system_entropy
from .did_core import DEFAULT_TTL, NONCE_LEN, AuthenticatedChannel, did_auth
from .errors import (
    AuthorizationError,
    ConcurrentSessionError,
    ContractNotFoundError,
    ContractUnreachableError,
    MessageError,
    NoSessionError,
    NonceMismatchError,
)

logger = logging.getLogger(__name__)


class LockState(str, enum.Enum):
    LOCKED = "LOCKED"
    UNLOCKED = "UNLOCKED"


@dataclass
class ProximitySession:
    channel: AuthenticatedChannel
    verifier_nonce: bytes
    started_at: int
    holder_did: str


@dataclass
class VehicleState:
    vehicle_did: str
    contract_address: str
    lock: LockState = LockState.LOCKED
    active_session: ProximitySession | None = None
    unlock_holder: str | None = None


class VehicleAgent:
    def __init__(
        self,
        wallet,
        contract_address: str,
        runtime: AuthorizationRuntime | None,
        ledger_view,
        clock: LogicalClock,
        owner_did: str,
        rng=None,
        challenge_ttl: int = DEFAULT_TTL,
    ):
        self.wallet = wallet
        self.runtime = runtime
        self.ledger_view = ledger_view
        self.clock = clock
        self.owner_did = owner_did
        self.rng = rng or system_entropy()
        self.challenge_ttl = challenge_ttl
        self.state = VehicleState(wallet.public_did, contract_address)
        self._issued_nonces: set[bytes] = set()
        self.invocations = 0

    @property
    def did(self) -> str:
        return self.state.vehicle_did

    @property
    def lock(self) -> LockState:
        return self.state.lock

    def begin_session(self, holder_wallet, transport, holder_did: str | None = None) -> ProximitySession:
        """DID Auth with the holder, then send a fresh presentation nonce."""
        if self.state.active_session is not None:
            raise ConcurrentSessionError("a session is already live")
        channel = did_auth(
            holder_wallet, self.wallet, self.ledger_view, self.clock, transport,
            initiator_did=holder_did, responder_did=self.did, ttl=self.challenge_ttl, rng=self.rng,
        )
        nonce = self.rng.randbytes(NONCE_LEN)
        while nonce in self._issued_nonces:
            nonce = self.rng.randbytes(NONCE_LEN)
        self._issued_nonces.add(nonce)
        request = canonicalize({"type": "presentation_request", "nonce": nonce.hex(), "did": self.did})
        holder = channel.peer_dids[0]
        self.wallet.message_logger(holder, self.clock)("out", request)
        transport.send("holder", request)
        session = ProximitySession(channel, nonce, self.clock.now(), holder)
        self.state.active_session = session
        return session

    def request_access(self, session: ProximitySession, presentation: Presentation, location: str) -> Decision:
        """Forward ``presentation`` to the verifier contract and act on the decision.

        The session closes and its nonce is spent whatever the outcome.
        """
        if self.state.active_session is None or session is not self.state.active_session:
            raise NoSessionError("no matching live session")
        self.state.active_session = None
        if presentation.nonce != session.verifier_nonce:
            raise NonceMismatchError("presentation is not bound to this session's nonce")
        if self.runtime is None:
            raise ContractUnreachableError("no authorization runtime configured")
        context = InvocationContext(self.did, location, self.clock.now())
        sig = sign_invocation(
            self.wallet.root_keypair.private_key, self.state.contract_address, self.did, presentation, context
        )
        try:
            self.invocations += 1
            receipt = self.runtime.invoke(self.state.contract_address, self.did, presentation, context, sig)
        except ContractNotFoundError as exc:
            raise ContractUnreachableError(str(exc)) from exc
        decision = receipt.decision
        if decision.granted:
            self.state.lock = LockState.UNLOCKED
            self.state.unlock_holder = session.holder_did
        logger.info("vehicle %s: %s", self.did[-8:], decision.outcome.value)
        return decision

    def relock(self, requester_did: str) -> None:
        if self.state.lock is LockState.LOCKED:
            return
        if requester_did not in (self.state.unlock_holder, self.owner_did):
            raise AuthorizationError("only the current occupant or the owner may relock")
        self.state.lock = LockState.LOCKED
        self.state.unlock_holder = None


def receive_presentation_request(holder_wallet, transport, peer_did: str, clock: LogicalClock) -> bytes:
    """Holder side: read the vehicle's nonce off the transport."""
    data = transport.receive("holder")
    holder_wallet.message_logger(peer_did, clock)("in", data)
    msg = canonical_parse(data)
    if not isinstance(msg, dict) or msg.get("type") != "presentation_request":
        raise MessageError("expected a presentation request")
    return bytes.fromhex(msg["nonce"])
