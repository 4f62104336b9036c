import pytest

from helpers import direct_runtime, make_env, simple_policy
from ssi_access.credential_engine import present
from ssi_access.crypto_core import SeededEntropy
from ssi_access.errors import (
    AuthorizationError,
    ConcurrentSessionError,
    ContractUnreachableError,
    DIDAuthError,
    NoSessionError,
    NonceMismatchError,
)
from ssi_access.transport import InProcessTransport
from ssi_access.vehicle_agent import LockState, VehicleAgent, receive_presentation_request


class Car:
    def __init__(self, allowed=True, runtime=True):
        self.env = env = make_env()
        env.clock.set(600)
        self.owner = env.wallet("owner")
        self.car = env.wallet("car")
        self.alice = env.wallet("alice", register=False)
        self.rt = direct_runtime(env)
        vehicles = [self.car.public_did] if allowed else []
        policy = simple_policy(vehicles)
        addr = self.rt.deploy(self.owner, policy, [self.car.public_did])
        self.cred = env.credential(self.owner, self.alice, {
            "vehicle": self.car.public_did, "slot": "00:00-24:00", "role": "renter"})
        self.agent = VehicleAgent(self.car, addr, self.rt if runtime else None, env.observer, env.clock,
                                  self.owner.public_did, rng=SeededEntropy(7))

    def session(self):
        t = InProcessTransport()
        s = self.agent.begin_session(self.alice, t, holder_did=self.cred.holder_did)
        nonce = receive_presentation_request(self.alice, t, self.agent.did, self.env.clock)
        return s, nonce

    def attempt(self):
        s, nonce = self.session()
        return self.agent.request_access(s, present(self.alice, self.cred, ["vehicle", "slot", "role"], nonce), "x")


def test_session_binds_pairwise_holder_did():
    c = Car()
    s, nonce = c.session()
    assert s.holder_did == c.cred.holder_did
    assert s.verifier_nonce == nonce and len(nonce) == 16
    with pytest.raises(ConcurrentSessionError):
        c.agent.begin_session(c.alice, InProcessTransport(), holder_did=c.cred.holder_did)


def test_unresolvable_holder_fails_did_auth():
    c = Car()
    with pytest.raises(DIDAuthError):
        c.agent.begin_session(c.alice, InProcessTransport(), holder_did=c.alice.public_did)
    assert c.agent.state.active_session is None


def test_grant_unlocks():
    c = Car()
    d = c.attempt()
    assert d.granted and c.agent.lock is LockState.UNLOCKED
    assert c.agent.state.unlock_holder == c.cred.holder_did
    assert c.agent.invocations == 1


def test_deny_stays_locked():
    c = Car(allowed=False)
    d = c.attempt()
    assert not d.granted and c.agent.lock is LockState.LOCKED


def test_replayed_presentation_never_reaches_contract():
    c = Car()
    s, nonce = c.session()
    pres = present(c.alice, c.cred, ["vehicle", "slot", "role"], nonce)
    c.agent.request_access(s, pres, "x")
    c.agent.relock(c.cred.holder_did)
    s2, _ = c.session()
    with pytest.raises(NonceMismatchError):
        c.agent.request_access(s2, pres, "x")
    assert c.agent.invocations == 1
    assert c.agent.lock is LockState.LOCKED
    with pytest.raises(NoSessionError):
        c.agent.request_access(s2, pres, "x")


def test_contract_unreachable_keeps_locked():
    c = Car(runtime=False)
    with pytest.raises(ContractUnreachableError):
        c.attempt()
    assert c.agent.lock is LockState.LOCKED


def test_relock_rules():
    c = Car()
    c.agent.relock("did:sim:anyone")  # already locked: no-op
    c.attempt()
    with pytest.raises(AuthorizationError):
        c.agent.relock(c.alice.public_did)
    assert c.agent.lock is LockState.UNLOCKED
    c.agent.relock(c.owner.public_did)
    assert c.agent.lock is LockState.LOCKED and c.agent.state.unlock_holder is None
    c.attempt()
    c.agent.relock(c.cred.holder_did)
    c.agent.relock(c.cred.holder_did)
    assert c.agent.lock is LockState.LOCKED


def test_nonces_are_unique_per_session():
    c = Car()
    seen = set()
    for _ in range(20):
        s, nonce = c.session()
        assert nonce not in seen
        seen.add(nonce)
        c.agent.request_access(s, present(c.alice, c.cred, ["role"], nonce), "x")
        c.agent.relock(c.owner.public_did)
