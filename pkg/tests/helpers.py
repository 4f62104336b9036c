"""Small world builders shared by the test modules."""

from __future__ import annotations

from dataclasses import dataclass, field

from ssi_access.authorization_runtime import ALL_WEEK, AccessPolicy, AuthorizationRuntime, TimeWindow
from ssi_access.clock import LogicalClock
from ssi_access.credential_engine import CredentialSchema, create_registry, issue, present, publish_schema
from ssi_access.errors import UnknownSchemaError
from ssi_access.crypto_core import SeededEntropy, digest, generate_keypair
from ssi_access.ledger_bridge import Indexer, IndexStore, OracleClient, serve_http
from ssi_access.identity_ledger import GenesisConfig, IdentityLedger, LedgerNode, LedgerView, NodeRole, Steward
from ssi_access.wallet import create_pairwise_did, create_wallet, store_credential

SCHEMA = CredentialSchema("rental", ("vehicle", "slot", "role"))


@dataclass
class Env:
    clock: LogicalClock
    steward: Steward
    genesis: GenesisConfig
    ledger: IdentityLedger
    validator: LedgerNode
    observer: LedgerNode
    rng: SeededEntropy
    registries: dict = field(default_factory=dict)

    def wallet(self, label: str, register: bool = True):
        w = create_wallet(label, digest(f"wallet:{label}".encode()))
        if register:
            w.register_public_did(self.validator, self.steward)
        return w

    def view(self, at_seq=None):
        return LedgerView(self.ledger, at_seq)

    def registry(self, issuer) -> str:
        if issuer.public_did not in self.registries:
            self.registries[issuer.public_did] = create_registry(issuer, self.validator)
        return self.registries[issuer.public_did]

    def credential(self, issuer, holder, claims=None, schema=SCHEMA, validity=(0, 10_000)):
        """Issue ``claims`` to ``holder`` under a pairwise DID and store it."""
        try:
            self.ledger.get_schema(schema.schema_id)
        except UnknownSchemaError:
            publish_schema(issuer, schema, self.validator)
        hd = create_pairwise_did(holder, issuer.public_did, self.validator, self.steward)
        claims = claims if claims is not None else {"vehicle": "V1", "slot": "08:00-18:00", "role": "renter"}
        cred = issue(issuer, hd, schema, claims, validity, self.registry(issuer), self.validator, rng=self.rng)
        store_credential(holder, cred)
        return cred


def make_env(tmp_path=None, seed: int = 0) -> Env:
    clock = LogicalClock()
    steward = Steward(generate_keypair(digest(f"steward:{seed}".encode())))
    genesis = GenesisConfig((steward.anchor,))
    path = None if tmp_path is None else tmp_path / "identity.jsonl"
    ledger = IdentityLedger(genesis, clock, path)
    return Env(clock, steward, genesis, ledger, LedgerNode(ledger), LedgerNode(ledger, NodeRole.OBSERVER),
               SeededEntropy(seed))


def simple_policy(vehicles, **kw) -> AccessPolicy:
    kw.setdefault("time_windows", (TimeWindow(ALL_WEEK, 0, 1440),))
    return AccessPolicy(frozenset(vehicles), **kw)


def direct_runtime(env: Env, path=None) -> AuthorizationRuntime:
    return AuthorizationRuntime(lambda: env.view(), env.clock, path)


def fresh_presentation(holder, cred, names=None, nonce=None, rng=None):
    names = [n for n, _ in cred.claims] if names is None else names
    nonce = nonce if nonce is not None else (rng.randbytes(16) if rng else bytes(16))
    return present(holder, cred, names, nonce)


class Bridge:
    """Indexer, sqlite store and HTTP API over a fresh :class:`Env`."""

    def __init__(self, tmp_path):
        self.env = make_env()
        self.store = IndexStore(tmp_path / "bridge.sqlite", self.env.genesis)
        self.indexer = Indexer(self.store, self.env.observer, self.env.clock)
        self.server = serve_http(self.store, "127.0.0.1:0", self.indexer)
        self.client = OracleClient(self.server.url)

    def close(self):
        self.client.close()
        self.server.close()
        self.store.close()
