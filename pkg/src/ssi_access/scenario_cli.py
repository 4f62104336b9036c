"""Scenario runner and audit tool.

Boots the identity ledger, the bridge (indexer plus HTTP API) and the
authorization runtime in one process, then walks actors through a JSON
scenario. Time only moves on ``set_clock`` steps.

    ssi-access run happy_path --seed 7
    ssi-access audit --contract <address>
    ssi-access init --genesis genesis.json
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from . import hashchain
from .authorization_runtime import (
    AccessPolicy,
    AuthKind,
    AuthorizationRuntime,
    AuthTransaction,
    replay_decisions,
    sign_policy_update,
)
from .clock import ClockError, LogicalClock
from .credential_engine import (
    CredentialSchema,
    Presentation,
    VerifiableCredential,
    create_registry,
    issue,
    present,
    publish_schema,
    revoke,
)
from .crypto_core import SeededEntropy, canonical_parse, digest, generate_keypair
from .did_core import did_auth
from .errors import LedgerReadError, NoSessionError, SSIError
from .identity_ledger import GenesisConfig, IdentityLedger, LedgerNode, NodeRole, Steward
from .ledger_bridge import Indexer, IndexStore, OracleClient, identity_view, serve_http
from .transport import InProcessTransport
from .vehicle_agent import LockState, VehicleAgent, receive_presentation_request
from .wallet import Wallet, create_pairwise_did, create_wallet, store_credential

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

DEFAULTS: dict[str, Any] = {
    "data_dir": "ssi-data",
    "http_bind": "127.0.0.1:0",
    "poll_interval_steps": 1,
    "freshness_bound": 2,
    "challenge_ttl": 100,
    "seed": 0,
}
SCENARIO_OVERRIDABLE = ("poll_interval_steps", "freshness_bound", "challenge_ttl")

IDENTITY_LOG = "identity.jsonl"
AUTH_LOG = "authorization.jsonl"
BRIDGE_DB = "bridge.sqlite"
GENESIS_FILE = "genesis.json"
REPORT_FILE = "report.json"

DAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


class ScenarioError(Exception):
    """The scenario file itself is unusable (exit 2)."""


# -- loading ----------------------------------------------------------------------


def load_config(path: str | None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    cfg = dict(DEFAULTS)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ScenarioError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ScenarioError("config must be a JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ScenarioError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    for k in ("poll_interval_steps", "freshness_bound", "challenge_ttl", "seed"):
        if not isinstance(cfg[k], int) or isinstance(cfg[k], bool) or cfg[k] < 0:
            raise ScenarioError(f"config {k} must be a non-negative integer")
    return cfg


def bundled_scenarios() -> list[str]:
    root = resources.files("ssi_access") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and p.name != "scenario.schema.json")


def _schema() -> dict[str, Any]:
    text = (resources.files("ssi_access") / "scenarios" / "scenario.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_scenario(ref: str) -> dict[str, Any]:
    """Load a scenario from a path or by bundled name, and validate it."""
    path = Path(ref)
    try:
        if path.is_file():
            text = path.read_text(encoding="utf-8")
        else:
            name = ref[:-5] if ref.endswith(".json") else ref
            if name not in bundled_scenarios():
                raise ScenarioError(f"no scenario file or bundled scenario named {ref!r}")
            text = (resources.files("ssi_access") / "scenarios" / f"{name}.json").read_text(encoding="utf-8")
        data = json.loads(text)
    except (OSError, ValueError) as exc:
        raise ScenarioError(f"cannot parse scenario {ref}: {exc}") from exc
    validate_scenario(data)
    return data


def validate_scenario(data: Any) -> None:
    try:
        jsonschema.validate(data, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"scenario invalid at {where}: {exc.message}") from exc
    _check_references(data["steps"])


def _check_references(steps: list[dict[str, Any]]) -> None:
    actors: dict[str, str] = {}
    schemas, contracts, attempts = set(), set(), set()
    creds: dict[str, dict[str, str]] = {}

    def need(kind: str, pool, name: str, i: int) -> None:
        if name not in pool:
            raise ScenarioError(f"step {i}: unknown {kind} {name!r}")

    def refs(values, i: int) -> None:
        for v in values:
            if isinstance(v, str) and v.startswith("@"):
                need("actor", actors, v[1:], i)

    for i, s in enumerate(steps):
        a = s["action"]
        ok = "expect_error" not in s
        if a == "create_actor":
            if s["name"] in actors:
                raise ScenarioError(f"step {i}: actor {s['name']!r} already exists")
            if "contract" in s:
                need("contract", contracts, s["contract"], i)
            actors[s["name"]] = s["role"]
        elif a in ("register_did", "publish_schema", "update_policy", "relock"):
            need("actor", actors, s["actor"], i)
            if a == "publish_schema" and ok:
                schemas.add(s["schema"])
            if a == "update_policy":
                need("contract", contracts, s["contract"], i)
        if a == "deploy_contract":
            need("actor", actors, s["actor"], i)
            for v in s["vehicles"] + s["policy"].get("allowed_vehicles", []):
                need("actor", actors, v, i)
            if ok:
                contracts.add(s["contract"])
        elif a == "update_policy":
            for v in s["policy"].get("allowed_vehicles", []):
                need("actor", actors, v, i)
        elif a == "issue":
            need("actor", actors, s["issuer"], i)
            need("actor", actors, s["holder"], i)
            need("schema", schemas, s["schema"], i)
            refs(s["claims"].values(), i)
            if ok:
                creds[s["credential"]] = s["claims"]
        elif a == "revoke":
            need("actor", actors, s["issuer"], i)
            need("credential", creds, s["credential"], i)
        elif a in ("begin_session", "attempt_access"):
            need("actor", actors, s["vehicle"], i)
            need("actor", actors, s["holder"], i)
            need("credential", creds, s["credential"], i)
            if a == "attempt_access":
                claims = creds[s["credential"]]
                for n in list(s.get("disclose", [])) + list(s.get("tamper", {})):
                    if n not in claims:
                        raise ScenarioError(f"step {i}: credential {s['credential']!r} has no claim {n!r}")
                for n in s.get("tamper", {}):
                    if "disclose" in s and n not in s["disclose"]:
                        raise ScenarioError(f"step {i}: cannot tamper with undisclosed claim {n!r}")
                if "replay" in s:
                    need("attempt", attempts, s["replay"], i)
                if s["attempt"] in attempts:
                    raise ScenarioError(f"step {i}: attempt id {s['attempt']!r} reused")
                attempts.add(s["attempt"])
        elif a == "assert_decision":
            need("attempt", attempts, s["attempt"], i)
        elif a == "assert_state":
            need("actor", actors, s["vehicle"], i)
            if s.get("unlock_holder") is not None:
                need("actor", actors, s["unlock_holder"], i)


def parse_time(value: int | str) -> int:
    """``600`` or ``"Mon 10:00"`` or ``"w1 Sat 09:30"`` (logical minutes)."""
    if isinstance(value, int):
        if value < 0:
            raise ScenarioError(f"time must be non-negative, got {value}")
        return value
    parts = value.lower().split()
    week = 0
    if parts and parts[0].startswith("w") and parts[0][1:].isdigit():
        week = int(parts.pop(0)[1:])
    try:
        day, hm = parts
        h, m = (int(x) for x in hm.split(":"))
        minutes = h * 60 + m
        if day not in DAYS or not (0 <= h < 24 and 0 <= m < 60):
            raise ValueError
    except ValueError:
        raise ScenarioError(f"bad time {value!r}; expected e.g. 'Mon 09:00' or 'w1 Sat 10:15'") from None
    return (week * 7 + DAYS.index(day)) * 1440 + minutes


# -- world ------------------------------------------------------------------------


def steward_for(seed: int) -> Steward:
    return Steward(generate_keypair(digest(f"steward:{seed}".encode())))


def reset_data_dir(data_dir: Path) -> None:
    data_dir.mkdir(parents=True, exist_ok=True)
    for name in (IDENTITY_LOG, AUTH_LOG, BRIDGE_DB, BRIDGE_DB + "-wal", BRIDGE_DB + "-shm", GENESIS_FILE, REPORT_FILE):
        (data_dir / name).unlink(missing_ok=True)


@dataclass
class Actor:
    name: str
    role: str
    wallet: Wallet
    registered: bool = False
    agent: VehicleAgent | None = None


@dataclass
class Attempt:
    presentation: Presentation
    outcome: str
    reasons: list[str]
    error: str | None
    checked_at_seq: int | None
    ledger_height: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "outcome": self.outcome,
            "reasons": self.reasons,
            "error": self.error,
            "checked_at_seq": self.checked_at_seq,
            "ledger_height": self.ledger_height,
        }


class _FailingObserver:
    """Stands in for an unreachable observer node during ``poll_bridge fail``."""

    def __init__(self, real):
        self.genesis = real.genesis

    def height(self) -> int:
        raise ConnectionError("observer unreachable")

    def read_entry(self, seq_no: int):
        raise ConnectionError("observer unreachable")


class AssertionFailed(Exception):
    pass


@dataclass
class World:
    cfg: dict[str, Any]
    data_dir: Path
    clock: LogicalClock = field(default_factory=LogicalClock)
    actors: dict[str, Actor] = field(default_factory=dict)
    schemas: dict[str, CredentialSchema] = field(default_factory=dict)
    contracts: dict[str, str] = field(default_factory=dict)
    registries: dict[str, str] = field(default_factory=dict)
    credentials: dict[str, VerifiableCredential] = field(default_factory=dict)
    sessions: dict[str, tuple[Any, InProcessTransport, bytes]] = field(default_factory=dict)
    attempts: dict[str, Attempt] = field(default_factory=dict)
    unlock_violations: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        seed = self.cfg["seed"]
        self.rng = SeededEntropy(seed)
        self.steward = steward_for(seed)
        genesis = GenesisConfig((self.steward.anchor,))
        genesis.save(self.data_dir / GENESIS_FILE)
        self.ledger = IdentityLedger(genesis, self.clock, self.data_dir / IDENTITY_LOG)
        self.validator = LedgerNode(self.ledger, NodeRole.VALIDATOR)
        self.observer = LedgerNode(self.ledger, NodeRole.OBSERVER)
        self.store = IndexStore(self.data_dir / BRIDGE_DB, genesis)
        self.indexer = Indexer(self.store, self.observer, self.clock)
        self.server = serve_http(self.store, self.cfg["http_bind"], self.indexer, self.ledger.height)
        self.client = OracleClient(self.server.url)
        bound = self.cfg["freshness_bound"]
        self.runtime = AuthorizationRuntime(lambda: identity_view(self.client, bound), self.clock,
                                            self.data_dir / AUTH_LOG)

    def close(self) -> None:
        self.client.close()
        self.server.close()
        self.store.close()
        self.runtime.close()
        self.ledger.close()

    # helpers --------------------------------------------------------------------

    def did_of(self, name: str) -> str:
        actor = self.actors[name]
        if not actor.registered:
            raise ScenarioError(f"actor {name!r} has no registered DID yet")
        return actor.wallet.public_did

    def deref(self, value: str) -> str:
        return self.did_of(value[1:]) if value.startswith("@") else value

    def policy(self, raw: dict[str, Any], default_vehicles: list[str]) -> AccessPolicy:
        d = dict(raw)
        d["allowed_vehicles"] = [self.did_of(n) for n in raw.get("allowed_vehicles", default_vehicles)]
        return AccessPolicy.from_dict(d)

    def poll(self) -> dict[str, Any]:
        try:
            return {"indexed": self.indexer.poll(), "failed": False}
        except LedgerReadError:
            return {"indexed": 0, "failed": True}

    # actions --------------------------------------------------------------------

    def do_create_actor(self, s):
        seed = digest(f"{self.cfg['seed']}:actor:{s['name']}".encode())
        actor = Actor(s["name"], s["role"], create_wallet(s["name"], seed))
        self.actors[s["name"]] = actor
        if "contract" in s:
            self._bind_vehicle(actor, self.contracts[s["contract"]], owner=None)
        return {"role": s["role"]}

    def do_register_did(self, s):
        actor = self.actors[s["actor"]]
        node = self.observer if s.get("node") == "observer" else self.validator
        receipt = actor.wallet.register_public_did(node, self.steward)
        did = actor.wallet.public_did
        actor.registered = True
        return {"did": did, "seq_no": receipt.seq_no}

    def do_publish_schema(self, s):
        issuer = self.actors[s["actor"]]
        schema = CredentialSchema(s["schema"], tuple(s["claims"]))
        receipt = publish_schema(issuer.wallet, schema, self.validator)
        self.schemas[s["schema"]] = schema
        return {"schema_id": schema.schema_id, "seq_no": receipt.seq_no}

    def _bind_vehicle(self, actor: Actor, address: str, owner: str | None) -> None:
        if owner is None:
            owner = self.runtime.contract(address).owner_did
        actor.agent = VehicleAgent(actor.wallet, address, self.runtime, self.observer, self.clock, owner,
                                   rng=self.rng, challenge_ttl=self.cfg["challenge_ttl"])

    def do_deploy_contract(self, s):
        owner = self.actors[s["actor"]]
        policy = self.policy(s["policy"], s["vehicles"])
        address = self.runtime.deploy(owner.wallet, policy, [self.did_of(v) for v in s["vehicles"]],
                                      owner_did=self.did_of(owner.name))
        self.contracts[s["contract"]] = address
        for v in s["vehicles"]:
            self._bind_vehicle(self.actors[v], address, owner.wallet.public_did)
        return {"address": address, "policy_id": policy.policy_id}

    def do_update_policy(self, s):
        actor = self.actors[s["actor"]]
        address = self.contracts[s["contract"]]
        c = self.runtime.contract(address)
        vehicles = sorted(n for n, a in self.actors.items() if a.agent and a.agent.state.contract_address == address
                          and a.wallet.public_did in c.policy.allowed_vehicles)
        policy = self.policy(s["policy"], vehicles)
        sig = sign_policy_update(actor.wallet.root_keypair.private_key, address, policy, c.version + 1)
        txn = self.runtime.update_policy(address, policy, actor.wallet.public_did, sig)
        return {"version": txn.payload["version"], "policy_id": policy.policy_id}

    def do_issue(self, s):
        issuer, holder = self.actors[s["issuer"]], self.actors[s["holder"]]
        issuer_did = self.did_of(issuer.name)
        holder_did = create_pairwise_did(holder.wallet, issuer_did, self.validator, self.steward)
        did_auth(holder.wallet, issuer.wallet, self.observer, self.clock, InProcessTransport(),
                 initiator_did=holder_did, responder_did=issuer_did, ttl=self.cfg["challenge_ttl"], rng=self.rng)
        if issuer.name not in self.registries:
            self.registries[issuer.name] = create_registry(issuer.wallet, self.validator)
        claims = {k: self.deref(v) for k, v in s["claims"].items()}
        cred = issue(issuer.wallet, holder_did, self.schemas[s["schema"]], claims,
                     (s["valid_from"], s["valid_until"]), self.registries[issuer.name], self.validator, rng=self.rng)
        store_credential(holder.wallet, cred)
        self.credentials[s["credential"]] = cred
        return {"cred_id": cred.cred_id, "holder_did": holder_did,
                "revocation_index": cred.metadata.revocation_index}

    def do_revoke(self, s):
        issuer = self.actors[s["issuer"]]
        cred = self.credentials[s["credential"]]
        receipt = revoke(issuer.wallet, cred.metadata.registry_id, cred.metadata.revocation_index, self.validator)
        return {"seq_no": receipt.seq_no}

    def do_set_clock(self, s):
        self.clock.set(parse_time(s["time"]))
        return {"time": self.clock.now()}

    def _vehicle(self, name: str) -> VehicleAgent:
        agent = self.actors[name].agent
        if agent is None:
            raise ScenarioError(f"actor {name!r} is not a vehicle bound to a contract")
        return agent

    def do_begin_session(self, s):
        agent = self._vehicle(s["vehicle"])
        holder = self.actors[s["holder"]]
        cred = self.credentials[s["credential"]]
        transport = InProcessTransport()
        session = agent.begin_session(holder.wallet, transport, holder_did=cred.holder_did)
        nonce = receive_presentation_request(holder.wallet, transport, agent.did, self.clock)
        self.sessions[s["vehicle"]] = (session, transport, nonce)
        return {"holder_did": cred.holder_did}

    def do_attempt_access(self, s):
        agent = self._vehicle(s["vehicle"])
        holder = self.actors[s["holder"]]
        cred = self.credentials[s["credential"]]
        live = self.sessions.pop(s["vehicle"], None)
        if live is None:
            raise NoSessionError(f"vehicle {s['vehicle']!r} has no live session")
        session, transport, nonce = live
        if "replay" in s:
            pres = self.attempts[s["replay"]].presentation
        else:
            pres = present(holder.wallet, cred, s.get("disclose", list(cred.claims)), nonce)
        tamper = s.get("tamper", {})
        if tamper:
            pres = dataclasses.replace(pres, disclosed=tuple(
                dataclasses.replace(d, value=tamper[d.name]) if d.name in tamper else d for d in pres.disclosed
            ))
        data = pres.to_bytes()
        holder.wallet.message_logger(agent.did, self.clock)("out", data)
        transport.send("vehicle", data)
        received = Presentation.from_dict(canonical_parse(transport.receive("vehicle")))
        agent.wallet.message_logger(cred.holder_did, self.clock)("in", data)
        height = self.ledger.height()
        was_locked = agent.lock is LockState.LOCKED
        try:
            d = agent.request_access(session, received, s["location"])
            attempt = Attempt(pres, d.outcome.value, [r.value for r in d.reasons], None, d.checked_at_seq, height)
        except SSIError as exc:
            attempt = Attempt(pres, "REJECTED", [], exc.code, None, height)
        if was_locked and agent.lock is LockState.UNLOCKED and attempt.outcome != "GRANT":
            self.unlock_violations.append(s["attempt"])
        self.attempts[s["attempt"]] = attempt
        return attempt.to_dict()

    def do_relock(self, s):
        agent = self._vehicle(s["vehicle"])
        requester = self.actors[s["actor"]]
        cred_dids = requester.wallet.dids()
        who = agent.state.unlock_holder if agent.state.unlock_holder in cred_dids else requester.wallet.public_did
        agent.relock(who)
        return {"lock": agent.lock.value}

    def do_poll_bridge(self, s):
        results = []
        real = self.indexer.observer
        if s.get("fail"):
            self.indexer.observer = _FailingObserver(real)
        try:
            for _ in range(s.get("cycles", 1)):
                results.append(self.poll())
        finally:
            self.indexer.observer = real
        return {"cycles": results, "cursor": self.store.cursor(), "lag_cycles": self.indexer.lag_cycles()}

    def do_assert_decision(self, s):
        got = self.attempts[s["attempt"]]
        problems = []
        if got.outcome != s["outcome"]:
            problems.append(f"outcome {got.outcome} != {s['outcome']}")
        if "reasons" in s and got.reasons != s["reasons"]:
            problems.append(f"reasons {got.reasons} != {s['reasons']}")
        for r in s.get("includes", []):
            if r not in got.reasons:
                problems.append(f"reason {r} missing from {got.reasons}")
        if "error" in s and got.error != s["error"]:
            problems.append(f"error {got.error} != {s['error']}")
        if "pinned_below_head" in s:
            pinned = got.checked_at_seq is not None and got.checked_at_seq < got.ledger_height
            if pinned != s["pinned_below_head"]:
                problems.append(f"checked_at_seq {got.checked_at_seq} vs ledger height {got.ledger_height}")
        if problems:
            raise AssertionFailed("; ".join(problems))
        return got.to_dict()

    def do_assert_state(self, s):
        agent = self._vehicle(s["vehicle"])
        log = [t for t in self.runtime.transactions()
               if t.kind is AuthKind.INVOKE and t.contract_address == agent.state.contract_address]
        actual = {
            "lock": agent.lock.value,
            "unlock_holder": self._holder_name(agent.state.unlock_holder),
            "invokes": len(log),
            "decisions": sum(1 for t in log if t.decision is not None),
        }
        problems = [f"{k} {actual[k]!r} != {s[k]!r}" for k in actual if k in s and actual[k] != s[k]]
        if problems:
            raise AssertionFailed("; ".join(problems))
        return actual

    def _holder_name(self, did: str | None) -> str | None:
        if did is None:
            return None
        return next((n for n, a in sorted(self.actors.items()) if did in a.wallet.dids()), did)


# -- run --------------------------------------------------------------------------


def _chain(path: Path, height: int) -> dict[str, Any]:
    check = hashchain.check_file(path)
    return {"ok": check.ok, "first_bad_seq": check.first_bad_seq, "entries": height}


def run_scenario(scenario: dict[str, Any], cfg: dict[str, Any], keep_going: bool = False) -> dict[str, Any]:
    """Execute ``scenario`` and return a deterministic report (no paths, no ports)."""
    cfg = dict(cfg)
    for k in SCENARIO_OVERRIDABLE:
        if k in scenario.get("config", {}):
            cfg[k] = scenario["config"][k]
    data_dir = Path(cfg["data_dir"])
    reset_data_dir(data_dir)
    world = World(cfg, data_dir)
    steps_out: list[dict[str, Any]] = []
    interval = cfg["poll_interval_steps"]
    failed = stopped = False
    try:
        for i, step in enumerate(scenario["steps"]):
            action = step["action"]
            if stopped:
                steps_out.append({"index": i, "action": action, "status": "skipped"})
                continue
            record: dict[str, Any] = {"index": i, "action": action}
            expected = step.get("expect_error")
            try:
                detail = getattr(world, f"do_{action}")(step)
                if expected is not None:
                    record.update(status="failed", message=f"expected error {expected!r}, step succeeded")
                else:
                    record.update(status="ok", detail=detail)
            except AssertionFailed as exc:
                record.update(status="failed", message=str(exc))
            except (SSIError, ClockError) as exc:
                code = getattr(exc, "code", "clock_backwards")
                if expected == code:
                    record.update(status="ok", detail={"error": code})
                else:
                    record.update(status="failed", message=f"unexpected error {code}: {exc}")
            if record["status"] == "failed":
                failed = True
                stopped = not keep_going
            steps_out.append(record)
            if interval and action != "poll_bridge" and (i + 1) % interval == 0:
                world.poll()
        mismatches = replay_decisions(world.runtime.entries(), world.ledger)
        report = {
            "scenario": scenario["name"],
            "seed": cfg["seed"],
            "config": {k: cfg[k] for k in SCENARIO_OVERRIDABLE},
            "contracts": dict(sorted(world.contracts.items())),
            "steps": steps_out,
            "decisions": {k: v.to_dict() for k, v in world.attempts.items()},
            "chains": {
                "identity": _chain(data_dir / IDENTITY_LOG, world.ledger.height()),
                "authorization": _chain(data_dir / AUTH_LOG, world.runtime.height()),
            },
            "replay": {"ok": not mismatches, "mismatched_seq": [m.seq_no for m in mismatches]},
            "unlock_without_grant": world.unlock_violations,
        }
    finally:
        world.close()
    sound = (report["chains"]["identity"]["ok"] and report["chains"]["authorization"]["ok"]
             and report["replay"]["ok"] and not report["unlock_without_grant"])
    report["assertions"] = {
        "passed": sum(1 for s in steps_out if s["status"] == "ok" and s["action"].startswith("assert_")),
        "failed": sum(1 for s in steps_out if s["status"] == "failed"),
    }
    report["passed"] = sound and not failed
    return report


def report_bytes(report: dict[str, Any]) -> bytes:
    return (json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _print_report(report: dict[str, Any], out) -> None:
    print(f"scenario {report['scenario']} (seed {report['seed']})", file=out)
    for s in report["steps"]:
        line = f"  [{s['index']:>2}] {s['action']:<16} {s['status']}"
        if s["action"] == "attempt_access" and s["status"] == "ok":
            d = s["detail"]
            line += f"  {d['outcome']} {d['reasons'] or d['error']}"
        if "message" in s:
            line += f"  {s['message']}"
        print(line, file=out)
    for name, addr in report["contracts"].items():
        print(f"  contract {name}: {addr}", file=out)
    for name, c in report["chains"].items():
        state = "ok" if c["ok"] else f"BROKEN at seq_no {c['first_bad_seq']}"
        print(f"  {name} chain: {state} ({c['entries']} entries)", file=out)
    print(f"  decision replay: {'ok' if report['replay']['ok'] else 'MISMATCH'}", file=out)
    print("PASS" if report["passed"] else "FAIL", file=out)


def cmd_run(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "data_dir": args.data_dir})
    scenario = load_scenario(args.scenario)
    report = run_scenario(scenario, cfg, keep_going=args.keep_going)
    blob = report_bytes(report)
    Path(cfg["data_dir"], REPORT_FILE).write_bytes(blob)
    if args.json:
        sys.stdout.write(blob.decode("utf-8"))
    else:
        _print_report(report, sys.stdout)
    return EXIT_OK if report["passed"] else EXIT_FAILED


# -- audit ------------------------------------------------------------------------


def _good_prefix(path: Path, check: hashchain.ChainCheck) -> list[dict[str, Any]]:
    if not path.exists():
        return []
    lines = hashchain.read_lines(path)
    if not check.ok and check.first_bad_seq is not None:
        lines = lines[: check.first_bad_seq - 1]
    return [canonical_parse(line) for line in lines]


def audit(data_dir: Path, contract: str | None, out) -> int:
    id_path, auth_path = data_dir / IDENTITY_LOG, data_dir / AUTH_LOG
    checks = {"identity": hashchain.check_file(id_path), "authorization": hashchain.check_file(auth_path)}
    entries = [AuthTransaction.from_dict(e) for e in _good_prefix(auth_path, checks["authorization"])]
    # seq, kind, caller, outcome, reasons, checked_at_seq
    print(f"{'seq':>5}  {'time':>6}  {'kind':<13}  {'caller':<34}  {'outcome':<8}  {'at_seq':>6}  reasons", file=out)
    for t in entries:
        if contract is not None and t.contract_address != contract:
            continue
        if t.decision is not None:
            outcome, at, why = t.decision.outcome.value, str(t.decision.checked_at_seq), ",".join(
                r.value for r in t.decision.reasons)
        elif t.kind is AuthKind.INVOKE:
            outcome, at, why = "REJECTED", "-", t.payload.get("rejected", "")
        else:
            outcome, at, why = "-", "-", ""
        print(f"{t.seq_no:>5}  {t.timestamp:>6}  {t.kind.value:<13}  {t.caller_did:<34}  {outcome:<8}  {at:>6}  {why}",
              file=out)
    status = EXIT_OK
    for name, check in checks.items():
        if check.ok:
            print(f"{name} chain: ok", file=out)
        else:
            print(f"{name} chain: BROKEN at seq_no {check.first_bad_seq} ({check.detail})", file=out)
            status = EXIT_FAILED
    if status == EXIT_OK and entries:
        ledger = IdentityLedger(GenesisConfig.load(data_dir / GENESIS_FILE), path=id_path)
        try:
            mismatches = replay_decisions(_good_prefix(auth_path, checks["authorization"]), ledger)
        finally:
            ledger.close()
        if mismatches:
            print(f"decision replay: MISMATCH at seq_no {mismatches[0].seq_no}", file=out)
            status = EXIT_FAILED
        else:
            print("decision replay: ok", file=out)
    return status


def cmd_audit(args) -> int:
    cfg = load_config(args.config, {"data_dir": args.data_dir})
    data_dir = Path(cfg["data_dir"])
    if not data_dir.is_dir():
        raise ScenarioError(f"data directory {data_dir} does not exist")
    return audit(data_dir, args.contract, sys.stdout)


def cmd_init(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "data_dir": args.data_dir})
    data_dir = Path(cfg["data_dir"])
    reset_data_dir(data_dir)
    genesis = GenesisConfig((steward_for(cfg["seed"]).anchor,))
    genesis.save(args.genesis)
    genesis.save(data_dir / GENESIS_FILE)
    print(f"genesis with steward {genesis.trust_anchors[0].did} written to {args.genesis}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssi-access", description="Shared-vehicle access control simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--data-dir", help="override config data_dir")

    r = sub.add_parser("run", help="run a scenario file or bundled scenario")
    r.add_argument("scenario", help="path to a scenario JSON, or a bundled name: " + ", ".join(bundled_scenarios()))
    common(r)
    r.add_argument("--seed", type=int)
    r.add_argument("--keep-going", action="store_true", help="do not stop at the first failed step")
    r.add_argument("--json", action="store_true", help="print the full report as JSON")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("audit", help="print the access log and verify both chains")
    common(a)
    a.add_argument("--contract", help="only show entries for this contract address")
    a.set_defaults(func=cmd_audit)

    i = sub.add_parser("init", help="write a genesis file and reset the data directory")
    common(i)
    i.add_argument("--genesis", required=True, help="where to write the genesis JSON")
    i.add_argument("--seed", type=int)
    i.set_defaults(func=cmd_init)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
