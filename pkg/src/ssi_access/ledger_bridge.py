"""Identity-ledger indexer, read-only HTTP API, and the oracle client the
authorization runtime uses as its identity view.

Endpoints (all GET, JSON)::

    /api/v1/txns?fromSeq={n}&limit={k}
    /api/v1/txns/{seqNo}
    /api/v1/dids/{did}[?atSeq=n]
    /api/v1/revocation/{registryId}[?atSeq=n]
    /api/v1/credentials/{credHashHex}[?atSeq=n]   -> {exists, seqNo}
    /api/v1/health                                -> {headSeq, ledgerHeight, lagCycles}
"""

from __future__ import annotations

import json
import logging
import os
import re
import sqlite3
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable
from urllib.parse import parse_qs, unquote, urlsplit

import httpx

from .clock import LogicalClock
from .crypto_core import canonicalize
from .did_core import DIDDocument
from .errors import (
    BindError,
    DIDNotFoundError,
    LedgerReadError,
    OutOfRangeError,
    SSIError,
    UnknownRegistryError,
    ViewUnavailableError,
)
from .identity_ledger import GenesisConfig, RevocationState, registry_id_for
from .identity_ledger import TxnKind

logger = logging.getLogger(__name__)

MAX_PAGE = 1000

_SCHEMA = """
CREATE TABLE IF NOT EXISTS txns (
    seq_no INTEGER PRIMARY KEY,
    kind TEXT NOT NULL,
    payload TEXT NOT NULL,
    txn_hash TEXT NOT NULL,
    entry TEXT NOT NULL,
    indexed_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS did_index (did TEXT, seq_no INTEGER, PRIMARY KEY (did, seq_no));
CREATE TABLE IF NOT EXISTS registry_index (registry_id TEXT, seq_no INTEGER, PRIMARY KEY (registry_id, seq_no));
CREATE TABLE IF NOT EXISTS cred_index (cred_hash TEXT, seq_no INTEGER, PRIMARY KEY (cred_hash, seq_no));
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
"""


class IndexerCrash(RuntimeError):
    """Raised by fault injection between storing entries and moving the cursor."""


@dataclass(frozen=True)
class IndexedTxn:
    seq_no: int
    kind: str
    payload: dict[str, Any]
    txn_hash: str
    indexed_at: int
    entry: dict[str, Any]

    def to_json(self) -> dict[str, Any]:
        e = self.entry
        return {
            "seqNo": self.seq_no,
            "kind": self.kind,
            "payload": self.payload,
            "txnHash": self.txn_hash,
            "prevHash": e["prev_hash"],
            "submitterDid": e["submitter_did"],
            "timestamp": e["timestamp"],
            "indexedAt": self.indexed_at,
        }


class IndexStore:
    """Embedded document store keyed by seq_no with DID / registry / credential
    secondary indexes. One sqlite connection per thread; WAL so readers see a
    consistent snapshot while the indexer writes."""

    def __init__(self, path: str | os.PathLike, genesis: GenesisConfig | None = None):
        self.path = str(path)
        self._local = threading.local()
        conn = self._conn()
        conn.executescript(_SCHEMA)
        if genesis is not None:
            self._set_meta(conn, "genesis", json.dumps(genesis.to_dict()))
        conn.commit()
        self._genesis_cache: GenesisConfig | None = None

    def _conn(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self.path, timeout=10, isolation_level=None)
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA synchronous=FULL")
            self._local.conn = conn
        return conn

    def close(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None

    # meta ----------------------------------------------------------------------

    @staticmethod
    def _set_meta(conn, key: str, value: str) -> None:
        conn.execute("INSERT OR REPLACE INTO meta (key, value) VALUES (?, ?)", (key, value))

    def get_meta(self, key: str, default: str | None = None) -> str | None:
        row = self._conn().execute("SELECT value FROM meta WHERE key = ?", (key,)).fetchone()
        return row[0] if row else default

    def set_meta(self, key: str, value: str) -> None:
        self._set_meta(self._conn(), key, value)

    @property
    def genesis(self) -> GenesisConfig | None:
        if self._genesis_cache is None:
            raw = self.get_meta("genesis")
            self._genesis_cache = GenesisConfig.from_dict(json.loads(raw)) if raw else None
        return self._genesis_cache

    def cursor(self) -> int:
        return int(self.get_meta("cursor", "0"))

    def set_cursor(self, seq_no: int) -> None:
        self.set_meta("cursor", str(seq_no))

    head_seq = cursor

    # writes ------------------------------------------------------------------

    def put_many(self, entries: list[dict[str, Any]], indexed_at: int) -> None:
        """Upsert entries and their index rows in one transaction (idempotent)."""
        conn = self._conn()
        conn.execute("BEGIN IMMEDIATE")
        try:
            for e in entries:
                seq, kind, p = e["seq_no"], e["kind"], e["payload"]
                conn.execute(
                    "INSERT OR REPLACE INTO txns VALUES (?, ?, ?, ?, ?, ?)",
                    (seq, kind, canonicalize(p).decode(), e["txn_hash"], canonicalize(e).decode(), indexed_at),
                )
                if kind == TxnKind.DID_REG.value:
                    conn.execute("INSERT OR IGNORE INTO did_index VALUES (?, ?)", (p["document"]["id"], seq))
                elif kind == TxnKind.CRED_HASH.value:
                    conn.execute("INSERT OR IGNORE INTO cred_index VALUES (?, ?)", (p["cred_hash"], seq))
                    conn.execute("INSERT OR IGNORE INTO registry_index VALUES (?, ?)", (p["registry_id"], seq))
                elif kind == TxnKind.REVOC_UPDATE.value:
                    rid = registry_id_for(e["submitter_did"], seq) if p["op"] == "create" else p["registry_id"]
                    conn.execute("INSERT OR IGNORE INTO registry_index VALUES (?, ?)", (rid, seq))
            conn.execute("COMMIT")
        except BaseException:
            conn.execute("ROLLBACK")
            raise

    # reads ----------------------------------------------------------------------

    def snapshot(self):
        """Context manager: a read transaction pinned to one WAL snapshot."""
        return _Snapshot(self._conn())

    @staticmethod
    def _row(row) -> IndexedTxn:
        seq, kind, payload, txn_hash, entry, indexed_at = row
        return IndexedTxn(seq, kind, json.loads(payload), txn_hash, indexed_at, json.loads(entry))

    def count(self) -> int:
        return self._conn().execute("SELECT COUNT(*) FROM txns").fetchone()[0]

    def all_entries(self) -> list[dict[str, Any]]:
        rows = self._conn().execute("SELECT entry FROM txns ORDER BY seq_no").fetchall()
        return [json.loads(r[0]) for r in rows]

    def get(self, seq_no: int, head: int | None = None) -> IndexedTxn | None:
        head = self.cursor() if head is None else head
        if not 1 <= seq_no <= head:
            return None
        row = self._conn().execute("SELECT * FROM txns WHERE seq_no = ?", (seq_no,)).fetchone()
        return self._row(row) if row else None

    def list(self, from_seq: int, limit: int, head: int | None = None) -> list[IndexedTxn]:
        head = self.cursor() if head is None else head
        rows = self._conn().execute(
            "SELECT * FROM txns WHERE seq_no >= ? AND seq_no <= ? ORDER BY seq_no LIMIT ?",
            (from_seq, head, limit),
        ).fetchall()
        return [self._row(r) for r in rows]

    def resolve_did(self, did: str, at_seq: int) -> tuple[DIDDocument, int]:
        row = self._conn().execute(
            "SELECT t.payload, t.seq_no FROM did_index d JOIN txns t ON t.seq_no = d.seq_no "
            "WHERE d.did = ? AND d.seq_no <= ? ORDER BY d.seq_no DESC LIMIT 1",
            (did, at_seq),
        ).fetchone()
        if row is not None:
            return DIDDocument.from_dict(json.loads(row[0])["document"]), row[1]
        anchor = self.genesis.anchor(did) if self.genesis else None
        if anchor is None:
            raise DIDNotFoundError(f"{did} not registered at seq {at_seq}")
        return anchor.document(), 0

    def revocation_state(self, registry_id: str, at_seq: int) -> RevocationState:
        rows = self._conn().execute(
            "SELECT t.kind, t.payload, t.entry FROM registry_index r JOIN txns t ON t.seq_no = r.seq_no "
            "WHERE r.registry_id = ? AND r.seq_no <= ? ORDER BY r.seq_no",
            (registry_id, at_seq),
        ).fetchall()
        if not rows:
            raise UnknownRegistryError(f"unknown registry {registry_id} at seq {at_seq}")
        issuer, state, issued, revoked = None, registry_id, 0, set()
        for kind, payload, entry in rows:
            p = json.loads(payload)
            if kind == TxnKind.CRED_HASH.value:
                issued += 1
            elif p["op"] == "create":
                issuer = json.loads(entry)["submitter_did"]
            else:
                revoked.update(p["indices"])
                state = p["state_digest"]
        return RevocationState(registry_id, issuer, frozenset(revoked), state, issued, at_seq)

    def cred_hash_seq(self, cred_hash: str, at_seq: int) -> int | None:
        row = self._conn().execute(
            "SELECT MIN(seq_no) FROM cred_index WHERE cred_hash = ? AND seq_no <= ?", (cred_hash, at_seq)
        ).fetchone()
        return row[0] if row else None


class _Snapshot:
    def __init__(self, conn):
        self.conn = conn

    def __enter__(self):
        self.conn.execute("BEGIN")
        return self

    def __exit__(self, *exc):
        self.conn.execute("COMMIT")
        return False


# -- indexer -------------------------------------------------------------------------


class Indexer:
    """Pull-based daemon tailing a ledger observer into an :class:`IndexStore`.

    Each :meth:`poll` is one cycle. The store's cursor only moves after the
    entries it covers are committed, so a crash in between is retry-safe.
    """

    def __init__(self, store: IndexStore, observer, clock: LogicalClock | None = None):
        self.store = store
        self.observer = observer
        self.clock = clock or LogicalClock()
        if store.genesis is None:
            store.set_meta("genesis", json.dumps(observer.genesis.to_dict()))
        self.crash_before_cursor = False

    @property
    def cycle(self) -> int:
        return int(self.store.get_meta("cycle", "0"))

    @property
    def behind_since(self) -> int | None:
        v = self.store.get_meta("behind_since")
        return None if v in (None, "") else int(v)

    def poll(self, from_seq: int | None = None) -> int:
        """Index everything from ``from_seq`` (default: cursor + 1) to the ledger head."""
        cycle = self.cycle + 1
        self.store.set_meta("cycle", str(cycle))
        cursor = self.store.cursor()
        start = cursor + 1 if from_seq is None else from_seq
        try:
            height = self.observer.height()
            if not 1 <= start <= height + 1:
                raise OutOfRangeError(f"from_seq {start} outside [1, {height + 1}]")
            entries = [self.observer.read_entry(s) for s in range(start, height + 1)]
        except OutOfRangeError:
            raise
        except Exception as exc:
            if self.behind_since is None:
                self.store.set_meta("behind_since", str(cycle))
            raise LedgerReadError(f"ledger read failed: {exc}") from exc
        fresh = max(0, height - cursor)
        if entries:
            self.store.put_many(entries, self.clock.now())
        if self.crash_before_cursor:
            raise IndexerCrash("simulated crash before cursor write")
        self.store.set_cursor(max(cursor, height))
        self.store.set_meta("behind_since", "")
        if fresh:
            logger.debug("indexed %d txns (cycle %d, head %d)", fresh, cycle, height)
        return fresh

    def lag_cycles(self, ledger_height: int | None = None) -> int:
        """Poll cycles until the index reaches ``ledger_height``: 0 when caught up,
        1 when the next poll would catch up, plus one per failed cycle since."""
        height = self.observer.height() if ledger_height is None else ledger_height
        if self.store.cursor() >= height:
            return 0
        since = self.behind_since
        return 1 if since is None else 1 + (self.cycle - since + 1)


# -- HTTP API --------------------------------------------------------------------------


_ROUTES = [
    (re.compile(r"^/api/v1/txns$"), "list_txns"),
    (re.compile(r"^/api/v1/txns/([^/]+)$"), "get_txn"),
    (re.compile(r"^/api/v1/dids/([^/]+)$"), "get_did"),
    (re.compile(r"^/api/v1/revocation/([^/]+)$"), "get_revocation"),
    (re.compile(r"^/api/v1/credentials/([^/]+)$"), "get_credential"),
    (re.compile(r"^/api/v1/health$"), "health"),
]


class _HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _int_param(query: dict[str, list[str]], name: str, default: int | None = None) -> int | None:
    if name not in query:
        return default
    raw = query[name][-1]
    if not re.fullmatch(r"-?\d+", raw):
        raise _HttpError(400, f"{name} must be an integer")
    return int(raw)


class _Handler(BaseHTTPRequestHandler):
    server_version = "ssi-bridge/1"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # route through logging, not stderr
        logger.debug("http %s", fmt % args)

    def _send(self, status: int, body: dict[str, Any]) -> None:
        data = json.dumps(body, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        parts = urlsplit(self.path)
        query = parse_qs(parts.query)
        api: BridgeAPI = self.server.api  # type: ignore[attr-defined]
        try:
            for pattern, name in _ROUTES:
                m = pattern.match(parts.path)
                if m:
                    status, body = getattr(api, name)(*[unquote(g) for g in m.groups()], query=query)
                    break
            else:
                raise _HttpError(404, f"no route for {parts.path}")
        except _HttpError as exc:
            status, body = exc.status, {"error": str(exc)}
        except Exception as exc:  # pragma: no cover - defensive
            logger.exception("bridge handler failed")
            status, body = 500, {"error": str(exc)}
        self._send(status, body)

    def _read_only(self):
        self._send(405, {"error": "read-only API"})

    do_POST = do_PUT = do_DELETE = do_PATCH = _read_only


class BridgeAPI:
    """Request handlers, separated from the socket layer."""

    def __init__(self, store: IndexStore, indexer: Indexer | None = None, ledger_height: Callable[[], int] | None = None):
        self.store = store
        self.indexer = indexer
        self.ledger_height = ledger_height

    def _at_seq(self, query, head: int) -> int:
        at = _int_param(query, "atSeq", head)
        if not 0 <= at <= head:
            raise _HttpError(400, f"atSeq must be within [0, {head}]")
        return at

    def list_txns(self, query):
        with self.store.snapshot():
            head = self.store.cursor()
            from_seq = _int_param(query, "fromSeq", 1)
            limit = _int_param(query, "limit", 100)
            if from_seq < 1 or not 1 <= limit <= MAX_PAGE:
                raise _HttpError(400, f"fromSeq must be >= 1 and limit within [1, {MAX_PAGE}]")
            txns = self.store.list(from_seq, limit, head)
        return 200, {"txns": [t.to_json() for t in txns], "headSeq": head}

    def get_txn(self, seq_raw: str, query):
        if not seq_raw.isdigit():
            raise _HttpError(400, "seqNo must be a positive integer")
        with self.store.snapshot():
            txn = self.store.get(int(seq_raw))
        if txn is None:
            raise _HttpError(404, f"txn {seq_raw} not indexed")
        return 200, txn.to_json()

    def get_did(self, did: str, query):
        with self.store.snapshot():
            at = self._at_seq(query, self.store.cursor())
            try:
                doc, seq = self.store.resolve_did(did, at)
            except DIDNotFoundError as exc:
                raise _HttpError(404, str(exc)) from exc
        return 200, {"did": did, "document": doc.to_dict(), "seqNo": seq, "atSeq": at}

    def get_revocation(self, registry_id: str, query):
        with self.store.snapshot():
            at = self._at_seq(query, self.store.cursor())
            try:
                st = self.store.revocation_state(registry_id, at)
            except UnknownRegistryError as exc:
                raise _HttpError(404, str(exc)) from exc
        return 200, {
            "registryId": st.registry_id,
            "issuerDid": st.issuer_did,
            "revokedIndices": sorted(st.revoked_indices),
            "stateDigest": st.state_digest,
            "issuedCount": st.issued_count,
            "atSeq": at,
        }

    def get_credential(self, cred_hash: str, query):
        if not re.fullmatch(r"[0-9a-f]{64}", cred_hash):
            raise _HttpError(400, "credHashHex must be 64 lowercase hex characters")
        with self.store.snapshot():
            at = self._at_seq(query, self.store.cursor())
            seq = self.store.cred_hash_seq(cred_hash, at)
        return 200, {"exists": seq is not None, "seqNo": seq, "atSeq": at}

    def health(self, query):
        head = self.store.cursor()
        height = self.ledger_height() if self.ledger_height else head
        lag = self.indexer.lag_cycles(height) if self.indexer else (0 if head >= height else 1)
        return 200, {"headSeq": head, "ledgerHeight": height, "lagCycles": lag}


class BridgeServer:
    def __init__(self, httpd: ThreadingHTTPServer, thread: threading.Thread):
        self._httpd = httpd
        self._thread = thread
        self._closed = False

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise BindError(f"bind address must be host:port, got {bind!r}")
    return host, int(port)


def serve_http(store: IndexStore, bind: str = "127.0.0.1:0", indexer: Indexer | None = None,
               ledger_height: Callable[[], int] | None = None) -> BridgeServer:
    """Start the read-only API on a background thread."""
    if ledger_height is None and indexer is not None:
        ledger_height = indexer.observer.height
    try:
        httpd = ThreadingHTTPServer(parse_bind(bind), _Handler)
    except OSError as exc:
        raise BindError(f"cannot bind {bind}: {exc}") from exc
    httpd.daemon_threads = True
    httpd.api = BridgeAPI(store, indexer, ledger_height)  # type: ignore[attr-defined]
    thread = threading.Thread(target=httpd.serve_forever, args=(0.05,), name="bridge-http", daemon=True)
    thread.start()
    logger.info("bridge API listening on %s:%d", *httpd.server_address[:2])
    return BridgeServer(httpd, thread)


# -- oracle client ------------------------------------------------------------------------


class OracleClient:
    """HTTP client for the bridge API. Transport failures become
    :class:`ViewUnavailableError`."""

    def __init__(self, base_url: str, timeout: float = 5.0, transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def _get(self, path: str, params: dict[str, Any] | None = None, allow_404: bool = False) -> tuple[int, dict]:
        try:
            r = self._http.get(path, params=params)
        except httpx.HTTPError as exc:
            raise ViewUnavailableError(f"bridge unreachable: {exc}") from exc
        if r.status_code == 404 and allow_404:
            return 404, r.json()
        if r.status_code != 200:
            raise ViewUnavailableError(f"bridge answered {r.status_code}: {r.text[:200]}")
        return 200, r.json()

    def health(self) -> dict[str, Any]:
        return self._get("/api/v1/health")[1]

    def txns(self, from_seq: int = 1, limit: int = 100) -> list[dict[str, Any]]:
        return self._get("/api/v1/txns", {"fromSeq": from_seq, "limit": limit})[1]["txns"]

    def txn(self, seq_no: int) -> dict[str, Any] | None:
        status, body = self._get(f"/api/v1/txns/{seq_no}", allow_404=True)
        return body if status == 200 else None

    def did(self, did: str, at_seq: int | None = None) -> dict[str, Any] | None:
        params = {"atSeq": at_seq} if at_seq is not None else None
        status, body = self._get(f"/api/v1/dids/{did}", params, allow_404=True)
        return body if status == 200 else None

    def revocation(self, registry_id: str, at_seq: int | None = None) -> dict[str, Any] | None:
        params = {"atSeq": at_seq} if at_seq is not None else None
        status, body = self._get(f"/api/v1/revocation/{registry_id}", params, allow_404=True)
        return body if status == 200 else None

    def credential(self, cred_hash: str, at_seq: int | None = None) -> dict[str, Any]:
        params = {"atSeq": at_seq} if at_seq is not None else None
        return self._get(f"/api/v1/credentials/{cred_hash}", params)[1]

    def identity_view(self, freshness_bound: int = 2) -> "BridgeIdentityView":
        return identity_view(self, freshness_bound)


class BridgeIdentityView:
    """Identity state pinned at the bridge's ``head_seq`` when the view was taken."""

    available = True

    def __init__(self, client: OracleClient, head_seq: int, ledger_height: int, lag_cycles: int, freshness_bound: int):
        self.client = client
        self.head_seq = head_seq
        self.ledger_height = ledger_height
        self.lag_cycles = lag_cycles
        self.freshness_bound = freshness_bound

    @property
    def stale(self) -> bool:
        return self.lag_cycles > self.freshness_bound

    def resolve_did(self, did: str) -> DIDDocument:
        body = self.client.did(did, self.head_seq)
        if body is None:
            raise DIDNotFoundError(f"{did} not registered at seq {self.head_seq}")
        return DIDDocument.from_dict(body["document"])

    def revocation_state(self, registry_id: str) -> RevocationState:
        body = self.client.revocation(registry_id, self.head_seq)
        if body is None:
            raise UnknownRegistryError(f"unknown registry {registry_id}")
        return RevocationState(
            body["registryId"], body["issuerDid"], frozenset(body["revokedIndices"]),
            body["stateDigest"], body["issuedCount"], body["atSeq"],
        )

    def cred_hash_seq(self, cred_hash: str) -> int | None:
        return self.client.credential(cred_hash, self.head_seq)["seqNo"]


def identity_view(client: OracleClient, freshness_bound: int = 2) -> BridgeIdentityView:
    h = client.health()
    return BridgeIdentityView(client, h["headSeq"], h["ledgerHeight"], h["lagCycles"], freshness_bound)
