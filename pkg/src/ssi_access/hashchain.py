"""Hash-chained JSON Lines logs shared by both ledgers.

An entry is a flat record with ``seq_no`` (from 1), ``prev_hash`` and
``txn_hash``; ``txn_hash`` is the digest of the canonical entry without it.
"""

from __future__ import annotations

import io
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator

from .crypto_core import ZERO_DIGEST, canonical_parse, canonicalize, digest_hex
from .errors import CanonicalizationError

GENESIS_PREV = ZERO_DIGEST.hex()


def entry_hash(entry: dict[str, Any]) -> str:
    body = {k: v for k, v in entry.items() if k != "txn_hash"}
    return digest_hex(canonicalize(body))


def seal(body: dict[str, Any]) -> dict[str, Any]:
    entry = dict(body)
    entry["txn_hash"] = entry_hash(entry)
    return entry


@dataclass(frozen=True)
class ChainCheck:
    ok: bool
    first_bad_seq: int | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


def check_entries(entries: Iterable[dict[str, Any]]) -> ChainCheck:
    prev = GENESIS_PREV
    for n, entry in enumerate(entries, start=1):
        if not isinstance(entry, dict):
            return ChainCheck(False, n, "entry is not a record")
        if entry.get("seq_no") != n:
            return ChainCheck(False, n, f"seq_no {entry.get('seq_no')!r} out of order")
        if entry.get("prev_hash") != prev:
            return ChainCheck(False, n, "prev_hash does not link to previous entry")
        try:
            recomputed = entry_hash(entry)
        except CanonicalizationError as exc:
            return ChainCheck(False, n, f"unencodable entry: {exc}")
        if entry.get("txn_hash") != recomputed:
            return ChainCheck(False, n, "txn_hash does not recompute")
        prev = entry["txn_hash"]
    return ChainCheck(True)


def read_lines(path: Path) -> list[bytes]:
    data = Path(path).read_bytes()
    if not data:
        return []
    lines = data.split(b"\n")
    if lines[-1] == b"":
        lines.pop()
    return lines


def check_file(path: str | os.PathLike) -> ChainCheck:
    """Verify a log file byte for byte: every line must be canonical JSON and the
    parsed entries must form an unbroken chain. Line n holds seq_no n."""
    path = Path(path)
    if not path.exists():
        return ChainCheck(True)
    entries = []
    for n, line in enumerate(read_lines(path), start=1):
        try:
            entry = canonical_parse(line)
        except CanonicalizationError as exc:
            return ChainCheck(False, n, f"unparseable line: {exc}")
        if canonicalize(entry) != line:
            return ChainCheck(False, n, "line is not in canonical form")
        entries.append(entry)
    return check_entries(entries)


class JsonlLog:
    """Append-only durable log. ``append`` returns only after fsync."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._fh: io.BufferedWriter | None = None
        self._lock = threading.Lock()

    def load(self) -> list[dict[str, Any]]:
        if self.path is None or not self.path.exists():
            return []
        return [canonical_parse(line) for line in read_lines(self.path)]

    def append(self, entry: dict[str, Any]) -> None:
        if self.path is None:
            return
        line = canonicalize(entry) + b"\n"
        with self._lock:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.path, "ab")
            self._fh.write(line)
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def iter_file_entries(path: str | os.PathLike) -> Iterator[dict[str, Any]]:
    for line in read_lines(Path(path)):
        yield canonical_parse(line)
