"""Deterministic primitives: Ed25519 keys and signatures, SHA-256 digests,
and canonical JSON serialization."""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import CanonicalizationError, MalformedKeyError, MalformedSeedError

SEED_LEN = 32
KEY_LEN = 32
DIGEST_LEN = 32
ZERO_DIGEST = bytes(DIGEST_LEN)

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = b""

    def __repr__(self) -> str:
        return f"KeyPair(public_key={self.public_key.hex()})"


def generate_keypair(seed: bytes) -> KeyPair:
    """Derive an Ed25519 keypair from 32 bytes of entropy (the seed is the
    private key itself, so the mapping is deterministic)."""
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != SEED_LEN:
        raise MalformedSeedError(f"seed must be {SEED_LEN} bytes")
    sk = Ed25519PrivateKey.from_private_bytes(bytes(seed))
    pk = sk.public_key().public_bytes(_RAW, _RAW_PUB)
    return KeyPair(public_key=pk, private_key=bytes(seed))


def public_key_of(private_key: bytes) -> bytes:
    return generate_keypair(private_key).public_key


def sign(private_key: bytes, message: bytes) -> bytes:
    if not isinstance(private_key, (bytes, bytearray)) or len(private_key) != KEY_LEN:
        raise MalformedKeyError("private key must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(bytes(private_key)).sign(bytes(message))


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Return True iff ``signature`` is valid. Malformed inputs are just invalid."""
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public_key)).verify(
            bytes(signature), bytes(message)
        )
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


def digest(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def digest_hex(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def _prepare(value: Any) -> Any:
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise CanonicalizationError(f"non-finite number {value!r}")
        return value
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise CanonicalizationError(f"non-string key {k!r}")
            out[k] = _prepare(v)
        return out
    if isinstance(value, (list, tuple)):
        return [_prepare(v) for v in value]
    if isinstance(value, (set, frozenset)):
        items = [_prepare(v) for v in value]
        return sorted(items, key=lambda v: json.dumps(v, sort_keys=True))
    raise CanonicalizationError(f"unsupported type {type(value).__name__}")


def canonicalize(value: Any) -> bytes:
    """Canonical JSON: sorted keys, no whitespace, UTF-8, bytes as lowercase hex.

    Sets are emitted as arrays sorted by their own canonical text.
    """
    try:
        text = json.dumps(
            _prepare(value),
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
            allow_nan=False,
        )
    except ValueError as exc:  # pragma: no cover - _prepare catches floats first
        raise CanonicalizationError(str(exc)) from exc
    return text.encode("utf-8")


def _reject_constant(name: str) -> Any:
    raise CanonicalizationError(f"non-finite number {name}")


def canonical_parse(data: bytes | str) -> Any:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CanonicalizationError("invalid UTF-8") from exc
    try:
        return json.loads(data, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise CanonicalizationError(str(exc)) from exc


def is_canonical(data: bytes) -> bool:
    try:
        return canonicalize(canonical_parse(data)) == data
    except CanonicalizationError:
        return False


class SeededEntropy:
    """Reproducible byte source for tests and scenario runs.

    Anything with ``randbytes(n)`` can stand in; ``random.SystemRandom`` is the
    production default.
    """

    def __init__(self, seed: int | bytes | str):
        self._rng = random.Random(seed)

    def randbytes(self, n: int) -> bytes:
        return self._rng.randbytes(n)

    def __call__(self, n: int) -> bytes:
        return self.randbytes(n)


def system_entropy() -> random.SystemRandom:
    return random.SystemRandom()
