"""In-process message transport standing in for NFC / Bluetooth links.

Each address has its own FIFO queue. Faults are injected on send.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Callable

from .crypto_core import SeededEntropy
from .errors import TransportError


@dataclass
class FaultPlan:
    drop: float = 0.0
    duplicate: float = 0.0
    reorder: float = 0.0
    # (message index, bytes) -> bytes; applied before the random faults
    tamper: Callable[[int, bytes], bytes] | None = None
    seed: int = 0


class InProcessTransport:
    def __init__(self, faults: FaultPlan | None = None):
        self.faults = faults or FaultPlan()
        self._queues: dict[str, deque[bytes]] = defaultdict(deque)
        self._rng = SeededEntropy(self.faults.seed)._rng
        self.sent: list[tuple[str, bytes]] = []

    def send(self, to: str, data: bytes) -> None:
        f = self.faults
        if f.tamper is not None:
            data = f.tamper(len(self.sent), data)
        self.sent.append((to, data))
        if f.drop and self._rng.random() < f.drop:
            return
        q = self._queues[to]
        if f.reorder and q and self._rng.random() < f.reorder:
            q.insert(len(q) - 1, data)
        else:
            q.append(data)
        if f.duplicate and self._rng.random() < f.duplicate:
            q.append(data)

    def receive(self, me: str) -> bytes:
        q = self._queues[me]
        if not q:
            raise TransportError(f"no message queued for {me}")
        return q.popleft()

    def pending(self, me: str) -> int:
        return len(self._queues[me])
