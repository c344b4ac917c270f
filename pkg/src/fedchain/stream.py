"""Ordered publish/subscribe log for local and global model announcements.

Messages reference assets on the ledger by id; nothing is evicted.
"""
from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, replace


class StreamError(Exception):
    pass


class UnknownSender(StreamError):
    pass


class QuorumTimeout(StreamError):
    def __init__(self, topic, round, needed, got):
        self.missing = needed - got
        super().__init__(f"round {round} on {topic!r}: {got}/{needed} updates before timeout "
                         f"({self.missing} missing)")


class MessageKind(enum.IntEnum):
    LocalUpdate = 0
    GlobalUpdate = 1


@dataclass(frozen=True)
class StreamMessage:
    round: int
    kind: MessageKind
    sender_id: int
    asset_id: bytes
    version: int = 0
    offset: int | None = None


class EventStream:
    def __init__(self, default_timeout: float = 30.0):
        self.default_timeout = default_timeout
        self._cond = threading.Condition()
        self._topics: dict[str, list[StreamMessage]] = {}
        self._senders: set[int] = set()

    def register(self, sender_id: int):
        with self._cond:
            self._senders.add(sender_id)

    def head(self, topic: str) -> int:
        with self._cond:
            return len(self._topics.get(topic, ()))

    def publish(self, topic: str, msg: StreamMessage) -> int:
        with self._cond:
            if msg.sender_id not in self._senders:
                raise UnknownSender(f"sender {msg.sender_id} is not registered")
            log = self._topics.setdefault(topic, [])
            if msg.kind == MessageKind.GlobalUpdate:
                last = next((m.version for m in reversed(log) if m.kind == MessageKind.GlobalUpdate), None)
                if last is not None and msg.version <= last:
                    raise StreamError(f"global version {msg.version} does not follow {last}")
            offset = len(log)
            log.append(replace(msg, kind=MessageKind(msg.kind), offset=offset))
            self._cond.notify_all()
            return offset

    def read_from(self, topic: str, offset: int = 0) -> list[StreamMessage]:
        with self._cond:
            log = self._topics.get(topic, [])
            if not 0 <= offset <= len(log):
                raise StreamError(f"offset {offset} beyond head {len(log)} of {topic!r}")
            return log[offset:]

    def _quorum(self, log, round, k):
        picked, seen = [], set()
        for m in log:
            if m.kind == MessageKind.LocalUpdate and m.round == round and m.sender_id not in seen:
                seen.add(m.sender_id)
                picked.append(m)
                if len(picked) == k:
                    break
        return picked

    def await_quorum(self, topic: str, round: int, k: int, timeout: float | None = None):
        """First ``k`` distinct-sender local updates for ``round``, in offset order."""
        if k < 1:
            raise ValueError("quorum size must be >= 1")
        timeout = self.default_timeout if timeout is None else timeout
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                picked = self._quorum(self._topics.get(topic, []), round, k)
                if len(picked) == k:
                    return picked
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise QuorumTimeout(topic, round, k, len(picked))
                self._cond.wait(remaining)
