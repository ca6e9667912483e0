"""In-process publish/subscribe bus with slash-separated topics and ``+`` / ``#`` wildcards."""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable

from .errors import BusClosedError, InputError

__all__ = ["BusMessage", "Subscription", "TopicBus", "topic_matches", "validate_pattern"]


@dataclass(frozen=True)
class BusMessage:
    topic: str
    payload: bytes
    publish_seq: int

    def json(self) -> Any:
        return json.loads(self.payload)


def _validate_topic(topic: str) -> None:
    if not topic:
        raise InputError("topic must be non-empty")
    if "+" in topic or "#" in topic:
        raise InputError(f"wildcards are not allowed in a publish topic: {topic!r}")


def validate_pattern(pattern: str) -> None:
    if not pattern:
        raise InputError("pattern must be non-empty")
    levels = pattern.split("/")
    for i, level in enumerate(levels):
        if "#" in level and (level != "#" or i != len(levels) - 1):
            raise InputError(f"'#' must be a whole final level: {pattern!r}")
        if "+" in level and level != "+":
            raise InputError(f"'+' must be a whole level: {pattern!r}")


def topic_matches(pattern: str, topic: str) -> bool:
    p = pattern.split("/")
    t = topic.split("/")
    for i, level in enumerate(p):
        if level == "#":
            return True
        if i >= len(t):
            return False
        if level != "+" and level != t[i]:
            return False
    return len(p) == len(t)


class Subscription:
    """FIFO of messages matching one pattern. Iterate, :meth:`get` or :meth:`drain` to consume."""

    def __init__(self, bus: "TopicBus", pattern: str, callback: Callable[[BusMessage], None] | None = None) -> None:
        self.bus = bus
        self.pattern = pattern
        self.callback = callback
        self._queue: deque[BusMessage] = deque()
        self._cond = threading.Condition()
        self.active = True

    def _deliver(self, msg: BusMessage) -> None:
        if self.callback is not None:
            self.callback(msg)
            return
        with self._cond:
            self._queue.append(msg)
            self._cond.notify()

    def get(self, timeout: float | None = None) -> BusMessage | None:
        """Next message, waiting up to ``timeout`` seconds; ``None`` if nothing arrived."""
        with self._cond:
            if not self._queue:
                self._cond.wait_for(lambda: bool(self._queue) or not self.active, timeout)
            return self._queue.popleft() if self._queue else None

    def drain(self) -> list[BusMessage]:
        with self._cond:
            out = list(self._queue)
            self._queue.clear()
            return out

    def __len__(self) -> int:
        return len(self._queue)

    def unsubscribe(self) -> None:
        self.bus._remove(self)
        with self._cond:
            self.active = False
            self._cond.notify_all()


class TopicBus:
    """Thread-safe bus. Publishing is serialized, so every subscriber sees each topic in publish order."""

    def __init__(self) -> None:
        # re-entrant so a callback may publish
        self._lock = threading.RLock()
        self._subs: list[Subscription] = []
        self._seq = 0
        self.closed = False

    def subscribe(self, pattern: str, callback: Callable[[BusMessage], None] | None = None) -> Subscription:
        validate_pattern(pattern)
        with self._lock:
            if self.closed:
                raise BusClosedError("bus is closed")
            sub = Subscription(self, pattern, callback)
            self._subs.append(sub)
            return sub

    def _remove(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def publish(self, topic: str, payload: bytes | str | dict | list) -> BusMessage:
        _validate_topic(topic)
        if isinstance(payload, (dict, list)):
            payload = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        with self._lock:
            if self.closed:
                raise BusClosedError("bus is closed")
            msg = BusMessage(topic, bytes(payload), self._seq)
            self._seq += 1
            for sub in self._subs:
                if topic_matches(sub.pattern, topic):
                    sub._deliver(msg)
            return msg

    def close(self) -> None:
        with self._lock:
            self.closed = True
            subs = list(self._subs)
            self._subs.clear()
        for sub in subs:
            with sub._cond:
                sub.active = False
                sub._cond.notify_all()
