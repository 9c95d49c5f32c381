"""In-process topic/service bus with synchronous, order-preserving dispatch."""
from __future__ import annotations

from collections import deque
from typing import Any, Callable

TOPICS = (
    "/odom",
    "/scan",
    "/cmd_vel",
    "/mapinfo",
    "/robot_localization",
    "/robot_worldmodel",
    "/robot_pathplanning",
)
SERVICES = (
    "/goal_service",
    "/goal_service_control",
    "/goal_service_behaviour",
    "/blocked_path_service",
)


class RegistryError(KeyError):
    pass


class NoHandlerError(RuntimeError):
    pass


class Subscription:
    """Receives every message published on a topic after it was created.

    With a callback the message is handed over immediately; otherwise it is
    queued for :meth:`poll` / :meth:`drain`.
    """

    def __init__(self, topic: str, callback: Callable[[Any], None] | None = None):
        self.topic = topic
        self.callback = callback
        self.queue: deque = deque()
        self.delivered = 0

    def _deliver(self, msg) -> None:
        self.delivered += 1
        if self.callback is None:
            self.queue.append(msg)
        else:
            self.callback(msg)

    def poll(self):
        return self.queue.popleft() if self.queue else None

    def drain(self) -> list:
        out = list(self.queue)
        self.queue.clear()
        return out


class TopicBus:
    def __init__(self, topics=TOPICS, services=SERVICES):
        self._subs: dict[str, list[Subscription]] = {t: [] for t in topics}
        self._handlers: dict[str, Callable | None] = {s: None for s in services}
        self._pending: deque = deque()
        self._dispatching = False

    def declare_topic(self, name: str) -> None:
        self._subs.setdefault(name, [])

    def declare_service(self, name: str) -> None:
        self._handlers.setdefault(name, None)

    def _topic(self, name: str) -> list[Subscription]:
        try:
            return self._subs[name]
        except KeyError:
            raise RegistryError(f"unknown topic {name!r}") from None

    def subscribe(self, topic: str, callback: Callable[[Any], None] | None = None) -> Subscription:
        sub = Subscription(topic, callback)
        self._topic(topic).append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        self._topic(sub.topic).remove(sub)

    def publish(self, topic: str, message) -> int:
        """Deliver to current subscribers; returns how many were addressed.

        A publish made from inside a callback is queued behind the message
        being dispatched, which keeps every subscriber's view FIFO.
        """
        subs = list(self._topic(topic))
        for s in subs:
            self._pending.append((s, message))
        if not self._dispatching:
            self._dispatching = True
            try:
                while self._pending:
                    s, msg = self._pending.popleft()
                    s._deliver(msg)
            finally:
                self._dispatching = False
        return len(subs)

    def advertise(self, service: str, handler: Callable[[Any], Any]) -> None:
        if service not in self._handlers:
            raise RegistryError(f"unknown service {service!r}")
        self._handlers[service] = handler

    def call(self, service: str, request=None):
        if service not in self._handlers:
            raise RegistryError(f"unknown service {service!r}")
        handler = self._handlers[service]
        if handler is None:
            raise NoHandlerError(f"no handler registered for {service}")
        return handler(request)


def bus_publish(bus: TopicBus, topic: str, message) -> int:
    return bus.publish(topic, message)


def bus_subscribe(bus: TopicBus, topic: str, callback=None) -> Subscription:
    return bus.subscribe(topic, callback)


def bus_call(bus: TopicBus, service: str, request=None):
    return bus.call(service, request)
