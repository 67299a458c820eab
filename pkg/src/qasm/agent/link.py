"""Middlebox-side handles on a tracking agent."""

from __future__ import annotations

import logging
import socket
import threading
from typing import Callable, Protocol as TypingProtocol

from ..tracking import Endpoint
from . import protocol as proto
from .protocol import PushUpdate, Query, QueryResponse, Subscribe, WireError
from .service import TrackingAgent

log = logging.getLogger(__name__)


class AgentLink(TypingProtocol):
    def query(self, msg: Query) -> QueryResponse | None: ...

    def subscribe(self, msg: Subscribe) -> None: ...


class InProcessAgentLink:
    """Talks to an agent in the same process, still going through the byte codec."""

    def __init__(self, agent: TrackingAgent) -> None:
        self.agent = agent

    def query(self, msg: Query) -> QueryResponse | None:
        reply = self.agent.dispatch_middlebox(proto.encode(msg))
        if reply is None:
            return None
        decoded = proto.decode(reply)
        return decoded if isinstance(decoded, QueryResponse) else None

    def subscribe(self, msg: Subscribe) -> None:
        self.agent.dispatch_middlebox(proto.encode(msg))


class UdpAgentLink:
    """Blocking request/response against an :class:`AgentServer`'s middlebox port."""

    def __init__(self, agent_addr: tuple[str, int], timeout: float = 0.05) -> None:
        self.agent_addr = agent_addr
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.settimeout(timeout)
        self._lock = threading.Lock()
        self.timeouts = 0

    def query(self, msg: Query) -> QueryResponse | None:
        with self._lock:
            self._sock.sendto(proto.encode(msg), self.agent_addr)
            while True:
                try:
                    data = self._sock.recv(65535)
                except socket.timeout:
                    self.timeouts += 1
                    return None
                try:
                    reply = proto.decode(data)
                except WireError:
                    continue
                if isinstance(reply, QueryResponse):
                    return reply

    def subscribe(self, msg: Subscribe) -> None:
        with self._lock:
            self._sock.sendto(proto.encode(msg), self.agent_addr)

    def close(self) -> None:
        self._sock.close()


class PushListener:
    """Receives PushUpdate datagrams on its own thread and hands them to ``on_push``."""

    def __init__(self, on_push: Callable[[PushUpdate], None], host: str = "127.0.0.1", port: int = 0) -> None:
        self.on_push = on_push
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.2)
        self._stopping = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="push-listener", daemon=True)
        self.received = 0

    @property
    def endpoint(self) -> Endpoint:
        host, port = self._sock.getsockname()
        return Endpoint(host, port)

    def _loop(self) -> None:
        while not self._stopping.is_set():
            try:
                data = self._sock.recv(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                msg = proto.decode(data)
            except WireError:
                log.debug("ignoring malformed push")
                continue
            if isinstance(msg, PushUpdate):
                self.received += 1
                self.on_push(msg)

    def start(self) -> PushListener:
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        self._thread.join(timeout=2)
        self._sock.close()
