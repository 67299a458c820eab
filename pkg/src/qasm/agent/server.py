"""UDP front end for :class:`TrackingAgent`.

Three threads: the client-facing loop, the middlebox-facing loop, and a push
sender draining the outbound queue so pushes never stall query handling.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
from dataclasses import dataclass

from ..tracking import DEFAULT_IDLE_TIMEOUT, Endpoint, TrackingTable
from .service import TrackingAgent

log = logging.getLogger(__name__)

MAX_DATAGRAM = 65535


@dataclass
class AgentConfig:
    host: str = "127.0.0.1"
    client_port: int = 0
    middlebox_port: int = 0
    shard_count: int = 1
    idle_timeout: float | None = DEFAULT_IDLE_TIMEOUT
    proactive: bool = True


class AgentServer:
    def __init__(self, config: AgentConfig | None = None) -> None:
        self.config = config or AgentConfig()
        table = TrackingTable(self.config.shard_count, self.config.idle_timeout)
        self._pushes: queue.SimpleQueue[tuple[Endpoint, bytes] | None] = queue.SimpleQueue()
        self.agent = TrackingAgent(table, self._enqueue_push, self.config.proactive)
        self._client_sock = self._bind(self.config.client_port)
        self._mbox_sock = self._bind(self.config.middlebox_port)
        self._push_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._threads: list[threading.Thread] = []
        self._stopping = threading.Event()

    def _bind(self, port: int) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind((self.config.host, port))
        sock.settimeout(0.2)
        return sock

    @property
    def client_address(self) -> tuple[str, int]:
        return self._client_sock.getsockname()

    @property
    def middlebox_address(self) -> tuple[str, int]:
        return self._mbox_sock.getsockname()

    def _enqueue_push(self, dest: Endpoint, data: bytes) -> None:
        self._pushes.put((dest, data))

    def _client_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                data, _ = self._client_sock.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError:
                break
            self.agent.dispatch_client(data)

    def _middlebox_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                data, addr = self._mbox_sock.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError:
                break
            reply = self.agent.dispatch_middlebox(data)
            if reply is not None:
                try:
                    self._mbox_sock.sendto(reply, addr)
                except OSError as exc:
                    log.warning("reply to %s failed: %s", addr, exc)

    def _push_loop(self) -> None:
        while True:
            item = self._pushes.get()
            if item is None:
                break
            dest, data = item
            try:
                self._push_sock.sendto(data, (dest.ip, dest.port))
            except OSError as exc:
                log.warning("push to %s failed: %s", dest, exc)

    def start(self) -> AgentServer:
        for target, name in (
            (self._client_loop, "agent-client"),
            (self._middlebox_loop, "agent-middlebox"),
            (self._push_loop, "agent-push"),
        ):
            thread = threading.Thread(target=target, name=name, daemon=True)
            thread.start()
            self._threads.append(thread)
        return self

    def stop(self) -> None:
        self._stopping.set()
        self._pushes.put(None)
        for thread in self._threads:
            thread.join(timeout=2)
        for sock in (self._client_sock, self._mbox_sock, self._push_sock):
            sock.close()

    def __enter__(self) -> AgentServer:
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()
