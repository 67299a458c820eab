"""QUIC-aware stateful middleboxes: tracking agent, client agent, NAT /
rate limiter / load balancer / conntrack, and a scenario harness."""

from .tracking import Endpoint, FiveTuple, Protocol, SixTuple, TrackingRecord, TrackingTable, shard_for
from .wire import ConnectionId, QuicHeader

__version__ = "0.1.0"

__all__ = [
    "ConnectionId",
    "Endpoint",
    "FiveTuple",
    "Protocol",
    "QuicHeader",
    "SixTuple",
    "TrackingRecord",
    "TrackingTable",
    "shard_for",
]
