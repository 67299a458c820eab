from .link import AgentLink, InProcessAgentLink, PushListener, UdpAgentLink
from .protocol import (
    ClientUpdate,
    ConnClose,
    Message,
    MessageKind,
    PushUpdate,
    Query,
    QueryResponse,
    RecordBody,
    Subscribe,
    WireError,
    decode,
    encode,
)
from .server import AgentConfig, AgentServer
from .service import SubscriptionRegistry, TrackingAgent

__all__ = [
    "AgentConfig",
    "AgentLink",
    "AgentServer",
    "ClientUpdate",
    "ConnClose",
    "InProcessAgentLink",
    "Message",
    "MessageKind",
    "PushListener",
    "PushUpdate",
    "Query",
    "QueryResponse",
    "RecordBody",
    "Subscribe",
    "SubscriptionRegistry",
    "TrackingAgent",
    "UdpAgentLink",
    "WireError",
    "decode",
    "encode",
]
