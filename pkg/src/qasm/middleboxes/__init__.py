from .base import Action, Case, Direction, Drop, Forward, Forwarder, Middlebox
from .conntrack import Conntrack, QuicConntrack, canonical_key
from .lb import LoadBalancer, QuicLoadBalancer, select_by_ip, select_by_odcid
from .nat import DefaultNat, NatBinding, PublicPool, QuicNat
from .ratelimit import DefaultRateLimiter, QuicRateLimiter, TokenBucket
from .resolver import CacheEntry, LocalDcidCache, Mode, TrackingResolver

__all__ = [
    "Action",
    "CacheEntry",
    "Case",
    "Conntrack",
    "DefaultNat",
    "DefaultRateLimiter",
    "Direction",
    "Drop",
    "Forward",
    "Forwarder",
    "LoadBalancer",
    "LocalDcidCache",
    "Middlebox",
    "Mode",
    "NatBinding",
    "PublicPool",
    "QuicConntrack",
    "QuicLoadBalancer",
    "QuicNat",
    "QuicRateLimiter",
    "TokenBucket",
    "TrackingResolver",
    "canonical_key",
    "select_by_ip",
    "select_by_odcid",
]
