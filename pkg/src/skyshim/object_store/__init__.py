"""Replicated object store with client-computed placement and a plugin hook."""

from skyshim.object_store.client import ObjectClient, RetryPolicy
from skyshim.object_store.node import (
    DirectoryBackend,
    MemoryBackend,
    ObjectHandle,
    PluginRegistry,
    StorageNode,
)
from skyshim.object_store.placement import DEFAULT_POOL, ClusterMap, ObjectName, hash64, object_pg, place
from skyshim.object_store.transport import Call, Compute, DirectTransport, Gather, Outcome, Sleep, Transport

__all__ = [
    "Call", "ClusterMap", "Compute", "DEFAULT_POOL", "DirectTransport", "DirectoryBackend", "Gather",
    "MemoryBackend", "ObjectClient", "ObjectHandle", "ObjectName", "Outcome", "PluginRegistry",
    "RetryPolicy", "Sleep", "StorageNode", "Transport", "hash64", "object_pg", "place",
]
