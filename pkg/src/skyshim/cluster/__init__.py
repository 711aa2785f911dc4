"""Cluster runtime: nodes, transports, faults and metrics."""

from skyshim.cluster.config import ClusterConfig
from skyshim.cluster.faults import Action, FaultEvent, FaultScript, Trigger
from skyshim.cluster.runtime import ClusterHandle, inject, snapshot_metrics, start_cluster

__all__ = [
    "Action", "ClusterConfig", "ClusterHandle", "FaultEvent", "FaultScript", "Trigger", "inject",
    "snapshot_metrics", "start_cluster",
]
