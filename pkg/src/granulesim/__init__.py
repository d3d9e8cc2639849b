"""granulesim: a deterministic simulator for granule-based, data-driven
analytics scheduling, with a compute-centric baseline for comparison."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    GB,
    KEY_SPACE,
    ClusterState,
    ComputeType,
    DataModel,
    Granule,
    GranuleId,
    JobGraph,
    StageSpec,
    TriggerKind,
    TriggerSpec,
    Workload,
    build_job_graph,
    granule_index_for_key,
    parse_workload,
)
