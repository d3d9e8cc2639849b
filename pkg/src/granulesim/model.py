"""Domain types shared by every part of the simulator.

Jobs are DAGs of stages.  A stage produces intermediate data that is routed
into granules: fixed key-sub-range containers that decouple the lifetime of
intermediate data from the tasks that produced it.  Everything downstream
(placement, triggers, scheduling) operates on granules, so the types here are
deliberately small and mostly immutable.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

#: Keys are 64-bit hashes truncated onto a fixed ring of this size.
KEY_SPACE = 1 << 20

#: Byte sizes in workload files are decimal gigabytes.
GB = 10**9

FORMAT_VERSION = 1


class SimError(Exception):
    """Base class for every error raised by this package."""


class GraphInvalid(SimError):
    pass


class CycleDetected(GraphInvalid):
    pass


class DanglingEdge(GraphInvalid):
    pass


class IllegalPipeliningTrigger(GraphInvalid):
    pass


class UnknownStage(SimError):
    pass


class ConfigInvalid(SimError):
    pass


class ComputeType(str, Enum):
    STATELESS = "stateless"
    STATEFUL_CA = "stateful_ca"          # stateful, commutative + associative
    STATEFUL_NON_CA = "stateful_non_ca"


class TriggerKind(str, Enum):
    DEFAULT_BATCH = "default_batch"
    DEFAULT_STREAMING = "default_streaming"
    PIPELINING = "pipelining"
    CUSTOM_COUNTER = "custom_counter"


#: Default record-count threshold for streaming/pipelining triggers.
DEFAULT_STREAMING_X = 100


@dataclass(frozen=True)
class TriggerSpec:
    kind: TriggerKind
    x: int = DEFAULT_STREAMING_X        # record threshold (streaming / pipelining)
    counter_id: str = ""                # custom_counter only
    threshold: int = 0                  # custom_counter only

    def __post_init__(self):
        if self.kind in (TriggerKind.DEFAULT_STREAMING, TriggerKind.PIPELINING):
            if self.x < 1:
                raise ConfigInvalid(f"trigger X must be >= 1, got {self.x}")
        if self.kind is TriggerKind.CUSTOM_COUNTER:
            if not self.counter_id:
                raise ConfigInvalid("custom_counter trigger needs a counter_id")
            if self.threshold < 1:
                raise ConfigInvalid("custom_counter trigger needs threshold >= 1")

    @staticmethod
    def from_json(doc: dict | str | None) -> "TriggerSpec":
        if doc is None:
            return TriggerSpec(TriggerKind.DEFAULT_BATCH)
        if isinstance(doc, str):
            return TriggerSpec(TriggerKind(doc))
        return TriggerSpec(
            kind=TriggerKind(doc["kind"]),
            x=int(doc.get("x", DEFAULT_STREAMING_X)),
            counter_id=str(doc.get("counter_id", "")),
            threshold=int(doc.get("threshold", 0)),
        )

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.kind in (TriggerKind.DEFAULT_STREAMING, TriggerKind.PIPELINING):
            out["x"] = self.x
        if self.kind is TriggerKind.CUSTOM_COUNTER:
            out["counter_id"] = self.counter_id
            out["threshold"] = self.threshold
        return out


MONITOR_OPS = ("<", "=", ">")


@dataclass(frozen=True)
class MonitorSpec:
    """A per-stage record monitor.

    ``builtin`` monitors (size, kv pairs, growth rate) always run and need no
    parameters; ``value_threshold`` monitors bump a named counter for every
    record whose value compares true against ``threshold``.
    """

    kind: str = "value_threshold"
    counter_id: str = ""
    op: str = ">"
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in ("builtin", "value_threshold"):
            raise ConfigInvalid(f"unknown monitor kind {self.kind!r}")
        if self.kind == "value_threshold":
            if not self.counter_id:
                raise ConfigInvalid("value_threshold monitor needs a counter_id")
            if self.op not in MONITOR_OPS:
                raise ConfigInvalid(f"monitor op must be one of {MONITOR_OPS}")

    @staticmethod
    def from_json(doc: dict) -> "MonitorSpec":
        return MonitorSpec(
            kind=doc.get("kind", "value_threshold"),
            counter_id=doc.get("counter_id", ""),
            op=doc.get("op", ">"),
            threshold=float(doc.get("threshold", 0.0)),
        )

    def to_json(self) -> dict:
        if self.kind == "builtin":
            return {"kind": "builtin"}
        return {
            "kind": "value_threshold",
            "counter_id": self.counter_id,
            "op": self.op,
            "threshold": self.threshold,
        }


class DecisionKind(str, Enum):
    NO_NEW_ACTION = "no_new_action"
    IGNORE = "ignore"
    REPLACE = "replace"


@dataclass(frozen=True)
class DecisionRule:
    """Declarative status-decision rule, evaluated against granule stats.

    ``counter_id`` may name a custom counter or one of the built-in stats
    (``bytes``, ``kv_pairs``, ``growth_rate``).  The first matching rule wins.
    """

    counter_id: str
    op: str
    threshold: float
    decision: DecisionKind
    new_logic_id: str | None = None

    def __post_init__(self):
        if self.op not in MONITOR_OPS:
            raise ConfigInvalid(f"decision rule op must be one of {MONITOR_OPS}")
        if self.decision is DecisionKind.REPLACE and not self.new_logic_id:
            raise ConfigInvalid("replace decision needs new_logic_id")

    @staticmethod
    def from_json(doc: dict) -> "DecisionRule":
        return DecisionRule(
            counter_id=doc["counter_id"],
            op=doc["op"],
            threshold=float(doc["threshold"]),
            decision=DecisionKind(doc["decision"]),
            new_logic_id=doc.get("new_logic_id"),
        )

    def to_json(self) -> dict:
        out = {
            "counter_id": self.counter_id,
            "op": self.op,
            "threshold": self.threshold,
            "decision": self.decision.value,
        }
        if self.new_logic_id is not None:
            out["new_logic_id"] = self.new_logic_id
        return out


def compare(value: float, op: str, threshold: float) -> bool:
    if op == "<":
        return value < threshold
    if op == ">":
        return value > threshold
    if op == "=":
        return value == threshold
    raise ConfigInvalid(f"unknown comparison op {op!r}")


@dataclass(frozen=True)
class DataModel:
    """Synthetic description of a stage's output.

    Records are (hashed key, byte count) pairs; there are no real payloads.
    ``key_lo``/``key_hi`` restrict the portion of the key ring the stage
    writes into, which lets workloads shape how many granules receive data.
    """

    records: int
    per_record_bytes: int
    key_skew: float = 0.0               # Zipf exponent; 0 means uniform
    key_lo: int = 0
    key_hi: int = KEY_SPACE

    def __post_init__(self):
        if self.records < 0 or self.per_record_bytes <= 0:
            raise ConfigInvalid("data model needs records >= 0 and per_record_bytes > 0")
        if self.key_skew < 0:
            raise ConfigInvalid("key_skew must be >= 0")
        if not (0 <= self.key_lo < self.key_hi <= KEY_SPACE):
            raise ConfigInvalid(f"key range [{self.key_lo}, {self.key_hi}) out of bounds")

    @property
    def total_output_bytes(self) -> int:
        # Total volume is derived, never stored, so it cannot disagree with
        # records * per_record_bytes.
        return self.records * self.per_record_bytes

    @staticmethod
    def from_json(doc: dict) -> "DataModel":
        if "records" in doc:
            records = int(doc["records"])
        else:
            records = 0
        if "per_record_bytes" in doc:
            prb = int(doc["per_record_bytes"])
        elif records > 0 and "bytes" in doc:
            total = int(doc["bytes"])
            if total % records:
                raise ConfigInvalid("output bytes must divide evenly across records")
            prb = total // records
        else:
            raise ConfigInvalid("output needs records plus bytes or per_record_bytes")
        if "bytes" in doc and "per_record_bytes" in doc:
            if int(doc["bytes"]) != records * prb:
                raise ConfigInvalid("output bytes != records * per_record_bytes")
        key_range = doc.get("key_range")
        lo, hi = (int(key_range[0]), int(key_range[1])) if key_range else (0, KEY_SPACE)
        return DataModel(
            records=records,
            per_record_bytes=prb,
            key_skew=float(doc.get("zipf", 0.0)),
            key_lo=lo,
            key_hi=hi,
        )

    def to_json(self) -> dict:
        out = {
            "bytes": self.total_output_bytes,
            "records": self.records,
            "per_record_bytes": self.per_record_bytes,
            "zipf": self.key_skew,
        }
        if (self.key_lo, self.key_hi) != (0, KEY_SPACE):
            out["key_range"] = [self.key_lo, self.key_hi]
        return out


@dataclass(frozen=True)
class StageSpec:
    stage_id: str
    compute_type: ComputeType
    trigger: TriggerSpec
    output: DataModel
    logic_id: str
    monitors: tuple[MonitorSpec, ...] = ()
    decision_rules: tuple[DecisionRule, ...] = ()
    #: How many partitions this stage's output is split into under the
    #: compute-centric baseline (= consumer task count there).  ``None``
    #: defaults to the machine count at run time.
    partitions: int | None = None
    #: Task count used to generate this stage's output when it is a root.
    root_tasks: int = 1

    def __post_init__(self):
        if self.root_tasks < 1:
            raise ConfigInvalid("root_tasks must be >= 1")
        if self.partitions is not None and self.partitions < 1:
            raise ConfigInvalid("partitions must be >= 1")

    @staticmethod
    def from_json(doc: dict) -> "StageSpec":
        return StageSpec(
            stage_id=str(doc["id"]),
            compute_type=ComputeType(doc.get("compute_type", "stateless")),
            trigger=TriggerSpec.from_json(doc.get("trigger")),
            output=DataModel.from_json(doc["output"]),
            logic_id=str(doc.get("logic_id", "default")),
            monitors=tuple(MonitorSpec.from_json(m) for m in doc.get("monitors", [])),
            decision_rules=tuple(
                DecisionRule.from_json(r) for r in doc.get("decision_rules", [])
            ),
            partitions=(int(doc["partitions"]) if "partitions" in doc else None),
            root_tasks=int(doc.get("root_tasks", 1)),
        )

    def to_json(self) -> dict:
        out = {
            "id": self.stage_id,
            "compute_type": self.compute_type.value,
            "trigger": self.trigger.to_json(),
            "output": self.output.to_json(),
            "logic_id": self.logic_id,
        }
        if self.monitors:
            out["monitors"] = [m.to_json() for m in self.monitors]
        if self.decision_rules:
            out["decision_rules"] = [r.to_json() for r in self.decision_rules]
        if self.partitions is not None:
            out["partitions"] = self.partitions
        if self.root_tasks != 1:
            out["root_tasks"] = self.root_tasks
        return out


@dataclass(frozen=True)
class JobGraph:
    """A validated DAG of stages."""

    job_id: str
    stages: tuple[StageSpec, ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self):
        ids = [s.stage_id for s in self.stages]
        if len(set(ids)) != len(ids):
            raise GraphInvalid(f"duplicate stage ids in job {self.job_id}")
        if not ids:
            raise GraphInvalid(f"job {self.job_id} has no stages")
        known = set(ids)
        parents: dict[str, list[str]] = {s: [] for s in ids}
        children: dict[str, list[str]] = {s: [] for s in ids}
        for src, dst in self.edges:
            if src not in known or dst not in known:
                raise DanglingEdge(f"edge {src}->{dst} names an unknown stage")
            parents[dst].append(src)
            children[src].append(dst)
        order = _topo_sort(ids, parents)
        if not [s for s in ids if not parents[s]]:
            raise GraphInvalid(f"job {self.job_id} has no root stage")
        by_id = {s.stage_id: s for s in self.stages}
        for s in self.stages:
            if s.trigger.kind is TriggerKind.PIPELINING:
                kids = children[s.stage_id]
                # Write-back semantics need exactly one commutative+associative
                # consumer to fold partial results into the producer's granules.
                if len(kids) != 1:
                    raise IllegalPipeliningTrigger(
                        f"stage {s.stage_id}: pipelining needs exactly one consumer"
                    )
                if by_id[kids[0]].compute_type is not ComputeType.STATEFUL_CA:
                    raise IllegalPipeliningTrigger(
                        f"stage {s.stage_id}: consumer {kids[0]} is not stateful_ca"
                    )
        object.__setattr__(self, "_parents", {k: tuple(v) for k, v in parents.items()})
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in children.items()})
        object.__setattr__(self, "_topo", tuple(order))
        object.__setattr__(self, "_by_id", by_id)

    def stage(self, stage_id: str) -> StageSpec:
        try:
            return self._by_id[stage_id]  # type: ignore[attr-defined]
        except KeyError:
            raise UnknownStage(f"{self.job_id}/{stage_id}") from None

    def producers(self, stage_id: str) -> tuple[str, ...]:
        return self._parents[stage_id]  # type: ignore[attr-defined]

    def consumers(self, stage_id: str) -> tuple[str, ...]:
        return self._children[stage_id]  # type: ignore[attr-defined]

    def topo_order(self) -> tuple[str, ...]:
        return self._topo  # type: ignore[attr-defined]

    def roots(self) -> tuple[str, ...]:
        return tuple(s for s in self.topo_order() if not self.producers(s))

    def siblings(self, stage_id: str) -> tuple[str, ...]:
        """Stages other than this one feeding at least one shared consumer."""
        mine = set(self.consumers(stage_id))
        out = []
        for s in self.topo_order():
            if s != stage_id and mine & set(self.consumers(s)):
                out.append(s)
        return tuple(out)

    def ancestor_distances(self, stage_id: str) -> dict[str, int]:
        """Shortest upstream hop count to every ancestor stage."""
        dist: dict[str, int] = {}
        frontier = [(p, 1) for p in self.producers(stage_id)]
        while frontier:
            nxt = []
            for s, d in frontier:
                if s in dist and dist[s] <= d:
                    continue
                dist[s] = d
                nxt.extend((p, d + 1) for p in self.producers(s))
            frontier = nxt
        return dist

    def descendants(self, stage_id: str) -> tuple[str, ...]:
        seen: set[str] = set()
        frontier = list(self.consumers(stage_id))
        while frontier:
            s = frontier.pop()
            if s in seen:
                continue
            seen.add(s)
            frontier.extend(self.consumers(s))
        return tuple(s for s in self.topo_order() if s in seen)


def _topo_sort(ids: list[str], parents: dict[str, list[str]]) -> list[str]:
    indeg = {s: len(parents[s]) for s in ids}
    ready = [s for s in ids if indeg[s] == 0]
    children: dict[str, list[str]] = {s: [] for s in ids}
    for s in ids:
        for p in parents[s]:
            children[p].append(s)
    order = []
    while ready:
        s = ready.pop(0)
        order.append(s)
        for c in children[s]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(order) != len(ids):
        raise CycleDetected("job graph contains a cycle")
    return order


def build_job_graph(doc: dict) -> JobGraph:
    """Parse and validate one job description (see the workload JSON format)."""
    stages = tuple(StageSpec.from_json(s) for s in doc.get("stages", []))
    edges = tuple((str(a), str(b)) for a, b in doc.get("edges", []))
    return JobGraph(job_id=str(doc["id"]), stages=stages, edges=edges)


@dataclass(frozen=True)
class WorkloadJob:
    graph: JobGraph
    arrival_time_s: float


@dataclass(frozen=True)
class Workload:
    jobs: tuple[WorkloadJob, ...]
    #: Seed baked into the workload; per-stage key streams derive from it so a
    #: workload file pins its data exactly, independent of the run seed.
    seed: int = 0

    def job(self, job_id: str) -> WorkloadJob:
        for j in self.jobs:
            if j.graph.job_id == job_id:
                return j
        raise UnknownStage(f"job {job_id} not in workload")


def parse_workload(doc: dict) -> Workload:
    jobs = tuple(
        WorkloadJob(graph=build_job_graph(j), arrival_time_s=float(j.get("arrival_time_s", 0.0)))
        for j in doc.get("jobs", [])
    )
    return Workload(jobs=jobs, seed=int(doc.get("seed", 0)))


def workload_to_json(workload: Workload) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "seed": workload.seed,
        "jobs": [
            {
                "id": j.graph.job_id,
                "arrival_time_s": j.arrival_time_s,
                "stages": [s.to_json() for s in j.graph.stages],
                "edges": [list(e) for e in j.graph.edges],
            }
            for j in workload.jobs
        ],
    }


def workload_hash(doc: dict) -> str:
    """Stable content hash of a workload document."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def stage_stream_seed(workload_seed: int, job_id: str, stage_id: str) -> int:
    """Deterministic per-stage RNG seed, stable across processes."""
    blob = f"{workload_seed}/{job_id}/{stage_id}".encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


# ---------------------------------------------------------------------------
# Granules


def granule_index_for_key(key: int, n: int, key_space: int = KEY_SPACE) -> int:
    """Route a hashed key to the granule owning its sub-range.

    The key ring is cut into ``n`` equal contiguous ranges; ``n`` must divide
    the ring size so every range is exactly ``key_space // n`` wide.
    """
    if n < 1 or key_space % n:
        raise ConfigInvalid(f"granule count {n} must divide key space {key_space}")
    if not (0 <= key < key_space):
        raise ConfigInvalid(f"key {key} outside [0, {key_space})")
    return key // (key_space // n)


class GranuleId(NamedTuple):
    job_id: str
    stage_id: str
    index: int

    def __str__(self) -> str:
        return f"{self.job_id}/{self.stage_id}/{self.index}"

    @staticmethod
    def parse(s: str) -> "GranuleId":
        job, stage, idx = s.rsplit("/", 2)
        return GranuleId(job, stage, int(idx))


@dataclass
class GranuleStats:
    """Monotone ingest counters plus custom monitor counters.

    ``bytes``/``kv_pairs`` count everything ever ingested (consumption does
    not roll them back).  ``growth_rate`` is an exponentially weighted moving
    average of bytes/second with a configurable half-life.
    """

    bytes: int = 0
    kv_pairs: int = 0
    growth_rate: float = 0.0
    custom_counters: dict[str, int] = field(default_factory=dict)

    _last_t: float = field(default=0.0, repr=False)
    _since_last: int = field(default=0, repr=False)

    def record_ingest(self, nbytes: int, nrecords: int, t: float, half_life_s: float) -> None:
        if nbytes < 0 or nrecords < 0:
            raise ConfigInvalid("ingest deltas must be non-negative")
        dt = t - self._last_t
        if dt > 0:
            rate = self._since_last / dt
            w = 0.5 ** (dt / half_life_s)
            self.growth_rate = w * self.growth_rate + (1.0 - w) * rate
            self._last_t = t
            self._since_last = 0
        self._since_last += nbytes
        self.bytes += nbytes
        self.kv_pairs += nrecords

    def builtin(self, name: str) -> float:
        if name == "bytes":
            return float(self.bytes)
        if name == "kv_pairs":
            return float(self.kv_pairs)
        if name == "growth_rate":
            return float(self.growth_rate)
        return float(self.custom_counters.get(name, 0))

    def snapshot(self) -> dict:
        return {
            "bytes": self.bytes,
            "kv_pairs": self.kv_pairs,
            "growth_rate": self.growth_rate,
            "custom_counters": dict(sorted(self.custom_counters.items())),
        }


@dataclass
class GranuleFeed:
    """Per-consumer view of what is still unconsumed in one granule.

    Raw records contribute (1, bytes) to the two fold accumulators; written
    back partial aggregates contribute their prior folded values, so draining
    always yields the same totals a single batch pass would have produced.
    """

    pend_records: int = 0
    pend_bytes: int = 0
    pend_count_agg: int = 0     # commutative/associative "count" fold state
    pend_sum_agg: int = 0       # commutative/associative "sum of bytes" fold state
    fire_pending: bool = False  # a DataReady was sent and not yet consumed
    inflight: int = 0           # running tasks that will write back here
    fires: int = 0
    consumed_records: int = 0
    consumed_bytes: int = 0
    skipped_fires: int = 0

    def add_raw(self, nrecords: int, nbytes: int) -> None:
        self.pend_records += nrecords
        self.pend_bytes += nbytes
        self.pend_count_agg += nrecords
        self.pend_sum_agg += nbytes

    def add_writeback(self, count_agg: int, sum_agg: int, nbytes: int) -> None:
        self.pend_records += 1
        self.pend_bytes += nbytes
        self.pend_count_agg += count_agg
        self.pend_sum_agg += sum_agg

    def drain(self) -> tuple[int, int, int, int]:
        """Consume everything pending; returns (records, bytes, count, sum)."""
        out = (self.pend_records, self.pend_bytes, self.pend_count_agg, self.pend_sum_agg)
        self.consumed_records += self.pend_records
        self.consumed_bytes += self.pend_bytes
        self.pend_records = self.pend_bytes = 0
        self.pend_count_agg = self.pend_sum_agg = 0
        self.fire_pending = False
        return out


@dataclass
class Granule:
    """A key-sub-range container for one stage's intermediate data.

    ``materializations`` records cumulative bytes ingested per machine; the
    sum always equals total bytes ingested.  A granule gains a second machine
    only when it is closed under quota pressure or outgrows the spread
    threshold — existing bytes are never moved.
    """

    gid: GranuleId
    key_lo: int
    key_hi: int
    materializations: dict[str, int] = field(default_factory=dict)
    closed_at: dict[str, float] = field(default_factory=dict)
    stats: GranuleStats = field(default_factory=GranuleStats)
    feeds: dict[str, GranuleFeed] = field(default_factory=dict)
    ignored: bool = False

    def feed(self, consumer: str) -> GranuleFeed:
        if consumer not in self.feeds:
            self.feeds[consumer] = GranuleFeed()
        return self.feeds[consumer]

    @property
    def total_bytes(self) -> int:
        return sum(self.materializations.values())

    @property
    def machines(self) -> list[str]:
        return sorted(self.materializations)

    def open_machines(self) -> list[str]:
        return sorted(m for m in self.materializations if m not in self.closed_at)

    def primary_machine(self) -> str | None:
        """Machine holding the largest materialization (ties: lowest id)."""
        if not self.materializations:
            return None
        return min(self.materializations, key=lambda m: (-self.materializations[m], m))


# ---------------------------------------------------------------------------
# Events

EVENT_DATA_SPILL = "data_spill"
EVENT_DATA_READY = "data_ready"
EVENT_DATA_GENERATED = "data_generated"
EVENT_DATA_READY_ALL = "data_ready_all"
EVENT_STATUS_QUERY = "status_query"
EVENT_STATUS_DECISION = "status_decision"

PROTOCOL_EVENTS = (
    EVENT_DATA_SPILL,
    EVENT_DATA_READY,
    EVENT_DATA_GENERATED,
    EVENT_DATA_READY_ALL,
    EVENT_STATUS_QUERY,
    EVENT_STATUS_DECISION,
)


@dataclass(frozen=True)
class Event:
    """One trace record: protocol traffic and simulator lifecycle alike."""

    seq: int
    t: float
    kind: str
    data: dict

    def to_json(self) -> dict:
        out = {"seq": self.seq, "t": self.t, "type": self.kind}
        out.update(self.data)
        return out


# ---------------------------------------------------------------------------
# Cluster


@dataclass
class Machine:
    machine_id: str
    storage_capacity: int
    compute_capacity: float
    per_job_stored: dict[str, int] = field(default_factory=dict)
    per_job_units: dict[str, float] = field(default_factory=dict)
    failed: bool = False

    @property
    def total_stored(self) -> int:
        return sum(self.per_job_stored.values())

    @property
    def units_used(self) -> float:
        return sum(self.per_job_units.values())


@dataclass
class ClusterState:
    machines: dict[str, Machine]
    clock: float = 0.0

    @staticmethod
    def build(n_machines: int, storage_capacity: int, compute_capacity: float) -> "ClusterState":
        width = len(str(max(n_machines - 1, 0)))
        machines = {}
        for i in range(n_machines):
            mid = f"m{i:0{width}d}" if n_machines > 10 else f"m{i}"
            machines[mid] = Machine(mid, storage_capacity, compute_capacity)
        return ClusterState(machines=machines)

    def alive(self) -> list[str]:
        return sorted(m for m, mach in self.machines.items() if not mach.failed)

    def stored(self, job_id: str, machine_id: str) -> int:
        return self.machines[machine_id].per_job_stored.get(job_id, 0)

    def add_stored(self, job_id: str, machine_id: str, nbytes: int) -> None:
        m = self.machines[machine_id]
        m.per_job_stored[job_id] = m.per_job_stored.get(job_id, 0) + nbytes

    def release_job(self, job_id: str) -> dict[str, int]:
        freed = {}
        for mid in sorted(self.machines):
            n = self.machines[mid].per_job_stored.pop(job_id, 0)
            if n:
                freed[mid] = n
        return freed
