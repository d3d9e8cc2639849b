"""Granule datastore: quotas, placement, ingest routing, and re-spreading.

The datastore owns where intermediate bytes land.  Placement decisions follow
a fixed ladder: per-job storage quotas are always enforced, then load balance,
data locality, and fault tolerance are traded off in that order when machines
run short.  All selection rules are deterministic — ties break on ids — so a
run never depends on iteration order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import SimConfig
from .model import (
    KEY_SPACE,
    ClusterState,
    ConfigInvalid,
    Granule,
    GranuleId,
    JobGraph,
    MonitorSpec,
    SimError,
    UnknownStage,
)


class NoMachines(SimError):
    pass


class NoEligibleMachines(SimError):
    pass


class UnknownGranule(SimError):
    pass


class StorageExhausted(SimError):
    """No machine in the cluster has room for bytes that must land."""


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


# ---------------------------------------------------------------------------
# Quotas


@dataclass(frozen=True)
class QuotaTable:
    """Per-job, per-machine storage budgets (equal share of one machine)."""

    per_job: dict[str, float]
    pressure_threshold: float = 0.75
    assigned_at: float = 0.0

    def quota(self, job_id: str) -> float:
        try:
            return self.per_job[job_id]
        except KeyError:
            raise UnknownGranule(f"no quota assigned for job {job_id}") from None

    def soft_limit(self, job_id: str) -> float:
        return self.pressure_threshold * self.quota(job_id)


def assign_quota(
    jobs: Iterable[str],
    cluster: ClusterState,
    t: float = 0.0,
    pressure_threshold: float = 0.75,
) -> QuotaTable:
    """Split each machine's storage capacity evenly across runnable jobs."""
    alive = cluster.alive()
    if not alive:
        raise NoMachines("no live machine with storage capacity")
    job_list = sorted(set(jobs))
    if not job_list:
        return QuotaTable(per_job={}, pressure_threshold=pressure_threshold, assigned_at=t)
    capacity = min(cluster.machines[m].storage_capacity for m in alive)
    if capacity <= 0:
        raise NoMachines("no live machine with storage capacity")
    share = capacity / len(job_list)
    return QuotaTable(
        per_job={j: share for j in job_list},
        pressure_threshold=pressure_threshold,
        assigned_at=t,
    )


def target_machine_count(
    job_id: str,
    cluster: ClusterState,
    quotas: QuotaTable,
    floor: int = 2,
) -> int:
    """How many machines a new stage's granules should spread across.

    Scales with how many machines still have quota headroom for this job:
    few loaded machines -> spread wide enough to avoid hotspots, many loaded
    machines -> stay narrow to preserve locality.  Never below 2 (so a single
    machine failure cannot take out a whole stage) and never above the number
    of machines with headroom.
    """
    alive = cluster.alive()
    if not alive:
        raise NoMachines("no live machines")
    soft = quotas.soft_limit(job_id)
    m_total = len(alive)
    m_light = sum(1 for m in alive if cluster.stored(job_id, m) < soft)
    m_v = max(floor, _round_half_up(m_light * (m_total - m_light) / m_total))
    if m_light >= floor:
        m_v = min(m_v, m_light)
    return m_v


# ---------------------------------------------------------------------------
# Machine selection


def select_machines(
    stage_key: tuple[str, str],
    m_v: int,
    cluster: ClusterState,
    catalog: "GranuleCatalog",
    quotas: QuotaTable,
    exclude: Iterable[str] = (),
) -> list[str]:
    """Pick up to ``m_v`` machines for a stage's granules.

    Only machines below the quota-pressure threshold for this job qualify at
    all.  Among those, prefer machines already holding data for this stage or
    for sibling stages feeding the same consumer, then machines free of this
    stage's ancestor data (deeper ancestor-free is better), then simply the
    lightest total storage load.  Fault tolerance is traded away before data
    locality, and locality before balance, by sorting on exactly that ladder.
    """
    job_id, stage_id = stage_key
    soft = quotas.soft_limit(job_id)
    banned = set(exclude)
    eligible = [
        m
        for m in cluster.alive()
        if m not in banned
        and cluster.stored(job_id, m) < soft
        and cluster.machines[m].total_stored < cluster.machines[m].storage_capacity
    ]
    if not eligible:
        raise NoEligibleMachines(
            f"every machine is at >= {quotas.pressure_threshold:.0%} "
            f"of quota for job {job_id}"
        )

    graph = catalog.graph(job_id)
    local = set(catalog.stage_machines(job_id, stage_id))
    for sib in graph.siblings(stage_id):
        local |= set(catalog.stage_machines(job_id, sib))

    dist = graph.ancestor_distances(stage_id)
    max_depth = max(dist.values(), default=0)

    def ft_level(m: str) -> int:
        # Largest k such that machine m holds no data from any ancestor within
        # k upstream hops; 0 means the immediate parent already lives there.
        worst = max_depth + 1
        for anc, d in dist.items():
            if m in catalog.stage_machines(job_id, anc):
                worst = min(worst, d)
        return worst - 1

    ranked = sorted(
        eligible,
        key=lambda m: (
            0 if m in local else 1,
            -ft_level(m),
            cluster.machines[m].total_stored,
            m,
        ),
    )
    return ranked[: max(1, m_v)]


# ---------------------------------------------------------------------------
# Placement plans


@dataclass(frozen=True)
class PlacementPlan:
    stage_key: tuple[str, str]
    machines: tuple[str, ...]
    assignment: dict[int, str]

    def machine_for_index(self, idx: int) -> str | None:
        return self.assignment.get(idx)

    def counts(self) -> dict[str, int]:
        out = {m: 0 for m in self.machines}
        for m in self.assignment.values():
            out[m] += 1
        return out


def spread_uniform(
    granule_indices: Sequence[int], machines: Sequence[str], stage_key: tuple[str, str] = ("", "")
) -> PlacementPlan:
    """Round-robin granule indices across machines, in index order."""
    ms = tuple(machines)
    assignment: dict[int, str] = {}
    for pos, idx in enumerate(sorted(granule_indices)):
        if ms:
            assignment[idx] = ms[pos % len(ms)]
    return PlacementPlan(stage_key=stage_key, machines=ms, assignment=assignment)


# ---------------------------------------------------------------------------
# Pressure handling


def at_risk_machines(
    job_id: str,
    cluster: ClusterState,
    quotas: QuotaTable,
) -> list[str]:
    """Machines where this job's stored bytes crossed the pressure threshold,
    most loaded first."""
    soft = quotas.soft_limit(job_id)
    hits = [m for m in cluster.alive() if cluster.stored(job_id, m) >= soft]
    return sorted(hits, key=lambda m: (-cluster.stored(job_id, m), m))


def select_hot_granules(
    job_id: str,
    machine_id: str,
    granules: Iterable[Granule],
) -> list[Granule]:
    """Outlier granules (by open size on this machine, or by growth rate).

    A granule is hot when either metric exceeds mean + 1 sigma over this
    job's open granules on the machine.  With no outliers (e.g. perfectly
    uniform sizes) the single largest granule is returned so pressure always
    has a victim; ties break on granule id.
    """
    pool = [
        g
        for g in granules
        if g.gid.job_id == job_id
        and machine_id in g.materializations
        and machine_id not in g.closed_at
    ]
    if not pool:
        return []
    sizes = np.array([g.materializations[machine_id] for g in pool], dtype=float)
    rates = np.array([g.stats.growth_rate for g in pool], dtype=float)
    size_cut = sizes.mean() + sizes.std()
    rate_cut = rates.mean() + rates.std()
    hot = [
        g
        for g, s, r in zip(pool, sizes, rates)
        if s > size_cut or r > rate_cut
    ]
    if not hot:
        hot = [sorted(pool, key=lambda g: (-g.materializations[machine_id], g.gid))[0]]
    return sorted(hot, key=lambda g: g.gid)


# ---------------------------------------------------------------------------
# Monitors


def run_monitors(monitors: Iterable[MonitorSpec], values: Sequence[float]) -> dict[str, int]:
    """Count records matching each value-threshold monitor.

    Builtin monitors are collected unconditionally elsewhere; they contribute
    nothing here.
    """
    arr = np.asarray(values, dtype=float)
    out: dict[str, int] = {}
    for mon in monitors:
        if mon.kind != "value_threshold":
            continue
        if mon.op == "<":
            n = int((arr < mon.threshold).sum())
        elif mon.op == ">":
            n = int((arr > mon.threshold).sum())
        else:
            n = int((arr == mon.threshold).sum())
        out[mon.counter_id] = out.get(mon.counter_id, 0) + n
    return out


# ---------------------------------------------------------------------------
# Catalog


class GranuleCatalog:
    """Index of every granule plus the job graphs they belong to."""

    def __init__(self) -> None:
        self.granules: dict[GranuleId, Granule] = {}
        self._graphs: dict[str, JobGraph] = {}
        self._stage_machines: dict[tuple[str, str], dict[str, int]] = {}

    def register_job(self, graph: JobGraph) -> None:
        self._graphs[graph.job_id] = graph

    def graph(self, job_id: str) -> JobGraph:
        try:
            return self._graphs[job_id]
        except KeyError:
            raise UnknownStage(f"job {job_id} not registered") from None

    def add(self, granule: Granule) -> None:
        self.granules[granule.gid] = granule

    def get(self, gid: GranuleId) -> Granule:
        try:
            return self.granules[gid]
        except KeyError:
            raise UnknownGranule(str(gid)) from None

    def stage_granules(self, job_id: str, stage_id: str) -> list[Granule]:
        return [
            self.granules[g]
            for g in sorted(self.granules)
            if g.job_id == job_id and g.stage_id == stage_id
        ]

    def stage_machines(self, job_id: str, stage_id: str) -> set[str]:
        return {
            m
            for m, b in self._stage_machines.get((job_id, stage_id), {}).items()
            if b > 0
        }

    def note_bytes(self, gid: GranuleId, machine_id: str, nbytes: int) -> None:
        key = (gid.job_id, gid.stage_id)
        per = self._stage_machines.setdefault(key, {})
        per[machine_id] = per.get(machine_id, 0) + nbytes

    def drop_stage(self, job_id: str, stage_id: str) -> list[Granule]:
        gone = [g for g in sorted(self.granules) if g.job_id == job_id and g.stage_id == stage_id]
        out = [self.granules.pop(g) for g in gone]
        self._stage_machines.pop((job_id, stage_id), None)
        return out


# ---------------------------------------------------------------------------
# Data service


@dataclass
class IngestResult:
    granule_deltas: dict[int, tuple[int, int]] = field(default_factory=dict)  # idx -> (recs, bytes)
    per_machine: dict[str, int] = field(default_factory=dict)
    touched: list[GranuleId] = field(default_factory=list)
    pended_bytes: int = 0


class DataService:
    """Stateful datastore front end used by the simulator.

    Wires the placement/pressure heuristics above to live cluster state and
    emits trace events for every placement decision it takes.
    """

    def __init__(
        self,
        cluster: ClusterState,
        config: SimConfig,
        emit: Callable[..., object] | None = None,
    ) -> None:
        self.cluster = cluster
        self.config = config
        self.catalog = GranuleCatalog()
        self.quotas = QuotaTable(per_job={})
        self.plans: dict[tuple[str, str], PlacementPlan] = {}
        self.open_target: dict[GranuleId, str | None] = {}
        self.pending: dict[GranuleId, list[tuple[int, int, dict[str, int]]]] = {}
        self._runnable: list[str] = []
        self._emit = emit or (lambda kind, **data: None)

    # -- job lifecycle

    def register_job(self, graph: JobGraph, t: float) -> None:
        self.catalog.register_job(graph)
        self._runnable.append(graph.job_id)
        self._reassign_quota(t)

    def complete_job(self, job_id: str, t: float) -> dict[str, int]:
        if job_id in self._runnable:
            self._runnable.remove(job_id)
        freed = self.cluster.release_job(job_id)
        if self._runnable:
            self._reassign_quota(t)
        return freed

    def _reassign_quota(self, t: float) -> None:
        self.quotas = assign_quota(
            self._runnable, self.cluster, t, self.config.pressure_threshold
        )
        self._emit(
            "quota_assigned",
            quotas={j: q for j, q in sorted(self.quotas.per_job.items())},
        )
        # A shrinking quota can strand machines above the hard limit; close
        # their open granules right away so nothing else lands there.
        for job in sorted(self.quotas.per_job):
            self.pressure_check(job, t)

    # -- placement plans

    def ensure_plan(self, job_id: str, stage_id: str) -> PlacementPlan:
        key = (job_id, stage_id)
        if key in self.plans:
            return self.plans[key]
        n = self.config.granules_per_stage
        try:
            m_v = target_machine_count(
                job_id, self.cluster, self.quotas, self.config.min_spread_machines
            )
            machines = select_machines(
                key, m_v, self.cluster, self.catalog, self.quotas
            )
        except NoEligibleMachines:
            machines = []
        plan = spread_uniform(range(n), machines, stage_key=key)
        self.plans[key] = plan
        self._emit(
            "placement_plan",
            job=job_id,
            stage=stage_id,
            machines=list(plan.machines),
            granules=n,
        )
        return plan

    # -- ingest

    def ingest_spill(
        self,
        job_id: str,
        stage_id: str,
        keys,
        rec_bytes,
        t: float,
        values=None,
    ) -> IngestResult:
        """Route one spill's records into granules.

        ``keys`` are hashed keys; ``rec_bytes`` is a scalar or per-record
        array of byte counts; ``values`` (default: the byte counts) feed the
        stage's value-threshold monitors.
        """
        stage = self.catalog.graph(job_id).stage(stage_id)
        keys = np.asarray(keys, dtype=np.int64)
        n = self.config.granules_per_stage
        width = KEY_SPACE // n
        if keys.size and (keys.min() < 0 or keys.max() >= KEY_SPACE):
            raise ConfigInvalid("spill contains keys outside the key space")
        sizes = np.broadcast_to(np.asarray(rec_bytes, dtype=np.int64), keys.shape)
        vals = sizes if values is None else np.broadcast_to(np.asarray(values, dtype=float), keys.shape)

        plan = self.ensure_plan(job_id, stage_id)
        result = IngestResult()
        idxs = keys // width
        for idx in np.unique(idxs):
            mask = idxs == idx
            nrec = int(mask.sum())
            nbytes = int(sizes[mask].sum())
            counters = run_monitors(stage.monitors, vals[mask])
            gid = GranuleId(job_id, stage_id, int(idx))
            granule = self._get_or_create(gid, plan, int(idx) * width, (int(idx) + 1) * width)
            self._deposit(granule, nrec, nbytes, counters, t, result)
            result.granule_deltas[int(idx)] = (
                result.granule_deltas.get(int(idx), (0, 0))[0] + nrec,
                result.granule_deltas.get(int(idx), (0, 0))[1] + nbytes,
            )
            result.touched.append(gid)
        self.pressure_check(job_id, t)
        return result

    def _get_or_create(
        self, gid: GranuleId, plan: PlacementPlan, key_lo: int, key_hi: int
    ) -> Granule:
        if gid in self.catalog.granules:
            return self.catalog.granules[gid]
        granule = Granule(gid=gid, key_lo=key_lo, key_hi=key_hi)
        self.catalog.add(granule)
        target = plan.machine_for_index(gid.index)
        if target is not None and self.cluster.machines[target].failed:
            target = None
        if target is None:
            target = self._pick_target(gid, exclude=())
        self.open_target[gid] = target
        return granule

    def _pick_target(self, gid: GranuleId, exclude: Iterable[str]) -> str | None:
        try:
            picked = select_machines(
                (gid.job_id, gid.stage_id), 1, self.cluster, self.catalog,
                self.quotas, exclude=exclude,
            )
            return picked[0]
        except NoEligibleMachines:
            return None

    def _deposit(
        self,
        granule: Granule,
        nrec: int,
        nbytes: int,
        counters: dict[str, int],
        t: float,
        result: IngestResult,
    ) -> None:
        target = self.open_target.get(granule.gid)
        if target is not None:
            mach = self.cluster.machines[target]
            if mach.total_stored + nbytes > mach.storage_capacity:
                # Absolutely full machine: stop growing here no matter what
                # the quota says, and look for a new open target.
                granule.closed_at.setdefault(target, t)
                target = self._pick_target(granule.gid, exclude=set(granule.closed_at))
                self.open_target[granule.gid] = target
        if target is None:
            self.pending.setdefault(granule.gid, []).append((nrec, nbytes, counters))
            result.pended_bytes += nbytes
            return
        self._materialize(granule, target, nrec, nbytes, counters, t, result)
        self._maybe_spread(granule, t)

    def _materialize(
        self,
        granule: Granule,
        machine: str,
        nrec: int,
        nbytes: int,
        counters: dict[str, int],
        t: float,
        result: IngestResult,
    ) -> None:
        granule.materializations[machine] = granule.materializations.get(machine, 0) + nbytes
        granule.stats.record_ingest(nbytes, nrec, t, self.config.growth_half_life_s)
        for cid, cnt in sorted(counters.items()):
            granule.stats.custom_counters[cid] = granule.stats.custom_counters.get(cid, 0) + cnt
        self.cluster.add_stored(granule.gid.job_id, machine, nbytes)
        self.catalog.note_bytes(granule.gid, machine, nbytes)
        graph = self.catalog.graph(granule.gid.job_id)
        for consumer in graph.consumers(granule.gid.stage_id):
            granule.feed(consumer).add_raw(nrec, nbytes)
        result.per_machine[machine] = result.per_machine.get(machine, 0) + nbytes

    def _maybe_spread(self, granule: Granule, t: float) -> None:
        """Close an open materialization that outgrew the spread threshold."""
        target = self.open_target.get(granule.gid)
        if target is None or target not in granule.materializations:
            return
        stage = self.catalog.graph(granule.gid.job_id).stage(granule.gid.stage_id)
        threshold = self.config.spread_threshold_bytes(stage.output.total_output_bytes)
        if granule.materializations[target] <= threshold:
            return
        granule.closed_at[target] = t
        new = self._pick_target(granule.gid, exclude=set(granule.materializations))
        self.open_target[granule.gid] = new
        self._emit(
            "granule_spread",
            granule=str(granule.gid),
            closed_machine=target,
            new_machine=new,
            bytes=granule.materializations[target],
        )

    # -- pressure

    def pressure_check(self, job_id: str, t: float) -> None:
        if job_id not in self.quotas.per_job:
            return
        q = self.quotas.quota(job_id)
        for m in at_risk_machines(job_id, self.cluster, self.quotas):
            granules = [
                g for g in self.catalog.granules.values()
                if g.gid.job_id == job_id and m in g.materializations and m not in g.closed_at
            ]
            hot = select_hot_granules(job_id, m, granules)
            if hot:
                self.close_and_respread(hot, m, t)
            if self.cluster.stored(job_id, m) >= q:
                # Quota exhausted outright: stop every remaining open granule.
                rest = sorted(
                    (g for g in granules if m not in g.closed_at and g not in hot),
                    key=lambda g: g.gid,
                )
                if rest:
                    self.close_and_respread(rest, m, t)

    def close_and_respread(self, granules: Sequence[Granule], machine_id: str, t: float) -> None:
        """Close hot granules on one machine and point future bytes elsewhere.

        Granules are grouped by producing stage so data that will be consumed
        together stays together; each group gets one replacement machine.
        Existing bytes are never moved.  With no eligible machine the granules
        stay closed with no open target and are retried later.
        """
        by_stage: dict[tuple[str, str], list[Granule]] = {}
        for g in granules:
            if machine_id in g.materializations and machine_id not in g.closed_at:
                g.closed_at[machine_id] = t
                by_stage.setdefault((g.gid.job_id, g.gid.stage_id), []).append(g)
        for stage_key in sorted(by_stage):
            group = sorted(by_stage[stage_key], key=lambda g: g.gid)
            try:
                target = select_machines(
                    stage_key, 1, self.cluster, self.catalog, self.quotas
                )[0]
            except NoEligibleMachines:
                target = None
            for g in group:
                new = target
                if new is not None and new in g.closed_at:
                    new = None  # closed granules never reopen on the same machine
                self.open_target[g.gid] = new
                self._emit(
                    "granule_respread",
                    granule=str(g.gid),
                    closed_machine=machine_id,
                    new_machine=new,
                )
                if new is not None:
                    self._flush_pending(g, t)

    def retry_pending(self, t: float) -> list[GranuleId]:
        """Find targets for granules whose bytes are waiting on quota headroom."""
        flushed = []
        for gid in sorted(self.pending):
            if not self.pending[gid]:
                continue
            if self.open_target.get(gid) is None:
                g = self.catalog.get(gid)
                new = self._pick_target(gid, exclude=set(g.closed_at))
                if new is None:
                    continue
                self.open_target[gid] = new
            if self._flush_pending(self.catalog.get(gid), t):
                flushed.append(gid)
        return flushed

    def force_flush_stage(self, job_id: str, stage_id: str, t: float) -> None:
        """Land any still-pending bytes of a finished stage.

        Quotas throttle where growing data goes; they never drop it.  When a
        stage is done producing, buffered records must materialize somewhere
        even if every preferred machine is over the pressure threshold, so the
        target search relaxes in steps: quota-eligible machine, then any
        machine below the hard quota, then the least loaded machine outright.
        """
        for gid in sorted(self.pending):
            if gid.job_id != job_id or gid.stage_id != stage_id or not self.pending[gid]:
                continue
            g = self.catalog.get(gid)
            if self.open_target.get(gid) is None:
                target = self._pick_target(gid, exclude=set(g.closed_at))
                if target is None:
                    need = sum(b for _, b, _ in self.pending[gid])
                    q = self.quotas.quota(job_id)
                    roomy = [
                        m for m in self.cluster.alive()
                        if self.cluster.machines[m].total_stored + need
                        <= self.cluster.machines[m].storage_capacity
                    ]
                    if not roomy:
                        raise StorageExhausted(
                            f"no machine can hold {need} buffered bytes of {gid}"
                        )
                    below_hard = [
                        m for m in roomy
                        if self.cluster.stored(job_id, m) < q and m not in g.closed_at
                    ]
                    pool = below_hard or roomy
                    target = min(
                        pool,
                        key=lambda m: (self.cluster.machines[m].total_stored, m),
                    )
                    g.closed_at.pop(target, None)
                    self._emit(
                        "granule_forced_flush",
                        granule=str(gid),
                        machine=target,
                    )
                self.open_target[gid] = target
            self._flush_pending(g, t)

    def _flush_pending(self, granule: Granule, t: float) -> bool:
        batches = self.pending.get(granule.gid)
        target = self.open_target.get(granule.gid)
        if not batches or target is None:
            return False
        need = sum(b for _, b, _ in batches)
        mach = self.cluster.machines[target]
        if mach.total_stored + need > mach.storage_capacity:
            # Not enough absolute headroom after all; keep buffering.
            self.open_target[granule.gid] = None
            return False
        result = IngestResult()
        for nrec, nbytes, counters in batches:
            self._materialize(granule, target, nrec, nbytes, counters, t, result)
        self.pending[granule.gid] = []
        self._emit(
            "granule_pending_flush",
            granule=str(granule.gid),
            machine=target,
            bytes=sum(b for _, b, _ in batches),
        )
        self._maybe_spread(granule, t)
        return True

    # -- failures

    def destroy_machine(self, machine_id: str) -> dict[tuple[str, str], int]:
        """Drop every materialization on a failed machine.

        Returns destroyed bytes per (job, stage); the simulator decides what
        has to re-execute.
        """
        lost: dict[tuple[str, str], int] = {}
        for gid in sorted(self.catalog.granules):
            g = self.catalog.granules[gid]
            nbytes = g.materializations.pop(machine_id, 0)
            if not nbytes:
                continue
            g.closed_at.pop(machine_id, None)
            if self.open_target.get(gid) == machine_id:
                self.open_target[gid] = None
            self.cluster.add_stored(gid.job_id, machine_id, -nbytes)
            self.catalog.note_bytes(gid, machine_id, -nbytes)
            lost[(gid.job_id, gid.stage_id)] = lost.get((gid.job_id, gid.stage_id), 0) + nbytes
        return lost

    def reset_stage(self, job_id: str, stage_id: str) -> None:
        """Wipe a stage's granules entirely (used when it must re-execute)."""
        for g in self.catalog.drop_stage(job_id, stage_id):
            for m, nbytes in sorted(g.materializations.items()):
                self.cluster.add_stored(job_id, m, -nbytes)
            self.open_target.pop(g.gid, None)
            self.pending.pop(g.gid, None)
        self.plans.pop((job_id, stage_id), None)

    # -- export

    def catalog_rows(self) -> list[dict]:
        """Granule catalog as JSON-able rows (one per granule)."""
        rows = []
        for gid in sorted(self.catalog.granules):
            g = self.catalog.granules[gid]
            rows.append(
                {
                    "granule_id": str(gid),
                    "bytes": g.total_bytes,
                    "machines": [
                        {
                            "id": m,
                            "bytes": g.materializations[m],
                            "closed": m in g.closed_at,
                        }
                        for m in sorted(g.materializations)
                    ],
                    "stats": g.stats.snapshot(),
                }
            )
        return rows
