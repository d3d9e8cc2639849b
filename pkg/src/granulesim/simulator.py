"""Discrete-event cluster simulator.

Two execution models over the same workload description:

* ``data_driven`` — stage output is spilled into granules as it is produced,
  trigger engines announce ready granules, and consumer tasks are formed on
  the fly from granule groups with altruistic resource sizing.  Stragglers
  shrink by handing unprocessed granules back to the scheduler.
* ``compute_centric`` — the classic baseline: output is hash-partitioned into
  a fixed number of buckets at the producers, consumer tasks (one per
  partition) launch once enough producers finished, hold their slots while
  waiting, shuffle their input, and handle stragglers by speculative clones.

Everything is deterministic: a single event heap ordered by (time, push
order), seeded key streams, and sorted iteration everywhere.  Running the
same (workload, config) twice yields byte-identical traces.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import json

import numpy as np

from .config import MODE_COMPUTE_CENTRIC, MODE_DATA_DRIVEN, SimConfig
from .datastore import DataService
from .execution import (
    ReadyPool,
    ResourceView,
    apply_status_decision,
    altruistic_allocation,
    detect_stragglers,
    schedule_iteration,
    split_straggler,
)
from .metrics import compute_metrics
from .model import (
    KEY_SPACE,
    ComputeType,
    ConfigInvalid,
    DecisionKind,
    GranuleId,
    SimError,
    TriggerKind,
    Workload,
    compare,
    workload_hash,
    workload_to_json,
)
from .triggers import StageTriggerEngine, pipeline_writeback
from .workloads import stage_keys, stage_values

#: Size of one folded-aggregate record written back into a granule.
WRITEBACK_BYTES = 64


class SimStalled(SimError):
    """The event heap drained while jobs were still unfinished (a bug)."""


class _RootWork:
    """Duck-typed stand-in for a granule subset when sizing root tasks."""

    __slots__ = ("total_bytes",)

    def __init__(self, total_bytes: int) -> None:
        self.total_bytes = total_bytes


@dataclass
class _Task:
    tid: str
    job_id: str
    stage_id: str
    kind: str                      # "root" | "consume" | "cc"
    machine: str
    resources: float
    input_bytes: int
    local_bytes: int
    launched_at: float
    nominal_duration: float
    duration: float | None         # actual; None while a cc task waits
    attempt: int
    task_index: int
    gids: list[GranuleId] = field(default_factory=list)
    payload: dict[GranuleId, list] = field(default_factory=dict)
    wb_gids: list[GranuleId] = field(default_factory=list)
    record_range: tuple[int, int] | None = None
    partition: int | None = None
    speculative: bool = False
    clone_of: str | None = None
    clone: str | None = None
    waiting: bool = False
    work_started_at: float | None = None
    epoch: int = 0
    cancelled: bool = False
    finished: bool = False
    unsplittable: bool = False

    def rate(self) -> float:
        if not self.duration or self.duration <= 0:
            return math.inf
        return self.input_bytes / self.duration

    def processed_bytes(self, t: float) -> float:
        start = self.work_started_at if self.work_started_at is not None else self.launched_at
        if self.duration is None or self.duration <= 0:
            return 0.0
        frac = min(max((t - start) / self.duration, 0.0), 1.0)
        return self.input_bytes * frac


@dataclass
class _StageRun:
    """Mutable per-(job, stage) state for the data-driven engine."""

    job_id: str
    stage_id: str
    spec: object
    kind: str                      # "root" | "consume"
    engine: StageTriggerEngine
    pool: ReadyPool | None
    expected_input: int = 0
    attempt: int = 0
    task_index: int = 0
    running: set = field(default_factory=set)
    payload: dict = field(default_factory=dict)
    produced_records: int = 0
    emitted_records: int = 0
    consumed_bytes: int = 0
    generated_sent: bool = False
    ready_all_sent: bool = False
    retry_at: float | None = None
    root_backlog: list = field(default_factory=list)


@dataclass
class _CCStage:
    """Mutable per-(job, stage) state for the compute-centric baseline."""

    job_id: str
    stage_id: str
    spec: object
    kind: str                      # "root" | "consume"
    total_tasks: int
    finished: int = 0
    complete: bool = False
    gate_open: bool = False
    task_index: int = 0
    emitted_records: int = 0
    consumed_records: int = 0
    expected_records: int = 0
    waiting_tids: list = field(default_factory=list)


class Simulator:
    def __init__(self, workload: Workload, config: SimConfig) -> None:
        self.workload = workload
        self.config = config
        self._validate()
        from .model import ClusterState

        self.cluster = ClusterState.build(
            config.n_machines,
            config.storage_capacity_bytes(),
            config.compute_units,
        )
        self._events: list[dict] = []
        self._seq = 0
        self._now = 0.0
        self._heap: list = []
        self._push_ct = 0
        self._task_ct = 0
        self._tasks: dict[str, _Task] = {}
        self._active_jobs: set[str] = set()
        self._finished_jobs: set[str] = set()
        self._graphs: dict[str, object] = {}
        self._streams: dict[tuple[str, str], np.ndarray] = {}
        self._values: dict[tuple[str, str], np.ndarray] = {}
        self._tick_armed = False
        self._tick_no = 0
        self._svc_tick_armed = False
        self._svc_tick_no = 0

        self.mode = config.mode
        if self.mode == MODE_DATA_DRIVEN:
            self.service = DataService(
                self.cluster, config, emit=lambda kind, **data: self._emit(kind, **data)
            )
            self._runs: dict[tuple[str, str], _StageRun] = {}
        else:
            self.service = None
            self._cc: dict[tuple[str, str], _CCStage] = {}
            self._cc_queue: list[str] = []
            self._cc_buckets: dict[tuple[str, str], dict] = {}
            self._cc_part_totals: dict[tuple[str, str], tuple] = {}

    # ------------------------------------------------------------------
    # plumbing

    def _validate(self) -> None:
        cfg = self.config
        if cfg.failures and cfg.mode == MODE_COMPUTE_CENTRIC:
            raise ConfigInvalid("machine failures are only modeled in data_driven mode")
        for f in cfg.failures:
            if float(f.get("at_s", -1)) < 0:
                raise ConfigInvalid("failure at_s must be >= 0")
        for s in cfg.slowdowns:
            if float(s.get("factor", 0)) <= 0:
                raise ConfigInvalid("slowdown factor must be > 0")

    def _emit(self, kind: str, **data) -> dict:
        ev = {"seq": self._seq, "t": self._now, "type": kind, **data}
        self._seq += 1
        self._events.append(ev)
        return ev

    def _push(self, t: float, method: str, *args) -> None:
        heapq.heappush(self._heap, (t, self._push_ct, method, args))
        self._push_ct += 1

    def _next_tid(self) -> str:
        self._task_ct += 1
        return f"t{self._task_ct}"

    def _slowdown_factor(self, job_id: str, stage_id: str, task_index: int) -> float:
        for s in self.config.slowdowns:
            if s.get("job") is not None and s["job"] != job_id:
                continue
            if s.get("stage") != stage_id:
                continue
            if s.get("task_index") is not None and int(s["task_index"]) != task_index:
                continue
            return float(s["factor"])
        return 1.0

    def _stream(self, job_id: str, stage_id: str) -> np.ndarray:
        key = (job_id, stage_id)
        if key not in self._streams:
            spec = self._graphs[job_id].stage(stage_id)
            self._streams[key] = stage_keys(
                self.workload.seed, job_id, stage_id, spec.output
            )
        return self._streams[key]

    def _value_stream(self, job_id: str, stage_id: str) -> np.ndarray | None:
        spec = self._graphs[job_id].stage(stage_id)
        if not any(m.kind == "value_threshold" for m in spec.monitors):
            return None
        key = (job_id, stage_id)
        if key not in self._values:
            self._values[key] = stage_values(
                self.workload.seed, job_id, stage_id, spec.output.records
            )
        return self._values[key]

    def _release_units(self, task: _Task) -> None:
        mach = self.cluster.machines[task.machine]
        left = mach.per_job_units.get(task.job_id, 0.0) - task.resources
        if left <= 1e-9:
            mach.per_job_units.pop(task.job_id, None)
        else:
            mach.per_job_units[task.job_id] = left

    def _reserve_units(self, task: _Task) -> None:
        mach = self.cluster.machines[task.machine]
        mach.per_job_units[task.job_id] = (
            mach.per_job_units.get(task.job_id, 0.0) + task.resources
        )

    def _job_view(self, job_id: str) -> ResourceView:
        n = max(len(self._active_jobs), 1)
        avail, cap = {}, {}
        for m in self.cluster.alive():
            mach = self.cluster.machines[m]
            share = mach.compute_capacity / n
            free = mach.compute_capacity - mach.units_used
            avail[m] = max(min(share - mach.per_job_units.get(job_id, 0.0), free), 0.0)
            cap[m] = share
        return ResourceView(available=avail, capacity=cap)

    def _least_loaded(self, min_free: float = 0.0) -> str | None:
        best = None
        for m in self.cluster.alive():
            mach = self.cluster.machines[m]
            if min_free and mach.compute_capacity - mach.units_used < min_free - 1e-9:
                continue
            key = (mach.units_used, mach.total_stored, m)
            if best is None or key < best[0]:
                best = (key, m)
        return best[1] if best else None

    # ------------------------------------------------------------------
    # main loop

    def run(self) -> list[dict]:
        doc = workload_to_json(self.workload)
        for wj in self.workload.jobs:
            self._graphs[wj.graph.job_id] = wj.graph
        self._emit(
            "header",
            format_version=doc["format_version"],
            mode=self.mode,
            seed=self.config.seed,
            workload_hash=workload_hash(doc),
            machines=self.cluster.alive(),
            config=self.config.to_dict(),
            workload=doc,
        )
        for wj in self.workload.jobs:
            self._push(wj.arrival_time_s, "_job_arrived", wj.graph.job_id)
        for f in sorted(self.config.failures, key=lambda f: (float(f["at_s"]), f["machine"])):
            self._push(float(f["at_s"]), "_machine_failed", f["machine"])

        while self._heap:
            t, _ct, method, args = heapq.heappop(self._heap)
            self._now = t
            getattr(self, method)(*args)

        if self._active_jobs:
            raise SimStalled(f"no events left but jobs unfinished: {sorted(self._active_jobs)}")
        self._emit("sim_end", jobs=len(self._finished_jobs))
        return self._events

    def _job_arrived(self, job_id: str) -> None:
        graph = self._graphs[job_id]
        self._active_jobs.add(job_id)
        self._emit("job_arrived", job=job_id, stages=len(graph.stages))
        if self.mode == MODE_DATA_DRIVEN:
            self._dd_job_arrived(graph)
        else:
            self._cc_job_arrived(graph)
        self._arm_ticks()

    def _arm_ticks(self) -> None:
        if not self._active_jobs:
            return
        if not self._tick_armed:
            self._tick_armed = True
            per = self.config.straggler_check_period_s
            self._tick_no = math.floor(self._now / per + 1e-9) + 1
            self._push(self._tick_no * per, "_tick")
        if self.mode == MODE_DATA_DRIVEN and not self._svc_tick_armed:
            self._svc_tick_armed = True
            per = self.config.pressure_check_period_s
            self._svc_tick_no = math.floor(self._now / per + 1e-9) + 1
            self._push(self._svc_tick_no * per, "_service_tick")

    def _tick(self) -> None:
        self._tick_armed = False
        if not self._active_jobs:
            return
        if self.mode == MODE_DATA_DRIVEN:
            self._dd_straggler_checks()
        else:
            self._cc_straggler_checks()
        if self._active_jobs:
            self._tick_armed = True
            self._tick_no += 1
            self._push(self._tick_no * self.config.straggler_check_period_s, "_tick")

    def _service_tick(self) -> None:
        self._svc_tick_armed = False
        if not self._active_jobs:
            return
        for job in sorted(self._active_jobs):
            self.service.pressure_check(job, self._now)
        self._after_flush(self.service.retry_pending(self._now))
        if self._active_jobs:
            self._svc_tick_armed = True
            self._svc_tick_no += 1
            self._push(self._svc_tick_no * self.config.pressure_check_period_s, "_service_tick")

    # ==================================================================
    # data-driven mode

    def _dd_job_arrived(self, graph) -> None:
        job_id = graph.job_id
        self.service.register_job(graph, self._now)
        roots = set(graph.roots())
        for sid in graph.topo_order():
            spec = graph.stage(sid)
            kind = "root" if sid in roots else "consume"
            pool = None
            expected = 0
            if kind == "consume":
                pool = ReadyPool(job_id=job_id, stage_id=sid, default_logic=spec.logic_id)
                expected = sum(
                    graph.stage(p).output.total_output_bytes for p in graph.producers(sid)
                )
            run = _StageRun(
                job_id=job_id,
                stage_id=sid,
                spec=spec,
                kind=kind,
                engine=self._make_engine(graph, sid),
                pool=pool,
                expected_input=expected,
            )
            self._runs[(job_id, sid)] = run
        for sid in sorted(roots):
            self._launch_root_tasks(self._runs[(job_id, sid)])

    def _make_engine(self, graph, stage_id: str) -> StageTriggerEngine:
        consumers = graph.consumers(stage_id)
        ctypes = {c: graph.stage(c).compute_type for c in consumers}
        return StageTriggerEngine(
            graph.job_id, stage_id, graph.stage(stage_id).trigger, consumers, ctypes
        )

    # -- root production

    def _launch_root_tasks(self, run: _StageRun) -> None:
        spec = run.spec
        R = spec.output.records
        if R == 0:
            self._stage_output_complete(run)
            return
        T = spec.root_tasks
        shares = [(R * i // T, R * (i + 1) // T) for i in range(T)]
        self._launch_root_shares(run, [(lo, hi) for lo, hi in shares if hi > lo])

    def _launch_root_shares(self, run: _StageRun, shares: list) -> None:
        prb = run.spec.output.per_record_bytes
        works = [_RootWork((hi - lo) * prb) for lo, hi in shares]
        ranked = sorted(
            self.cluster.alive(),
            key=lambda m: (
                self.cluster.machines[m].units_used,
                self.cluster.machines[m].total_stored,
                m,
            ),
        )
        choices = [ranked[i % len(ranked)] for i in range(len(works))]
        view = self._job_view(run.job_id)
        sized, deferred = altruistic_allocation(works, choices, view)
        by_work = {id(w): (m, r) for w, m, r in sized}
        run.root_backlog = [shares[i] for i in deferred]
        if run.root_backlog and run.retry_at is None:
            run.retry_at = self._now + self.config.retry_delay_s
            self._push(run.retry_at, "_retry_stage", run.job_id, run.stage_id)
        for work, (lo, hi) in zip(works, shares):
            if id(work) not in by_work:
                continue
            machine, resources = by_work[id(work)]
            nominal = work.total_bytes * self.config.seconds_per_gb_per_unit / (
                resources * 10**9
            )
            factor = self._slowdown_factor(run.job_id, run.stage_id, run.task_index)
            duration = nominal / factor
            task = _Task(
                tid=self._next_tid(),
                job_id=run.job_id,
                stage_id=run.stage_id,
                kind="root",
                machine=machine,
                resources=resources,
                input_bytes=work.total_bytes,
                local_bytes=work.total_bytes,
                launched_at=self._now,
                nominal_duration=nominal,
                duration=duration,
                attempt=run.attempt,
                task_index=run.task_index,
                record_range=(lo, hi),
            )
            run.task_index += 1
            self._tasks[task.tid] = task
            run.running.add(task.tid)
            self._reserve_units(task)
            self._emit(
                "task_launched",
                task=task.tid,
                job=run.job_id,
                stage=run.stage_id,
                machine=machine,
                resources=resources,
                input_bytes=task.input_bytes,
                local_bytes=task.local_bytes,
                granules=[],
                task_index=task.task_index,
                attempt=run.attempt,
                speculative=False,
            )
            recs = hi - lo
            k = max(math.ceil(recs / self.config.spill_batch_records), 1)
            for j in range(k):
                self._push(
                    self._now + duration * (j + 1) / k,
                    "_root_spill",
                    task.tid,
                    lo + recs * j // k,
                    lo + recs * (j + 1) // k,
                )
            self._push(self._now + duration, "_finish_dd_task", task.tid, task.epoch)

    def _root_spill(self, tid: str, lo: int, hi: int) -> None:
        task = self._tasks[tid]
        if task.cancelled:
            return
        run = self._runs[(task.job_id, task.stage_id)]
        if task.attempt != run.attempt:
            return
        self._ingest_output(run, task.tid, lo, hi)
        if run.produced_records >= run.spec.output.records and not run.generated_sent:
            self._stage_output_complete(run)

    def _ingest_output(self, run: _StageRun, tid: str, lo: int, hi: int) -> None:
        """Spill one batch of a stage's output stream into the datastore."""
        keys = self._stream(run.job_id, run.stage_id)[lo:hi]
        vals = self._value_stream(run.job_id, run.stage_id)
        prb = run.spec.output.per_record_bytes
        res = self.service.ingest_spill(
            run.job_id,
            run.stage_id,
            keys,
            prb,
            self._now,
            values=None if vals is None else vals[lo:hi],
        )
        self._emit(
            "data_spill",
            job=run.job_id,
            stage=run.stage_id,
            task=tid,
            records=hi - lo,
            bytes=(hi - lo) * prb,
            granules={
                str(i): [r, b] for i, (r, b) in sorted(res.granule_deltas.items())
            },
            per_machine=dict(sorted(res.per_machine.items())),
            pended_bytes=res.pended_bytes,
            attempt=run.attempt,
        )
        run.produced_records += hi - lo
        self.service.pressure_check(run.job_id, self._now)
        granules = self.service.catalog.stage_granules(run.job_id, run.stage_id)
        fires = run.engine.poll_ingest(granules, res.touched)
        self._handle_fires(run, fires, defer_schedule=False)

    # -- firing and decisions

    def _handle_fires(self, prun: _StageRun, fires, defer_schedule: bool) -> list[str]:
        graph = self._graphs[prun.job_id]
        affected: list[str] = []
        for cmd in fires:
            g = self.service.catalog.get(cmd.gid)
            detail = {}
            drained = {}
            for consumer in cmd.consumers:
                recs, bts, cnt, sm = g.feed(consumer).drain()
                drained[consumer] = (recs, bts, cnt, sm)
                detail[consumer] = {"records": recs, "bytes": bts}
            self._emit(
                "data_ready",
                job=prun.job_id,
                stage=prun.stage_id,
                granule=str(cmd.gid),
                machines=g.machines,
                consumers=detail,
                attempt=prun.attempt,
            )
            for consumer in cmd.consumers:
                recs, bts, cnt, sm = drained[consumer]
                if bts <= 0:
                    continue
                crun = self._runs[(prun.job_id, consumer)]
                crun.pool.add(g, bts)
                slot = crun.payload.setdefault(cmd.gid, [0, 0, 0, 0])
                slot[0] += recs
                slot[1] += bts
                slot[2] += cnt
                slot[3] += sm
                decision, rule = self._decide(crun.spec, g)
                if decision is not None:
                    self._emit(
                        "status_query",
                        job=prun.job_id,
                        stage=consumer,
                        granule=str(cmd.gid),
                        counters={
                            r.counter_id: g.stats.builtin(r.counter_id)
                            for r in crun.spec.decision_rules
                        },
                    )
                    self._emit(
                        "status_decision",
                        job=prun.job_id,
                        stage=consumer,
                        granule=str(cmd.gid),
                        decision=decision.value,
                        bytes=bts,
                        new_logic_id=rule.new_logic_id if rule else None,
                    )
                    if decision is DecisionKind.IGNORE:
                        apply_status_decision(crun.pool, cmd.gid, "ignore")
                        crun.payload.pop(cmd.gid, None)
                        continue
                    if decision is DecisionKind.REPLACE:
                        apply_status_decision(
                            crun.pool, cmd.gid, "replace", rule.new_logic_id
                        )
                if consumer not in affected:
                    affected.append(consumer)
        if not defer_schedule:
            for c in affected:
                self._schedule_round(self._runs[(prun.job_id, c)])
        return affected

    def _decide(self, spec, granule):
        """Evaluate a consumer's status-decision rules against granule stats."""
        if not spec.decision_rules:
            return None, None
        for rule in spec.decision_rules:
            if compare(granule.stats.builtin(rule.counter_id), rule.op, rule.threshold):
                return rule.decision, rule
        return DecisionKind.NO_NEW_ACTION, None

    # -- scheduling and task lifecycle

    def _schedule_round(self, crun: _StageRun) -> None:
        if crun.generated_sent:
            return
        if crun.kind == "root":
            if crun.root_backlog:
                self._launch_root_shares(crun, crun.root_backlog)
            return
        if crun.pool.entries:
            view = self._job_view(crun.job_id)
            result = schedule_iteration(
                crun.pool,
                view,
                self._next_tid,
                max_input_bytes=self.config.max_input_per_task_bytes(),
                retry_limit=self.config.retry_limit,
                attempt=crun.attempt,
            )
            for a in result.assignments:
                self._launch_dd_task(crun, a)
            if result.deferred and crun.retry_at is None:
                crun.retry_at = self._now + self.config.retry_delay_s
                self._push(crun.retry_at, "_retry_stage", crun.job_id, crun.stage_id)
        self._maybe_consumer_complete(crun)

    def _retry_stage(self, job_id: str, stage_id: str) -> None:
        run = self._runs.get((job_id, stage_id))
        if run is None or job_id not in self._active_jobs:
            return
        run.retry_at = None
        self._after_flush(self.service.retry_pending(self._now))
        self._schedule_round(run)

    def _launch_dd_task(self, crun: _StageRun, a) -> None:
        graph = self._graphs[crun.job_id]
        payload = {}
        local = 0
        for gid in a.gids:
            payload[gid] = crun.payload.pop(gid, [0, 0, 0, 0])
            g = self.service.catalog.get(gid)
            total = g.total_bytes
            if total > 0:
                local += payload[gid][1] * g.materializations.get(a.machine, 0) // total
        remote = a.input_bytes - local
        nominal = self.config.shuffle_seconds(remote) + (
            a.input_bytes * self.config.seconds_per_gb_per_unit / (a.resources * 10**9)
        )
        factor = self._slowdown_factor(crun.job_id, crun.stage_id, crun.task_index)
        task = _Task(
            tid=a.task_id,
            job_id=crun.job_id,
            stage_id=crun.stage_id,
            kind="consume",
            machine=a.machine,
            resources=a.resources,
            input_bytes=a.input_bytes,
            local_bytes=local,
            launched_at=self._now,
            nominal_duration=nominal,
            duration=nominal / factor,
            attempt=crun.attempt,
            task_index=crun.task_index,
            gids=list(a.gids),
            payload=payload,
        )
        crun.task_index += 1
        self._tasks[task.tid] = task
        crun.running.add(task.tid)
        self._reserve_units(task)
        # A pipelined producer still mid-stream gets this task's fold written
        # back; once the producer is done the chain must terminate, so later
        # tasks consume without writing back.
        for gid in a.gids:
            prun = self._runs[(crun.job_id, gid.stage_id)]
            if (
                prun.engine.trigger.kind is TriggerKind.PIPELINING
                and crun.spec.compute_type is ComputeType.STATEFUL_CA
                and not prun.generated_sent
            ):
                g = self.service.catalog.get(gid)
                g.feed(crun.stage_id).inflight += 1
                task.wb_gids.append(gid)
        self._emit(
            "task_launched",
            task=task.tid,
            job=crun.job_id,
            stage=crun.stage_id,
            machine=a.machine,
            resources=a.resources,
            input_bytes=task.input_bytes,
            local_bytes=task.local_bytes,
            granules=[str(g) for g in a.gids],
            task_index=task.task_index,
            attempt=crun.attempt,
            speculative=False,
        )
        self._push(self._now + task.duration, "_finish_dd_task", task.tid, task.epoch)
        self._arm_ticks()

    def _finish_dd_task(self, tid: str, epoch: int) -> None:
        task = self._tasks[tid]
        if task.cancelled or task.finished or task.epoch != epoch:
            return
        run = self._runs[(task.job_id, task.stage_id)]
        if task.attempt != run.attempt:
            return
        task.finished = True
        run.running.discard(tid)
        self._release_units(task)
        self._emit(
            "task_finished",
            task=tid,
            job=task.job_id,
            stage=task.stage_id,
            machine=task.machine,
            bytes_processed=task.input_bytes,
            granules={str(g): list(p) for g, p in sorted(task.payload.items())},
            attempt=task.attempt,
        )
        # fold partial aggregates back into pipelined granules
        wb_producers = []
        for gid in task.wb_gids:
            g = self.service.catalog.get(gid)
            recs, bts, cnt, sm = task.payload.get(gid, [0, 0, 0, 0])
            pipeline_writeback(
                g, task.stage_id, run.spec.compute_type, cnt, sm, WRITEBACK_BYTES
            )
            if gid.stage_id not in wb_producers:
                wb_producers.append(gid.stage_id)
        for pstage in wb_producers:
            prun = self._runs[(task.job_id, pstage)]
            granules = self.service.catalog.stage_granules(task.job_id, pstage)
            if prun.generated_sent and not prun.ready_all_sent:
                res = prun.engine.after_writeback(granules)
                affected = self._handle_fires(prun, res.fires, defer_schedule=True)
                if res.ready_all:
                    self._ready_all(prun)
                else:
                    for c in affected:
                        self._schedule_round(self._runs[(task.job_id, c)])
            else:
                touched = [g for g in task.wb_gids if g.stage_id == pstage]
                fires = prun.engine.poll_ingest(granules, touched)
                self._handle_fires(prun, fires, defer_schedule=False)
        if run.kind == "consume":
            run.consumed_bytes += task.input_bytes
            self._emit_consumer_output(run)
            self._maybe_consumer_complete(run)
        # freed resources: give this job's other pools a pass
        for (job, sid) in sorted(self._runs):
            if job == task.job_id:
                r = self._runs[(job, sid)]
                if (r.pool is not None and r.pool.entries) or r.root_backlog:
                    self._schedule_round(r)
        self._maybe_job_done(task.job_id)

    def _emit_consumer_output(self, run: _StageRun) -> None:
        spec = run.spec
        R = spec.output.records
        if run.kind != "consume" or R == 0 or run.generated_sent:
            return
        if run.expected_input <= 0:
            frac = 1.0
        else:
            frac = min(run.consumed_bytes / run.expected_input, 1.0)
        due = math.floor(R * frac) - run.emitted_records
        batch = self.config.spill_batch_records
        while due > 0:
            chunk = min(due, batch)
            lo = run.emitted_records
            self._ingest_output(run, "-", lo, lo + chunk)
            run.emitted_records += chunk
            due -= chunk

    def _maybe_consumer_complete(self, run: _StageRun) -> None:
        if run.kind != "consume" or run.generated_sent:
            return
        if run.running or run.pool.entries:
            return
        graph = self._graphs[run.job_id]
        for p in graph.producers(run.stage_id):
            if not self._runs[(run.job_id, p)].ready_all_sent:
                return
        self._emit_consumer_output(run)
        self._stage_output_complete(run)

    def _stage_output_complete(self, run: _StageRun) -> None:
        if run.generated_sent:
            return
        run.generated_sent = True
        self.service.force_flush_stage(run.job_id, run.stage_id, self._now)
        granules = self.service.catalog.stage_granules(run.job_id, run.stage_id)
        res = run.engine.on_data_generated(granules)
        self._emit(
            "data_generated",
            job=run.job_id,
            stage=run.stage_id,
            records=run.produced_records,
            bytes=run.produced_records * run.spec.output.per_record_bytes,
            attempt=run.attempt,
        )
        affected = self._handle_fires(run, res.fires, defer_schedule=True)
        if res.ready_all:
            self._ready_all(run)
        else:
            for c in affected:
                self._schedule_round(self._runs[(run.job_id, c)])

    def _ready_all(self, run: _StageRun) -> None:
        if run.ready_all_sent:
            return
        run.ready_all_sent = True
        self._emit(
            "data_ready_all", job=run.job_id, stage=run.stage_id, attempt=run.attempt
        )
        graph = self._graphs[run.job_id]
        ancestors = sorted(graph.ancestor_distances(run.stage_id))
        for g in self.service.catalog.stage_granules(run.job_id, run.stage_id):
            mats = {m: b for m, b in sorted(g.materializations.items()) if b > 0}
            primary = g.primary_machine()
            ft = all(
                primary not in self.service.catalog.stage_machines(run.job_id, a)
                for a in ancestors
            )
            self._emit(
                "granule_summary",
                job=run.job_id,
                stage=run.stage_id,
                granule=str(g.gid),
                machines=mats,
                bytes=g.total_bytes,
                dl=len(mats) == 1,
                ft=ft,
                attempt=run.attempt,
            )
        for c in graph.consumers(run.stage_id):
            crun = self._runs[(run.job_id, c)]
            self._schedule_round(crun)
        self._maybe_job_done(run.job_id)

    def _maybe_job_done(self, job_id: str) -> None:
        if job_id not in self._active_jobs:
            return
        graph = self._graphs[job_id]
        for sid in graph.stages:
            run = self._runs[(job_id, sid)]
            if not run.ready_all_sent or run.running:
                return
        self._active_jobs.discard(job_id)
        self._finished_jobs.add(job_id)
        arrival = self.workload.job(job_id).arrival_time_s
        self._emit("job_finished", job=job_id, jct_s=self._now - arrival)
        self.service.complete_job(job_id, self._now)
        for sid in graph.stages:
            for g in self.service.catalog.drop_stage(job_id, sid):
                self.service.open_target.pop(g.gid, None)
                self.service.pending.pop(g.gid, None)
            self.service.plans.pop((job_id, sid), None)
        for m in self.cluster.alive():
            self.cluster.machines[m].per_job_units.pop(job_id, None)
        # quota grew for everyone else: retry parked bytes, rerun pools
        self._after_flush(self.service.retry_pending(self._now))
        for (job, sid) in sorted(self._runs):
            if job in self._active_jobs:
                r = self._runs[(job, sid)]
                if (r.pool is not None and r.pool.entries) or r.root_backlog:
                    self._schedule_round(r)

    def _after_flush(self, flushed) -> None:
        """Granules whose parked bytes just landed may now satisfy triggers."""
        by_stage: dict[tuple[str, str], list] = {}
        for gid in flushed:
            by_stage.setdefault((gid.job_id, gid.stage_id), []).append(gid)
        for (job, sid) in sorted(by_stage):
            if job not in self._active_jobs:
                continue
            run = self._runs[(job, sid)]
            granules = self.service.catalog.stage_granules(job, sid)
            fires = run.engine.poll_ingest(granules, by_stage[(job, sid)])
            self._handle_fires(run, fires, defer_schedule=False)

    # -- stragglers (data-driven)

    def _dd_straggler_checks(self) -> None:
        t = self._now
        theta = self.config.straggler_theta
        grace = self.config.straggler_grace_s
        for (job, sid) in sorted(self._runs):
            run = self._runs[(job, sid)]
            live = [
                self._tasks[tid]
                for tid in sorted(run.running)
                if not self._tasks[tid].cancelled
            ]
            if not live:
                continue
            if len(live) >= 2:
                rates = {task.tid: task.rate() for task in live}
                flagged = set(detect_stragglers(rates, theta))
            else:
                task = live[0]
                expected = (
                    task.input_bytes / task.nominal_duration
                    if task.nominal_duration > 0
                    else math.inf
                )
                flagged = {task.tid} if task.rate() < theta * expected else set()
            for tid in sorted(flagged):
                task = self._tasks[tid]
                if task.unsplittable or t - task.launched_at < grace:
                    continue
                if len(live) >= 2:
                    peers = [p.rate() for p in live if p.tid != tid]
                    reference = sum(peers) / len(peers)
                else:
                    reference = task.input_bytes / task.nominal_duration
                self._emit(
                    "straggler_detected",
                    task=tid,
                    job=job,
                    stage=sid,
                    rate=task.rate(),
                    reference=reference,
                )
                self._split_straggler_task(run, task, reference)

    def _split_straggler_task(self, run: _StageRun, task: _Task, reference: float) -> None:
        if task.kind != "consume" or len(task.gids) < 2:
            task.unsplittable = True
            return
        processed = task.processed_bytes(self._now)
        cum = 0
        done: list[GranuleId] = []
        unprocessed: list[GranuleId] = []
        for gid in task.gids:
            b = task.payload[gid][1]
            if cum + b <= processed and not unprocessed:
                cum += b
                done.append(gid)
            else:
                unprocessed.append(gid)
        if len(unprocessed) < 2:
            task.unsplittable = True
            return
        ratio = min(max(task.rate() / reference, 0.01), 0.99)
        kept, moved = split_straggler(unprocessed, ratio)
        self._emit(
            "task_split",
            task=task.tid,
            job=run.job_id,
            stage=run.stage_id,
            kept=[str(g) for g in done + list(kept)],
            moved=[str(g) for g in moved],
        )
        rate = task.rate()
        for gid in moved:
            payload = task.payload.pop(gid)
            task.gids.remove(gid)
            if gid in task.wb_gids:
                task.wb_gids.remove(gid)
                feed = self.service.catalog.get(gid).feed(task.stage_id)
                if feed.inflight > 0:
                    feed.inflight -= 1
            g = self.service.catalog.get(gid)
            run.pool.add(g, payload[1])
            slot = run.payload.setdefault(gid, [0, 0, 0, 0])
            for i in range(4):
                slot[i] += payload[i]
        task.input_bytes = sum(p[1] for p in task.payload.values())
        remaining = max(task.input_bytes - processed, 0.0)
        task.duration = (self._now - task.launched_at) + (
            remaining / rate if rate > 0 else 0.0
        )
        task.epoch += 1
        self._push(
            self._now + (remaining / rate if rate > 0 else 0.0),
            "_finish_dd_task",
            task.tid,
            task.epoch,
        )
        self._schedule_round(run)

    # -- machine failures and re-execution

    def _machine_failed(self, machine_id: str) -> None:
        mach = self.cluster.machines[machine_id]
        if mach.failed:
            return
        mach.failed = True
        killed: dict[str, set[str]] = {}
        for tid in sorted(self._tasks):
            task = self._tasks[tid]
            if task.machine != machine_id or task.finished or task.cancelled:
                continue
            task.cancelled = True
            self._emit(
                "task_killed",
                task=tid,
                job=task.job_id,
                stage=task.stage_id,
                bytes_processed=task.processed_bytes(self._now),
                reason="machine_failed",
            )
            run = self._runs[(task.job_id, task.stage_id)]
            run.running.discard(tid)
            killed.setdefault(task.job_id, set()).add(task.stage_id)
        mach.per_job_units.clear()
        lost = self.service.destroy_machine(machine_id)
        self._emit(
            "machine_failed",
            machine=machine_id,
            lost={
                f"{j}/{s}": b
                for (j, s), b in sorted(lost.items())
                if j in self._active_jobs
            },
        )
        affected: dict[str, set[str]] = {}
        for (j, s), b in lost.items():
            if j in self._active_jobs:
                affected.setdefault(j, set()).add(s)
        for j, sids in killed.items():
            if j in self._active_jobs:
                affected.setdefault(j, set()).update(sids)
        for job in sorted(affected):
            self._reexec(job, affected[job])

    def _reexec(self, job_id: str, seed_stages: set[str]) -> None:
        graph = self._graphs[job_id]
        U = set(seed_stages)
        for s in sorted(seed_stages):
            U.update(graph.descendants(s))
        topo = [s for s in graph.topo_order() if s in U]
        for sid in topo:
            run = self._runs[(job_id, sid)]
            for tid in sorted(run.running):
                task = self._tasks[tid]
                if task.cancelled or task.finished:
                    continue
                task.cancelled = True
                self._release_units(task)
                self._emit(
                    "task_killed",
                    task=tid,
                    job=job_id,
                    stage=sid,
                    bytes_processed=task.processed_bytes(self._now),
                    reason="stage_reset",
                )
            run.running.clear()
        for sid in topo:
            run = self._runs[(job_id, sid)]
            dropped: dict[str, int] = {}
            for g in self.service.catalog.stage_granules(job_id, sid):
                for m, b in g.materializations.items():
                    if b > 0:
                        dropped[m] = dropped.get(m, 0) + b
            self.service.reset_stage(job_id, sid)
            run.attempt += 1
            self._emit(
                "stage_reexec",
                job=job_id,
                stage=sid,
                attempt=run.attempt,
                dropped=dict(sorted(dropped.items())),
            )
            run.engine = self._make_engine(graph, sid)
            if run.pool is not None:
                run.pool = ReadyPool(
                    job_id=job_id, stage_id=sid, default_logic=run.spec.logic_id
                )
            run.payload = {}
            run.produced_records = 0
            run.emitted_records = 0
            run.consumed_bytes = 0
            run.generated_sent = False
            run.ready_all_sent = False
            run.retry_at = None
        # producers outside the re-executed set re-announce what they hold
        replay: dict[str, list[str]] = {}
        for sid in topo:
            for p in graph.producers(sid):
                if p not in U:
                    replay.setdefault(p, []).append(sid)
        for p in sorted(replay):
            prun = self._runs[(job_id, p)]
            for g in self.service.catalog.stage_granules(job_id, p):
                for c in replay[p]:
                    g.feeds.pop(c, None)
                    if g.stats.kv_pairs > 0:
                        g.feed(c).add_raw(g.stats.kv_pairs, g.stats.bytes)
            if prun.generated_sent:
                prun.attempt += 1
                prun.engine = self._make_engine(graph, p)
                prun.generated_sent = False
                prun.ready_all_sent = False
                prun.produced_records = prun.spec.output.records if prun.kind == "root" else prun.produced_records
                self._stage_output_complete(prun)
        for sid in topo:
            run = self._runs[(job_id, sid)]
            if run.kind == "root":
                self._launch_root_tasks(run)

    # ==================================================================
    # compute-centric mode

    def _cc_job_arrived(self, graph) -> None:
        job_id = graph.job_id
        roots = set(graph.roots())
        for sid in graph.topo_order():
            spec = graph.stage(sid)
            if sid in roots:
                total = spec.root_tasks
                kind = "root"
                expected = 0
            else:
                kind = "consume"
                parts = {
                    self._cc_partitions(graph.stage(p)) for p in graph.producers(sid)
                }
                if len(parts) != 1:
                    raise ConfigInvalid(
                        f"{job_id}/{sid}: producers disagree on partition count"
                    )
                total = parts.pop()
                expected = sum(
                    graph.stage(p).output.records for p in graph.producers(sid)
                )
            self._cc[(job_id, sid)] = _CCStage(
                job_id=job_id,
                stage_id=sid,
                spec=spec,
                kind=kind,
                total_tasks=total,
                expected_records=expected,
            )
        for sid in sorted(roots):
            self._cc_launch_roots(self._cc[(job_id, sid)])

    def _cc_partitions(self, spec) -> int:
        return spec.partitions if spec.partitions is not None else self.config.n_machines

    def _cc_part_data(self, job_id: str, stage_id: str) -> tuple[np.ndarray, np.ndarray]:
        """Final per-partition (records, bytes) of one stage's full output."""
        key = (job_id, stage_id)
        if key not in self._cc_part_totals:
            spec = self._graphs[job_id].stage(stage_id)
            P = self._cc_partitions(spec)
            keys = self._stream(job_id, stage_id)
            idx = (keys.astype(np.int64) * P) // KEY_SPACE
            recs = np.bincount(idx, minlength=P)
            self._cc_part_totals[key] = (recs, recs * spec.output.per_record_bytes)
        return self._cc_part_totals[key]

    def _cc_launch_roots(self, st: _CCStage) -> None:
        R = st.spec.output.records
        T = st.total_tasks
        prb = st.spec.output.per_record_bytes
        shares = [(R * i // T, R * (i + 1) // T) for i in range(T)]
        for lo, hi in shares:
            task = _Task(
                tid=self._next_tid(),
                job_id=st.job_id,
                stage_id=st.stage_id,
                kind="cc",
                machine="",
                resources=self.config.cc_task_units,
                input_bytes=(hi - lo) * prb,
                local_bytes=(hi - lo) * prb,
                launched_at=self._now,
                nominal_duration=0.0,
                duration=None,
                attempt=0,
                task_index=st.task_index,
                record_range=(lo, hi),
            )
            st.task_index += 1
            self._tasks[task.tid] = task
            self._cc_queue.append(task.tid)
        self._cc_pump_queue()

    def _cc_pump_queue(self) -> None:
        while self._cc_queue:
            tid = self._cc_queue[0]
            task = self._tasks[tid]
            machine = self._least_loaded(min_free=self.config.cc_task_units)
            if machine is None:
                return
            self._cc_queue.pop(0)
            if task.cancelled:
                continue
            task.machine = machine
            task.launched_at = self._now
            self._reserve_units(task)
            st = self._cc[(task.job_id, task.stage_id)]
            self._emit(
                "task_launched",
                task=tid,
                job=task.job_id,
                stage=task.stage_id,
                machine=machine,
                resources=task.resources,
                input_bytes=task.input_bytes,
                local_bytes=self._cc_local_now(task),
                granules=[],
                task_index=task.task_index,
                attempt=0,
                speculative=task.speculative,
                partition=task.partition,
                clone_of=task.clone_of,
            )
            if self._cc_upstream_complete(task.job_id, task.stage_id):
                self._cc_start_work(task)
            else:
                task.waiting = True
                st.waiting_tids.append(tid)

    def _cc_local_now(self, task: _Task) -> int:
        """Input bytes already stored at the task's machine (so far)."""
        if task.kind != "cc" or task.partition is None:
            return task.local_bytes
        local = 0
        for p in self._graphs[task.job_id].producers(task.stage_id):
            buckets = self._cc_buckets.get((task.job_id, p), {})
            local += buckets.get(task.partition, {}).get(task.machine, 0)
        return local

    def _cc_upstream_complete(self, job_id: str, stage_id: str) -> bool:
        producers = self._graphs[job_id].producers(stage_id)
        return all(self._cc[(job_id, p)].complete for p in producers)

    def _cc_start_work(self, task: _Task) -> None:
        task.waiting = False
        task.work_started_at = self._now
        if task.partition is not None:
            remote = task.input_bytes - self._cc_local_now(task)
        else:
            remote = 0
        nominal = self.config.shuffle_seconds(remote) + (
            task.input_bytes
            * self.config.seconds_per_gb_per_unit
            / (task.resources * 10**9)
        )
        factor = (
            1.0
            if task.speculative
            else self._slowdown_factor(task.job_id, task.stage_id, task.task_index)
        )
        task.nominal_duration = nominal
        task.duration = nominal / factor
        self._push(self._now + task.duration, "_cc_task_finished", task.tid)
        self._arm_ticks()

    def _cc_task_finished(self, tid: str) -> None:
        task = self._tasks[tid]
        if task.cancelled or task.finished:
            return
        task.finished = True
        self._release_units(task)
        st = self._cc[(task.job_id, task.stage_id)]
        # first finisher of a speculative pair wins; the other dies
        other_tid = task.clone or task.clone_of
        if other_tid:
            other = self._tasks[other_tid]
            if not other.finished and not other.cancelled:
                other.cancelled = True
                if other.machine:
                    self._release_units(other)
                self._emit(
                    "task_killed",
                    task=other_tid,
                    job=task.job_id,
                    stage=task.stage_id,
                    bytes_processed=other.processed_bytes(self._now),
                    reason="speculative_loser",
                )
        self._emit(
            "task_finished",
            task=tid,
            job=task.job_id,
            stage=task.stage_id,
            machine=task.machine,
            bytes_processed=task.input_bytes,
            granules={},
            attempt=0,
        )
        st.finished += 1
        graph = self._graphs[task.job_id]
        consumers = graph.consumers(task.stage_id)
        if task.partition is not None:
            recs, _ = self._cc_part_data_sum(task.job_id, task.stage_id, task.partition)
            st.consumed_records += recs
        # emit this task's share of the stage output, bucketed per consumer
        if task.record_range is not None:
            self._cc_emit_output(st, task, *task.record_range)
        elif consumers or st.spec.output.records:
            if st.expected_records <= 0:
                frac = 1.0
            else:
                frac = min(st.consumed_records / st.expected_records, 1.0)
            due = math.floor(st.spec.output.records * frac) - st.emitted_records
            if due > 0:
                lo = st.emitted_records
                st.emitted_records += due
                self._cc_emit_output(st, task, lo, lo + due)
        for c in consumers:
            self._cc_maybe_open_gate(task.job_id, c)
        if st.finished >= st.total_tasks and not st.complete:
            st.complete = True
            for c in consumers:
                down = self._cc[(task.job_id, c)]
                if self._cc_upstream_complete(task.job_id, c):
                    for wtid in list(down.waiting_tids):
                        wtask = self._tasks[wtid]
                        if not wtask.cancelled and wtask.waiting:
                            self._cc_start_work(wtask)
                    down.waiting_tids.clear()
            self._cc_maybe_job_done(task.job_id)
        self._cc_pump_queue()

    def _cc_part_data_sum(self, job_id: str, stage_id: str, part: int) -> tuple[int, int]:
        recs = bts = 0
        for p in self._graphs[job_id].producers(stage_id):
            r, b = self._cc_part_data(job_id, p)
            recs += int(r[part])
            bts += int(b[part])
        return recs, bts

    def _cc_emit_output(self, st: _CCStage, task: _Task, lo: int, hi: int) -> None:
        if hi <= lo:
            return
        prb = st.spec.output.per_record_bytes
        nbytes = (hi - lo) * prb
        graph = self._graphs[st.job_id]
        if graph.consumers(st.stage_id):
            keys = self._stream(st.job_id, st.stage_id)[lo:hi]
            P = self._cc_partitions(st.spec)
            idx = (keys.astype(np.int64) * P) // KEY_SPACE
            counts = np.bincount(idx, minlength=P)
            buckets = self._cc_buckets.setdefault((st.job_id, st.stage_id), {})
            for k in range(P):
                if counts[k]:
                    slot = buckets.setdefault(k, {})
                    slot[task.machine] = slot.get(task.machine, 0) + int(counts[k]) * prb
        self.cluster.add_stored(st.job_id, task.machine, nbytes)
        self._emit(
            "data_spill",
            job=st.job_id,
            stage=st.stage_id,
            task=task.tid,
            records=hi - lo,
            bytes=nbytes,
            granules={},
            per_machine={task.machine: nbytes},
            pended_bytes=0,
            attempt=0,
        )

    def _cc_maybe_open_gate(self, job_id: str, stage_id: str) -> None:
        st = self._cc[(job_id, stage_id)]
        if st.gate_open:
            return
        producers = self._graphs[job_id].producers(stage_id)
        total = sum(self._cc[(job_id, p)].total_tasks for p in producers)
        done = sum(self._cc[(job_id, p)].finished for p in producers)
        if done < math.ceil(self.config.cc_launch_fraction * total):
            return
        st.gate_open = True
        interval = self.config.cc_streaming_interval_s
        if interval:
            snapped = math.ceil(self._now / interval - 1e-9) * interval
            if snapped > self._now:
                self._push(snapped, "_cc_create_consumers", job_id, stage_id)
                return
        self._cc_create_consumers(job_id, stage_id)

    def _cc_create_consumers(self, job_id: str, stage_id: str) -> None:
        st = self._cc[(job_id, stage_id)]
        for k in range(st.total_tasks):
            recs, bts = self._cc_part_data_sum(job_id, stage_id, k)
            task = _Task(
                tid=self._next_tid(),
                job_id=job_id,
                stage_id=stage_id,
                kind="cc",
                machine="",
                resources=self.config.cc_task_units,
                input_bytes=bts,
                local_bytes=0,
                launched_at=self._now,
                nominal_duration=0.0,
                duration=None,
                attempt=0,
                task_index=st.task_index,
                partition=k,
            )
            st.task_index += 1
            self._tasks[task.tid] = task
            self._cc_queue.append(task.tid)
        self._cc_pump_queue()

    def _cc_straggler_checks(self) -> None:
        t = self._now
        theta = self.config.straggler_theta
        grace = self.config.straggler_grace_s
        for (job, sid) in sorted(self._cc):
            working = [
                task
                for task in (self._tasks[tid] for tid in sorted(self._tasks))
                if task.job_id == job
                and task.stage_id == sid
                and task.duration is not None
                and not task.finished
                and not task.cancelled
            ]
            if not working:
                continue
            if len(working) >= 2:
                rates = {task.tid: task.rate() for task in working}
                flagged = set(detect_stragglers(rates, theta))
            else:
                task = working[0]
                expected = (
                    task.input_bytes / task.nominal_duration
                    if task.nominal_duration > 0
                    else math.inf
                )
                flagged = {task.tid} if task.rate() < theta * expected else set()
            for tid in sorted(flagged):
                task = self._tasks[tid]
                start = task.work_started_at if task.work_started_at is not None else task.launched_at
                if task.speculative or task.clone or t - start < grace:
                    continue
                if len(working) >= 2:
                    peers = [p.rate() for p in working if p.tid != tid]
                    reference = sum(peers) / len(peers)
                else:
                    reference = task.input_bytes / task.nominal_duration
                self._emit(
                    "straggler_detected",
                    task=tid,
                    job=job,
                    stage=sid,
                    rate=task.rate(),
                    reference=reference,
                )
                st = self._cc[(job, sid)]
                clone = _Task(
                    tid=self._next_tid(),
                    job_id=job,
                    stage_id=sid,
                    kind="cc",
                    machine="",
                    resources=self.config.cc_task_units,
                    input_bytes=task.input_bytes,
                    local_bytes=0,
                    launched_at=self._now,
                    nominal_duration=0.0,
                    duration=None,
                    attempt=0,
                    task_index=st.task_index,
                    partition=task.partition,
                    record_range=task.record_range,
                    speculative=True,
                    clone_of=tid,
                )
                st.task_index += 1
                task.clone = clone.tid
                self._tasks[clone.tid] = clone
                self._cc_queue.append(clone.tid)
        self._cc_pump_queue()

    def _cc_maybe_job_done(self, job_id: str) -> None:
        if job_id not in self._active_jobs:
            return
        graph = self._graphs[job_id]
        if not all(self._cc[(job_id, sid)].complete for sid in graph.stages):
            return
        self._active_jobs.discard(job_id)
        self._finished_jobs.add(job_id)
        arrival = self.workload.job(job_id).arrival_time_s
        self._emit("job_finished", job=job_id, jct_s=self._now - arrival)
        self.cluster.release_job(job_id)
        self._cc_pump_queue()


# ----------------------------------------------------------------------
# public API


def run(workload: Workload, config: SimConfig) -> tuple[list[dict], dict]:
    """Simulate one workload under one config; returns (events, metrics)."""
    events = Simulator(workload, config).run()
    return events, compute_metrics(events)


def run_data_driven(workload: Workload, config: SimConfig) -> tuple[list[dict], dict]:
    return run(workload, config.replace(mode=MODE_DATA_DRIVEN))


def run_compute_centric(workload: Workload, config: SimConfig) -> tuple[list[dict], dict]:
    return run(workload, config.replace(mode=MODE_COMPUTE_CENTRIC))


def write_trace(events: list[dict], path: str) -> None:
    with open(path, "w") as f:
        for ev in events:
            f.write(json.dumps(ev) + "\n")


def read_trace(path: str) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_metrics(metrics: dict, path: str) -> None:
    with open(path, "w") as f:
        json.dump(metrics, f, indent=2)
        f.write("\n")
