"""Ready-trigger engine: decides when granules can be consumed.

Each producing stage gets one engine instance.  The engine watches granule
feeds fill up and answers two questions: which granules should be announced
ready right now, and when is the stage's output complete (every announced
granule plus a single completion marker).  Pipelined stages additionally fold
partial aggregates back into the granules they came from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import (
    ComputeType,
    Granule,
    GranuleId,
    SimError,
    TriggerKind,
    TriggerSpec,
)


class DuplicateDataGenerated(SimError):
    pass


class NotCommutativeAssociative(SimError):
    pass


@dataclass
class StageProgress:
    """Per-stage protocol bookkeeping."""

    stage_id: str
    granules_ready_sent: set[int] = field(default_factory=set)
    producer_done: bool = False
    ready_all_sent: bool = False
    counter_value: int = 0       # stage-wide aggregate for counter triggers
    counter_baseline: int = 0    # aggregate value at the last stage-wide fire


@dataclass(frozen=True)
class FireCommand:
    """Announce one granule ready to the listed consumers."""

    gid: GranuleId
    consumers: tuple[str, ...]


@dataclass(frozen=True)
class FlushResult:
    fires: tuple[FireCommand, ...]
    ready_all: bool


def evaluate(
    trigger: TriggerSpec,
    granule: Granule,
    progress: StageProgress,
    consumer: str,
) -> bool:
    """Should this granule fire for this consumer right now?

    Batch stages never fire early (the completion barrier handles them);
    counter triggers fire on the stage-wide aggregate, independent of which
    granule arrived.
    """
    if trigger.kind is TriggerKind.DEFAULT_BATCH:
        return False
    if trigger.kind is TriggerKind.CUSTOM_COUNTER:
        return progress.counter_value - progress.counter_baseline >= trigger.threshold
    feed = granule.feed(consumer)
    return not feed.fire_pending and feed.pend_records >= trigger.x


class StageTriggerEngine:
    """Trigger state machine for one producing stage of one job."""

    def __init__(
        self,
        job_id: str,
        stage_id: str,
        trigger: TriggerSpec,
        consumers: Sequence[str],
        consumer_compute_types: dict[str, ComputeType] | None = None,
    ) -> None:
        self.job_id = job_id
        self.stage_id = stage_id
        self.trigger = trigger
        self.consumers = tuple(consumers)
        self.consumer_compute_types = consumer_compute_types or {}
        self.progress = StageProgress(stage_id=stage_id)

    # -- firing on ingest

    def poll_ingest(
        self, granules: Sequence[Granule], touched: Iterable[GranuleId]
    ) -> list[FireCommand]:
        """Check trigger predicates after new records landed.

        ``granules`` is the stage's full granule set (sorted by id when it
        matters), ``touched`` the granules the spill hit.
        """
        if not self.consumers:
            return []
        kind = self.trigger.kind
        if kind is TriggerKind.DEFAULT_BATCH:
            return []
        if kind is TriggerKind.CUSTOM_COUNTER:
            self.progress.counter_value = self._aggregate_counter(granules)
            if (
                self.progress.counter_value - self.progress.counter_baseline
                >= self.trigger.threshold
            ):
                self.progress.counter_baseline = self.progress.counter_value
                return self._fire_all(granules)
            return []
        # streaming / pipelining: per-granule record thresholds
        out: list[FireCommand] = []
        seen: set[GranuleId] = set()
        by_id = {g.gid: g for g in granules}
        for gid in touched:
            if gid in seen or gid not in by_id:
                continue
            seen.add(gid)
            g = by_id[gid]
            armed = tuple(
                c for c in self.consumers if evaluate(self.trigger, g, self.progress, c)
            )
            if armed:
                out.append(self._arm(g, armed))
        return out

    def _aggregate_counter(self, granules: Sequence[Granule]) -> int:
        return int(sum(g.stats.builtin(self.trigger.counter_id) for g in granules))

    def _fire_all(self, granules: Sequence[Granule]) -> list[FireCommand]:
        out = []
        for g in sorted(granules, key=lambda g: g.gid):
            armed = tuple(
                c
                for c in self.consumers
                if g.feed(c).pend_records > 0 and not g.feed(c).fire_pending
            )
            if armed:
                out.append(self._arm(g, armed))
        return out

    def _arm(self, granule: Granule, consumers: tuple[str, ...]) -> FireCommand:
        for c in consumers:
            granule.feed(c).fire_pending = True
            granule.feed(c).fires += 1
        self.progress.granules_ready_sent.add(granule.gid.index)
        return FireCommand(gid=granule.gid, consumers=consumers)

    # -- completion

    def on_data_generated(self, granules: Sequence[Granule]) -> FlushResult:
        """Producer finished: flush every leftover granule, then close out.

        Fires a final ready announcement for any granule with unconsumed
        records regardless of thresholds.  Pipelined granules with a fold
        still in flight are left for the write-back to flush; the completion
        marker waits for them.
        """
        if self.progress.producer_done:
            raise DuplicateDataGenerated(
                f"{self.job_id}/{self.stage_id} finished producing twice"
            )
        self.progress.producer_done = True
        fires = self._final_fires(granules)
        ready_all = not self._has_inflight(granules)
        if ready_all:
            self.progress.ready_all_sent = True
        return FlushResult(fires=tuple(fires), ready_all=ready_all)

    def after_writeback(self, granules: Sequence[Granule]) -> FlushResult:
        """Re-check completion once a pipelined fold landed."""
        if not self.progress.producer_done or self.progress.ready_all_sent:
            return FlushResult(fires=(), ready_all=False)
        fires = self._final_fires(granules)
        ready_all = not self._has_inflight(granules)
        if ready_all:
            self.progress.ready_all_sent = True
        return FlushResult(fires=tuple(fires), ready_all=ready_all)

    def _final_fires(self, granules: Sequence[Granule]) -> list[FireCommand]:
        fires = []
        for g in sorted(granules, key=lambda g: g.gid):
            if self._deferred(g):
                continue
            armed = tuple(
                c
                for c in self.consumers
                if g.feed(c).pend_records > 0 and not g.feed(c).fire_pending
            )
            if armed:
                fires.append(self._arm(g, armed))
        return fires

    def _deferred(self, granule: Granule) -> bool:
        if self.trigger.kind is not TriggerKind.PIPELINING:
            return False
        return any(granule.feed(c).inflight > 0 for c in self.consumers)

    def _has_inflight(self, granules: Sequence[Granule]) -> bool:
        if self.trigger.kind is not TriggerKind.PIPELINING:
            return False
        return any(
            g.feed(c).inflight > 0 for g in granules for c in self.consumers
        )


def pipeline_writeback(
    granule: Granule,
    consumer: str,
    consumer_compute_type: ComputeType,
    count_agg: int,
    sum_agg: int,
    wb_bytes: int,
) -> None:
    """Fold a consumer task's partial aggregate back into its granule.

    The consumed records are replaced by one aggregate record carrying the
    fold state, so a later drain sees exactly the totals a single batch pass
    would have computed.  Only commutative + associative consumers may do
    this — anything order-sensitive would change its answer.
    """
    if consumer_compute_type is not ComputeType.STATEFUL_CA:
        raise NotCommutativeAssociative(
            f"consumer {consumer} ({consumer_compute_type.value}) cannot fold back"
        )
    feed = granule.feed(consumer)
    feed.add_writeback(count_agg=count_agg, sum_agg=sum_agg, nbytes=wb_bytes)
    if feed.inflight > 0:
        feed.inflight -= 1
