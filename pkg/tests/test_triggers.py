import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from granulesim.model import (
    ComputeType,
    Granule,
    GranuleId,
    TriggerKind,
    TriggerSpec,
)
from granulesim.triggers import (
    DuplicateDataGenerated,
    NotCommutativeAssociative,
    StageTriggerEngine,
    evaluate,
    pipeline_writeback,
)


def granule(idx=0, job="j1", stage="v1"):
    return Granule(GranuleId(job, stage, idx), key_lo=0, key_hi=1)


def engine(kind=TriggerKind.DEFAULT_STREAMING, x=100, consumers=("v2",), **kw):
    return StageTriggerEngine(
        "j1", "v1", TriggerSpec(kind, x=x, **kw), consumers=consumers
    )


def feed_records(g, consumer, n, nbytes_per=10):
    g.feed(consumer).add_raw(n, n * nbytes_per)


# ---------------------------------------------------------------------------
# batch


def test_batch_never_fires_early():
    eng = engine(TriggerKind.DEFAULT_BATCH)
    g = granule()
    feed_records(g, "v2", 10_000)
    assert eng.poll_ingest([g], [g.gid]) == []
    assert not evaluate(eng.trigger, g, eng.progress, "v2")


def test_batch_fires_everything_at_completion():
    eng = engine(TriggerKind.DEFAULT_BATCH)
    gs = [granule(i) for i in range(3)]
    for g in gs:
        feed_records(g, "v2", 5)
    out = eng.on_data_generated(gs)
    assert [f.gid.index for f in out.fires] == [0, 1, 2]
    assert out.ready_all
    assert eng.progress.ready_all_sent


def test_completion_with_nothing_residual_sends_no_fires():
    eng = engine(TriggerKind.DEFAULT_BATCH)
    gs = [granule(i) for i in range(2)]
    for g in gs:
        feed_records(g, "v2", 5)
        g.feed("v2").drain()
    out = eng.on_data_generated(gs)
    assert out.fires == ()
    assert out.ready_all


def test_duplicate_completion_rejected():
    eng = engine(TriggerKind.DEFAULT_BATCH)
    eng.on_data_generated([])
    with pytest.raises(DuplicateDataGenerated):
        eng.on_data_generated([])


# ---------------------------------------------------------------------------
# streaming


def test_streaming_fires_at_threshold():
    eng = engine(x=100)
    g = granule()
    feed_records(g, "v2", 99)
    assert eng.poll_ingest([g], [g.gid]) == []
    feed_records(g, "v2", 1)
    fires = eng.poll_ingest([g], [g.gid])
    assert [f.gid for f in fires] == [g.gid]
    assert g.feed("v2").fire_pending


def test_streaming_does_not_refire_until_consumed():
    eng = engine(x=10)
    g = granule()
    feed_records(g, "v2", 25)
    assert len(eng.poll_ingest([g], [g.gid])) == 1
    feed_records(g, "v2", 5)
    assert eng.poll_ingest([g], [g.gid]) == []  # still unconsumed
    g.feed("v2").drain()
    feed_records(g, "v2", 10)
    assert len(eng.poll_ingest([g], [g.gid])) == 1  # re-armed after drain


@settings(max_examples=50)
@given(st.integers(1, 400), st.integers(1, 50))
def test_streaming_total_fire_count(records, x):
    eng = engine(x=x)
    g = granule()
    fires = 0
    for _ in range(records):
        feed_records(g, "v2", 1)
        out = eng.poll_ingest([g], [g.gid])
        if out:
            fires += 1
            g.feed("v2").drain()  # immediate consumption
    final = eng.on_data_generated([g])
    fires += len(final.fires)
    assert fires == math.ceil(records / x)
    assert final.ready_all


def test_streaming_residue_flushes_at_completion():
    eng = engine(x=100)
    g = granule()
    feed_records(g, "v2", 40)  # below threshold forever
    out = eng.on_data_generated([g])
    assert len(out.fires) == 1
    assert g.feed("v2").pend_records == 40


# ---------------------------------------------------------------------------
# stage-wide counter


def test_counter_trigger_fires_all_granules_together():
    eng = engine(TriggerKind.CUSTOM_COUNTER, counter_id="distinct", threshold=100)
    gs = [granule(i) for i in range(3)]
    for g in gs:
        feed_records(g, "v2", 10)
    gs[0].stats.custom_counters["distinct"] = 60
    gs[1].stats.custom_counters["distinct"] = 30
    assert eng.poll_ingest(gs, [gs[0].gid]) == []  # 90 accumulated: below
    gs[2].stats.custom_counters["distinct"] = 15
    fires = eng.poll_ingest(gs, [gs[2].gid])       # 105: crossed
    assert [f.gid.index for f in fires] == [0, 1, 2]


def test_counter_trigger_needs_fresh_growth_to_refire():
    eng = engine(TriggerKind.CUSTOM_COUNTER, counter_id="c", threshold=50)
    g = granule()
    feed_records(g, "v2", 1)
    g.stats.custom_counters["c"] = 120
    assert len(eng.poll_ingest([g], [g.gid])) == 1
    g.feed("v2").drain()
    feed_records(g, "v2", 1)
    g.stats.custom_counters["c"] = 150  # only +30 since last fire
    assert eng.poll_ingest([g], [g.gid]) == []
    g.stats.custom_counters["c"] = 175  # +55 since last fire
    assert len(eng.poll_ingest([g], [g.gid])) == 1


# ---------------------------------------------------------------------------
# pipelining


def test_writeback_replaces_consumed_records():
    g = granule()
    feed_records(g, "v2", 150)
    records, nbytes, count, total = g.feed("v2").drain()
    assert (records, count) == (150, 150)
    pipeline_writeback(
        g, "v2", ComputeType.STATEFUL_CA,
        count_agg=count, sum_agg=total, wb_bytes=8,
    )
    assert g.feed("v2").pend_records == 1  # one aggregate record
    assert g.feed("v2").pend_count_agg == 150


def test_writeback_requires_commutative_associative_consumer():
    g = granule()
    with pytest.raises(NotCommutativeAssociative):
        pipeline_writeback(g, "v2", ComputeType.STATELESS, 1, 1, 8)
    with pytest.raises(NotCommutativeAssociative):
        pipeline_writeback(g, "v2", ComputeType.STATEFUL_NON_CA, 1, 1, 8)


def test_repeated_writeback_cycles_match_single_pass():
    # oracle: one batch pass over all records
    batches = [120, 80, 45, 200, 15]
    expect_count = sum(batches)
    expect_sum = sum(b * 10 for b in batches)

    eng = engine(TriggerKind.PIPELINING, x=100)
    g = granule()
    for n in batches:
        feed_records(g, "v2", n)
        if eng.poll_ingest([g], [g.gid]):
            _, nbytes, count, total = g.feed("v2").drain()
            pipeline_writeback(
                g, "v2", ComputeType.STATEFUL_CA,
                count_agg=count, sum_agg=total, wb_bytes=8,
            )
    out = eng.on_data_generated([g])
    assert len(out.fires) == 1 and out.ready_all
    _, _, count, total = g.feed("v2").drain()
    assert count == expect_count
    assert total == expect_sum


def test_pipelined_completion_waits_for_inflight_fold():
    eng = engine(TriggerKind.PIPELINING, x=10)
    g = granule()
    feed_records(g, "v2", 25)
    assert len(eng.poll_ingest([g], [g.gid])) == 1
    g.feed("v2").drain()
    g.feed("v2").inflight = 1  # the fold task is still running
    feed_records(g, "v2", 3)   # residue arriving before producer finishes

    out = eng.on_data_generated([g])
    assert out.fires == () and not out.ready_all  # deferred

    pipeline_writeback(
        g, "v2", ComputeType.STATEFUL_CA, count_agg=25, sum_agg=250, wb_bytes=8
    )
    out = eng.after_writeback([g])
    assert len(out.fires) == 1 and out.ready_all
    _, _, count, total = g.feed("v2").drain()
    assert count == 28 and total == 280


@settings(max_examples=40)
@given(st.lists(st.integers(1, 60), min_size=1, max_size=20), st.integers(1, 40))
def test_pipelined_fold_equals_batch_fold(batches, x):
    """Any interleaving of consume/write-back cycles conserves the fold."""
    eng = engine(TriggerKind.PIPELINING, x=x)
    g = granule()
    for n in batches:
        feed_records(g, "v2", n, nbytes_per=7)
        if eng.poll_ingest([g], [g.gid]):
            _, nbytes, count, total = g.feed("v2").drain()
            pipeline_writeback(
                g, "v2", ComputeType.STATEFUL_CA,
                count_agg=count, sum_agg=total, wb_bytes=8,
            )
    final = eng.on_data_generated([g])
    if final.fires:
        pass  # residue announced; consume it below
    _, _, count, total = g.feed("v2").drain()
    assert count == sum(batches)
    assert total == sum(batches) * 7


def test_multi_consumer_feeds_track_independently():
    eng = engine(x=10, consumers=("v2", "v3"))
    g = granule()
    feed_records(g, "v2", 12)
    feed_records(g, "v3", 12)
    fires = eng.poll_ingest([g], [g.gid])
    assert fires and fires[0].consumers == ("v2", "v3")
    g.feed("v2").drain()  # only one consumer takes the data
    feed_records(g, "v2", 12)
    feed_records(g, "v3", 12)
    fires = eng.poll_ingest([g], [g.gid])
    assert fires and fires[0].consumers == ("v2",)  # v3 still holds its fire
