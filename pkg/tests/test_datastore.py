import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from granulesim.config import SimConfig
from granulesim.datastore import (
    DataService,
    GranuleCatalog,
    NoEligibleMachines,
    NoMachines,
    QuotaTable,
    StorageExhausted,
    assign_quota,
    at_risk_machines,
    run_monitors,
    select_hot_granules,
    select_machines,
    spread_uniform,
    target_machine_count,
)
from granulesim.model import (
    GB,
    KEY_SPACE,
    ClusterState,
    Granule,
    GranuleId,
    MonitorSpec,
    UnknownStage,
    build_job_graph,
)


def make_cluster(n=3, capacity=10 * GB):
    return ClusterState.build(n, storage_capacity=capacity, compute_capacity=8.0)


def make_catalog(job_id="j1", stages=("v1", "v2"), edges=(("v1", "v2"),)):
    cat = GranuleCatalog()
    cat.register_job(
        build_job_graph(
            {
                "id": job_id,
                "stages": [
                    {
                        "id": s,
                        "compute_type": "stateless",
                        "output": {"records": 1000, "per_record_bytes": 100},
                    }
                    for s in stages
                ],
                "edges": [list(e) for e in edges],
            }
        )
    )
    return cat


# ---------------------------------------------------------------------------
# quotas


def test_quota_single_tenant_gets_whole_machine():
    q = assign_quota(["j1"], make_cluster())
    assert q.quota("j1") == 10 * GB


def test_quota_four_way_split():
    q = assign_quota(["a", "b", "c", "d"], make_cluster())
    for j in "abcd":
        assert q.quota(j) == 2.5 * GB


def test_quota_sum_bounded_by_capacity():
    q = assign_quota(["a", "b", "c"], make_cluster())
    assert sum(q.per_job.values()) <= 10 * GB
    assert q.quota("a") == pytest.approx(10 * GB / 3)


def test_quota_needs_a_live_machine():
    c = make_cluster(2)
    for m in c.machines.values():
        m.failed = True
    with pytest.raises(NoMachines):
        assign_quota(["j1"], c)


# ---------------------------------------------------------------------------
# target machine count


def quota_for(c, job="j1", q=10 * GB):
    return QuotaTable(per_job={job: q})


def load_machines(c, job, machine_ids, nbytes):
    for m in machine_ids:
        c.add_stored(job, m, nbytes)


def test_machine_count_mid_loaded_cluster():
    c = make_cluster(20)
    q = quota_for(c)
    # 10 machines above the pressure threshold, 10 light
    load_machines(c, "j1", list(c.machines)[:10], 8 * GB)
    assert target_machine_count("j1", c, q) == 5


def test_machine_count_floor_of_two_when_all_light():
    c = make_cluster(10)
    assert target_machine_count("j1", c, quota_for(c)) == 2


def test_machine_count_half_loaded():
    c = make_cluster(8)
    q = quota_for(c)
    load_machines(c, "j1", list(c.machines)[:4], 9 * GB)
    assert target_machine_count("j1", c, q) == 2


def test_machine_count_capped_by_light_machines():
    c = make_cluster(20)
    q = quota_for(c)
    load_machines(c, "j1", list(c.machines)[:17], 8 * GB)
    # formula gives round(3 * 17/20) = 3, cap at the 3 light machines
    assert target_machine_count("j1", c, q) == 3


@settings(max_examples=60)
@given(st.integers(2, 30), st.data())
def test_machine_count_bounds(n, data):
    c = make_cluster(n)
    q = quota_for(c)
    loaded = data.draw(st.integers(0, n))
    load_machines(c, "j1", list(c.machines)[:loaded], 8 * GB)
    m_light = n - loaded
    m_v = target_machine_count("j1", c, q)
    assert m_v >= 2
    if m_light >= 2:
        assert m_v <= m_light


# ---------------------------------------------------------------------------
# machine selection


def test_select_pure_load_balance_tie_breaks_on_id():
    c = make_cluster(3)
    cat = make_catalog()
    q = quota_for(c)
    assert select_machines(("j1", "v1"), 2, c, cat, q) == ["m0", "m1"]


def test_select_avoids_ancestor_collocation_first():
    # v2's parent stage stored bytes on m0, so m1 is the safer pick for v2;
    # m0 still qualifies once the collocation preference is exhausted.
    c = make_cluster(2)
    cat = make_catalog()
    cat.note_bytes(GranuleId("j1", "v1", 0), "m0", 1000)
    q = quota_for(c)
    assert select_machines(("j1", "v2"), 2, c, cat, q) == ["m1", "m0"]
    assert select_machines(("j1", "v2"), 1, c, cat, q) == ["m1"]


def test_select_quota_exhaustion_raises():
    c = make_cluster(3)
    cat = make_catalog()
    q = quota_for(c)
    load_machines(c, "j1", list(c.machines), int(7.5 * GB))  # exactly 75%
    with pytest.raises(NoEligibleMachines):
        select_machines(("j1", "v1"), 1, c, cat, q)


def test_select_prefers_machines_already_holding_stage_data():
    c = make_cluster(3)
    cat = make_catalog()
    q = quota_for(c)
    cat.note_bytes(GranuleId("j1", "v1", 0), "m2", 500)
    # m2 is the heaviest machine yet ranks first: locality beats balance
    c.add_stored("j1", "m2", 1000)
    assert select_machines(("j1", "v1"), 1, c, cat, q) == ["m2"]


def test_select_sibling_data_counts_as_local():
    cat = make_catalog(stages=("v1", "v2", "v3"), edges=(("v1", "v3"), ("v2", "v3")))
    c = make_cluster(3)
    q = quota_for(c)
    cat.note_bytes(GranuleId("j1", "v1", 0), "m2", 500)
    # v2 feeds the same consumer as v1, so v1's machine is local for it too
    assert select_machines(("j1", "v2"), 1, c, cat, q) == ["m2"]


def test_select_deeper_ancestor_freedom_wins():
    # chain a -> b -> c; m0 holds a's data (2 hops from c), m1 holds b's
    # (1 hop); placing c prefers the machine free of nearby ancestors longest:
    # neither is fully free, but m0's conflict is further upstream.
    cat = make_catalog(stages=("a", "b", "c"), edges=(("a", "b"), ("b", "c")))
    c = make_cluster(2)
    q = quota_for(c)
    cat.note_bytes(GranuleId("j1", "a", 0), "m0", 500)
    cat.note_bytes(GranuleId("j1", "b", 0), "m1", 500)
    assert select_machines(("j1", "c"), 2, c, cat, q) == ["m0", "m1"]


def test_select_respects_exclusions():
    c = make_cluster(3)
    cat = make_catalog()
    q = quota_for(c)
    assert select_machines(("j1", "v1"), 1, c, cat, q, exclude={"m0"}) == ["m1"]
    with pytest.raises(NoEligibleMachines):
        select_machines(("j1", "v1"), 1, c, cat, q, exclude={"m0", "m1", "m2"})


# ---------------------------------------------------------------------------
# uniform spread


def test_spread_exact_division():
    plan = spread_uniform(range(8), ["m0", "m1", "m2", "m3"])
    assert plan.counts() == {"m0": 2, "m1": 2, "m2": 2, "m3": 2}


def test_spread_remainder():
    plan = spread_uniform(range(7), ["m0", "m1", "m2"])
    assert plan.counts() == {"m0": 3, "m1": 2, "m2": 2}


def test_spread_64_over_5():
    plan = spread_uniform(range(64), [f"m{i}" for i in range(5)])
    counts = plan.counts()
    assert counts == {"m0": 13, "m1": 13, "m2": 13, "m3": 13, "m4": 12}
    assert max(counts.values()) - min(counts.values()) == 1
    # round-robin in index order: granule i sits on machine i mod 5
    for i in range(64):
        assert plan.machine_for_index(i) == f"m{i % 5}"


@settings(max_examples=60)
@given(st.integers(1, 200), st.integers(1, 12))
def test_spread_balance_property(n_granules, n_machines):
    machines = [f"m{i}" for i in range(n_machines)]
    plan = spread_uniform(range(n_granules), machines)
    counts = plan.counts()
    assert sum(counts.values()) == n_granules
    assert max(counts.values()) - min(counts.values()) <= 1


# ---------------------------------------------------------------------------
# at-risk machines and hot granules


def test_at_risk_single_offender():
    c = make_cluster(3)
    q = quota_for(c)
    c.add_stored("j1", "m2", 8 * GB)
    assert at_risk_machines("j1", c, q) == ["m2"]


def test_at_risk_threshold_is_strict():
    c = make_cluster(3)
    q = quota_for(c)
    load_machines(c, "j1", list(c.machines), int(7.49 * GB))
    assert at_risk_machines("j1", c, q) == []


def test_at_risk_sorted_by_usage():
    c = make_cluster(3)
    q = quota_for(c)
    c.add_stored("j1", "m0", int(7.6 * GB))
    c.add_stored("j1", "m1", 9 * GB)
    c.add_stored("j1", "m2", 1 * GB)
    assert at_risk_machines("j1", c, q) == ["m1", "m0"]


def granule_on(machine, idx, nbytes, rate=0.0, job="j1", stage="v1"):
    g = Granule(GranuleId(job, stage, idx), 0, 1)
    g.materializations[machine] = nbytes
    g.stats.bytes = nbytes
    g.stats.growth_rate = rate
    return g


def test_hot_granule_size_outlier():
    pool = [granule_on("m0", i, b) for i, b in enumerate([1, 1, 1, 10])]
    hot = select_hot_granules("j1", "m0", pool)
    assert [g.gid.index for g in hot] == [3]


def test_hot_granule_rate_outlier_matches_hand_oracle():
    rates = [1.0, 1.0, 8.0, 1.0]
    # hand oracle: mean 2.75, population sigma sqrt(9.1875) ~ 3.031 -> cut 5.78
    mean = sum(rates) / 4
    sigma = (sum((r - mean) ** 2 for r in rates) / 4) ** 0.5
    assert [r for r in rates if r > mean + sigma] == [8.0]
    pool = [granule_on("m0", i, 100, rate=r) for i, r in enumerate(rates)]
    hot = select_hot_granules("j1", "m0", pool)
    assert [g.gid.index for g in hot] == [2]


def test_hot_granule_uniform_falls_back_to_largest():
    pool = [granule_on("m0", i, 100) for i in range(4)]
    hot = select_hot_granules("j1", "m0", pool)
    assert [g.gid.index for g in hot] == [0]  # all equal: lowest granule id


def test_hot_granules_ignore_closed_materializations():
    pool = [granule_on("m0", i, b) for i, b in enumerate([1, 1, 1, 10])]
    pool[3].closed_at["m0"] = 1.0
    hot = select_hot_granules("j1", "m0", pool)
    assert hot and all(g.gid.index != 3 for g in hot)


# ---------------------------------------------------------------------------
# monitors


def test_monitor_greater_than():
    mon = [MonitorSpec(counter_id="big", op=">", threshold=100)]
    assert run_monitors(mon, [50, 150, 200]) == {"big": 2}


def test_monitor_empty_batch():
    mon = [MonitorSpec(counter_id="small", op="<", threshold=100)]
    assert run_monitors(mon, []) == {"small": 0}


def test_monitor_equality_against_brute_force():
    rng = np.random.default_rng(7)
    values = rng.integers(0, 1024, size=1000)
    mon = [MonitorSpec(counter_id="sevens", op="=", threshold=7)]
    got = run_monitors(mon, values)["sevens"]
    assert got == sum(1 for v in values if v == 7)


# ---------------------------------------------------------------------------
# data service: ingest, spread, pressure


def service(
    n_machines=3,
    capacity_gb=10.0,
    granules=64,
    stages=("v1", "v2"),
    edges=(("v1", "v2"),),
    records=1000,
    per_record_bytes=100,
    **cfg,
):
    config = SimConfig(
        n_machines=n_machines,
        storage_capacity_gb=capacity_gb,
        granules_per_stage=granules,
        **cfg,
    )
    cluster = ClusterState.build(n_machines, config.storage_capacity_bytes, config.compute_units)
    events = []
    svc = DataService(cluster, config, emit=lambda kind, **data: events.append((kind, data)))
    svc.register_job(
        build_job_graph(
            {
                "id": "j1",
                "stages": [
                    {
                        "id": s,
                        "compute_type": "stateless",
                        "output": {"records": records, "per_record_bytes": per_record_bytes},
                    }
                    for s in stages
                ],
                "edges": [list(e) for e in edges],
            }
        ),
        t=0.0,
    )
    return svc, events


def test_ingest_single_record():
    svc, _ = service()
    width = KEY_SPACE // 64
    res = svc.ingest_spill("j1", "v1", [3 * width + 5], 100, t=0.0)
    assert res.granule_deltas == {3: (1, 100)}
    g = svc.catalog.get(GranuleId("j1", "v1", 3))
    assert g.stats.bytes == 100 and g.stats.kv_pairs == 1
    assert g.feed("v2").pend_records == 1


def test_ingest_unknown_job_rejected():
    svc, _ = service()
    with pytest.raises(UnknownStage):
        svc.ingest_spill("zz", "v1", [0], 100, t=0.0)


def test_ingest_totals_match_counting_oracle():
    svc, _ = service()
    rng = np.random.default_rng(11)
    keys = (rng.zipf(1.2, size=10_000) - 1) % KEY_SPACE
    svc.ingest_spill("j1", "v1", keys, 100, t=0.0)

    # independent oracle: count keys per contiguous range with a histogram
    width = KEY_SPACE // 64
    expect, _ = np.histogram(keys, bins=np.arange(0, KEY_SPACE + 1, width))
    got = np.zeros(64, dtype=int)
    for gid, g in svc.catalog.granules.items():
        got[gid.index] = g.stats.kv_pairs
        assert g.stats.bytes == g.stats.kv_pairs * 100
        assert g.total_bytes == g.stats.bytes
    assert (got == expect).all()
    assert got.sum() == 10_000


def test_single_job_ample_capacity_keeps_one_machine_per_granule():
    svc, _ = service(records=5000)
    rng = np.random.default_rng(3)
    keys = rng.integers(0, KEY_SPACE, size=5000)
    for batch in np.split(keys, 10):
        svc.ingest_spill("j1", "v1", batch, 100, t=0.0)
    for g in svc.catalog.granules.values():
        assert len(g.materializations) == 1


def test_spill_past_spread_threshold_gains_second_machine():
    # expected per-granule share is 1000*100/4 = 25 kB; threshold 2x that
    svc, events = service(granules=4, records=1000, per_record_bytes=100)
    width = KEY_SPACE // 4
    keys = np.zeros(600, dtype=int)  # all in granule 0
    svc.ingest_spill("j1", "v1", keys, 100, t=0.0)  # 60 kB > 50 kB threshold
    gid = GranuleId("j1", "v1", 0)
    g = svc.catalog.get(gid)
    first = g.machines[0]
    assert g.closed_at.get(first) is not None
    assert any(kind == "granule_spread" for kind, _ in events)
    svc.ingest_spill("j1", "v1", keys[:100], 100, t=1.0)
    assert len(g.materializations) == 2


def test_quota_pressure_closes_and_buffers():
    # one tiny machine: once the job crosses its quota, everything closes and
    # later records buffer until space frees up
    svc, events = service(
        n_machines=1, capacity_gb=1e-6, granules=4, records=100, per_record_bytes=100,
        min_spread_machines=1,
    )
    q = svc.quotas.quota("j1")
    assert q == 1000
    width = KEY_SPACE // 4
    spill = [i * width for i in range(4)] * 2  # 8 records, 2 per granule
    for t in range(4):
        svc.ingest_spill("j1", "v1", spill, 100, t=float(t))
    stored = svc.cluster.stored("j1", "m0")
    assert stored <= q + 800  # quota plus at most one spill of slack
    assert sum(b for batches in svc.pending.values() for _, b, _ in batches) > 0
    assert any(kind == "granule_respread" for kind, _ in events)


def test_respread_groups_same_stage_onto_one_machine():
    svc, _ = service(n_machines=3)
    c = svc.cluster
    g0 = granule_on("m0", 0, 600)
    g1 = granule_on("m0", 1, 500)
    for g in (g0, g1):
        svc.catalog.add(g)
        svc.open_target[g.gid] = "m0"
        c.add_stored("j1", "m0", g.materializations["m0"])
        svc.catalog.note_bytes(g.gid, "m0", g.materializations["m0"])
    c.add_stored("j1", "m0", 8 * GB)  # push m0 over the pressure line
    svc.close_and_respread([g0, g1], "m0", t=1.0)
    assert g0.closed_at["m0"] == 1.0 and g1.closed_at["m0"] == 1.0
    assert svc.open_target[g0.gid] == svc.open_target[g1.gid]
    assert svc.open_target[g0.gid] in ("m1", "m2")


def test_pending_flushes_after_quota_grows():
    svc, events = service(
        n_machines=1, capacity_gb=2e-6, granules=4, records=100, per_record_bytes=100,
        min_spread_machines=1,
    )
    # second tenant halves the quota to 1000 bytes
    svc.register_job(
        build_job_graph(
            {
                "id": "j2",
                "stages": [
                    {"id": "v1", "compute_type": "stateless",
                     "output": {"records": 10, "per_record_bytes": 10}},
                ],
                "edges": [],
            }
        ),
        t=0.0,
    )
    assert svc.quotas.quota("j1") == 1000
    for t in range(4):
        svc.ingest_spill("j1", "v1", [0, KEY_SPACE // 4] * 2, 100, t=float(t))
    assert svc.pending and any(b for batches in svc.pending.values() for _, b, _ in batches)

    svc.complete_job("j2", t=5.0)  # quota back to 2000
    flushed = svc.retry_pending(t=6.0)
    assert flushed == []  # closed granules never reopen on the same machine
    svc.force_flush_stage("j1", "v1", t=7.0)
    assert not any(b for batches in svc.pending.values() for _, b, _ in batches)
    assert sum(g.total_bytes for g in svc.catalog.granules.values()) == 1600
    assert any(kind == "granule_forced_flush" for kind, _ in events)


def test_absolute_capacity_never_exceeded():
    # 1000-byte machine fed 1600 bytes: the overflow must buffer, not land,
    # and a forced flush with nowhere to go is a loud error.
    svc, _ = service(
        n_machines=1, capacity_gb=1e-6, granules=4, records=100, per_record_bytes=100,
        min_spread_machines=1,
    )
    for t in range(4):
        svc.ingest_spill("j1", "v1", [0, KEY_SPACE // 4] * 2, 100, t=float(t))
    mach = svc.cluster.machines["m0"]
    assert mach.total_stored <= mach.storage_capacity
    assert any(b for batches in svc.pending.values() for _, b, _ in batches)
    with pytest.raises(StorageExhausted):
        svc.force_flush_stage("j1", "v1", t=9.0)


def test_destroy_machine_drops_bytes_and_reports_stages():
    svc, _ = service()
    svc.ingest_spill("j1", "v1", list(range(0, KEY_SPACE, KEY_SPACE // 64)), 100, t=0.0)
    target = next(iter(svc.catalog.granules.values())).machines[0]
    lost = svc.destroy_machine(target)
    assert lost and all(k == ("j1", "v1") for k in lost)
    assert svc.cluster.stored("j1", target) == 0
    assert target not in svc.catalog.stage_machines("j1", "v1")


def test_complete_job_releases_storage():
    svc, _ = service()
    svc.ingest_spill("j1", "v1", [0, 1, 2], 100, t=0.0)
    assert any(svc.cluster.stored("j1", m) for m in svc.cluster.machines)
    svc.complete_job("j1", t=1.0)
    assert not any(svc.cluster.stored("j1", m) for m in svc.cluster.machines)


def test_catalog_rows_shape():
    svc, _ = service()
    svc.ingest_spill("j1", "v1", [0], 100, t=0.0)
    rows = svc.catalog_rows()
    assert len(rows) == 1
    row = rows[0]
    assert row["granule_id"] == "j1/v1/0"
    assert row["bytes"] == 100
    assert row["machines"][0]["closed"] is False
    assert row["stats"]["kv_pairs"] == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ingest_conserves_bytes(seed):
    svc, _ = service(granules=16)
    rng = np.random.default_rng(seed)
    keys = rng.integers(0, KEY_SPACE, size=500)
    total = 0
    for batch in np.split(keys, 5):
        res = svc.ingest_spill("j1", "v1", batch, 100, t=0.0)
        total += sum(b for _, b in res.granule_deltas.values())
    assert total == 500 * 100
    assert sum(g.total_bytes for g in svc.catalog.granules.values()) == total
    stored = sum(svc.cluster.stored("j1", m) for m in svc.cluster.machines)
    assert stored == total
