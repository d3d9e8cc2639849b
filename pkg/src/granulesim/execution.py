"""Execution service: turns ready granules into sized, placed tasks.

Scheduling is an iterative pipeline: pack ready granules into subsets biased
toward data locality, pick each subset's preferred machine, then size every
task with a single altruistic fill factor so tasks on contended machines all
finish together.  Subsets that repeatedly fail to get resources are broken up
(conflict pairs), and granules that fail even alone are marked troublesome and
placed wherever capacity exists.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .model import Granule, GranuleId, SimError


class AllDeferred(SimError):
    pass


class NothingToSplit(SimError):
    pass


class UnknownGranule(SimError):
    pass


@dataclass
class PoolEntry:
    granule: Granule
    nbytes: int

    @property
    def gid(self) -> GranuleId:
        return self.granule.gid


@dataclass
class ReadyPool:
    """Ready-but-unscheduled granules for one consumer stage of one job."""

    job_id: str
    stage_id: str
    default_logic: str
    entries: dict[GranuleId, PoolEntry] = field(default_factory=dict)
    conflicts: set[frozenset[GranuleId]] = field(default_factory=set)
    troublesome: set[GranuleId] = field(default_factory=set)
    defer_counts: dict[GranuleId, int] = field(default_factory=dict)
    logic_overrides: dict[GranuleId, str] = field(default_factory=dict)
    skipped: int = 0

    def add(self, granule: Granule, nbytes: int) -> None:
        if nbytes <= 0:
            return
        entry = self.entries.get(granule.gid)
        if entry is None:
            self.entries[granule.gid] = PoolEntry(granule=granule, nbytes=nbytes)
        else:
            entry.nbytes += nbytes

    def remove(self, gids: Iterable[GranuleId]) -> None:
        for gid in gids:
            self.entries.pop(gid, None)
            self.defer_counts.pop(gid, None)

    def logic_of(self, gid: GranuleId) -> str:
        return self.logic_overrides.get(gid, self.default_logic)

    def conflicted(self, a: GranuleId, b: GranuleId) -> bool:
        return frozenset((a, b)) in self.conflicts


@dataclass(frozen=True)
class GranuleSubset:
    entries: tuple[PoolEntry, ...]
    troublesome: bool = False

    @property
    def total_bytes(self) -> int:
        return sum(e.nbytes for e in self.entries)

    @property
    def gids(self) -> tuple[GranuleId, ...]:
        return tuple(e.gid for e in self.entries)


@dataclass(frozen=True)
class TaskAssignment:
    task_id: str
    job_id: str
    stage_id: str
    gids: tuple[GranuleId, ...]
    machine: str
    resources: float
    input_bytes: int
    logic_id: str
    troublesome: bool = False
    attempt: int = 0


@dataclass
class ResourceView:
    """Per-job view of compute availability (units) on each machine."""

    available: dict[str, float]
    capacity: dict[str, float]

    def __post_init__(self):
        for m, a in self.available.items():
            cap = self.capacity.get(m, a)
            self.available[m] = min(max(a, 0.0), cap)


# ---------------------------------------------------------------------------
# grouping


def _entry_machines(entry: PoolEntry) -> list[str]:
    return [m for m, b in sorted(entry.granule.materializations.items()) if b > 0]


def _home_machine(entry: PoolEntry) -> str | None:
    """Machine holding the most of this granule (ties: lowest id)."""
    mats = {m: b for m, b in entry.granule.materializations.items() if b > 0}
    if not mats:
        return None
    return min(mats, key=lambda m: (-mats[m], m))


def _compatible(pool: ReadyPool, subset: list[PoolEntry], cand: PoolEntry) -> bool:
    if any(pool.conflicted(cand.gid, e.gid) for e in subset):
        return False
    return all(pool.logic_of(e.gid) == pool.logic_of(cand.gid) for e in subset)


def _pack(
    pool: ReadyPool, entries: list[PoolEntry], cap: float
) -> tuple[list[list[PoolEntry]], list[PoolEntry]]:
    """Greedy sequential packing under the byte cap and conflict rules.

    Returns (subsets of >= 2 granules, leftover singletons).  Singletons fall
    through so a later phase can combine them across machines.
    """
    groups: list[list[PoolEntry]] = []
    current: list[PoolEntry] = []
    total = 0
    for e in entries:
        if current and total + e.nbytes <= cap and _compatible(pool, current, e):
            current.append(e)
            total += e.nbytes
        else:
            if current:
                groups.append(current)
            current, total = [e], e.nbytes
    if current:
        groups.append(current)
    multi = [g for g in groups if len(g) >= 2]
    single = [g[0] for g in groups if len(g) == 1]
    return multi, single


def group_granules(
    pool: ReadyPool, max_input_bytes: int | None = None
) -> list[GranuleSubset]:
    """Pack the pool into task-sized granule subsets.

    The byte cap is twice the largest granule in the pool, optionally lowered
    by a configured per-task input limit.  Locality phases: granules living
    wholly on one machine pack together per machine; granules spread over
    several machines join the leftovers of their largest home; whatever
    remains packs across machines in granule-id order.  Troublesome granules
    bypass the cap entirely and always travel as one subset.
    """
    entries = [pool.entries[g] for g in sorted(pool.entries)]
    trouble = [e for e in entries if e.gid in pool.troublesome]
    normal = [e for e in entries if e.gid not in pool.troublesome]
    out: list[GranuleSubset] = []
    if trouble:
        out.append(GranuleSubset(entries=tuple(trouble), troublesome=True))
    if not normal:
        return out

    cap = 2.0 * max(e.nbytes for e in normal)
    if max_input_bytes is not None:
        cap = min(cap, float(max_input_bytes))

    single_home: dict[str, list[PoolEntry]] = {}
    spread: list[PoolEntry] = []
    for e in normal:
        machines = _entry_machines(e)
        if len(machines) <= 1:
            home = machines[0] if machines else ""
            single_home.setdefault(home, []).append(e)
        else:
            spread.append(e)

    leftovers: dict[str, list[PoolEntry]] = {}
    # (i) pack granules co-materialized on one machine, machine by machine
    for m in sorted(single_home):
        multi, single = _pack(pool, single_home[m], cap)
        out.extend(GranuleSubset(entries=tuple(g)) for g in multi)
        leftovers[m] = single

    # (ii) each spread granule joins the leftovers of its largest home
    for e in spread:
        home = _home_machine(e) or ""
        multi, single = _pack(pool, [e] + leftovers.get(home, []), cap)
        out.extend(GranuleSubset(entries=tuple(g)) for g in multi)
        leftovers[home] = single

    # (iii) remaining singletons pack across machines in granule-id order
    rest = sorted(
        (e for singles in leftovers.values() for e in singles), key=lambda e: e.gid
    )
    multi, single = _pack(pool, rest, cap)
    out.extend(GranuleSubset(entries=tuple(g)) for g in multi)
    out.extend(GranuleSubset(entries=(e,)) for e in single)
    return out


# ---------------------------------------------------------------------------
# machine preference


def preferred_machine(subset: GranuleSubset) -> str | None:
    """Largest-materialization machine of the subset; None for troublesome."""
    if subset.troublesome:
        return None
    totals: dict[str, int] = {}
    for e in subset.entries:
        for m, b in e.granule.materializations.items():
            if b > 0:
                totals[m] = totals.get(m, 0) + b
    if not totals:
        return None
    return min(totals, key=lambda m: (-totals[m], m))


# ---------------------------------------------------------------------------
# altruistic sizing


def altruistic_allocation(
    subsets: Sequence[GranuleSubset],
    choices: Sequence[str | None],
    view: ResourceView,
) -> tuple[list[tuple[GranuleSubset, str, float]], list[int]]:
    """Size every placeable subset with one shared fill factor.

    Unpreferenced subsets go to the machine with the most availability.
    Subsets whose machine has nothing available are deferred (returned as
    indices).  For the rest, F = min over machines of available / assigned
    bytes, and each subset gets F x its bytes — so every machine's most
    contended assignment finishes no later than anyone else's.
    """
    if len(subsets) != len(choices):
        raise ValueError("one machine choice per subset required")
    have = {m for m, a in view.available.items() if a > 0}
    if subsets and not have:
        raise AllDeferred("no machine has available resources")

    placed: list[tuple[int, str]] = []
    deferred: list[int] = []
    for idx, (subset, choice) in enumerate(zip(subsets, choices)):
        m = choice
        if m is None:
            # least-loaded machine with any availability
            m = max(sorted(have), key=lambda mm: view.available[mm]) if have else None
        if m is None or view.available.get(m, 0.0) <= 0:
            deferred.append(idx)
        else:
            placed.append((idx, m))

    if not placed:
        if subsets:
            raise AllDeferred("every subset's machine is saturated")
        return [], deferred

    per_machine_bytes: dict[str, float] = {}
    for idx, m in placed:
        per_machine_bytes[m] = per_machine_bytes.get(m, 0.0) + subsets[idx].total_bytes
    factor = min(
        view.available[m] / b for m, b in per_machine_bytes.items() if b > 0
    )
    out = []
    for idx, m in placed:
        subset = subsets[idx]
        out.append((subset, m, factor * subset.total_bytes))
    return out, deferred


# ---------------------------------------------------------------------------
# full iteration


@dataclass
class IterationResult:
    assignments: list[TaskAssignment]
    deferred: list[GranuleId]


def schedule_iteration(
    pool: ReadyPool,
    view: ResourceView,
    name_task: Callable[[], str],
    max_input_bytes: int | None = None,
    retry_limit: int = 3,
    attempt: int = 0,
) -> IterationResult:
    """One scheduling pass: group, place, size; escalate what starves.

    Deferred subsets bump their granules' defer counters.  At the retry
    limit a multi-granule subset is split (its pairings become conflicts), a
    lone granule becomes troublesome, so the next pass can place it anywhere.
    Scheduled granules leave the pool.
    """
    if not pool.entries:
        return IterationResult([], [])
    subsets = group_granules(pool, max_input_bytes)
    choices = [preferred_machine(s) for s in subsets]
    try:
        sized, deferred_idx = altruistic_allocation(subsets, choices, view)
    except AllDeferred:
        sized, deferred_idx = [], list(range(len(subsets)))

    assignments = []
    for subset, machine, resources in sized:
        assignments.append(
            TaskAssignment(
                task_id=name_task(),
                job_id=pool.job_id,
                stage_id=pool.stage_id,
                gids=subset.gids,
                machine=machine,
                resources=resources,
                input_bytes=subset.total_bytes,
                logic_id=pool.logic_of(subset.gids[0]),
                troublesome=subset.troublesome,
                attempt=attempt,
            )
        )
        pool.remove(subset.gids)

    deferred_gids: list[GranuleId] = []
    for idx in deferred_idx:
        subset = subsets[idx]
        deferred_gids.extend(subset.gids)
        for gid in subset.gids:
            pool.defer_counts[gid] = pool.defer_counts.get(gid, 0) + 1
        if max(pool.defer_counts[g] for g in subset.gids) < retry_limit:
            continue
        if subset.troublesome:
            continue  # already at the last escalation step; keep retrying
        if len(subset.gids) >= 2:
            for a in subset.gids:
                for b in subset.gids:
                    if a < b:
                        pool.conflicts.add(frozenset((a, b)))
                pool.defer_counts[a] = 0
        else:
            pool.troublesome.add(subset.gids[0])
            pool.defer_counts[subset.gids[0]] = 0
    return IterationResult(assignments=assignments, deferred=deferred_gids)


# ---------------------------------------------------------------------------
# stragglers


def detect_stragglers(rates: dict[str, float], theta: float = 0.5) -> list[str]:
    """Tasks progressing slower than theta x the mean of their peers."""
    if len(rates) < 2:
        return []
    flagged = []
    for task_id, rate in rates.items():
        peers = [r for t, r in rates.items() if t != task_id]
        if rate < theta * (sum(peers) / len(peers)):
            flagged.append(task_id)
    return sorted(flagged)


def split_straggler(
    unprocessed: Sequence[GranuleId], speed_ratio: float
) -> tuple[tuple[GranuleId, ...], tuple[GranuleId, ...]]:
    """Split a slow task's remaining granules proportional to its speed.

    The straggler keeps the granule it is currently chewing on plus enough of
    the rest to match its relative speed; everything else is handed back for
    rescheduling as a fresh task.
    """
    if len(unprocessed) <= 1:
        raise NothingToSplit("need at least two unprocessed granules")
    if not (0.0 < speed_ratio < 1.0):
        raise ValueError("speed_ratio must be in (0, 1)")
    keep = math.ceil(speed_ratio * len(unprocessed))
    keep = min(max(keep, 1), len(unprocessed) - 1)
    return tuple(unprocessed[:keep]), tuple(unprocessed[keep:])


# ---------------------------------------------------------------------------
# runtime DAG changes


def apply_status_decision(
    pool: ReadyPool,
    gid: GranuleId,
    decision: str,
    new_logic_id: str | None = None,
) -> None:
    """Apply a status-decision verdict to one pooled granule.

    ``ignore`` drops the granule from scheduling and counts it skipped;
    ``replace`` retags it (and future tasks covering it) with different
    processing logic; ``no_new_action`` leaves everything alone.
    """
    if decision == "no_new_action":
        return
    if gid not in pool.entries:
        raise UnknownGranule(f"{gid} has no pending ready announcement")
    if decision == "ignore":
        pool.entries[gid].granule.ignored = True
        pool.remove([gid])
        pool.skipped += 1
        return
    if decision == "replace":
        if not new_logic_id:
            raise ValueError("replace decision needs new_logic_id")
        pool.logic_overrides[gid] = new_logic_id
        return
    raise ValueError(f"unknown decision {decision!r}")
