"""Exact placement optimizer used as an optimality oracle.

Small instances of the granule-placement problem are solved to optimality by
exhaustive search with branch-and-bound pruning.  The point is not speed: the
optimum gives a floor against which the online placement heuristics can be
measured.  Three costs are combined: peak per-machine storage (balance), bytes
materialized away from each granule's primary machine (spread), and placements
that stack a granule on top of its upstream stages' data (fault exposure).
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ConfigInvalid, SimError


class Infeasible(SimError):
    pass


class TooLarge(SimError):
    pass


#: Exhaustive-search envelope: machines ** granules must stay below this.
SEARCH_LIMIT = 10**7


@dataclass(frozen=True)
class IlpInstance:
    """One placement problem.

    ``b[k][i]`` is granule k's existing bytes on machine i, ``e[k]`` its
    expected remaining bytes (which the placement steers), ``quotas`` the
    per-job per-machine budget, ``i0[k]`` the machines holding upstream-stage
    data for granule k, and ``f[k]`` a flag disabling the fault penalty when
    collocation already happened upstream.
    """

    n_machines: int
    jobs: tuple[str, ...]
    b: tuple[tuple[float, ...], ...]
    e: tuple[float, ...]
    quotas: dict[str, float]
    i0: tuple[frozenset[int], ...] = ()
    f: tuple[int, ...] = ()
    weights: tuple[float, float, float | None] = (1.0, 1.0, None)

    def __post_init__(self):
        n_g = len(self.jobs)
        if self.n_machines < 1:
            raise ConfigInvalid("instance needs at least one machine")
        if len(self.b) != n_g or len(self.e) != n_g:
            raise ConfigInvalid("jobs, b, e must have one entry per granule")
        for row in self.b:
            if len(row) != self.n_machines:
                raise ConfigInvalid("each b row needs one entry per machine")
            if any(v < 0 for v in row):
                raise ConfigInvalid("existing bytes must be >= 0")
        if any(v < 0 for v in self.e):
            raise ConfigInvalid("expected bytes must be >= 0")
        if not self.i0:
            object.__setattr__(self, "i0", tuple(frozenset() for _ in range(n_g)))
        if not self.f:
            object.__setattr__(self, "f", tuple(0 for _ in range(n_g)))
        if len(self.i0) != n_g or len(self.f) != n_g:
            raise ConfigInvalid("i0 and f must have one entry per granule")
        for s in self.i0:
            if any(not (0 <= i < self.n_machines) for i in s):
                raise ConfigInvalid("i0 references an unknown machine index")
        for job in self.jobs:
            if job not in self.quotas:
                raise ConfigInvalid(f"no quota for job {job}")

    # -- derived quantities

    @property
    def n_granules(self) -> int:
        return len(self.jobs)

    def total_mass(self, k: int) -> float:
        """P: everything granule k will ever hold."""
        return self.e[k] + sum(self.b[k])

    def primary(self, k: int) -> int:
        """Machine already holding the most of granule k (ties: lowest index)."""
        row = self.b[k]
        return min(range(self.n_machines), key=lambda i: (-row[i], i))

    def shrink_set(self, k: int) -> frozenset[int]:
        """Machines that stay non-primary even after e lands on them."""
        row = self.b[k]
        cut = row[self.primary(k)] - self.e[k]
        return frozenset(i for i in range(self.n_machines) if row[i] <= cut)

    def resolved_weights(self) -> tuple[float, float, float]:
        w1, w2, w3 = self.weights
        if w3 is None:
            w3 = max((self.total_mass(k) for k in range(self.n_granules)), default=1.0)
        return (w1, w2, w3)

    # -- serialization

    @staticmethod
    def from_json(doc: dict) -> "IlpInstance":
        granules = doc.get("granules", [])
        weights = doc.get("weights", [1.0, 1.0, None])
        if len(weights) != 3:
            raise ConfigInvalid("weights needs exactly three entries")
        return IlpInstance(
            n_machines=int(doc["machines"]),
            jobs=tuple(str(g["job"]) for g in granules),
            b=tuple(tuple(float(v) for v in g["b"]) for g in granules),
            e=tuple(float(g["e"]) for g in granules),
            quotas={str(j): float(q) for j, q in doc.get("quotas", {}).items()},
            i0=tuple(frozenset(int(i) for i in s) for s in doc.get("i0", [])),
            f=tuple(int(v) for v in doc.get("f", [])),
            weights=(
                float(weights[0]),
                float(weights[1]),
                None if weights[2] is None else float(weights[2]),
            ),
        )

    def to_json(self) -> dict:
        return {
            "machines": self.n_machines,
            "granules": [
                {"job": self.jobs[k], "b": list(self.b[k]), "e": self.e[k]}
                for k in range(self.n_granules)
            ],
            "quotas": dict(sorted(self.quotas.items())),
            "i0": [sorted(s) for s in self.i0],
            "f": list(self.f),
            "weights": list(self.weights),
        }


@dataclass(frozen=True)
class Placement:
    """Chosen machine per granule (every granule gets exactly one)."""

    x: tuple[int, ...]

    def machine_of(self, k: int) -> int:
        return self.x[k]


# ---------------------------------------------------------------------------
# objectives


def objective_o1(inst: IlpInstance, placement: Placement) -> float:
    """Peak stored bytes across machines after expected bytes land."""
    loads = [0.0] * inst.n_machines
    for k in range(inst.n_granules):
        for i in range(inst.n_machines):
            loads[i] += inst.b[k][i]
        loads[placement.x[k]] += inst.e[k]
    return max(loads) if loads else 0.0


def objective_o2(inst: IlpInstance, placement: Placement) -> float:
    """Bytes left outside each granule's primary location.

    Placing future bytes on a machine that overtakes the current leader makes
    that machine primary (penalty: everything else); placing them on a machine
    that stays small leaves the current leader primary (penalty: everything
    but the leader's bytes).
    """
    total = 0.0
    for k in range(inst.n_granules):
        chosen = placement.x[k]
        if chosen in inst.shrink_set(k):
            primary_mass = inst.b[k][inst.primary(k)]
        else:
            primary_mass = inst.b[k][chosen] + inst.e[k]
        total += inst.total_mass(k) - primary_mass
    return total


def objective_o3(inst: IlpInstance, placement: Placement) -> float:
    """Count of granules stacked onto their upstream stages' machines."""
    return float(
        sum(
            (1 - inst.f[k]) * (1 if placement.x[k] in inst.i0[k] else 0)
            for k in range(inst.n_granules)
        )
    )


def weighted_objective(inst: IlpInstance, placement: Placement) -> float:
    w1, w2, w3 = inst.resolved_weights()
    return (
        w1 * objective_o1(inst, placement)
        + w2 * objective_o2(inst, placement)
        + w3 * objective_o3(inst, placement)
    )


def feasible(inst: IlpInstance, placement: Placement) -> bool:
    """Quota check: no job may exceed its budget on any machine."""
    loads: dict[tuple[str, int], float] = {}
    for k in range(inst.n_granules):
        job = inst.jobs[k]
        for i in range(inst.n_machines):
            loads[(job, i)] = loads.get((job, i), 0.0) + inst.b[k][i]
        key = (job, placement.x[k])
        loads[key] = loads.get(key, 0.0) + inst.e[k]
    return all(v <= inst.quotas[j] for (j, _i), v in loads.items())


# ---------------------------------------------------------------------------
# exact solver


def solve_exact(inst: IlpInstance) -> tuple[Placement, float]:
    """Optimal feasible placement by pruned exhaustive search.

    Depth-first over granules, machines tried in ascending index order, so the
    first optimum found is the lexicographically smallest; later candidates
    replace it only on strict improvement.  The prune bound uses the fact that
    peak load never decreases as granules are placed and the other two costs
    are non-negative.
    """
    m, g = inst.n_machines, inst.n_granules
    if m**g > SEARCH_LIMIT:
        raise TooLarge(f"{m} machines ** {g} granules exceeds {SEARCH_LIMIT}")
    w1, w2, w3 = inst.resolved_weights()

    # static byte load per machine, total and per job (placement-independent)
    base = [0.0] * m
    job_base: dict[str, list[float]] = {}
    for k in range(g):
        rows = job_base.setdefault(inst.jobs[k], [0.0] * m)
        for i in range(m):
            base[i] += inst.b[k][i]
            rows[i] += inst.b[k][i]
    for job, rows in sorted(job_base.items()):
        for i in range(m):
            if rows[i] > inst.quotas[job]:
                raise Infeasible(
                    f"job {job} already exceeds its quota on machine {i}"
                )

    shrink = [inst.shrink_set(k) for k in range(g)]
    primary_bytes = [inst.b[k][inst.primary(k)] for k in range(g)]
    mass = [inst.total_mass(k) for k in range(g)]

    best_value = float("inf")
    best: tuple[int, ...] | None = None
    x = [0] * g
    loads = list(base)
    job_loads = {job: list(rows) for job, rows in job_base.items()}

    def penalty(k: int, i: int) -> float:
        if i in shrink[k]:
            pm = primary_bytes[k]
        else:
            pm = inst.b[k][i] + inst.e[k]
        o2 = mass[k] - pm
        o3 = (1 - inst.f[k]) * (1 if i in inst.i0[k] else 0)
        return w2 * o2 + w3 * o3

    def dfs(k: int, committed: float) -> None:
        nonlocal best_value, best
        if w1 * max(loads, default=0.0) + committed >= best_value:
            return
        if k == g:
            value = w1 * max(loads, default=0.0) + committed
            if value < best_value:
                best_value = value
                best = tuple(x)
            return
        job = inst.jobs[k]
        for i in range(m):
            if job_loads[job][i] + inst.e[k] > inst.quotas[job]:
                continue
            x[k] = i
            loads[i] += inst.e[k]
            job_loads[job][i] += inst.e[k]
            dfs(k + 1, committed + penalty(k, i))
            loads[i] -= inst.e[k]
            job_loads[job][i] -= inst.e[k]

    dfs(0, 0.0)
    if best is None:
        raise Infeasible("no placement satisfies the quota constraint")
    return Placement(x=best), best_value


# ---------------------------------------------------------------------------
# heuristic analog (for optimality-gap reporting)


def heuristic_placement(inst: IlpInstance) -> Placement:
    """Place granules the way the online datastore heuristics would.

    Per job: count quota-light machines, derive a target machine count, rank
    machines by locality (holds the job's bytes), fault exposure (outside the
    granules' upstream sets), then load; round-robin the job's granules over
    the chosen machines, skipping machines the quota rules out.
    """
    m = inst.n_machines
    job_loads: dict[str, list[float]] = {}
    loads = [0.0] * m
    for k in range(inst.n_granules):
        rows = job_loads.setdefault(inst.jobs[k], [0.0] * m)
        for i in range(m):
            rows[i] += inst.b[k][i]
            loads[i] += inst.b[k][i]

    x = [0] * inst.n_granules
    for job in sorted(set(inst.jobs)):
        ks = [k for k in range(inst.n_granules) if inst.jobs[k] == job]
        q = inst.quotas[job]
        rows = job_loads[job]
        light = [i for i in range(m) if rows[i] < 0.75 * q]
        n_light = len(light)
        m_v = max(2, int(np.floor(n_light * (m - n_light) / m + 0.5)))
        if n_light >= 2:
            m_v = min(m_v, n_light)
        m_v = min(m_v, m)
        has_job_bytes = {
            i for i in range(m) if any(inst.b[k][i] > 0 for k in ks)
        }
        upstream = frozenset().union(*(inst.i0[k] for k in ks)) if ks else frozenset()
        pool = light or list(range(m))
        ranked = sorted(
            pool,
            key=lambda i: (
                0 if i in has_job_bytes else 1,
                0 if i not in upstream else 1,
                loads[i],
                i,
            ),
        )[:m_v]
        for pos, k in enumerate(ks):
            choice = None
            for step in range(len(ranked)):
                i = ranked[(pos + step) % len(ranked)]
                if rows[i] + inst.e[k] <= q:
                    choice = i
                    break
            if choice is None:
                choice = min(range(m), key=lambda i: (rows[i] + inst.e[k], i))
            x[k] = choice
            rows[choice] += inst.e[k]
            loads[choice] += inst.e[k]
    return Placement(x=tuple(x))


# ---------------------------------------------------------------------------
# instance generation


def random_instance(
    seed: int,
    n_machines: int = 3,
    n_granules: int = 4,
    n_jobs: int = 2,
    quota: float = 40.0,
    uniform_e: bool = False,
) -> IlpInstance:
    """Deterministic random instance for gap studies and property tests."""
    rng = np.random.default_rng(seed)
    jobs = tuple(f"j{int(rng.integers(0, n_jobs))}" for _ in range(n_granules))
    b = tuple(
        tuple(float(v) for v in rng.integers(0, 6, size=n_machines))
        for _ in range(n_granules)
    )
    if uniform_e:
        e = tuple([float(rng.integers(1, 6))] * n_granules)
    else:
        e = tuple(float(v) for v in rng.integers(0, 8, size=n_granules))
    i0 = tuple(
        frozenset(
            int(i)
            for i in rng.choice(n_machines, size=int(rng.integers(0, n_machines)), replace=False)
        )
        for _ in range(n_granules)
    )
    f = tuple(int(v) for v in rng.integers(0, 2, size=n_granules))
    quotas = {f"j{j}": quota for j in range(n_jobs)}
    return IlpInstance(
        n_machines=n_machines, jobs=jobs, b=b, e=e, quotas=quotas, i0=i0, f=f
    )


def random_placement(inst: IlpInstance, rng: np.random.Generator) -> Placement:
    return Placement(
        x=tuple(int(i) for i in rng.integers(0, inst.n_machines, size=inst.n_granules))
    )


def load_instance(path: str) -> IlpInstance:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"instance file {path} is not valid JSON: {exc}") from exc
    return IlpInstance.from_json(doc)
