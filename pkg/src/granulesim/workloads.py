"""Seeded workload generation: job DAG templates and per-stage key streams.

Every stage's output is a deterministic stream of (hashed key, byte count)
records derived purely from the workload seed and the stage's identity.  The
simulator replays the same stream the generator would produce, so anything
computed ahead of time from a workload file (partition sizes, per-granule
record counts) matches the run exactly.
"""
from __future__ import annotations

import math

import numpy as np

from .model import (
    FORMAT_VERSION,
    KEY_SPACE,
    DataModel,
    SimError,
    Workload,
    parse_workload,
    stage_stream_seed,
)

TEMPLATES = ("batch_chain", "skewed_join", "streaming", "graph_iterative")

#: Mixed into a stage's stream seed to get an independent stream for the
#: per-record monitor values.
_VALUE_STREAM_SALT = 0x9E3779B97F4A7C15


class UnknownTemplate(SimError):
    pass


# ---------------------------------------------------------------------------
# key streams


def _coprime_stride(n: int, seed: int) -> int:
    stride = (seed % n) | 1
    while math.gcd(stride, n) != 1:
        stride += 2
    return stride % n or 1


def uniform_keys(seed: int, n: int, lo: int, hi: int) -> np.ndarray:
    """Exactly-even keys over [lo, hi), emitted in a seeded interleave.

    The sorted multiset of keys is the evenest possible cover of the range
    (per-granule counts exact to one record); a coprime stride permutes the
    emission order so the range fills up everywhere at once instead of
    sweeping left to right.
    """
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    width = hi - lo
    base = lo + (np.arange(n, dtype=np.int64) * width) // n
    stride = _coprime_stride(n, seed)
    order = (np.arange(n, dtype=np.int64) * stride + seed % n) % n
    return base[order]


def zipf_keys(seed: int, n: int, lo: int, hi: int, exponent: float) -> np.ndarray:
    """Keys drawn from a bounded Zipf distribution over [lo, hi)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    width = hi - lo
    weights = np.arange(1, width + 1, dtype=np.float64) ** (-exponent)
    cum = np.cumsum(weights)
    cum /= cum[-1]
    return lo + np.searchsorted(cum, rng.random(n), side="left").astype(np.int64)


def stage_keys(workload_seed: int, job_id: str, stage_id: str, output: DataModel) -> np.ndarray:
    """The full key stream one stage emits, in emission order."""
    seed = stage_stream_seed(workload_seed, job_id, stage_id)
    if output.key_skew == 0:
        return uniform_keys(seed, output.records, output.key_lo, output.key_hi)
    return zipf_keys(seed, output.records, output.key_lo, output.key_hi, output.key_skew)


def stage_values(workload_seed: int, job_id: str, stage_id: str, n: int) -> np.ndarray:
    """Per-record monitor values in [0, 1), independent of the key stream."""
    seed = stage_stream_seed(workload_seed, job_id, stage_id) ^ _VALUE_STREAM_SALT
    return np.random.Generator(np.random.PCG64(seed)).random(n)


def granule_record_counts(
    workload_seed: int, job_id: str, stage_id: str, output: DataModel, n_granules: int
) -> np.ndarray:
    """How many of a stage's records land in each of ``n_granules`` granules."""
    keys = stage_keys(workload_seed, job_id, stage_id, output)
    width = KEY_SPACE // n_granules
    return np.bincount(keys // width, minlength=n_granules)


def partition_bytes(
    workload_seed: int, job_id: str, stage_id: str, output: DataModel, partitions: int
) -> list[int]:
    """Bytes per contiguous key-range partition (the baseline's bucketing)."""
    keys = stage_keys(workload_seed, job_id, stage_id, output)
    counts = np.bincount(keys * partitions // KEY_SPACE, minlength=partitions)
    return [int(c) * output.per_record_bytes for c in counts]


# ---------------------------------------------------------------------------
# templates


def _poisson_arrivals(rng: np.random.Generator, n_jobs: int, mean_s: float) -> list[float]:
    gaps = rng.exponential(mean_s, size=max(n_jobs - 1, 0))
    arrivals = [0.0]
    for g in gaps:
        arrivals.append(round(arrivals[-1] + float(g), 3))
    return arrivals[:n_jobs]


def _batch_chain(rng: np.random.Generator, jobs: int, records: int, mean_interarrival_s: float) -> list[dict]:
    out = []
    arrivals = _poisson_arrivals(rng, jobs, mean_interarrival_s)
    for i in range(jobs):
        skew = round(float(rng.uniform(0.2, 0.9)), 3)
        r1 = records
        r2 = (2 * records) // 3
        out.append(
            {
                "id": f"j{i + 1}",
                "arrival_time_s": arrivals[i],
                "stages": [
                    {"id": "v1", "compute_type": "stateless", "root_tasks": 2,
                     "output": {"records": r1, "per_record_bytes": 100_000, "zipf": skew}},
                    {"id": "v2", "compute_type": "stateless", "partitions": 4,
                     "output": {"records": r2, "per_record_bytes": 100_000, "zipf": skew}},
                    {"id": "v3", "compute_type": "stateful_ca", "partitions": 2,
                     "output": {"records": 1000, "per_record_bytes": 10_000}},
                ],
                "edges": [["v1", "v2"], ["v2", "v3"]],
            }
        )
    return out


def _skewed_join(records: int) -> list[dict]:
    # One producer whose keys cover only the low 62.5% of the ring; two
    # fixed consumer partitions then split 4:1 while equal-width granules
    # stay exactly even.
    hi = KEY_SPACE * 10 // 16
    return [
        {
            "id": "j1",
            "arrival_time_s": 0.0,
            "stages": [
                {"id": "v1", "compute_type": "stateless", "root_tasks": 1,
                 "output": {"records": records, "per_record_bytes": 100_000,
                            "zipf": 0.0, "key_range": [0, hi]}},
                {"id": "v2", "compute_type": "stateless", "partitions": 2,
                 "output": {"records": 1000, "per_record_bytes": 100_000}},
            ],
            "edges": [["v1", "v2"]],
        }
    ]


def _streaming(rng: np.random.Generator, jobs: int, records: int, mean_interarrival_s: float) -> list[dict]:
    out = []
    arrivals = _poisson_arrivals(rng, jobs, mean_interarrival_s)
    for i in range(jobs):
        skew = round(float(rng.uniform(0.3, 0.6)), 3)
        out.append(
            {
                "id": f"j{i + 1}",
                "arrival_time_s": arrivals[i],
                "stages": [
                    {"id": "v1", "compute_type": "stateless", "root_tasks": 1,
                     "trigger": {"kind": "default_streaming", "x": 1000},
                     "output": {"records": records, "per_record_bytes": 10_000, "zipf": skew}},
                    {"id": "v2", "compute_type": "stateless", "partitions": 2,
                     "output": {"records": 500, "per_record_bytes": 10_000}},
                ],
                "edges": [["v1", "v2"]],
            }
        )
    return out


def _graph_iterative(iters: int, records: int) -> list[dict]:
    # One iteration chain: every hop pipelines partial aggregates into a
    # commutative+associative consumer, the shape of propagate/aggregate
    # rounds over a graph.
    stages = [
        {"id": "v0", "compute_type": "stateless", "root_tasks": 2,
         "trigger": {"kind": "pipelining", "x": 500},
         "output": {"records": records, "per_record_bytes": 50_000, "zipf": 0.6}},
    ]
    edges = []
    prev = "v0"
    for k in range(1, iters + 1):
        sid = f"it{k}"
        stage = {
            "id": sid, "compute_type": "stateful_ca", "partitions": 4,
            "output": {"records": records, "per_record_bytes": 50_000, "zipf": 0.6},
        }
        if k < iters:
            stage["trigger"] = {"kind": "pipelining", "x": 500}
        stages.append(stage)
        edges.append([prev, sid])
        prev = sid
    return [{"id": "j1", "arrival_time_s": 0.0, "stages": stages, "edges": edges}]


def generate_workload(
    seed: int,
    template: str,
    *,
    jobs: int = 6,
    records: int | None = None,
    mean_interarrival_s: float = 20.0,
    iters: int = 5,
) -> dict:
    """Build one workload document; identical arguments give identical bytes."""
    rng = np.random.Generator(np.random.PCG64(seed))
    if template == "batch_chain":
        job_docs = _batch_chain(rng, jobs, records or 12_000, mean_interarrival_s)
    elif template == "skewed_join":
        job_docs = _skewed_join(records or 50_000)
    elif template == "streaming":
        job_docs = _streaming(rng, jobs, records or 20_000, mean_interarrival_s)
    elif template == "graph_iterative":
        job_docs = _graph_iterative(iters, records or 10_000)
    else:
        raise UnknownTemplate(f"unknown workload template {template!r}")
    doc = {"format_version": FORMAT_VERSION, "seed": seed, "jobs": job_docs}
    parse_workload(doc)  # templates must always emit valid workloads
    return doc


def load_workload(doc: dict) -> Workload:
    return parse_workload(doc)
