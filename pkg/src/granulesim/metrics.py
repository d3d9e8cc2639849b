"""Metric computation over finished traces.

The walker is a pure function of the event list: it rebuilds job timings,
storage occupancy, and locality/fault-isolation fractions from the trace
alone, so a report can be (re)computed from a trace file without the
simulator state that produced it.
"""
from __future__ import annotations

from .model import FORMAT_VERSION, SimError


class IncompleteTrace(SimError):
    """The trace is missing its header, its end marker, or job completions."""


def _job_of_granule(granule_id: str) -> str:
    return granule_id.split("/", 1)[0]


def compute_metrics(events: list[dict]) -> dict:
    if not events or events[0].get("type") != "header":
        raise IncompleteTrace("trace has no header record")
    header = events[0]
    machines: list[str] = list(header["machines"])

    arrivals: dict[str, float] = {}
    finishes: dict[str, float] = {}

    # storage occupancy
    stored: dict[tuple[str, str], int] = {}        # (job, machine) -> live bytes
    concurrent: dict[str, int] = {m: 0 for m in machines}
    peak_concurrent: dict[str, int] = {m: 0 for m in machines}
    cumulative: dict[str, int] = {m: 0 for m in machines}

    def add_stored(job: str, machine: str, nbytes: int) -> None:
        stored[(job, machine)] = stored.get((job, machine), 0) + nbytes
        concurrent[machine] = concurrent.get(machine, 0) + nbytes
        if concurrent[machine] > peak_concurrent.get(machine, 0):
            peak_concurrent[machine] = concurrent[machine]
        if nbytes > 0:
            cumulative[machine] = cumulative.get(machine, 0) + nbytes

    # tasks
    launched: dict[str, dict] = {}
    finished_tasks = 0
    killed_tasks = 0
    running = 0
    timeline: list[list[float]] = []
    bytes_shuffled = 0

    # per-stage accounting, keyed "job/stage"
    stages: dict[str, dict] = {}

    def stage_rec(job: str, stage: str) -> dict:
        key = f"{job}/{stage}"
        if key not in stages:
            stages[key] = {
                "output_records": 0,
                "output_bytes": 0,
                "processed_bytes": 0,
                "ready_bytes": 0,
                "ignored_bytes": 0,
                "skipped_granules": 0,
                "task_count": 0,
                "first_launch_s": None,
                "last_finish_s": None,
            }
        return stages[key]

    summaries: dict[tuple[str, str, str], tuple[bool, bool]] = {}
    saw_end = False
    bytes_spilled = 0

    for ev in events[1:]:
        kind = ev["type"]
        t = ev.get("t", 0.0)
        if kind == "job_arrived":
            arrivals[ev["job"]] = t
        elif kind == "job_finished":
            finishes[ev["job"]] = t
            for m in machines:
                live = stored.pop((ev["job"], m), 0)
                if live:
                    add_stored(ev["job"], m, -live)
                    stored.pop((ev["job"], m), None)
        elif kind == "data_spill":
            rec = stage_rec(ev["job"], ev["stage"])
            rec["output_records"] += ev["records"]
            rec["output_bytes"] += ev["bytes"]
            bytes_spilled += ev["bytes"]
            for m, b in sorted(ev.get("per_machine", {}).items()):
                add_stored(ev["job"], m, b)
        elif kind == "granule_pending_flush":
            add_stored(_job_of_granule(ev["granule"]), ev["machine"], ev["bytes"])
        elif kind == "machine_failed":
            per_job: dict[str, int] = {}
            for js, b in ev.get("lost", {}).items():
                job = js.split("/", 1)[0]
                per_job[job] = per_job.get(job, 0) + b
            for job, b in sorted(per_job.items()):
                add_stored(job, ev["machine"], -b)
        elif kind == "stage_reexec":
            for m, b in sorted(ev.get("dropped", {}).items()):
                add_stored(ev["job"], m, -b)
        elif kind == "task_launched":
            launched[ev["task"]] = ev
            rec = stage_rec(ev["job"], ev["stage"])
            rec["task_count"] += 1
            if rec["first_launch_s"] is None or t < rec["first_launch_s"]:
                rec["first_launch_s"] = t
            bytes_shuffled += max(ev["input_bytes"] - ev["local_bytes"], 0)
            running += 1
            timeline.append([t, running])
        elif kind == "task_finished":
            finished_tasks += 1
            rec = stage_rec(ev["job"], ev["stage"])
            rec["processed_bytes"] += ev["bytes_processed"]
            if rec["last_finish_s"] is None or t > rec["last_finish_s"]:
                rec["last_finish_s"] = t
            running -= 1
            timeline.append([t, running])
        elif kind == "task_killed":
            killed_tasks += 1
            rec = stage_rec(ev["job"], ev["stage"])
            rec["processed_bytes"] += ev.get("bytes_processed", 0)
            running -= 1
            timeline.append([t, running])
        elif kind == "data_ready":
            for c, detail in sorted(ev.get("consumers", {}).items()):
                stage_rec(ev["job"], c)["ready_bytes"] += detail["bytes"]
        elif kind == "status_decision":
            if ev["decision"] == "ignore":
                rec = stage_rec(ev["job"], ev["stage"])
                rec["ignored_bytes"] += ev.get("bytes", 0)
                rec["skipped_granules"] += 1
        elif kind == "granule_summary":
            summaries[(ev["job"], ev["stage"], ev["granule"])] = (ev["dl"], ev["ft"])
        elif kind == "sim_end":
            saw_end = True

    if not saw_end:
        raise IncompleteTrace("trace has no end marker")
    unfinished = sorted(set(arrivals) - set(finishes))
    if unfinished:
        raise IncompleteTrace(f"jobs never finished: {', '.join(unfinished)}")

    jobs = {}
    per_job_summary: dict[str, list[tuple[bool, bool]]] = {}
    for (job, _stage, _g), flags in summaries.items():
        per_job_summary.setdefault(job, []).append(flags)
    for job in sorted(arrivals):
        flags = per_job_summary.get(job)
        dl_frac = ft_frac = None
        if flags:
            dl_frac = sum(1 for dl, _ in flags if dl) / len(flags)
            ft_frac = sum(1 for _, ft in flags if ft) / len(flags)
        jobs[job] = {
            "arrival_s": arrivals[job],
            "finish_s": finishes[job],
            "jct_s": finishes[job] - arrivals[job],
            "dl_granule_fraction": dl_frac,
            "ft_granule_fraction": ft_frac,
        }

    makespan = (
        max(finishes.values()) - min(arrivals.values()) if arrivals else 0.0
    )
    jcts = [j["jct_s"] for j in jobs.values()]
    mean_jct = sum(jcts) / len(jcts) if jcts else None

    dl_task_fraction = None
    if launched:
        local = sum(
            1 for ev in launched.values() if ev["local_bytes"] >= ev["input_bytes"]
        )
        dl_task_fraction = local / len(launched)

    loads = [cumulative[m] for m in machines]
    ideal = sum(loads) / len(machines) if machines else 0.0

    for rec in stages.values():
        first, last = rec["first_launch_s"], rec["last_finish_s"]
        rec["stage_time_s"] = (last - first) if first is not None and last is not None else 0.0

    return {
        "format_version": FORMAT_VERSION,
        "mode": header["mode"],
        "workload_hash": header["workload_hash"],
        "makespan_s": makespan,
        "mean_jct_s": mean_jct,
        "jobs": jobs,
        "dl_task_fraction": dl_task_fraction,
        "machine_load_bytes": {
            "min": min(loads) if loads else 0,
            "max": max(loads) if loads else 0,
            "avg": ideal,
            "ideal": ideal,
            "per_machine": {m: cumulative[m] for m in machines},
            "peak_concurrent": {m: peak_concurrent[m] for m in machines},
        },
        "bytes_shuffled": bytes_shuffled,
        "bytes_spilled": bytes_spilled,
        "tasks": {
            "launched": len(launched),
            "finished": finished_tasks,
            "killed": killed_tasks,
            "timeline": timeline,
        },
        "stages": {k: stages[k] for k in sorted(stages)},
    }
