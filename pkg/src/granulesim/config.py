"""Run configuration.

One dataclass holds every knob for both simulation modes so a run is fully
described by (workload, config): the config seeds the run, sizes the cluster,
and fixes all thresholds.  Values are deliberately plain so configs can round
trip through JSON files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .model import GB, KEY_SPACE, ConfigInvalid

MODE_DATA_DRIVEN = "data_driven"
MODE_COMPUTE_CENTRIC = "compute_centric"


@dataclass
class SimConfig:
    mode: str = MODE_DATA_DRIVEN
    seed: int = 0

    # cluster shape
    n_machines: int = 5
    storage_capacity_gb: float = 10.0
    compute_units: float = 8.0

    # datastore
    granules_per_stage: int = 64
    pressure_threshold: float = 0.75
    spread_multiplier: float = 2.0          # spread at multiplier * expected-bytes/N
    growth_half_life_s: float = 5.0
    pressure_check_period_s: float = 1.0
    min_spread_machines: int = 2            # floor on machines per stage's granules

    # execution
    retry_limit: int = 3
    retry_delay_s: float = 1.0
    max_input_per_task_gb: float | None = None
    straggler_theta: float = 0.5
    straggler_check_period_s: float = 1.0
    straggler_grace_s: float = 5.0

    # time model
    seconds_per_gb_per_unit: float = 10.0   # 1 resource unit processes 1 GB in this long
    shuffle_gb_per_s: float = 1.0
    spill_batch_records: int = 1000

    # compute-centric baseline
    cc_launch_fraction: float = 0.9
    cc_task_units: float = 1.0
    cc_streaming_interval_s: float | None = None

    # placement oracle
    ilp_weights: tuple[float, float, float | None] = (1.0, 1.0, None)

    # scripted anomalies: [{"stage": ..., "job": ..., "task_index": 0, "factor": 0.5}]
    slowdowns: list[dict] = field(default_factory=list)
    # scripted failures: [{"machine": "m0", "at_s": 12.0}]
    failures: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in (MODE_DATA_DRIVEN, MODE_COMPUTE_CENTRIC):
            raise ConfigInvalid(f"unknown mode {self.mode!r}")
        for name in ("pressure_threshold", "straggler_theta", "cc_launch_fraction"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ConfigInvalid(f"{name} must be in (0, 1], got {v}")
        if self.n_machines < 1:
            raise ConfigInvalid("need at least one machine")
        n = self.granules_per_stage
        if n < 1 or KEY_SPACE % n:
            raise ConfigInvalid(
                f"granules_per_stage must divide the key space ({KEY_SPACE}), got {n}"
            )
        if self.retry_limit < 1:
            raise ConfigInvalid("retry_limit must be >= 1")
        if self.min_spread_machines < 1:
            raise ConfigInvalid("min_spread_machines must be >= 1")
        for name in (
            "storage_capacity_gb",
            "compute_units",
            "spread_multiplier",
            "growth_half_life_s",
            "seconds_per_gb_per_unit",
            "shuffle_gb_per_s",
            "pressure_check_period_s",
            "straggler_check_period_s",
            "retry_delay_s",
        ):
            if getattr(self, name) <= 0:
                raise ConfigInvalid(f"{name} must be positive")
        if self.spill_batch_records < 1:
            raise ConfigInvalid("spill_batch_records must be >= 1")
        if self.ilp_weights[0] < 0 or self.ilp_weights[1] < 0:
            raise ConfigInvalid("ilp weights must be non-negative")

    # -- derived byte/rate helpers

    @property
    def storage_capacity_bytes(self) -> int:
        return int(self.storage_capacity_gb * GB)

    @property
    def max_input_per_task_bytes(self) -> int | None:
        if self.max_input_per_task_gb is None:
            return None
        return int(self.max_input_per_task_gb * GB)

    def bytes_per_second(self, units: float) -> float:
        """Processing throughput of ``units`` resource units."""
        return units * GB / self.seconds_per_gb_per_unit

    def shuffle_seconds(self, nbytes: float) -> float:
        return nbytes / (self.shuffle_gb_per_s * GB)

    def spread_threshold_bytes(self, expected_stage_bytes: int) -> float:
        return self.spread_multiplier * expected_stage_bytes / self.granules_per_stage

    # -- (de)serialization

    @staticmethod
    def from_dict(doc: dict) -> "SimConfig":
        known = {f.name for f in fields(SimConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "ilp_weights" in kwargs:
            w = kwargs["ilp_weights"]
            if len(w) != 3:
                raise ConfigInvalid("ilp_weights needs exactly three entries")
            kwargs["ilp_weights"] = (float(w[0]), float(w[1]), None if w[2] is None else float(w[2]))
        return SimConfig(**kwargs)

    @staticmethod
    def from_file(path: str) -> "SimConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigInvalid(f"config file {path} must hold a JSON object")
        return SimConfig.from_dict(doc)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def replace(self, **kwargs) -> "SimConfig":
        doc = self.to_dict()
        doc.update(kwargs)
        return SimConfig.from_dict(doc)
