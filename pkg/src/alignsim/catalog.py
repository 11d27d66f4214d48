"""Serverless service catalog and workload feasibility rules.

Each service is a constraint model (RAM ceiling, execution time ceiling,
storage options). ``check_feasibility`` matches a workload against one
service and returns a verdict with machine-readable reasons:

* the index must fit in RAM at all (hard failure otherwise);
* even the smallest file must finish within the execution time limit,
  index load included (hard failure otherwise);
* soft constraints (RAM headroom for the alignment working set, somewhere
  fast enough and large enough to stage the largest file, time for the
  largest file) downgrade the verdict to Conditional.

A file can be staged either on a high-IO storage option (block/ephemeral)
with enough capacity, or in leftover RAM when the working set leaves room.
Network filesystems and object storage are never high-IO suitable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .workload import WorkloadSpec, estimate_fastq_size, storage_demand

GIB_IN_GB = 1.073741824

# Baseline whole-pipeline throughput (FASTQ GB per task-hour on the reference
# VM) used for feasibility time estimates when no calibrated model is given.
DEFAULT_BASELINE_GB_PER_HOUR = 124.8


class StorageKind(str, enum.Enum):
    BLOCK = "block"
    EPHEMERAL = "ephemeral"
    NETWORK_FS = "network-fs"
    OBJECT = "object"


_HIGH_IO_KINDS = frozenset({StorageKind.BLOCK, StorageKind.EPHEMERAL})


@dataclass(frozen=True)
class StorageOption:
    """One storage attachment a service offers. ``max_capacity_gb=None`` means unbounded."""

    kind: StorageKind
    max_capacity_gb: float | None = None

    def __post_init__(self):
        if self.max_capacity_gb is not None and self.max_capacity_gb <= 0:
            raise ValueError(f"bounded storage capacity must be positive, got {self.max_capacity_gb}")

    @property
    def high_io_suitable(self) -> bool:
        return self.kind in _HIGH_IO_KINDS

    def holds(self, demand_gb: float) -> bool:
        return self.max_capacity_gb is None or self.max_capacity_gb >= demand_gb


@dataclass(frozen=True)
class ServiceSpec:
    """Constraint model of one serverless service (one catalog row)."""

    name: str
    max_task_duration_s: float | None
    max_ram_gb: float
    storage_options: tuple[StorageOption, ...]
    notes: str = ""

    def __post_init__(self):
        if self.max_ram_gb <= 0:
            raise ValueError(f"{self.name}: max_ram_gb must be positive")
        if self.max_task_duration_s is not None and self.max_task_duration_s <= 0:
            raise ValueError(f"{self.name}: bounded max_task_duration_s must be positive")
        if not self.storage_options:
            raise ValueError(f"{self.name}: malformed catalog entry, no storage options")


class Verdict(str, enum.Enum):
    FEASIBLE = "Feasible"
    CONDITIONAL = "Conditional"
    INFEASIBLE = "Infeasible"

    @property
    def rank(self) -> int:
        """Orders verdicts Feasible > Conditional > Infeasible."""
        return {Verdict.FEASIBLE: 2, Verdict.CONDITIONAL: 1, Verdict.INFEASIBLE: 0}[self]


class ReasonCode(str, enum.Enum):
    INDEX_EXCEEDS_RAM = "IndexExceedsRam"
    INSUFFICIENT_RAM_HEADROOM = "InsufficientRamHeadroom"
    NO_HIGH_IO_STORAGE = "NoHighIoStorage"
    STORAGE_TOO_SMALL = "StorageTooSmall"
    EXECUTION_TIME_LIMIT = "ExecutionTimeLimit"


@dataclass(frozen=True)
class Reason:
    code: ReasonCode
    detail: str
    hard: bool = False


@dataclass(frozen=True)
class FeasibilityReport:
    verdict: Verdict
    reasons: tuple[Reason, ...]

    def codes(self) -> set[ReasonCode]:
        return {r.code for r in self.reasons}


def check_feasibility(
    service: ServiceSpec,
    workload: WorkloadSpec,
    baseline_gb_per_hour: float = DEFAULT_BASELINE_GB_PER_HOUR,
) -> FeasibilityReport:
    """Decide whether ``workload`` can run on ``service``.

    Pure function; per-file estimates use the monotone size extremes of the
    manifest, so checking the smallest and largest entries covers every file.
    """
    if not service.storage_options:
        raise ValueError(f"{service.name}: malformed catalog entry, no storage options")
    if baseline_gb_per_hour <= 0:
        raise ValueError("baseline_gb_per_hour must be positive")

    reasons: list[Reason] = []
    index_gb = workload.index.size_gb
    ram = service.max_ram_gb

    index_fits = ram >= index_gb
    if not index_fits:
        reasons.append(Reason(
            ReasonCode.INDEX_EXCEEDS_RAM,
            f"index needs {index_gb:.1f} GB resident but the service caps RAM at {ram:.1f} GB",
            hard=True,
        ))

    working = workload.working_memory_gb
    if index_fits and ram < working:
        reasons.append(Reason(
            ReasonCode.INSUFFICIENT_RAM_HEADROOM,
            f"alignment working set needs about {working:.1f} GB but only {ram:.1f} GB is available",
        ))

    hours_per_gb = 1.0 / baseline_gb_per_hour
    load_s = workload.index.mean_load_time_s
    smallest_s = estimate_fastq_size(workload.smallest_entry(), workload) * hours_per_gb * 3600.0
    largest_s = estimate_fastq_size(workload.largest_entry(), workload) * hours_per_gb * 3600.0

    limit = service.max_task_duration_s
    if limit is not None:
        if limit < load_s + smallest_s:
            reasons.append(Reason(
                ReasonCode.EXECUTION_TIME_LIMIT,
                f"even the smallest file needs ~{load_s + smallest_s:.0f} s including index load, "
                f"over the {limit:.0f} s limit",
                hard=True,
            ))
        elif limit < largest_s:
            reasons.append(Reason(
                ReasonCode.EXECUTION_TIME_LIMIT,
                f"the largest file needs ~{largest_s:.0f} s, over the {limit:.0f} s limit",
            ))

    demand = storage_demand(workload.largest_entry(), workload)
    free_ram = ram - working
    high_io = [opt for opt in service.storage_options if opt.high_io_suitable]
    staged_in_ram = free_ram >= demand
    if not high_io:
        if not staged_in_ram:
            reasons.append(Reason(
                ReasonCode.NO_HIGH_IO_STORAGE,
                f"no block or ephemeral storage, and {demand:.1f} GB per file does not fit in free RAM",
            ))
    elif not any(opt.holds(demand) for opt in high_io) and not staged_in_ram:
        best = max((opt.max_capacity_gb for opt in high_io), key=lambda c: float("inf") if c is None else c)
        reasons.append(Reason(
            ReasonCode.STORAGE_TOO_SMALL,
            f"largest file needs {demand:.1f} GB staged but high-IO storage caps at {best:.1f} GB",
        ))

    if any(r.hard for r in reasons):
        verdict = Verdict.INFEASIBLE
    elif reasons:
        verdict = Verdict.CONDITIONAL
    else:
        verdict = Verdict.FEASIBLE
    return FeasibilityReport(verdict, tuple(reasons))
