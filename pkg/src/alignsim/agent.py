"""Per-worker pipeline state machine.

A worker loads the genome index once, then runs each file through
prefetch -> convert -> align -> finalize, with disk accounting against its
provisioned volume. Stage execution is delegated to a pluggable
``StageExecutor`` so the same machine serves the simulator (virtual time),
mock-driven tests (instant, scripted) and a shell adapter (real tools).

Cleanup policy: the SRA archive and conversion scratch are deleted as soon
as conversion finishes, the FASTQ after finalize (or on any abort), so the
disk always returns to its pre-file level at a terminal outcome.
"""

from __future__ import annotations

import enum
import shlex
import subprocess
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

from .errors import PreconditionError
from .workload import FileEntry, IndexSpec, WorkloadSpec, estimate_fastq_size, storage_demand

# Stage identifiers as used by executors, stage plans and records.
STAGE_DOWNLOAD = "download"
STAGE_CONVERT = "convert"
STAGE_ALIGN = "align"
STAGE_FINALIZE = "finalize"
STAGE_INDEX_LOAD = "index_load"

PIPELINE_STAGES = (STAGE_DOWNLOAD, STAGE_CONVERT, STAGE_ALIGN, STAGE_FINALIZE)

# Terminal outcomes of one processing attempt.
OUTCOME_DONE = "done"
OUTCOME_FAILED_OOM = "failed_oom"
OUTCOME_ABANDONED = "abandoned"
OUTCOME_INTERRUPTED = "interrupted"
OUTCOME_SKIPPED_STORAGE = "skipped_storage"
OUTCOME_FAILED = "failed"

# Abort/failure reasons understood by the outcome mapping.
REASON_OOM = "oom"
REASON_LOW_QUALITY = "low_quality"
REASON_INTERRUPTED = "interrupted"
REASON_INDEX_LOAD = "IndexLoadError"


class Stage(str, enum.Enum):
    IDLE = "Idle"
    LOADING_INDEX = "LoadingIndex"
    PREFETCH = "Prefetch"
    CONVERT = "Convert"
    ALIGN = "Align"
    FINALIZE = "Finalize"
    DONE = "Done"
    FAILED = "Failed"


@dataclass
class PipelineState:
    """Mutable state of one worker's pipeline."""

    current: Stage = Stage.IDLE
    accession: str | None = None
    disk_used_gb: float = 0.0
    index_loaded: bool = False
    volume_size_gb: float | None = None
    failure_reason: str | None = None
    trace: list[str] = field(default_factory=list)

    def _enter(self, stage: Stage) -> None:
        self.current = stage
        self.trace.append(stage.value)

    def _adjust_disk(self, delta_gb: float) -> None:
        new = self.disk_used_gb + delta_gb
        if new < -1e-9:
            raise PreconditionError(f"disk accounting went negative: {new}")
        if self.volume_size_gb is not None and new > self.volume_size_gb + 1e-9:
            raise PreconditionError(
                f"disk use {new:.1f} GB exceeds provisioned volume {self.volume_size_gb:.1f} GB"
            )
        self.disk_used_gb = max(0.0, new)

    @property
    def free_disk_gb(self) -> float:
        if self.volume_size_gb is None:
            return float("inf")
        return self.volume_size_gb - self.disk_used_gb


@dataclass(frozen=True)
class StageResult:
    """What an executor did with one stage.

    ``fraction`` is the share of the stage's duration budget actually spent:
    1.0 for success, the abort point for aborts.
    """

    status: str  # "success" | "abort" | "failure"
    reason: str | None = None
    fraction: float = 1.0

    @staticmethod
    def success() -> "StageResult":
        return StageResult("success")

    @staticmethod
    def abort(fraction: float, reason: str) -> "StageResult":
        if not (0 <= fraction <= 1):
            raise ValueError(f"abort fraction must lie in [0, 1], got {fraction}")
        return StageResult("abort", reason, fraction)

    @staticmethod
    def failure(reason: str) -> "StageResult":
        return StageResult("failure", reason, 0.0)


class StageExecutor(Protocol):
    def execute(self, stage: str, accession: str, sizes: Mapping[str, float],
                duration_s: float) -> StageResult: ...


class SimulatedExecutor:
    """Executes stages in virtual time, outcomes decided by a directive function.

    The directive function maps (stage, accession) to a StageResult; the
    default runs everything to success. Deterministic for a fixed function.
    """

    def __init__(self, directives: Callable[[str, str], StageResult] | None = None):
        self._directives = directives or (lambda stage, accession: StageResult.success())

    def execute(self, stage, accession, sizes, duration_s):
        return self._directives(stage, accession)


class MockExecutor:
    """Instant executor with outcomes scripted per (accession, stage)."""

    def __init__(self, script: Mapping[tuple[str, str], StageResult] | None = None):
        self.script = dict(script or {})
        self.calls: list[tuple[str, str]] = []

    def execute(self, stage, accession, sizes, duration_s):
        self.calls.append((accession, stage))
        return self.script.get((accession, stage), StageResult.success())


class ShellExecutor:
    """Bridge to real tools: one command template per stage.

    Templates are ``str.format`` strings with ``accession``, ``workdir`` and
    ``threads`` placeholders. Exit code 0 is success, anything else failure.
    Excluded from automated tests (real tools, real data).
    """

    def __init__(self, templates: Mapping[str, str], workdir: str = ".", threads: int = 1):
        self.templates = dict(templates)
        self.workdir = workdir
        self.threads = threads

    def execute(self, stage, accession, sizes, duration_s):
        template = self.templates.get(stage)
        if template is None:
            return StageResult.success()
        command = template.format(accession=accession, workdir=self.workdir, threads=self.threads)
        proc = subprocess.run(shlex.split(command), capture_output=True)
        if proc.returncode == 0:
            return StageResult.success()
        return StageResult.failure(f"exit {proc.returncode}: {proc.stderr.decode(errors='replace')[:200]}")


@dataclass(frozen=True)
class FileRecord:
    """Outcome of one processing attempt, with per-stage virtual durations."""

    accession: str
    outcome: str
    stage_times: dict[str, float]
    peak_disk_gb: float
    failure_reason: str | None = None

    @property
    def elapsed_s(self) -> float:
        return sum(self.stage_times.values())


def load_index(
    state: PipelineState,
    index: IndexSpec,
    executor: StageExecutor,
    duration_s: float | None = None,
) -> tuple[PipelineState, float]:
    """Load the genome index into worker memory; idempotent once loaded.

    Returns the state and the elapsed virtual seconds (zero when the index
    was already resident).
    """
    if state.index_loaded:
        return state, 0.0
    if state.current is not Stage.IDLE:
        raise PreconditionError(f"cannot load index from state {state.current.value}")
    budget = index.mean_load_time_s if duration_s is None else duration_s
    state._enter(Stage.LOADING_INDEX)
    result = executor.execute(STAGE_INDEX_LOAD, index.genome_label, {"index_gb": index.size_gb}, budget)
    if result.status == "success":
        state.index_loaded = True
        state._enter(Stage.IDLE)
        return state, budget
    if result.status == "abort":
        # A reclaimed worker loses the partial load; caller re-provisions.
        state._enter(Stage.IDLE)
        return state, budget * result.fraction
    state.failure_reason = REASON_INDEX_LOAD
    state._enter(Stage.FAILED)
    return state, budget * result.fraction


def process_file(
    state: PipelineState,
    entry: FileEntry,
    workload: WorkloadSpec,
    executor: StageExecutor,
    flags=None,
    stage_durations: Mapping[str, float] | None = None,
) -> tuple[PipelineState, FileRecord]:
    """Run one accession through the pipeline.

    ``stage_durations`` carries the virtual duration budget per stage (zero
    when absent, as with instant mock executors). The file is admitted only
    if its whole peak footprint fits the free disk; otherwise it is skipped
    with an explicit record and no stage runs.
    """
    if not state.index_loaded:
        raise PreconditionError("index must be loaded before processing files")
    if state.current is not Stage.IDLE:
        raise PreconditionError(f"worker busy: state {state.current.value}")

    budgets = dict(stage_durations or {})
    durations = {stage: 0.0 for stage in PIPELINE_STAGES}
    fastq_gb = estimate_fastq_size(entry, workload)
    demand = storage_demand(entry, workload)
    sizes = {"sra_gb": entry.sra_size_gb, "fastq_gb": fastq_gb, "demand_gb": demand}
    baseline_disk = state.disk_used_gb

    if state.free_disk_gb < demand:
        record = FileRecord(entry.accession_id, OUTCOME_SKIPPED_STORAGE, durations,
                            peak_disk_gb=baseline_disk,
                            failure_reason=f"needs {demand:.1f} GB, {state.free_disk_gb:.1f} GB free")
        return state, record

    state.accession = entry.accession_id
    peak = baseline_disk
    held = 0.0

    def run_stage(stage: str, disk_before: float, disk_after: float) -> StageResult:
        nonlocal peak, held
        state._adjust_disk(disk_before)
        held += disk_before
        peak = max(peak, state.disk_used_gb)
        budget = budgets.get(stage, 0.0)
        result = executor.execute(stage, entry.accession_id, sizes, budget)
        spent = budget if result.status == "success" else budget * result.fraction
        durations[stage] = spent
        if result.status == "success":
            state._adjust_disk(disk_after)
            held += disk_after
        return result

    def bail(outcome: str, reason: str | None) -> tuple[PipelineState, FileRecord]:
        state._adjust_disk(-held)  # cleanup: everything staged for this file
        state.accession = None
        state.failure_reason = reason
        state._enter(Stage.FAILED if outcome in (OUTCOME_FAILED_OOM, OUTCOME_FAILED) else Stage.IDLE)
        if state.current is Stage.FAILED:
            state._enter(Stage.IDLE)  # worker stays usable for the next file
        record = FileRecord(entry.accession_id, outcome, durations, peak, reason)
        return state, record

    plan = [
        # (stage enum, stage key, disk on entry, disk released on success)
        (Stage.PREFETCH, STAGE_DOWNLOAD, entry.sra_size_gb, 0.0),
        (Stage.CONVERT, STAGE_CONVERT, fastq_gb * (1 + workload.temp_factor),
         -(entry.sra_size_gb + workload.temp_factor * fastq_gb)),
        (Stage.ALIGN, STAGE_ALIGN, 0.0, 0.0),
        (Stage.FINALIZE, STAGE_FINALIZE, 0.0, -fastq_gb),
    ]
    for stage_enum, stage_key, disk_in, disk_out in plan:
        if stage_enum is Stage.CONVERT and state.free_disk_gb < disk_in:
            # unreachable when admission held; guards the Convert invariant
            return bail(OUTCOME_SKIPPED_STORAGE, "insufficient storage at convert")
        state._enter(stage_enum)
        result = run_stage(stage_key, disk_in, disk_out)
        if result.status == "success":
            continue
        if result.status == "abort":
            if result.reason == REASON_OOM:
                return bail(OUTCOME_FAILED_OOM, REASON_OOM)
            if result.reason == REASON_LOW_QUALITY:
                if flags is not None and not getattr(flags, "early_termination", True):
                    raise PreconditionError("low-quality abort scripted but early termination is disabled")
                return bail(OUTCOME_ABANDONED, REASON_LOW_QUALITY)
            if result.reason == REASON_INTERRUPTED:
                return bail(OUTCOME_INTERRUPTED, REASON_INTERRUPTED)
            return bail(OUTCOME_FAILED, result.reason)
        return bail(OUTCOME_FAILED, f"{stage_key}: {result.reason}")

    state._adjust_disk(-held)  # all intermediates released by the stage plan deltas
    state.accession = None
    state.failure_reason = None
    state._enter(Stage.DONE)
    state._enter(Stage.IDLE)
    record = FileRecord(entry.accession_id, OUTCOME_DONE, durations, peak)
    return state, record
