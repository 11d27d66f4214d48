"""Seeded discrete-event simulation of a full alignment campaign.

Workers provision, load the index, then drain a shared largest-first queue.
Per-file time is rate-based: ``fastq_gb * speed_factor * (1/align_rate +
1/other_rate)``, decomposed into download/convert/align/finalize stages.
Failure events (OOM kills, spot reclaims, early termination of low-quality
files) are resolved analytically when an attempt starts, so each activity
contributes exactly one event to the queue.

Randomness comes from labeled substreams keyed positionally by
``(seed, file, accession, attempt)`` and ``(seed, worker, id, incarnation)``:
outcomes are a function of position, never of draw order, so inserting
events or resuming a campaign cannot perturb unrelated draws.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from . import agent
from .agent import (
    OUTCOME_ABANDONED,
    OUTCOME_DONE,
    OUTCOME_FAILED_OOM,
    OUTCOME_INTERRUPTED,
    PIPELINE_STAGES,
    STAGE_ALIGN,
    STAGE_CONVERT,
    STAGE_DOWNLOAD,
    STAGE_FINALIZE,
    STAGE_INDEX_LOAD,
    PipelineState,
    SimulatedExecutor,
    StageResult,
)
from .costmodel import Backend, CostBreakdown, PricingTable, ResourceShape, campaign_cost
from .errors import CalibrationError, SimulationError
from .workload import WorkloadSpec, estimate_fastq_size, storage_demand

RESULT_SCHEMA = "alignsim/simresult-v1"

# How "other" (non-align) per-file time splits across its stages. Finalize
# is a bookkeeping stage (cleanup, result handoff) whose time is folded into
# convert, so an aborted align costs exactly its align remainder.
OTHER_STAGE_SPLIT = {STAGE_DOWNLOAD: 0.5, STAGE_CONVERT: 0.5, STAGE_FINALIZE: 0.0}

TERMINAL_OUTCOMES = (OUTCOME_DONE, OUTCOME_FAILED_OOM, OUTCOME_ABANDONED)


@dataclass(frozen=True)
class BackendProfile:
    """Execution characteristics of a compute backend.

    ``speed_factor`` multiplies every stage duration relative to the VM
    baseline (1.0); ``stage_speed_factors`` overrides it per stage.
    Interruptions only exist on the spot backend.
    """

    kind: Backend
    speed_factor: float = 1.0
    provision_delay_s: float = 0.0
    interruption_rate_per_hour: float = 0.0
    reclaim_notice_s: float = 0.0
    stage_speed_factors: Mapping[str, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Backend(self.kind))
        if self.speed_factor <= 0:
            raise ValueError("speed_factor must be positive")
        if self.provision_delay_s < 0 or self.reclaim_notice_s < 0:
            raise ValueError("delays must be nonnegative")
        if self.interruption_rate_per_hour < 0:
            raise ValueError("interruption rate must be nonnegative")
        if self.interruption_rate_per_hour > 0 and self.kind is not Backend.SERVERLESS_SPOT:
            raise ValueError("interruption rate applies to the serverless-spot backend only")
        if self.stage_speed_factors:
            bad = [s for s, f in self.stage_speed_factors.items() if f <= 0]
            if bad:
                raise ValueError(f"stage speed factors must be positive: {bad}")

    def stage_factor(self, stage: str) -> float:
        if self.stage_speed_factors:
            return self.stage_speed_factors.get(stage, self.speed_factor)
        return self.speed_factor


@dataclass(frozen=True)
class FailureModel:
    """Per-file OOM probability by worker RAM, plus the retry policy.

    ``max_attempts`` bounds OOM-driven retries; spot interruptions requeue
    regardless (attempt counts keep growing and are reported as observed).
    """

    oom_probability_by_ram: Mapping[float, float]
    retry_on_oom: bool = False
    max_attempts: int = 3

    def __post_init__(self):
        if not self.oom_probability_by_ram:
            raise ValueError("oom_probability_by_ram must be nonempty")
        normalized = {float(k): float(v) for k, v in self.oom_probability_by_ram.items()}
        if any(not (0 <= p <= 1) for p in normalized.values()):
            raise ValueError("OOM probabilities must lie in [0, 1]")
        object.__setattr__(self, "oom_probability_by_ram", normalized)
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")

    def probability_for(self, ram_gb: float) -> float:
        try:
            return self.oom_probability_by_ram[float(ram_gb)]
        except KeyError:
            raise SimulationError(
                f"no OOM probability configured for {ram_gb} GB RAM; "
                f"configured tiers: {sorted(self.oom_probability_by_ram)}"
            ) from None

    def next_ram_tier(self, ram_gb: float) -> float:
        """RAM escalation ladder for OOM retries: the next configured tier up."""
        higher = [k for k in self.oom_probability_by_ram if k > float(ram_gb)]
        return min(higher) if higher else float(ram_gb)


@dataclass(frozen=True)
class OptimizationFlags:
    """Early-termination controls.

    A low-quality file's align stage runs only to ``checkpoint_fraction`` of
    its full duration before it is abandoned. Defaults are picked so the
    expected alignment-time saving is 0.34 * (1 - 0.33), about 23%.
    """

    early_termination: bool = False
    low_quality_fraction: float = 0.34
    checkpoint_fraction: float = 0.33

    def __post_init__(self):
        if not (0 < self.checkpoint_fraction < 1):
            raise ValueError("checkpoint_fraction must lie in (0, 1)")
        if not (0 <= self.low_quality_fraction <= 1):
            raise ValueError("low_quality_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class ThroughputModel:
    """Stage rates at the VM baseline, in FASTQ GB per task-hour."""

    align_gb_per_hour: float
    other_gb_per_hour: float

    def __post_init__(self):
        if self.align_gb_per_hour <= 0 or self.other_gb_per_hour <= 0:
            raise ValueError("throughput rates must be positive")


@dataclass(frozen=True)
class CampaignConfig:
    workload: WorkloadSpec
    backend: BackendProfile
    failure: FailureModel
    optimization: OptimizationFlags
    throughput: ThroughputModel
    worker_count: int
    shape: ResourceShape
    pricing: PricingTable
    seed: int
    campaign_id: str = "campaign"

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.backend.kind is Backend.VM and self.shape.instance_type is None:
            raise ValueError("VM campaigns need shape.instance_type for pricing")
        # fail fast if the configured RAM has no failure probability
        self.failure.probability_for(self.shape.ram_gb)


@dataclass(frozen=True)
class FileResult:
    accession: str
    worker: int
    attempts: int
    stage_times: dict[str, float]
    outcome: str
    peak_disk_gb: float

    def as_dict(self) -> dict:
        return {
            "accession": self.accession,
            "worker": self.worker,
            "attempts": self.attempts,
            "stage_times": {f"{k}_s": v for k, v in self.stage_times.items()},
            "outcome": self.outcome,
            "peak_disk_gb": self.peak_disk_gb,
        }


@dataclass(frozen=True)
class SimResult:
    makespan_s: float
    aggregate_task_hours: float
    per_file: tuple[FileResult, ...]
    index_loads: int
    interruptions: int
    cost: CostBreakdown
    seed: int
    worker_count: int
    worker_busy_hours: tuple[float, ...]

    def outcome_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for fr in self.per_file:
            counts[fr.outcome] = counts.get(fr.outcome, 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "schema": RESULT_SCHEMA,
            "seed": self.seed,
            "worker_count": self.worker_count,
            "makespan_s": self.makespan_s,
            "aggregate_task_hours": self.aggregate_task_hours,
            "index_loads": self.index_loads,
            "interruptions": self.interruptions,
            "worker_busy_hours": list(self.worker_busy_hours),
            "cost": self.cost.as_dict(),
            "per_file": [fr.as_dict() for fr in self.per_file],
        }


def stream(seed: int, *parts) -> random.Random:
    """A labeled, portable PRNG substream (Mersenne Twister seeded by label)."""
    return random.Random("|".join(str(p) for p in (seed, *parts)))


@dataclass(frozen=True)
class AttemptFate:
    low_quality: bool
    oom: bool
    oom_point: float  # fraction of the align stage at which an OOM would strike


def resolve_fate(seed: int, accession: str, attempt: int, oom_probability: float,
                 low_quality_fraction: float) -> AttemptFate:
    """Draw the random fate of one attempt from positional substreams.

    Quality is a per-file property (stable across attempts); the OOM roll and
    its strike point are per-attempt. Draw order is fixed so enabling or
    disabling features never shifts other draws.
    """
    quality_rng = stream(seed, "file", accession, "quality")
    low_quality = quality_rng.random() < low_quality_fraction
    attempt_rng = stream(seed, "file", accession, "attempt", attempt)
    oom = attempt_rng.random() < oom_probability
    oom_point = attempt_rng.random()
    return AttemptFate(low_quality, oom, oom_point)


def stage_plan(entry, workload: WorkloadSpec, throughput: ThroughputModel,
               backend: BackendProfile) -> dict[str, float]:
    """Full-duration budget per pipeline stage for one file, in seconds."""
    fastq = estimate_fastq_size(entry, workload)
    align_base = fastq / throughput.align_gb_per_hour * 3600.0
    other_base = fastq / throughput.other_gb_per_hour * 3600.0
    return {
        STAGE_DOWNLOAD: other_base * OTHER_STAGE_SPLIT[STAGE_DOWNLOAD] * backend.stage_factor(STAGE_DOWNLOAD),
        STAGE_CONVERT: other_base * OTHER_STAGE_SPLIT[STAGE_CONVERT] * backend.stage_factor(STAGE_CONVERT),
        STAGE_ALIGN: align_base * backend.stage_factor(STAGE_ALIGN),
        STAGE_FINALIZE: other_base * OTHER_STAGE_SPLIT[STAGE_FINALIZE] * backend.stage_factor(STAGE_FINALIZE),
    }


def calibrate_throughput(
    workload: WorkloadSpec,
    reference_task_hours: float,
    reference_backend: BackendProfile,
    worker_count: int,
) -> ThroughputModel:
    """Fit stage rates so the reference campaign reproduces its task-hours.

    The index-load overhead of the reference run (one load per worker) is
    subtracted before converting the remaining work into per-GB rates, split
    so alignment consumes ``align_fraction`` of per-file time.
    """
    if reference_task_hours <= 0:
        raise ValueError("reference_task_hours must be positive")
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    load_h = workload.index.mean_load_time_s * reference_backend.stage_factor(STAGE_INDEX_LOAD) / 3600.0
    work_h = reference_task_hours - worker_count * load_h
    if work_h <= 0:
        raise CalibrationError(
            f"reference hours {reference_task_hours} do not exceed the "
            f"index-load overhead of {worker_count * load_h:.2f} h"
        )
    per_gb_h = work_h / workload.total_fastq_gb / reference_backend.speed_factor
    frac = workload.align_fraction
    return ThroughputModel(
        align_gb_per_hour=1.0 / (frac * per_gb_h),
        other_gb_per_hour=1.0 / ((1.0 - frac) * per_gb_h),
    )


def attempt_timeline(plan: Mapping[str, float], fate: AttemptFate,
                     flags: OptimizationFlags) -> tuple[str, dict[str, float]]:
    """Natural (uninterrupted) outcome and stage durations of one attempt."""
    low_quality = flags.early_termination and fate.low_quality
    durations = {STAGE_DOWNLOAD: plan[STAGE_DOWNLOAD], STAGE_CONVERT: plan[STAGE_CONVERT],
                 STAGE_ALIGN: 0.0, STAGE_FINALIZE: 0.0}
    if fate.oom and (not low_quality or fate.oom_point < flags.checkpoint_fraction):
        durations[STAGE_ALIGN] = plan[STAGE_ALIGN] * fate.oom_point
        return OUTCOME_FAILED_OOM, durations
    if low_quality:
        durations[STAGE_ALIGN] = plan[STAGE_ALIGN] * flags.checkpoint_fraction
        return OUTCOME_ABANDONED, durations
    durations[STAGE_ALIGN] = plan[STAGE_ALIGN]
    durations[STAGE_FINALIZE] = plan[STAGE_FINALIZE]
    return OUTCOME_DONE, durations


def attempt_directives(plan: Mapping[str, float], fate: AttemptFate, flags: OptimizationFlags,
                       cut_after_s: float | None) -> dict[str, StageResult]:
    """Executor directives realizing the attempt's fate, optionally cut short.

    ``cut_after_s`` (seconds into the attempt) models a spot reclaim: the
    stage containing the cut aborts there with reason ``interrupted``.
    """
    outcome, durations = attempt_timeline(plan, fate, flags)
    directives: dict[str, StageResult] = {}
    if outcome == OUTCOME_FAILED_OOM:
        directives[STAGE_ALIGN] = StageResult.abort(fate.oom_point, agent.REASON_OOM)
    elif outcome == OUTCOME_ABANDONED:
        directives[STAGE_ALIGN] = StageResult.abort(flags.checkpoint_fraction, agent.REASON_LOW_QUALITY)

    if cut_after_s is not None:
        elapsed = 0.0
        for stage in PIPELINE_STAGES:
            dur = durations[stage]
            if cut_after_s < elapsed + dur:
                budget = plan[stage]
                fraction = (cut_after_s - elapsed) / budget if budget > 0 else 0.0
                directives[stage] = StageResult.abort(min(max(fraction, 0.0), 1.0), agent.REASON_INTERRUPTED)
                break
            elapsed += dur
        else:
            raise SimulationError("interruption cut beyond the attempt's natural end")
    return directives


@dataclass
class _Worker:
    wid: int
    incarnation: int = 0
    busy_s: float = 0.0
    loaded: bool = False
    idle: bool = False
    gone: bool = False
    reclaim_at: float = math.inf
    load_draw: float = 0.0
    state: PipelineState = field(default_factory=PipelineState)


class _FileTally:
    __slots__ = ("attempts", "worker", "stage_times", "peak_disk_gb")

    def __init__(self):
        self.attempts = 0
        self.worker = -1
        self.stage_times = {stage: 0.0 for stage in PIPELINE_STAGES}
        self.peak_disk_gb = 0.0


def simulate_campaign(config: CampaignConfig) -> SimResult:
    """Run one campaign in virtual time; bit-reproducible for a given config."""
    wl = config.workload
    backend = config.backend
    flags = config.optimization
    manifest = {e.accession_id: e for e in wl.manifest}
    plans = {acc: stage_plan(e, wl, config.throughput, backend) for acc, e in manifest.items()}

    volume = config.shape.volume
    if volume is not None:
        worst = max(storage_demand(e, wl) for e in wl.manifest)
        if worst > volume.size_gb:
            raise SimulationError(
                f"workload cannot run on this shape: peak per-file footprint "
                f"{worst:.1f} GB exceeds the {volume.size_gb:.1f} GB volume"
            )

    n_files = len(manifest)
    n_workers = min(config.worker_count, n_files)
    workers = [_Worker(wid) for wid in range(n_workers)]

    pending: list[tuple[float, str]] = [(-e.sra_size_gb, acc) for acc, e in manifest.items()]
    heapq.heapify(pending)

    events: list[tuple[float, int, int, str, tuple]] = []
    seq = 0

    def push(t: float, wid: int, kind: str, payload: tuple = ()):
        nonlocal seq
        heapq.heappush(events, (t, wid, seq, kind, payload))
        seq += 1

    tallies = {acc: _FileTally() for acc in manifest}
    outcomes: dict[str, str] = {}
    ram_tier = {acc: float(config.shape.ram_gb) for acc in manifest}
    index_loads = 0
    interruptions = 0
    last_terminal_t = 0.0
    spot = backend.kind is Backend.SERVERLESS_SPOT and backend.interruption_rate_per_hour > 0

    def provision(w: _Worker, t: float):
        w.incarnation += 1
        w.loaded = False
        w.idle = False
        w.state = PipelineState(volume_size_gb=volume.size_gb if volume else None)
        rng = stream(config.seed, "worker", w.wid, "inc", w.incarnation)
        w.load_draw = rng.random()
        ready = t + backend.provision_delay_s
        if spot:
            w.reclaim_at = ready + rng.expovariate(backend.interruption_rate_per_hour) * 3600.0
        else:
            w.reclaim_at = math.inf
        push(ready, w.wid, "provisioned")

    def start_load(w: _Worker, t: float):
        nonlocal index_loads
        index_loads += 1
        lo, hi = wl.index.load_time_s
        duration = (lo + (hi - lo) * w.load_draw) * backend.stage_factor(STAGE_INDEX_LOAD)
        if w.reclaim_at < t + duration:
            push(w.reclaim_at, w.wid, "load_interrupted", (w.reclaim_at - t,))
        else:
            push(t + duration, w.wid, "load_done", (duration,))

    def lease_or_idle(w: _Worker, t: float):
        if pending:
            _, acc = heapq.heappop(pending)
            start_attempt(w, acc, t)
        else:
            w.idle = True

    def wake_idle(t: float):
        for w in workers:
            if not pending:
                return
            if not w.idle or w.gone:
                continue
            if w.reclaim_at <= t:
                # reclaimed while idle: no activity aborted, worker just leaves
                w.idle = False
                w.gone = True
                w.loaded = False
                continue
            w.idle = False
            _, acc = heapq.heappop(pending)
            start_attempt(w, acc, t)

    def start_attempt(w: _Worker, acc: str, t: float):
        tally = tallies[acc]
        tally.attempts += 1
        attempt = tally.attempts
        fate = resolve_fate(config.seed, acc, attempt,
                            config.failure.probability_for(ram_tier[acc]),
                            flags.low_quality_fraction)
        plan = plans[acc]
        _, natural = attempt_timeline(plan, fate, flags)
        natural_end = t + sum(natural.values())
        cut = None
        salvaged = False
        if w.reclaim_at < natural_end:
            if natural_end - w.reclaim_at <= backend.reclaim_notice_s:
                salvaged = True  # short enough to finish within the reclaim notice
            else:
                cut = w.reclaim_at - t
        directives = attempt_directives(plan, fate, flags, cut)
        executor = SimulatedExecutor(lambda stage, _a, d=directives: d.get(stage, StageResult.success()))
        _, record = agent.process_file(w.state, manifest[acc], wl, executor, flags,
                                       stage_durations=plan)
        if record.outcome == agent.OUTCOME_SKIPPED_STORAGE:
            raise SimulationError(f"{acc}: {record.failure_reason}")
        push(t + record.elapsed_s, w.wid, "attempt_done", (acc, record, salvaged))

    def commit_attempt(w: _Worker, t: float, acc: str, record, salvaged: bool):
        nonlocal interruptions, last_terminal_t
        w.busy_s += record.elapsed_s
        tally = tallies[acc]
        tally.worker = w.wid
        for stage, spent in record.stage_times.items():
            tally.stage_times[stage] += spent
        tally.peak_disk_gb = max(tally.peak_disk_gb, record.peak_disk_gb)

        if record.outcome == OUTCOME_INTERRUPTED:
            interruptions += 1
            heapq.heappush(pending, (-manifest[acc].sra_size_gb, acc))
            provision(w, t)
            wake_idle(t)
            return

        retryable = (
            record.outcome == OUTCOME_FAILED_OOM
            and config.failure.retry_on_oom
            and tally.attempts < config.failure.max_attempts
        )
        if retryable:
            ram_tier[acc] = config.failure.next_ram_tier(ram_tier[acc])
            heapq.heappush(pending, (-manifest[acc].sra_size_gb, acc))
        else:
            outcomes[acc] = record.outcome
            last_terminal_t = t
        if salvaged:
            interruptions += 1
            provision(w, t)
            wake_idle(t)
        else:
            lease_or_idle(w, t)
            if retryable:
                wake_idle(t)

    for w in workers:
        provision(w, 0.0)

    while len(outcomes) < n_files:
        if not events:
            raise SimulationError("simulation deadlocked with files still pending")
        t, wid, _, kind, payload = heapq.heappop(events)
        w = workers[wid]
        if kind == "provisioned":
            start_load(w, t)
        elif kind == "load_done":
            (duration,) = payload
            w.busy_s += duration
            agent.load_index(w.state, wl.index, SimulatedExecutor(), duration_s=duration)
            w.loaded = True
            lease_or_idle(w, t)
        elif kind == "load_interrupted":
            (partial,) = payload
            w.busy_s += partial
            interruptions += 1
            provision(w, t)
        elif kind == "attempt_done":
            acc, record, salvaged = payload
            commit_attempt(w, t, acc, record, salvaged)

    per_file = tuple(
        FileResult(
            accession=e.accession_id,
            worker=tallies[e.accession_id].worker,
            attempts=tallies[e.accession_id].attempts,
            stage_times=dict(tallies[e.accession_id].stage_times),
            outcome=outcomes[e.accession_id],
            peak_disk_gb=tallies[e.accession_id].peak_disk_gb,
        )
        for e in wl.manifest
    )
    busy_hours = tuple(w.busy_s / 3600.0 for w in workers)
    aggregate = sum(busy_hours)
    cost = campaign_cost(backend.kind, config.shape, aggregate, n_workers, config.pricing)
    return SimResult(
        makespan_s=last_terminal_t,
        aggregate_task_hours=aggregate,
        per_file=per_file,
        index_loads=index_loads,
        interruptions=interruptions,
        cost=cost,
        seed=config.seed,
        worker_count=n_workers,
        worker_busy_hours=busy_hours,
    )


def summarize(result: SimResult) -> dict:
    """Aggregate a result into the report record rendered by the CLI."""
    return summarize_dict(result.to_dict())


def summarize_dict(result: dict) -> dict:
    stage_hours = {stage: 0.0 for stage in PIPELINE_STAGES}
    for fr in result["per_file"]:
        for stage in PIPELINE_STAGES:
            stage_hours[stage] += fr["stage_times"][f"{stage}_s"] / 3600.0
    outcome_counts: dict[str, int] = {}
    for fr in result["per_file"]:
        outcome_counts[fr["outcome"]] = outcome_counts.get(fr["outcome"], 0) + 1
    file_hours = sum(stage_hours.values())
    shares = {stage: (h / file_hours if file_hours else 0.0) for stage, h in stage_hours.items()}
    return {
        "schema": "alignsim/summary-v1",
        "seed": result["seed"],
        "files": len(result["per_file"]),
        "worker_count": result["worker_count"],
        "makespan_h": result["makespan_s"] / 3600.0,
        "aggregate_task_hours": result["aggregate_task_hours"],
        "index_loads": result["index_loads"],
        "interruptions": result["interruptions"],
        "outcome_counts": dict(sorted(outcome_counts.items())),
        "stage_hours": stage_hours,
        "stage_shares": shares,
        "align_share": shares[STAGE_ALIGN],
        "cost": result["cost"],
    }


def write_result_json(result: SimResult, path: str | Path) -> None:
    text = json.dumps(result.to_dict(), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


CSV_COLUMNS = ("accession", "worker", "attempts", "download_s", "convert_s", "align_s", "outcome")


def write_per_file_csv(result: SimResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for fr in result.per_file:
            writer.writerow([
                fr.accession,
                fr.worker,
                fr.attempts,
                f"{fr.stage_times[STAGE_DOWNLOAD]:.3f}",
                f"{fr.stage_times[STAGE_CONVERT]:.3f}",
                f"{fr.stage_times[STAGE_ALIGN]:.3f}",
                fr.outcome,
            ])
