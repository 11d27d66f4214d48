"""Campaign control plane: shared work queue, worker lifecycle, retries,
crash-safe run state.

The dispatcher is one logical event loop and the single writer to the run
state. Every state transition is appended to a JSON-lines journal before the
campaign proceeds, so a killed campaign resumes by replaying the journal:
done files stay done, files that were leased when the process died go back
to pending with their attempt rolled back (the interrupted attempt never
finished, so it never consumed its random draws).

Two backend drivers ship: ``SimBackendDriver`` executes workers in virtual
time against the same stage/fate machinery as the simulator, and
``StubCloudDriver`` records every would-be cloud API call into a journal
without any external effect.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from . import agent, simulator
from .agent import (
    OUTCOME_ABANDONED,
    OUTCOME_DONE,
    OUTCOME_FAILED_OOM,
    OUTCOME_INTERRUPTED,
    OUTCOME_SKIPPED_STORAGE,
    PipelineState,
    SimulatedExecutor,
    StageResult,
)
from .costmodel import ResourceShape
from .errors import JournalError, PreconditionError
from .simulator import CampaignConfig, attempt_directives, attempt_timeline, resolve_fate, stream
from .workload import storage_demand

logger = logging.getLogger(__name__)

JOURNAL_SCHEMA = "alignsim/journal-v1"

STATUS_PENDING = "pending"
STATUS_LEASED = "leased"
TERMINAL_STATUSES = (OUTCOME_DONE, OUTCOME_FAILED_OOM, OUTCOME_ABANDONED, OUTCOME_SKIPPED_STORAGE)


@dataclass
class AccessionState:
    status: str = STATUS_PENDING
    sra_size_gb: float = 0.0
    attempts: int = 0
    worker_id: int | None = None
    started_at: float | None = None
    ended_at: float | None = None
    failure_reason: str | None = None
    ram_tier: float | None = None


@dataclass
class WorkerLedger:
    worker_id: int
    provisioned_at: float | None = None
    terminated_at: float | None = None
    index_loads: int = 0
    interruptions: int = 0


@dataclass
class RunState:
    """Persisted dispatch status of a campaign."""

    campaign_id: str
    accessions: dict[str, AccessionState] = field(default_factory=dict)
    workers: dict[int, WorkerLedger] = field(default_factory=dict)

    def terminal_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for acc_state in self.accessions.values():
            if acc_state.status in TERMINAL_STATUSES:
                counts[acc_state.status] = counts.get(acc_state.status, 0) + 1
        return counts

    def all_terminal(self) -> bool:
        return all(s.status in TERMINAL_STATUSES for s in self.accessions.values())

    def pending(self) -> list[str]:
        return [acc for acc, s in self.accessions.items() if s.status == STATUS_PENDING]

    def leased(self) -> list[str]:
        return [acc for acc, s in self.accessions.items() if s.status == STATUS_LEASED]


def next_assignment(state: RunState, worker_id: int) -> str | None:
    """Lease the pending accession with the largest size (LPT discipline)."""
    if worker_id not in state.workers:
        raise PreconditionError(f"unknown worker id {worker_id}")
    best: str | None = None
    best_key = None
    for acc, acc_state in state.accessions.items():
        if acc_state.status != STATUS_PENDING:
            continue
        key = (-acc_state.sra_size_gb, acc)
        if best_key is None or key < best_key:
            best, best_key = acc, key
    return best


@dataclass(frozen=True)
class CampaignEvent:
    kind: str  # done | oom | abandoned | interruption | storage_skip | ready
    worker_id: int
    accession: str | None = None
    t: float = 0.0
    reason: str | None = None


def handle_event(state: RunState, event: CampaignEvent, policy: simulator.FailureModel) -> RunState:
    """Fold one worker event into the run state (no journal side effects)."""
    acc = event.accession
    if acc is not None:
        acc_state = state.accessions.get(acc)
        if acc_state is None or acc_state.status != STATUS_LEASED:
            logger.warning("event %s for non-leased accession %s ignored", event.kind, acc)
            return state
    if event.kind == "done":
        _finish(state, acc, OUTCOME_DONE, event)
    elif event.kind == "abandoned":
        _finish(state, acc, OUTCOME_ABANDONED, event)
    elif event.kind == "storage_skip":
        _finish(state, acc, OUTCOME_SKIPPED_STORAGE, event)
    elif event.kind == "oom":
        acc_state = state.accessions[acc]
        if policy.retry_on_oom and acc_state.attempts < policy.max_attempts:
            acc_state.status = STATUS_PENDING
            acc_state.worker_id = None
            acc_state.ram_tier = policy.next_ram_tier(acc_state.ram_tier or 0.0)
        else:
            _finish(state, acc, OUTCOME_FAILED_OOM, event)
    elif event.kind == "interruption":
        if acc is not None:
            acc_state = state.accessions[acc]
            acc_state.status = STATUS_PENDING
            acc_state.worker_id = None
        ledger = state.workers[event.worker_id]
        ledger.interruptions += 1
    else:
        raise ValueError(f"unknown event kind {event.kind!r}")
    return state


def _finish(state: RunState, acc: str, status: str, event: CampaignEvent) -> None:
    acc_state = state.accessions[acc]
    acc_state.status = status
    acc_state.ended_at = event.t
    acc_state.failure_reason = event.reason
    acc_state.worker_id = event.worker_id


# --------------------------------------------------------------------------
# Journal


class Journal:
    """Append-only JSON-lines journal; one self-contained record per line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = None

    def open_append(self):
        self._fh = open(self.path, "a", encoding="utf-8")
        return self

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self.open_append()

    def __exit__(self, *exc):
        self.close()


def read_journal(path: str | Path) -> list[dict]:
    """Parse a journal, tolerating only a torn final line (crash artifact)."""
    records = []
    raw = Path(path).read_bytes().decode("utf-8")
    lines = raw.split("\n")
    trailing_newline = raw.endswith("\n")
    if trailing_newline:
        lines = lines[:-1]
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            last = i == len(lines) - 1
            if last and not trailing_newline:
                break  # torn final line from a crash mid-write
            raise JournalError(f"{path}: corrupt journal record on line {i + 1}: {exc}") from exc
    return records


def config_fingerprint(config: CampaignConfig) -> str:
    payload = json.dumps(
        {
            "campaign_id": config.campaign_id,
            "seed": config.seed,
            "worker_count": config.worker_count,
            "backend": config.backend.kind.value,
            "manifest": [(e.accession_id, e.sra_size_gb) for e in config.workload.manifest],
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def replay_journal(records: list[dict], config: CampaignConfig) -> RunState:
    """Rebuild a RunState from journal records; recover torn leases to pending."""
    if not records:
        raise JournalError("journal is empty")
    header = records[0]
    if header.get("schema") != JOURNAL_SCHEMA:
        raise JournalError(f"unknown journal schema {header.get('schema')!r}")
    if header.get("fingerprint") != config_fingerprint(config):
        raise JournalError(
            "journal does not match this campaign config "
            "(different manifest, seed, backend or worker count)"
        )
    state = _fresh_state(config)
    for rec in records[1:]:
        event = rec.get("event")
        if event == "provision":
            w = state.workers.setdefault(rec["worker"], WorkerLedger(rec["worker"]))
            w.provisioned_at = rec["t"]
        elif event == "index_load":
            state.workers.setdefault(rec["worker"], WorkerLedger(rec["worker"])).index_loads += 1
        elif event == "lease":
            acc_state = state.accessions[rec["accession"]]
            acc_state.status = STATUS_LEASED
            acc_state.worker_id = rec["worker"]
            acc_state.attempts = rec["attempt"]
            acc_state.started_at = rec["t"]
            if rec.get("ram_tier") is not None:
                acc_state.ram_tier = rec["ram_tier"]
        elif event == "terminal":
            acc_state = state.accessions[rec["accession"]]
            acc_state.status = rec["status"]
            acc_state.ended_at = rec["t"]
            acc_state.failure_reason = rec.get("reason")
        elif event == "requeue":
            if rec.get("accession") is not None:
                acc_state = state.accessions[rec["accession"]]
                acc_state.status = STATUS_PENDING
                acc_state.worker_id = None
                if rec.get("ram_tier") is not None:
                    acc_state.ram_tier = rec["ram_tier"]
            if rec.get("cause") == "interruption":
                state.workers.setdefault(rec["worker"], WorkerLedger(rec["worker"])).interruptions += 1
        elif event == "terminate":
            state.workers.setdefault(rec["worker"], WorkerLedger(rec["worker"])).terminated_at = rec["t"]
        else:
            raise JournalError(f"unknown journal event {event!r}")
    # Crash recovery: a lease without a terminal outcome never finished.
    # Roll it back to pending and un-charge the attempt (its draws were
    # positional, so the resumed attempt redraws the same fate).
    for acc_state in state.accessions.values():
        if acc_state.status == STATUS_LEASED:
            acc_state.status = STATUS_PENDING
            acc_state.attempts = max(0, acc_state.attempts - 1)
            acc_state.worker_id = None
    return state


def _fresh_state(config: CampaignConfig) -> RunState:
    state = RunState(campaign_id=config.campaign_id)
    for entry in config.workload.manifest:
        state.accessions[entry.accession_id] = AccessionState(
            sra_size_gb=entry.sra_size_gb, ram_tier=float(config.shape.ram_gb)
        )
    return state


# --------------------------------------------------------------------------
# Backend drivers


@dataclass(frozen=True)
class DriverEvent:
    t: float
    worker_id: int
    kind: str  # ready | done | oom | abandoned | storage_skip | interruption
    accession: str | None = None
    reason: str | None = None


class BackendDriver(Protocol):
    def provision_worker(self, shape: ResourceShape) -> int: ...
    def assign(self, worker_id: int, accession: str, attempt: int = 1,
               ram_gb: float | None = None) -> None: ...
    def poll(self, worker_id: int) -> list[DriverEvent]: ...
    def advance(self) -> bool: ...
    def terminate(self, worker_id: int) -> None: ...


class SimBackendDriver:
    """Drives workers in virtual time with the simulator's stage machinery."""

    def __init__(self, config: CampaignConfig):
        self.config = config
        self.clock = 0.0
        self._entries = {e.accession_id: e for e in config.workload.manifest}
        self._plans = {
            acc: simulator.stage_plan(e, config.workload, config.throughput, config.backend)
            for acc, e in self._entries.items()
        }
        self._next_worker = 0
        self._incarnations: dict[int, int] = {}
        self._reclaim_at: dict[int, float] = {}
        self._states: dict[int, PipelineState] = {}
        self._heap: list[tuple[float, int, int, DriverEvent]] = []
        self._ready: dict[int, list[DriverEvent]] = {}
        self._seq = 0

    def _push(self, event: DriverEvent) -> None:
        heapq.heappush(self._heap, (event.t, event.worker_id, self._seq, event))
        self._seq += 1

    def provision_worker(self, shape: ResourceShape) -> int:
        wid = self._next_worker
        self._next_worker += 1
        self._ready[wid] = []
        self._provision(wid, self.clock)
        return wid

    def _provision(self, wid: int, t: float) -> None:
        backend = self.config.backend
        inc = self._incarnations.get(wid, 0) + 1
        self._incarnations[wid] = inc
        rng = stream(self.config.seed, "worker", wid, "inc", inc)
        load_draw = rng.random()
        ready = t + backend.provision_delay_s
        spot = backend.interruption_rate_per_hour > 0
        reclaim = ready + rng.expovariate(backend.interruption_rate_per_hour) * 3600.0 if spot else math.inf
        self._reclaim_at[wid] = reclaim
        lo, hi = self.config.workload.index.load_time_s
        duration = (lo + (hi - lo) * load_draw) * backend.stage_factor(agent.STAGE_INDEX_LOAD)
        volume = self.config.shape.volume
        self._states[wid] = PipelineState(volume_size_gb=volume.size_gb if volume else None)
        if reclaim < ready + duration:
            self._push(DriverEvent(reclaim, wid, "interruption"))
        else:
            agent.load_index(self._states[wid], self.config.workload.index,
                             SimulatedExecutor(), duration_s=duration)
            self._push(DriverEvent(ready + duration, wid, "ready"))

    def assign(self, worker_id: int, accession: str, attempt: int = 1,
               ram_gb: float | None = None) -> None:
        t = self.clock
        config = self.config
        ram = float(ram_gb if ram_gb is not None else config.shape.ram_gb)
        entry = self._entries[accession]
        state = self._states[worker_id]
        if state.free_disk_gb < storage_demand(entry, config.workload):
            self._push(DriverEvent(t, worker_id, "storage_skip", accession,
                                   reason="peak footprint exceeds worker volume"))
            return
        fate = resolve_fate(config.seed, accession, attempt,
                            config.failure.probability_for(ram),
                            config.optimization.low_quality_fraction)
        plan = self._plans[accession]
        _, natural = attempt_timeline(plan, fate, config.optimization)
        natural_end = t + sum(natural.values())
        reclaim = self._reclaim_at[worker_id]
        cut = None
        salvaged = False
        if reclaim < natural_end:
            if natural_end - reclaim <= config.backend.reclaim_notice_s:
                salvaged = True
            else:
                cut = reclaim - t
        directives = attempt_directives(plan, fate, config.optimization, cut)
        executor = SimulatedExecutor(lambda stage, _a, d=directives: d.get(stage, StageResult.success()))
        _, record = agent.process_file(state, entry, config.workload, executor,
                                       config.optimization, stage_durations=plan)
        end = t + record.elapsed_s
        if record.outcome == OUTCOME_INTERRUPTED:
            self._push(DriverEvent(end, worker_id, "interruption", accession))
        else:
            kind = {
                OUTCOME_DONE: "done",
                OUTCOME_FAILED_OOM: "oom",
                OUTCOME_ABANDONED: "abandoned",
                OUTCOME_SKIPPED_STORAGE: "storage_skip",
            }[record.outcome]
            self._push(DriverEvent(end, worker_id, kind, accession, record.failure_reason))
            if salvaged:
                self._push(DriverEvent(end, worker_id, "interruption"))

    def poll(self, worker_id: int) -> list[DriverEvent]:
        ready = self._ready.get(worker_id, [])
        self._ready[worker_id] = []
        return ready

    def advance(self) -> bool:
        """Advance the virtual clock to the next completion; False when idle.

        Delivers every event sharing the earliest timestamp in one step so a
        salvage pair (completion followed by the reclaim) is never split.
        """
        if not self._heap:
            return False
        t_min = self._heap[0][0]
        while self._heap and self._heap[0][0] == t_min:
            t, wid, _, event = heapq.heappop(self._heap)
            self.clock = max(self.clock, t)
            self._ready.setdefault(wid, []).append(event)
            if event.kind == "interruption":
                self._provision(wid, t)  # spot worker returns with a fresh index load
        return True

    def terminate(self, worker_id: int) -> None:
        self._reclaim_at[worker_id] = -math.inf


class StubCloudDriver:
    """Records every would-be cloud API call into a journal; no side effects.

    Assignments complete instantly with scripted outcomes (default: done),
    so campaigns terminate without any real execution.
    """

    def __init__(self, call_journal_path: str | Path | None = None,
                 scripted_outcomes: dict[str, str] | None = None):
        self.calls: list[dict] = []
        self._journal_path = Path(call_journal_path) if call_journal_path else None
        self._scripted = scripted_outcomes or {}
        self._next_worker = 0
        self._ready: dict[int, list[DriverEvent]] = {}
        self._tick = 0

    def _record(self, call: str, **kwargs) -> None:
        record = {"call": call, **kwargs}
        self.calls.append(record)
        if self._journal_path is not None:
            with open(self._journal_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def provision_worker(self, shape: ResourceShape) -> int:
        wid = self._next_worker
        self._next_worker += 1
        self._record("provision_worker", worker=wid, vcpu=shape.vcpu, ram_gb=shape.ram_gb)
        self._tick += 1
        self._ready[wid] = [DriverEvent(float(self._tick), wid, "ready")]
        return wid

    def assign(self, worker_id: int, accession: str, attempt: int = 1,
               ram_gb: float | None = None) -> None:
        self._record("assign", worker=worker_id, accession=accession, attempt=attempt)
        self._tick += 1
        outcome = self._scripted.get(accession, "done")
        self._ready.setdefault(worker_id, []).append(
            DriverEvent(float(self._tick), worker_id, outcome, accession)
        )

    def poll(self, worker_id: int) -> list[DriverEvent]:
        ready = self._ready.get(worker_id, [])
        self._ready[worker_id] = []
        return ready

    def advance(self) -> bool:
        return False  # stub events are ready the moment they are created

    def terminate(self, worker_id: int) -> None:
        self._record("terminate", worker=worker_id)


# --------------------------------------------------------------------------
# Campaign loop


def run_campaign(config: CampaignConfig, driver: BackendDriver, state_path: str | Path,
                 provision_attempts: int = 3) -> RunState:
    """Drive a campaign to completion, persisting state after every transition.

    Resumable: when ``state_path`` exists its journal is replayed first; done
    files are never re-executed and previously leased files are re-leased.
    Provisioning failures are retried ``provision_attempts`` times before the
    campaign aborts.
    """
    state_path = Path(state_path)
    fingerprint = config_fingerprint(config)
    if state_path.exists() and state_path.stat().st_size > 0:
        records = read_journal(state_path)
        state = replay_journal(records, config)
    else:
        state = _fresh_state(config)
        with Journal(state_path) as journal:
            journal.write({"schema": JOURNAL_SCHEMA, "campaign_id": config.campaign_id,
                           "fingerprint": fingerprint})

    if state.all_terminal():
        return state

    pool_size = min(config.worker_count, len(config.workload.manifest))
    with Journal(state_path) as journal:
        worker_ids = []
        for _ in range(pool_size):
            wid = _provision_with_retry(driver, config.shape, provision_attempts)
            worker_ids.append(wid)
            state.workers.setdefault(wid, WorkerLedger(wid)).provisioned_at = _driver_clock(driver)
            journal.write({"event": "provision", "worker": wid, "t": _driver_clock(driver)})

        idle: set[int] = set()
        guard = 0
        limit = 1000 * (len(config.workload.manifest) + 1) * config.failure.max_attempts + 10_000
        while not state.all_terminal():
            guard += 1
            if guard > limit:
                raise PreconditionError("campaign made no progress; driver starved the dispatcher")
            progressed = False
            for wid in worker_ids:
                for event in driver.poll(wid):
                    progressed = True
                    _apply_driver_event(state, config, driver, journal, event, idle)
            _dispatch_idle(state, config, driver, journal, idle)
            if not progressed and not state.all_terminal():
                if not driver.advance():
                    raise PreconditionError(
                        "driver has no further events but files are not terminal"
                    )
        for wid in worker_ids:
            driver.terminate(wid)
            state.workers[wid].terminated_at = _driver_clock(driver)
            journal.write({"event": "terminate", "worker": wid, "t": _driver_clock(driver)})
    return state


def _provision_with_retry(driver, shape: ResourceShape, attempts: int) -> int:
    last_error = None
    for _ in range(max(1, attempts)):
        try:
            return driver.provision_worker(shape)
        except Exception as exc:  # driver-defined failure
            last_error = exc
    raise PreconditionError(f"worker provisioning failed after {attempts} attempts: {last_error}")


def _driver_clock(driver) -> float:
    return float(getattr(driver, "clock", 0.0))


def _apply_driver_event(state: RunState, config: CampaignConfig, driver, journal: Journal,
                        event: DriverEvent, idle: set[int]) -> None:
    if event.kind == "ready":
        state.workers.setdefault(event.worker_id, WorkerLedger(event.worker_id)).index_loads += 1
        journal.write({"event": "index_load", "worker": event.worker_id})
        idle.add(event.worker_id)
        return
    if event.kind == "interruption":
        handle_event(state, CampaignEvent("interruption", event.worker_id, event.accession, event.t), config.failure)
        journal.write({"event": "requeue", "accession": event.accession, "worker": event.worker_id,
                       "cause": "interruption", "t": event.t})
        idle.discard(event.worker_id)  # driver re-provisions; a fresh ready event follows
        return

    acc_state = state.accessions.get(event.accession)
    before = acc_state.status if acc_state else None
    mapped = {"done": "done", "oom": "oom", "abandoned": "abandoned", "storage_skip": "storage_skip"}
    handle_event(state, CampaignEvent(mapped[event.kind], event.worker_id, event.accession,
                                      event.t, event.reason), config.failure)
    if before != STATUS_LEASED:
        idle.add(event.worker_id)
        return  # anomalous event; handle_event already logged it
    after = state.accessions[event.accession].status
    if after == STATUS_PENDING and before == STATUS_LEASED:
        journal.write({"event": "requeue", "accession": event.accession, "worker": event.worker_id,
                       "cause": "oom_retry", "ram_tier": state.accessions[event.accession].ram_tier,
                       "t": event.t})
    elif after in TERMINAL_STATUSES:
        journal.write({"event": "terminal", "accession": event.accession, "status": after,
                       "reason": event.reason, "t": event.t})
    idle.add(event.worker_id)


def _dispatch_idle(state: RunState, config: CampaignConfig, driver, journal: Journal,
                   idle: set[int]) -> None:
    for wid in sorted(idle):
        acc = next_assignment(state, wid)
        if acc is None:
            continue
        idle.discard(wid)
        acc_state = state.accessions[acc]
        acc_state.status = STATUS_LEASED
        acc_state.worker_id = wid
        acc_state.attempts += 1
        acc_state.started_at = _driver_clock(driver)
        journal.write({"event": "lease", "accession": acc, "worker": wid,
                       "attempt": acc_state.attempts, "ram_tier": acc_state.ram_tier,
                       "t": acc_state.started_at})
        driver.assign(wid, acc, attempt=acc_state.attempts, ram_gb=acc_state.ram_tier)
