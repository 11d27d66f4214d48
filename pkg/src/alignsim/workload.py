"""Workload model: genome index, accession manifest and derived size demands.

Sizes are decimal gigabytes throughout. An SRA archive expands by
``expansion_factor`` when converted to FASTQ, and the conversion needs
``temp_factor`` extra scratch per FASTQ gigabyte while it runs, so the peak
per-file footprint is ``sra + fastq + temp_factor * fastq``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

# Defaults for the human-genome campaign shipped with the package.
DEFAULT_EXPANSION_FACTOR = 7.362
DEFAULT_TEMP_FACTOR = 0.5
DEFAULT_ALIGN_FRACTION = 0.725
DEFAULT_RAM_OVERHEAD_FACTOR = 1.6

_SUM_TOLERANCE = 1e-3   # relative, on manifest totals
_MAX_TOLERANCE = 1e-2   # relative, on the largest manifest entry


@dataclass(frozen=True)
class IndexSpec:
    """A prebuilt aligner index: its size and how long a worker takes to load it."""

    genome_label: str
    size_gb: float
    load_time_s: tuple[float, float]

    def __post_init__(self):
        if self.size_gb <= 0:
            raise ValueError(f"index size must be positive, got {self.size_gb}")
        lo, hi = self.load_time_s
        if not (0 < lo <= hi):
            raise ValueError(f"load time interval must satisfy 0 < min <= max, got {self.load_time_s}")

    @property
    def mean_load_time_s(self) -> float:
        lo, hi = self.load_time_s
        return (lo + hi) / 2.0


@dataclass(frozen=True)
class FileEntry:
    """One accession in a manifest: id plus compressed (SRA) size."""

    accession_id: str
    sra_size_gb: float

    def __post_init__(self):
        if not self.accession_id:
            raise ValueError("accession id must be nonempty")
        if self.sra_size_gb <= 0:
            raise ValueError(f"{self.accession_id}: SRA size must be positive, got {self.sra_size_gb}")


@dataclass(frozen=True)
class WorkloadSpec:
    """Resource profile of an alignment campaign.

    ``align_fraction`` is the share of per-file pipeline time spent in the
    align stage; ``ram_overhead_factor`` scales the index size into the
    working-memory requirement of a worker.
    """

    index: IndexSpec
    manifest: tuple[FileEntry, ...]
    expansion_factor: float = DEFAULT_EXPANSION_FACTOR
    temp_factor: float = DEFAULT_TEMP_FACTOR
    align_fraction: float = DEFAULT_ALIGN_FRACTION
    ram_overhead_factor: float = DEFAULT_RAM_OVERHEAD_FACTOR
    vcpu: int = 8
    ram_gb: float = 48.0

    def __post_init__(self):
        if not self.manifest:
            raise ValueError("manifest must contain at least one entry")
        seen = set()
        for entry in self.manifest:
            if entry.accession_id in seen:
                raise ValueError(f"duplicate accession id {entry.accession_id!r} in manifest")
            seen.add(entry.accession_id)
        if self.expansion_factor <= 0:
            raise ValueError("expansion_factor must be positive")
        if self.temp_factor < 0:
            raise ValueError("temp_factor must be nonnegative")
        if not (0 < self.align_fraction < 1):
            raise ValueError(f"align_fraction must lie in (0, 1), got {self.align_fraction}")
        if self.ram_overhead_factor < 1:
            raise ValueError("ram_overhead_factor must be >= 1")
        if self.vcpu < 1:
            raise ValueError("vcpu must be a positive integer")
        if self.ram_gb <= 0:
            raise ValueError("ram_gb must be positive")

    @property
    def total_sra_gb(self) -> float:
        return sum(e.sra_size_gb for e in self.manifest)

    @property
    def total_fastq_gb(self) -> float:
        return self.total_sra_gb * self.expansion_factor

    @property
    def working_memory_gb(self) -> float:
        """RAM a worker needs to hold the index plus alignment working set."""
        return self.index.size_gb * self.ram_overhead_factor

    def largest_entry(self) -> FileEntry:
        return max(self.manifest, key=lambda e: (e.sra_size_gb, e.accession_id))

    def smallest_entry(self) -> FileEntry:
        return min(self.manifest, key=lambda e: (e.sra_size_gb, e.accession_id))


def estimate_fastq_size(entry: FileEntry, workload: WorkloadSpec) -> float:
    """Decompressed FASTQ size of one accession, in GB."""
    return entry.sra_size_gb * workload.expansion_factor


def storage_demand(entry: FileEntry, workload: WorkloadSpec) -> float:
    """Peak simultaneous disk footprint while converting one accession.

    The SRA archive, the FASTQ output and the converter's scratch space all
    coexist until conversion finishes.
    """
    fastq = estimate_fastq_size(entry, workload)
    return entry.sra_size_gb + fastq + workload.temp_factor * fastq


def generate_synthetic_manifest(count: int, total_gb: float, max_gb: float, seed: int) -> list[FileEntry]:
    """Synthesize a manifest matching a (count, total, max) size descriptor.

    Sizes are drawn log-normally (heavy-tailed, as in public archives), the
    largest draw is pinned to ``max_gb`` and the rest rescaled so the sum
    matches ``total_gb`` exactly. Deterministic for a given seed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if total_gb <= 0 or max_gb <= 0:
        raise ValueError("total_gb and max_gb must be positive")
    mean = total_gb / count
    if max_gb < mean * (1 - 1e-9):
        raise ValueError(
            f"max_gb={max_gb} cannot admit total_gb={total_gb} over {count} entries "
            f"(needs at least {mean:.6g})"
        )
    if max_gb > total_gb * (1 + 1e-9):
        raise ValueError(f"max_gb={max_gb} exceeds total_gb={total_gb}")

    if count == 1:
        return [FileEntry(_synthetic_id(1), total_gb)]

    if max_gb <= mean * (1 + 1e-9):
        # max equals the mean: uniformity is forced
        return [FileEntry(_synthetic_id(i), mean) for i in range(1, count + 1)]

    rng = random.Random(seed)
    sizes = _lognormal_sizes(rng, count, mean, max_gb)
    return [FileEntry(_synthetic_id(i), s) for i, s in enumerate(sizes, start=1)]


def _synthetic_id(i: int) -> str:
    return f"SYN{i:06d}"


def _lognormal_sizes(rng: random.Random, count: int, mean: float, max_gb: float) -> list[float]:
    # Fit the underlying normal so that E[X] = mean and the expected maximum
    # of `count` draws lands near max_gb (quantile at count/(count+1)).
    z = NormalDist().inv_cdf(count / (count + 1))
    log_ratio = math.log(max_gb / mean)
    disc = z * z - 2.0 * log_ratio
    sigma = z - math.sqrt(disc) if disc > 0 else z
    mu = math.log(mean) - sigma * sigma / 2.0
    draws = [rng.lognormvariate(mu, sigma) for _ in range(count)]

    # Pin the largest draw to max_gb, then rescale the rest onto the
    # remaining mass, capping anything the rescale would push past max_gb.
    i_max = max(range(count), key=lambda i: draws[i])
    scale = max_gb / draws[i_max]
    sizes = [d * scale for d in draws]
    target_rest = (count * mean) - max_gb

    free = [i for i in range(count) if i != i_max]
    capped: set[int] = set()
    for _ in range(count):
        free_sum = sum(sizes[i] for i in free)
        capped_sum = sum(sizes[i] for i in capped)
        factor = (target_rest - capped_sum) / free_sum
        overflow = [i for i in free if sizes[i] * factor > max_gb]
        if not overflow:
            for i in free:
                sizes[i] *= factor
            break
        for i in overflow:
            sizes[i] = max_gb
            free.remove(i)
            capped.add(i)
    return sizes


def load_manifest(path: str | Path) -> list[FileEntry]:
    """Read a manifest file: one ``accession<TAB>size_gb`` record per line."""
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'accession<TAB>size_gb', got {line!r}")
            accession, size_text = parts
            try:
                size = float(size_text)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: size {size_text!r} is not a number") from None
            if accession in seen:
                raise ValueError(f"{path}:{lineno}: duplicate accession {accession!r}")
            seen.add(accession)
            entries.append(FileEntry(accession, size))
    if not entries:
        raise ValueError(f"{path}: manifest is empty")
    return entries


def save_manifest(entries: list[FileEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(f"{entry.accession_id}\t{entry.sra_size_gb!r}\n")
