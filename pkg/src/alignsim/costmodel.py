"""Itemized campaign cost estimation for serverless, spot and VM backends.

All currency arithmetic runs on exact rationals (``fractions.Fraction``);
rounding to cents happens only when a breakdown is rendered. Volume cost is
billed on aggregate busy hours: each worker's block volume lives exactly as
long as the worker is busy.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_EVEN
from fractions import Fraction
from typing import Mapping, Union

Money = Fraction
Numeric = Union[int, float, str, Decimal, Fraction]


class Backend(str, enum.Enum):
    SERVERLESS = "serverless"
    SERVERLESS_SPOT = "serverless-spot"
    VM = "vm"


def as_fraction(value: Numeric) -> Fraction:
    """Exact conversion; floats go through their shortest decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Decimal):
        return Fraction(value)
    return Fraction(str(value))


def round_usd(value: Numeric) -> float:
    """Presentation rounding to whole cents (banker's rounding)."""
    dec = Decimal(as_fraction(value).numerator) / Decimal(as_fraction(value).denominator)
    return float(dec.quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


@dataclass(frozen=True)
class VolumeSpec:
    """A provisioned block volume: capacity, throughput and IOPS."""

    size_gb: float
    throughput_mibps: float
    iops: float

    def __post_init__(self):
        if self.size_gb <= 0:
            raise ValueError("volume size must be positive")
        if self.throughput_mibps < 0 or self.iops < 0:
            raise ValueError("volume throughput and IOPS must be nonnegative")


@dataclass(frozen=True)
class ResourceShape:
    """Compute shape of one worker; ``instance_type`` names the VM flavor for VM backends."""

    vcpu: int
    ram_gb: float
    volume: VolumeSpec | None = None
    instance_type: str | None = None

    def __post_init__(self):
        if self.vcpu < 1:
            raise ValueError("vcpu must be >= 1")
        if self.ram_gb <= 0:
            raise ValueError("ram_gb must be positive")


@dataclass(frozen=True)
class PricingTable:
    """Per-resource rates; defaults mirror the published us-east-1 price list."""

    serverless_vcpu_per_hour: Fraction
    serverless_gb_ram_per_hour: Fraction
    spot_discount: Fraction
    vm_rates: Mapping[str, Fraction]
    ebs_gb_month: Fraction
    ebs_throughput_mibps_month: Fraction
    ebs_free_throughput_mibps: Fraction
    ebs_iops_month: Fraction
    ebs_free_iops: Fraction
    hours_per_month: Fraction = Fraction(730)

    def __post_init__(self):
        for name in (
            "serverless_vcpu_per_hour", "serverless_gb_ram_per_hour", "spot_discount",
            "ebs_gb_month", "ebs_throughput_mibps_month", "ebs_free_throughput_mibps",
            "ebs_iops_month", "ebs_free_iops", "hours_per_month",
        ):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        object.__setattr__(
            self, "vm_rates", {k: as_fraction(v) for k, v in self.vm_rates.items()}
        )
        if any(rate < 0 for rate in self.vm_rates.values()):
            raise ValueError("vm rates must be nonnegative")
        if not (0 <= self.spot_discount <= 1):
            raise ValueError("spot_discount must lie in [0, 1]")
        if self.hours_per_month <= 0:
            raise ValueError("hours_per_month must be positive")


@dataclass(frozen=True)
class LineItem:
    label: str
    quantity: Fraction
    unit: str
    rate: Fraction
    usd: Fraction

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "quantity": float(self.quantity),
            "unit": self.unit,
            "rate": float(self.rate),
            "usd": round_usd(self.usd),
        }


@dataclass(frozen=True)
class CostBreakdown:
    """Compute + storage split with the line items that produced it."""

    compute_usd: Fraction
    storage_usd: Fraction
    total_usd: Fraction
    line_items: tuple[LineItem, ...]

    def as_dict(self) -> dict:
        return {
            "compute_usd": round_usd(self.compute_usd),
            "storage_usd": round_usd(self.storage_usd),
            "total_usd": round_usd(self.total_usd),
            "line_items": [item.as_dict() for item in self.line_items],
        }


def serverless_compute_cost(
    shape: ResourceShape, task_hours: Numeric, pricing: PricingTable, spot: bool = False
) -> Fraction:
    """Serverless container compute: (vCPU + RAM) rates times busy task-hours."""
    hours = as_fraction(task_hours)
    if hours < 0:
        raise ValueError("task_hours must be nonnegative")
    hourly = (
        shape.vcpu * pricing.serverless_vcpu_per_hour
        + as_fraction(shape.ram_gb) * pricing.serverless_gb_ram_per_hour
    )
    cost = hourly * hours
    if spot:
        cost *= 1 - pricing.spot_discount
    return cost


def vm_compute_cost(instance_type: str, instance_hours: Numeric, pricing: PricingTable) -> Fraction:
    hours = as_fraction(instance_hours)
    if hours < 0:
        raise ValueError("instance_hours must be nonnegative")
    if instance_type not in pricing.vm_rates:
        raise ValueError(
            f"unknown instance type {instance_type!r}; priced types: {sorted(pricing.vm_rates)}"
        )
    return pricing.vm_rates[instance_type] * hours


def volume_cost(volume: VolumeSpec, volume_hours: Numeric, pricing: PricingTable) -> Fraction:
    """Block volume cost prorated from monthly rates over the busy hours."""
    hours = as_fraction(volume_hours)
    if hours < 0:
        raise ValueError("volume_hours must be nonnegative")
    monthly = as_fraction(volume.size_gb) * pricing.ebs_gb_month
    extra_throughput = max(Fraction(0), as_fraction(volume.throughput_mibps) - pricing.ebs_free_throughput_mibps)
    monthly += extra_throughput * pricing.ebs_throughput_mibps_month
    extra_iops = max(Fraction(0), as_fraction(volume.iops) - pricing.ebs_free_iops)
    monthly += extra_iops * pricing.ebs_iops_month
    return monthly * hours / pricing.hours_per_month


def campaign_cost(
    backend: Backend | str,
    shape: ResourceShape,
    aggregate_task_hours: Numeric,
    worker_count: int,
    pricing: PricingTable,
) -> CostBreakdown:
    """Itemized campaign cost for the given backend.

    Volume hours equal aggregate task-hours: a worker's volume is attached
    for exactly as long as the worker is busy, and the idle remainder of the
    pool bills nothing.
    """
    backend = Backend(backend)
    hours = as_fraction(aggregate_task_hours)
    if hours < 0:
        raise ValueError("aggregate_task_hours must be nonnegative")
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")

    items: list[LineItem] = []
    if backend is Backend.VM:
        if shape.instance_type is None:
            raise ValueError("VM cost needs shape.instance_type")
        rate = pricing.vm_rates.get(shape.instance_type)
        compute = vm_compute_cost(shape.instance_type, hours, pricing)
        items.append(LineItem(
            f"{shape.instance_type} on-demand", hours, "instance-hour", rate, compute,
        ))
    else:
        spot = backend is Backend.SERVERLESS_SPOT
        hourly = (
            shape.vcpu * pricing.serverless_vcpu_per_hour
            + as_fraction(shape.ram_gb) * pricing.serverless_gb_ram_per_hour
        )
        if spot:
            hourly *= 1 - pricing.spot_discount
        compute = hourly * hours
        flavor = "spot" if spot else "on-demand"
        items.append(LineItem(
            f"container compute {flavor} ({shape.vcpu} vCPU, {shape.ram_gb:g} GB)",
            hours, "task-hour", hourly, compute,
        ))

    storage = Fraction(0)
    if shape.volume is not None:
        vol = shape.volume
        per_hour = pricing.ebs_gb_month / pricing.hours_per_month
        capacity = as_fraction(vol.size_gb) * per_hour * hours
        items.append(LineItem(
            f"block volume capacity ({vol.size_gb:g} GB)", hours, "volume-hour",
            as_fraction(vol.size_gb) * per_hour, capacity,
        ))
        storage += capacity
        extra_tp = max(Fraction(0), as_fraction(vol.throughput_mibps) - pricing.ebs_free_throughput_mibps)
        if extra_tp > 0:
            rate = extra_tp * pricing.ebs_throughput_mibps_month / pricing.hours_per_month
            usd = rate * hours
            items.append(LineItem(
                f"volume throughput (+{float(extra_tp):g} MiB/s)", hours, "volume-hour", rate, usd,
            ))
            storage += usd
        extra_iops = max(Fraction(0), as_fraction(vol.iops) - pricing.ebs_free_iops)
        if extra_iops > 0:
            rate = extra_iops * pricing.ebs_iops_month / pricing.hours_per_month
            usd = rate * hours
            items.append(LineItem(
                f"volume IOPS (+{float(extra_iops):g})", hours, "volume-hour", rate, usd,
            ))
            storage += usd

    return CostBreakdown(
        compute_usd=compute,
        storage_usd=storage,
        total_usd=compute + storage,
        line_items=tuple(items),
    )
