"""Config file loading: catalog, pricing, workload and campaign documents.

Every document carries a versioned ``schema`` tag. YAML and JSON are both
accepted (JSON is a YAML subset). Quantities that appear with provider units
(GiB, days, minutes) are declared as ``{value, unit}`` pairs and normalized
to GB / seconds at load time.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import yaml

from .catalog import GIB_IN_GB, ServiceSpec, StorageKind, StorageOption
from .costmodel import PricingTable, ResourceShape, VolumeSpec
from .errors import ConfigError, SchemaError
from .simulator import (
    BackendProfile,
    CampaignConfig,
    FailureModel,
    OptimizationFlags,
    ThroughputModel,
    calibrate_throughput,
)
from .workload import (
    FileEntry,
    IndexSpec,
    WorkloadSpec,
    generate_synthetic_manifest,
    load_manifest,
)

CATALOG_SCHEMA = "alignsim/catalog-v1"
PRICING_SCHEMA = "alignsim/pricing-v1"
WORKLOAD_SCHEMA = "alignsim/workload-v1"
CAMPAIGN_SCHEMA = "alignsim/campaign-v1"

_SIZE_UNITS_GB = {"gb": 1.0, "gib": GIB_IN_GB, "tb": 1000.0, "tib": 1024 * GIB_IN_GB}
_TIME_UNITS_S = {"s": 1.0, "seconds": 1.0, "min": 60.0, "minutes": 60.0,
                 "h": 3600.0, "hours": 3600.0, "days": 86400.0}


def default_path(name: str) -> Path:
    """Path of a packaged default data file (catalog.yaml, pricing.yaml, ...)."""
    return Path(str(resources.files("alignsim").joinpath("data", name)))


def load_document(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError("file does not exist", path=path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"cannot parse: {exc}", path=path,
                          line=None if mark is None else mark.line + 1) from exc
    if not isinstance(doc, dict):
        raise ConfigError("document must be a mapping", path=path)
    return doc


def _require_schema(doc: dict, expected: str, path) -> None:
    tag = doc.get("schema")
    if tag != expected:
        raise SchemaError(f"expected schema {expected!r}, got {tag!r}", path=path, field="schema")


_SENTINEL = object()


def _get(doc: dict, field: str, path, default=_SENTINEL):
    if field in doc:
        return doc[field]
    if default is _SENTINEL:
        raise ConfigError("required field missing", path=path, field=field)
    return default


def _size_gb(raw, path, field) -> float | None:
    """Normalize a capacity: number (GB), {value, unit} pair, or 'unbounded'."""
    if raw is None or raw == "unbounded":
        return None
    if isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(raw, dict):
        unit = str(raw.get("unit", "GB")).lower()
        if unit not in _SIZE_UNITS_GB:
            raise ConfigError(f"unknown size unit {raw.get('unit')!r}", path=path, field=field)
        return float(raw["value"]) * _SIZE_UNITS_GB[unit]
    raise ConfigError(f"cannot read size {raw!r}", path=path, field=field)


def _duration_s(raw, path, field) -> float | None:
    if raw is None or raw == "unbounded":
        return None
    if isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(raw, dict):
        unit = str(raw.get("unit", "s")).lower()
        if unit not in _TIME_UNITS_S:
            raise ConfigError(f"unknown time unit {raw.get('unit')!r}", path=path, field=field)
        return float(raw["value"]) * _TIME_UNITS_S[unit]
    raise ConfigError(f"cannot read duration {raw!r}", path=path, field=field)


# --------------------------------------------------------------------------
# Catalog


def load_catalog(path: str | Path | None = None) -> list[ServiceSpec]:
    path = Path(path) if path is not None else default_path("catalog.yaml")
    doc = load_document(path)
    _require_schema(doc, CATALOG_SCHEMA, path)
    services = []
    for i, svc in enumerate(_get(doc, "services", path)):
        where = f"services[{i}]"
        try:
            options = tuple(
                StorageOption(
                    kind=StorageKind(opt["kind"]),
                    max_capacity_gb=_size_gb(opt.get("capacity"), path, f"{where}.storage"),
                )
                for opt in svc.get("storage", [])
            )
            services.append(ServiceSpec(
                name=_get(svc, "name", path),
                max_task_duration_s=_duration_s(svc.get("max_task_duration"), path, f"{where}.max_task_duration"),
                max_ram_gb=_size_gb(_get(svc, "max_ram", path), path, f"{where}.max_ram"),
                storage_options=options,
                notes=svc.get("notes", ""),
            ))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc), path=path, field=where) from exc
    if not services:
        raise ConfigError("catalog lists no services", path=path, field="services")
    return services


# --------------------------------------------------------------------------
# Pricing


def load_pricing(path: str | Path | None = None) -> PricingTable:
    path = Path(path) if path is not None else default_path("pricing.yaml")
    doc = load_document(path)
    _require_schema(doc, PRICING_SCHEMA, path)
    try:
        serverless = _get(doc, "serverless", path)
        ebs = _get(doc, "ebs", path)
        return PricingTable(
            serverless_vcpu_per_hour=serverless["vcpu_per_hour"],
            serverless_gb_ram_per_hour=serverless["gb_ram_per_hour"],
            spot_discount=serverless.get("spot_discount", 0.7),
            vm_rates=dict(_get(doc, "vm_rates", path)),
            ebs_gb_month=ebs["gb_month"],
            ebs_throughput_mibps_month=ebs["throughput_mibps_month"],
            ebs_free_throughput_mibps=ebs["free_throughput_mibps"],
            ebs_iops_month=ebs["iops_month"],
            ebs_free_iops=ebs["free_iops"],
            hours_per_month=doc.get("hours_per_month", 730),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path=path) from exc


# --------------------------------------------------------------------------
# Workload


def load_workload(path: str | Path | None = None) -> tuple[WorkloadSpec, dict]:
    """Load a workload file; returns the spec plus the raw scenario block."""
    path = Path(path) if path is not None else default_path("workload-human.yaml")
    doc = load_document(path)
    _require_schema(doc, WORKLOAD_SCHEMA, path)
    return _workload_from_doc(doc, path), doc.get("scenarios", {})


def _workload_from_doc(doc: dict, path) -> WorkloadSpec:
    idx = _get(doc, "index", path)
    try:
        load_t = idx["load_time_s"]
        index = IndexSpec(
            genome_label=idx.get("genome_label", "unnamed genome"),
            size_gb=float(idx["size_gb"]),
            load_time_s=(float(load_t["min"]), float(load_t["max"])),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path=path, field="index") from exc

    manifest = _manifest_from_doc(_get(doc, "manifest", path), path)
    try:
        return WorkloadSpec(
            index=index,
            manifest=tuple(manifest),
            expansion_factor=float(doc.get("expansion_factor", 7.362)),
            temp_factor=float(doc.get("temp_factor", 0.5)),
            align_fraction=float(doc.get("align_fraction", 0.725)),
            ram_overhead_factor=float(doc.get("ram_overhead_factor", 1.6)),
            vcpu=int(doc.get("vcpu", 8)),
            ram_gb=float(doc.get("ram_gb", 48.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), path=path) from exc


def _manifest_from_doc(raw, path) -> list[FileEntry]:
    if isinstance(raw, dict) and "synthetic" in raw:
        spec = raw["synthetic"]
        try:
            entries = generate_synthetic_manifest(
                count=int(spec["count"]),
                total_gb=float(spec["total_gb"]),
                max_gb=float(spec["max_gb"]),
                seed=int(spec.get("seed", 0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(str(exc), path=path, field="manifest.synthetic") from exc
        declared_total = float(spec["total_gb"])
        total = sum(e.sra_size_gb for e in entries)
        if abs(total - declared_total) > 1e-3 * declared_total:
            raise ConfigError(
                f"synthetic manifest total {total:.3f} deviates from declared {declared_total}",
                path=path, field="manifest.synthetic",
            )
        return entries
    if isinstance(raw, dict) and "file" in raw:
        manifest_path = Path(raw["file"])
        if not manifest_path.is_absolute():
            manifest_path = Path(path).parent / manifest_path
        try:
            entries = load_manifest(manifest_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc), path=path, field="manifest.file") from exc
        _check_declared(entries, raw, path)
        return entries
    if isinstance(raw, list):
        try:
            entries = [FileEntry(str(item["accession"]), float(item["size_gb"])) for item in raw]
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(str(exc), path=path, field="manifest") from exc
        return entries
    raise ConfigError("manifest must be a list, a {file: ...} or a {synthetic: ...} block",
                      path=path, field="manifest")


def _check_declared(entries: list[FileEntry], raw: dict, path) -> None:
    declared_total = raw.get("total_gb")
    declared_max = raw.get("max_gb")
    total = sum(e.sra_size_gb for e in entries)
    biggest = max(e.sra_size_gb for e in entries)
    if declared_total is not None and abs(total - float(declared_total)) > 1e-3 * float(declared_total):
        raise ConfigError(f"manifest sums to {total:.3f} GB, declared total is {declared_total}",
                          path=path, field="manifest.total_gb")
    if declared_max is not None and abs(biggest - float(declared_max)) > 1e-2 * float(declared_max):
        raise ConfigError(f"largest manifest entry is {biggest:.3f} GB, declared max is {declared_max}",
                          path=path, field="manifest.max_gb")


# --------------------------------------------------------------------------
# Campaign


def load_campaign(path: str | Path, seed_override: int | None = None) -> CampaignConfig:
    path = Path(path)
    doc = load_document(path)
    _require_schema(doc, CAMPAIGN_SCHEMA, path)

    raw_workload = _get(doc, "workload", path)
    if isinstance(raw_workload, dict) and "file" in raw_workload:
        wl_path = Path(raw_workload["file"])
        if not wl_path.is_absolute():
            wl_path = path.parent / wl_path
        workload, _ = load_workload(wl_path)
    else:
        workload = _workload_from_doc(raw_workload, path)

    raw_backend = _get(doc, "backend", path)
    try:
        backend = BackendProfile(
            kind=raw_backend["kind"],
            speed_factor=float(raw_backend.get("speed_factor", 1.0)),
            provision_delay_s=float(raw_backend.get("provision_delay_s", 0.0)),
            interruption_rate_per_hour=float(raw_backend.get("interruption_rate_per_hour", 0.0)),
            reclaim_notice_s=float(raw_backend.get("reclaim_notice_s", 0.0)),
            stage_speed_factors=raw_backend.get("stage_speed_factors"),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path=path, field="backend") from exc

    raw_shape = _get(doc, "shape", path)
    try:
        raw_volume = raw_shape.get("volume")
        volume = None
        if raw_volume is not None:
            volume = VolumeSpec(
                size_gb=float(raw_volume["size_gb"]),
                throughput_mibps=float(raw_volume.get("throughput_mibps", 0.0)),
                iops=float(raw_volume.get("iops", 0.0)),
            )
        shape = ResourceShape(
            vcpu=int(raw_shape["vcpu"]),
            ram_gb=float(raw_shape["ram_gb"]),
            volume=volume,
            instance_type=raw_shape.get("instance_type"),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path=path, field="shape") from exc

    raw_failure = doc.get("failure", {})
    try:
        failure = FailureModel(
            oom_probability_by_ram=raw_failure.get(
                "oom_probability_by_ram", {shape.ram_gb: 0.0}
            ),
            retry_on_oom=bool(raw_failure.get("retry_on_oom", False)),
            max_attempts=int(raw_failure.get("max_attempts", 3)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), path=path, field="failure") from exc

    raw_opt = doc.get("optimization", {})
    try:
        optimization = OptimizationFlags(
            early_termination=bool(raw_opt.get("early_termination", False)),
            low_quality_fraction=float(raw_opt.get("low_quality_fraction", 0.34)),
            checkpoint_fraction=float(raw_opt.get("checkpoint_fraction", 0.33)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), path=path, field="optimization") from exc

    raw_tp = _get(doc, "throughput", path)
    try:
        if "calibrate" in raw_tp:
            cal = raw_tp["calibrate"]
            reference = BackendProfile(
                kind=cal.get("reference_backend", "vm"),
                speed_factor=float(cal.get("reference_speed_factor", 1.0)),
            )
            throughput = calibrate_throughput(
                workload,
                reference_task_hours=float(cal["reference_task_hours"]),
                reference_backend=reference,
                worker_count=int(cal.get("worker_count", doc.get("worker_count", 1))),
            )
        else:
            throughput = ThroughputModel(
                align_gb_per_hour=float(raw_tp["align_gb_per_hour"]),
                other_gb_per_hour=float(raw_tp["other_gb_per_hour"]),
            )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path=path, field="throughput") from exc

    raw_pricing = doc.get("pricing", "default")
    if raw_pricing == "default":
        pricing = load_pricing()
    elif isinstance(raw_pricing, dict) and "file" in raw_pricing:
        pr_path = Path(raw_pricing["file"])
        if not pr_path.is_absolute():
            pr_path = path.parent / pr_path
        pricing = load_pricing(pr_path)
    else:
        raise ConfigError("pricing must be 'default' or a {file: ...} block",
                          path=path, field="pricing")

    seed = seed_override if seed_override is not None else int(doc.get("seed", 0))
    try:
        return CampaignConfig(
            workload=workload,
            backend=backend,
            failure=failure,
            optimization=optimization,
            throughput=throughput,
            worker_count=int(_get(doc, "worker_count", path)),
            shape=shape,
            pricing=pricing,
            seed=seed,
            campaign_id=str(doc.get("campaign_id", path.stem)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), path=path) from exc


def dump_json(data: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
