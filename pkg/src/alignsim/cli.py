"""Operator entry point.

Commands:
  plan      feasibility table plus per-scenario cost estimates
  simulate  run the discrete-event simulation, write JSON + CSV artifacts
  run       execute a campaign through a backend driver with a resumable
            state journal
  report    render a result or run state as json / csv / table, plus PNG
            figures when writing to a file

Exit codes: 0 success, 2 config error, 3 precondition failure, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
import tempfile
from pathlib import Path

from . import config as config_mod
from . import dispatcher as dispatcher_mod
from . import report as report_mod
from . import simulator as simulator_mod
from .catalog import check_feasibility
from .costmodel import Backend, campaign_cost, round_usd
from .errors import AlignsimError, ConfigError, PreconditionError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_RUNTIME = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alignsim",
        description="Plan, cost and simulate batch alignment campaigns on serverless backends.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="feasibility table and scenario cost estimates")
    p_plan.add_argument("--catalog", metavar="F", help="service catalog file (default: shipped)")
    p_plan.add_argument("--workload", metavar="F", help="workload file (default: shipped human genome)")
    p_plan.add_argument("--pricing", metavar="F", help="pricing file (default: shipped us-east-1)")
    p_plan.add_argument("--scenarios", metavar="LIST",
                        help="comma-separated scenario names (default: all in the workload file)")

    p_sim = sub.add_parser("simulate", help="run the campaign simulation")
    p_sim.add_argument("--config", metavar="F", required=True, help="campaign config file")
    p_sim.add_argument("--seed", metavar="N", type=int, help="override the config seed")
    p_sim.add_argument("--replicas", metavar="N", type=int, default=1,
                       help="simulate N consecutive seeds, merged in seed order")
    p_sim.add_argument("--out", metavar="DIR", required=True, help="output directory")

    p_run = sub.add_parser("run", help="execute a campaign through a backend driver")
    p_run.add_argument("--config", metavar="F", required=True, help="campaign config file")
    p_run.add_argument("--driver", choices=("sim", "stub-cloud"), required=True)
    p_run.add_argument("--state", metavar="F", required=True, help="resumable state journal path")

    p_rep = sub.add_parser("report", help="render a result file or run journal")
    p_rep.add_argument("--in", dest="input", metavar="F", required=True)
    p_rep.add_argument("--format", choices=report_mod.FORMATS, default="table")
    p_rep.add_argument("--out", metavar="F", help="write here instead of stdout")
    p_rep.add_argument("--no-figures", action="store_true",
                       help="skip PNG figures when writing to --out")
    return parser


def _require_exists(path_text: str | None, what: str) -> Path | None:
    if path_text is None:
        return None
    path = Path(path_text)
    if not path.exists():
        raise ConfigError(f"{what} does not exist", path=path)
    return path


def cmd_plan(args) -> int:
    catalog = config_mod.load_catalog(_require_exists(args.catalog, "catalog file"))
    workload, scenarios = config_mod.load_workload(_require_exists(args.workload, "workload file"))
    pricing = config_mod.load_pricing(_require_exists(args.pricing, "pricing file"))

    print(f"workload: index {workload.index.size_gb:g} GB ({workload.index.genome_label}), "
          f"{len(workload.manifest)} files, {workload.total_sra_gb:.1f} GB SRA "
          f"-> {workload.total_fastq_gb / 1000:.2f} TB FASTQ")
    print()
    print("feasibility")
    name_width = max(len(s.name) for s in catalog)
    for service in catalog:
        report = check_feasibility(service, workload)
        reasons = "; ".join(f"{r.code.value}" for r in report.reasons) or "-"
        print(f"  {service.name:<{name_width}}  {report.verdict.value:<12} {reasons}")

    wanted = None
    if args.scenarios:
        wanted = [s.strip() for s in args.scenarios.split(",") if s.strip()]
        unknown = [s for s in wanted if s not in scenarios]
        if unknown:
            raise ConfigError(f"scenarios not defined in the workload file: {unknown}",
                              field="scenarios")
    if scenarios:
        print()
        print("cost estimates")
        for name, spec in scenarios.items():
            if wanted is not None and name not in wanted:
                continue
            shape = _scenario_shape(spec)
            hours = float(spec["task_hours"])
            breakdown = campaign_cost(Backend(name), shape, hours, 1, pricing)
            print(f"  {name:<16} {hours:>7.1f} task-hours  "
                  f"total {round_usd(breakdown.total_usd):>7.2f} USD  "
                  f"(compute {round_usd(breakdown.compute_usd):.2f}, "
                  f"storage {round_usd(breakdown.storage_usd):.2f})")
    return EXIT_OK


def _scenario_shape(spec: dict):
    from .costmodel import ResourceShape, VolumeSpec

    raw = spec.get("shape", {})
    raw_volume = raw.get("volume")
    volume = None
    if raw_volume:
        volume = VolumeSpec(
            size_gb=float(raw_volume["size_gb"]),
            throughput_mibps=float(raw_volume.get("throughput_mibps", 0)),
            iops=float(raw_volume.get("iops", 0)),
        )
    return ResourceShape(
        vcpu=int(raw.get("vcpu", 8)),
        ram_gb=float(raw.get("ram_gb", 48)),
        volume=volume,
        instance_type=raw.get("instance_type"),
    )


def _write_atomic(text: str, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_simulate(args) -> int:
    config_path = _require_exists(args.config, "campaign config")
    if args.replicas < 1:
        raise PreconditionError("--replicas must be >= 1")
    base_seed = args.seed
    if base_seed is None:
        loaded = config_mod.load_campaign(config_path)
        base_seed = loaded.seed if loaded.seed is not None else secrets.randbelow(2**31)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [base_seed + i for i in range(args.replicas)]
    summaries = []
    for seed in seeds:
        cfg = config_mod.load_campaign(config_path, seed_override=seed)
        result = simulator_mod.simulate_campaign(cfg)
        suffix = "" if args.replicas == 1 else f"-{seed}"
        result_json = json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
        _write_atomic(result_json, out_dir / f"result{suffix}.json")
        import io as _io

        buf = _io.StringIO()
        _per_file_csv_to(result, buf)
        _write_atomic(buf.getvalue(), out_dir / f"per_file{suffix}.csv")

        summary = simulator_mod.summarize(result)
        summaries.append(summary)
        counts = " ".join(f"{k}={v}" for k, v in summary["outcome_counts"].items())
        print(f"seed {seed}: makespan {summary['makespan_h']:.2f} h, "
              f"aggregate {summary['aggregate_task_hours']:.1f} task-hours, "
              f"cost {summary['cost']['total_usd']:.2f} USD, {counts}")
    if args.replicas > 1:
        merged = {"schema": "alignsim/replicas-v1", "seeds": seeds, "runs": summaries}
        _write_atomic(json.dumps(merged, indent=2, sort_keys=True) + "\n", out_dir / "replicas.json")
    return EXIT_OK


def _per_file_csv_to(result, buf) -> None:
    import csv as _csv

    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(simulator_mod.CSV_COLUMNS)
    for fr in result.per_file:
        writer.writerow([
            fr.accession, fr.worker, fr.attempts,
            f"{fr.stage_times['download']:.3f}",
            f"{fr.stage_times['convert']:.3f}",
            f"{fr.stage_times['align']:.3f}",
            fr.outcome,
        ])


def cmd_run(args) -> int:
    config_path = _require_exists(args.config, "campaign config")
    cfg = config_mod.load_campaign(config_path)
    if args.driver == "sim":
        driver = dispatcher_mod.SimBackendDriver(cfg)
    else:
        journal_path = Path(args.state).with_suffix(".calls.jsonl")
        driver = dispatcher_mod.StubCloudDriver(call_journal_path=journal_path)
    state = dispatcher_mod.run_campaign(cfg, driver, args.state)
    counts = state.terminal_counts()
    total = sum(counts.values())
    shown = " ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"campaign {state.campaign_id}: {total} terminal records ({shown})")
    if args.driver == "stub-cloud":
        print(f"stub cloud call journal: {journal_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    input_path = _require_exists(args.input, "report input")
    summary = report_mod.load_report_input(input_path)
    rendered = report_mod.render(summary, args.format)
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        _write_atomic(rendered, out_path)
        written = [out_path]
        if not args.no_figures:
            from . import figures

            written += figures.render_figures(summary, out_path.parent, stem=out_path.stem)
        for path in written:
            print(path)
    else:
        sys.stdout.write(rendered)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "plan": cmd_plan,
        "simulate": cmd_simulate,
        "run": cmd_run,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, ValueError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (AlignsimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
