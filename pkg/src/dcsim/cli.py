"""Command-line interface.

    dcsim run <scenario>... [--out DIR] [--format csv,json] [--trace] [--seed N] [--jobs N]
    dcsim profile --hosts 100,1000,10000,100000 [--out DIR]
    dcsim validate <scenario>

Exit codes: 0 success, 1 scenario validation error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from multiprocessing import Pool
from pathlib import Path

from .errors import DcsimError, ScenarioError
from .profiler import profile_instantiation
from .runner import emit_reports, run_scenario
from .scenario import load_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcsim",
                                     description="Cloud data-center simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one or more scenario files")
    run.add_argument("scenarios", nargs="+", help="scenario file paths (.toml or .json)")
    run.add_argument("--out", default=None, help="output directory (default: scenario's)")
    run.add_argument("--format", default="csv,json",
                     help="comma-separated report formats: csv,json")
    run.add_argument("--trace", action="store_true", help="write the event trace log")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--jobs", type=int, default=1,
                     help="run independent scenarios in parallel processes")

    profile = sub.add_parser("profile", help="profile datacenter instantiation cost")
    profile.add_argument("--hosts", default="100,1000,10000,100000",
                         help="comma-separated host counts, ascending")
    profile.add_argument("--out", default="out", help="output directory")

    validate = sub.add_parser("validate", help="validate a scenario file")
    validate.add_argument("scenario")
    return parser


def _run_one(args: tuple) -> tuple[str, str, float, float]:
    path, out_dir, formats, trace, seed = args
    spec = load_scenario(path)
    run_spec = spec.run
    if trace:
        run_spec = replace(run_spec, trace=True)
    if seed is not None:
        run_spec = replace(run_spec, seed=seed)
    spec = replace(spec, run=run_spec)
    report = run_scenario(spec)
    emit_reports(report, out_dir, formats=formats)
    return (str(path), str(out_dir), report.avg_turnaround, report.makespan)


def _cmd_run(args) -> int:
    formats = tuple(f.strip() for f in args.format.split(",") if f.strip())
    for f in formats:
        if f not in ("csv", "json"):
            print(f"unknown report format: {f}", file=sys.stderr)
            return 1
    jobs = []
    for path in args.scenarios:
        spec = load_scenario(path)  # fail fast on validation before any run starts
        base = Path(args.out) if args.out is not None else Path(spec.run.output_dir)
        out_dir = base / Path(path).stem if len(args.scenarios) > 1 else base
        jobs.append((path, str(out_dir), formats, args.trace, args.seed))
    if args.jobs > 1 and len(jobs) > 1:
        with Pool(processes=min(args.jobs, len(jobs))) as pool:
            results = pool.map(_run_one, jobs)
    else:
        results = [_run_one(job) for job in jobs]
    for path, out_dir, avg, makespan in results:
        print(f"{path}: avg_turnaround={avg:.3f}s makespan={makespan:.3f}s -> {out_dir}")
    return 0


def _cmd_profile(args) -> int:
    try:
        counts = [int(c) for c in args.hosts.split(",") if c.strip()]
        rows = profile_instantiation(counts)
    except ValueError as exc:
        print(f"--hosts must be ascending integers: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["host_count,build_seconds,peak_resident_bytes,method,error"]
    for r in rows:
        lines.append(f"{r.host_count},{r.build_seconds!r},{r.peak_resident_bytes},"
                     f"{r.method},{r.error or ''}")
    (out / "profile.csv").write_text("\n".join(lines) + "\n")
    for r in rows:
        status = r.error or f"{r.build_seconds:.3f}s, {r.peak_resident_bytes / 1e6:.1f} MB"
        print(f"{r.host_count:>8} hosts: {status}")
    return 0


def _cmd_validate(args) -> int:
    load_scenario(args.scenario)
    print(f"{args.scenario}: ok")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "profile":
            return _cmd_profile(args)
        return _cmd_validate(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 1
    except DcsimError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
