"""Scenario orchestration.

Builds the entity graph a scenario describes, runs the kernel to termination,
and assembles a run report whose aggregates are recomputable from its rows.
Report files are written atomically (temp file, then rename).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import InternalConsistencyError
from .federation import (
    CisRegistry,
    CloudCoordinator,
    CloudExchange,
    DatacenterBroker,
    FederationTopology,
    Sensor,
    ShutdownMonitor,
)
from .kernel import Simulation
from .model import Cloudlet, Datacenter, Host, PeSpec, Vm, VmSpec
from .scenario import DatacenterSpec, ScenarioSpec
from .profiler import ProfileRow


@dataclass(frozen=True)
class CloudletRow:
    cloudlet_id: int
    vm_id: int
    owner: str
    submit: Optional[float]
    start: Optional[float]
    finish: Optional[float]
    cpu_time: float
    dc: str
    success: bool


@dataclass(frozen=True)
class MigrationRow:
    time: float
    vm_id: int
    from_dc: str
    to_dc: str
    cloudlets_moved: int


@dataclass(frozen=True)
class InvoiceRow:
    owner: str
    kind: str
    quantity: float
    rate: float
    amount: float


@dataclass
class RunReport:
    scenario: dict
    rows: list[CloudletRow]
    avg_turnaround: float
    makespan: float
    total_cost: dict[str, float]
    migrations: list[MigrationRow]
    invoice_rows: list[InvoiceRow]
    finished_count: int
    failed_count: int
    final_time: float
    trace_lines: Optional[list[str]] = None
    profile: list[ProfileRow] = field(default_factory=list)


@dataclass
class BuiltScenario:
    sim: Simulation
    cis: CisRegistry
    datacenters: dict[str, Datacenter]
    brokers: list[DatacenterBroker]
    coordinators: dict[str, CloudCoordinator]
    exchange: Optional[CloudExchange]
    monitor: ShutdownMonitor


def build_datacenter(spec: DatacenterSpec) -> Datacenter:
    """Instantiate the full object graph of one datacenter."""
    cores = tuple(PeSpec(spec.mips_per_core) for _ in range(spec.cores_per_host))
    hosts = [
        Host(i, cores, spec.ram_mb, spec.storage_mb, spec.bw, spec.vm_scheduler)
        for i in range(spec.host_count)
    ]
    for host in hosts[: spec.initial_busy_hosts]:
        host.occupy_fully()
    return Datacenter(spec.name, hosts, costs=spec.costs, queueing=spec.queueing)


def build_simulation(spec: ScenarioSpec, trace_hook=None) -> BuiltScenario:
    """Register and wire every entity the scenario needs; does not run it."""
    sim = Simulation(trace_hook=trace_hook)
    cis = CisRegistry()
    sim.register(cis)

    exchange = None
    if spec.federation.enabled:
        exchange = CloudExchange()
        sim.register(exchange)

    datacenters: dict[str, Datacenter] = {}
    for dc_spec in spec.datacenters:
        dc = build_datacenter(dc_spec)
        sim.register(dc)
        datacenters[dc_spec.name] = dc

    members = [datacenters[name] for name in spec.federation.members]
    member_ids = tuple(dc.id for dc in members)
    latency = {
        (datacenters[a].id, datacenters[b].id): value
        for a, b, value in spec.federation.link_latency
    }
    topology = FederationTopology(members=member_ids, link_latency=latency)

    coordinators: dict[str, CloudCoordinator] = {}
    if spec.federation.enabled:
        for dc in members:
            coord = CloudCoordinator(
                f"{dc.name}-coordinator", home_dc=dc.id, topology=topology,
                exchange_id=exchange.id,
            )
            sim.register(coord)
            coordinators[dc.name] = coord

    monitor = ShutdownMonitor("monitor", expected_brokers=len(spec.brokers))
    sim.register(monitor)

    brokers: list[DatacenterBroker] = []
    for broker_spec in spec.brokers:
        broker = DatacenterBroker(
            broker_spec.name, cis_id=cis.id, monitor_id=monitor.id,
            max_vms=broker_spec.max_vms,
        )
        sim.register(broker)
        brokers.append(broker)

    # Workloads need entity ids, so they are built after registration.
    reference = spec.federation.reference_vm
    next_vm_id = 0
    next_cl_id = 0
    for broker_spec, broker in zip(spec.brokers, brokers):
        group = broker_spec.vms
        vms = [
            Vm(next_vm_id + i, broker.id, group.cores, group.mips, group.ram_mb,
               group.storage_mb, group.cloudlet_scheduler)
            for i in range(group.count)
        ]
        next_vm_id += group.count
        cl_group = broker_spec.cloudlets
        cloudlets = []
        for i in range(cl_group.count):
            if cl_group.binding == "explicit":
                bound = vms[cl_group.bindings[i]]
            else:
                bound = vms[i % len(vms)]
            cloudlets.append(Cloudlet(
                next_cl_id + i, broker.id, cl_group.length_mi,
                cl_group.input_bytes, cl_group.output_bytes, vm_id=bound.id))
        next_cl_id += cl_group.count
        submissions = []
        cursor = 0
        for size, offset in cl_group.schedule:
            for cl in cloudlets[cursor: cursor + size]:
                submissions.append((cl, offset))
            cursor += size
        requirements = VmSpec(group.cores, group.mips, group.ram_mb, group.storage_mb)
        target = datacenters[broker_spec.target].id if broker_spec.target else None
        broker.load_workload(vms, cloudlets, submissions, target_dc=target,
                             requirements=requirements)
        if reference is None and group.count:
            reference = requirements
    if reference is None:
        reference = VmSpec()

    rates_by_dc = {dc.id: dc.costs for dc in datacenters.values()}
    sinks = tuple(c.id for c in coordinators.values())
    if exchange is not None:
        sinks += (exchange.id,)
    for dc in datacenters.values():
        dc.cis_id = cis.id
        dc.rates_by_dc = rates_by_dc
        dc.migration_delay = spec.federation.migration_delay
        dc.confirm_cloudlet_submit = spec.federation.confirm_cloudlet_submit
        dc.link_latency = {
            other.id: topology.latency(dc.id, other.id)
            for other in datacenters.values() if other.id != dc.id
        }
        if dc.name in coordinators:
            dc.coordinator_id = coordinators[dc.name].id
            dc.sensor = Sensor(reference, period=spec.federation.sensor_period, sinks=sinks)

    return BuiltScenario(sim=sim, cis=cis, datacenters=datacenters, brokers=brokers,
                         coordinators=coordinators, exchange=exchange, monitor=monitor)


def _aggregate(rows: list[CloudletRow]) -> tuple[float, float, int, int]:
    finished = [r for r in rows if r.success and r.finish is not None]
    failed = len(rows) - len(finished)
    if not finished:
        return 0.0, 0.0, 0, failed
    turnarounds = [r.finish - r.submit for r in finished]
    avg = sum(turnarounds) / len(turnarounds)
    makespan = max(r.finish for r in finished) - min(r.submit for r in finished)
    return avg, makespan, len(finished), failed


def collect_report(built: BuiltScenario, spec: ScenarioSpec, final_time: float,
                   trace_lines=None) -> RunReport:
    entity_name = {}
    for dc in built.datacenters.values():
        entity_name[dc.id] = dc.name
    for broker in built.brokers:
        entity_name[broker.id] = broker.name

    rows = []
    for broker in built.brokers:
        for ret in broker.collected:
            cl = ret.cloudlet
            rows.append(CloudletRow(
                cloudlet_id=cl.id,
                vm_id=cl.vm_id,
                owner=broker.name,
                submit=cl.submit_time,
                start=cl.start_time,
                finish=cl.finish_time if ret.success else None,
                cpu_time=cl.cpu_time,
                dc=entity_name.get(cl.current_dc, ""),
                success=ret.success,
            ))
    rows.sort(key=lambda r: r.cloudlet_id)
    avg, makespan, finished, failed = _aggregate(rows)

    invoice_rows = []
    total_cost: dict[str, float] = {}
    for dc in built.datacenters.values():
        for owner, invoice in dc.invoices.items():
            owner_name = entity_name.get(owner, str(owner))
            total_cost[owner_name] = total_cost.get(owner_name, 0.0) + invoice.total
            for item in invoice.items:
                invoice_rows.append(InvoiceRow(
                    owner=owner_name, kind=item.kind.value, quantity=item.quantity,
                    rate=item.rate, amount=item.amount))

    migrations = []
    for coord in built.coordinators.values():
        for rec in coord.migration_log:
            migrations.append(MigrationRow(
                time=rec.time, vm_id=rec.vm_id,
                from_dc=entity_name.get(rec.from_dc, str(rec.from_dc)),
                to_dc=entity_name.get(rec.to_dc, str(rec.to_dc)),
                cloudlets_moved=rec.cloudlets_moved))
    migrations.sort(key=lambda m: (m.time, m.vm_id))

    return RunReport(
        scenario=spec.to_dict(),
        rows=rows,
        avg_turnaround=avg,
        makespan=makespan,
        total_cost=total_cost,
        migrations=migrations,
        invoice_rows=invoice_rows,
        finished_count=finished,
        failed_count=failed,
        final_time=final_time,
        trace_lines=trace_lines,
    )


def run_scenario(spec: ScenarioSpec) -> RunReport:
    """Build, run to termination, and report. Same spec and seed, same report."""
    trace_lines = [] if spec.run.trace else None
    hook = (lambda ev: trace_lines.append(ev.trace_line())) if spec.run.trace else None
    built = build_simulation(spec, trace_hook=hook)
    final_time = built.sim.run()
    return collect_report(built, spec, final_time, trace_lines)


# -- report emission ------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def emit_reports(report: RunReport, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write cloudlets/migrations/invoices/profile CSVs, summary.json, trace.log."""
    avg, makespan, finished, failed = _aggregate(report.rows)
    if abs(avg - report.avg_turnaround) > 1e-9 or abs(makespan - report.makespan) > 1e-9:
        raise InternalConsistencyError("report aggregates do not match row data")
    recomputed_cost: dict[str, float] = {}
    for inv in report.invoice_rows:
        recomputed_cost[inv.owner] = recomputed_cost.get(inv.owner, 0.0) + inv.amount
    for owner, total in report.total_cost.items():
        if abs(recomputed_cost.get(owner, 0.0) - total) > 1e-9 * max(1.0, total):
            raise InternalConsistencyError(f"total cost of {owner} does not match line items")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if "csv" in formats:
        lines = ["cloudlet_id,vm_id,submit,start,finish,cpu_time"]
        for r in report.rows:
            lines.append(",".join([
                str(r.cloudlet_id), str(r.vm_id), _fmt(r.submit), _fmt(r.start),
                _fmt(r.finish), _fmt(r.cpu_time)]))
        path = out / "cloudlets.csv"
        _write_atomic(path, "\n".join(lines) + "\n")
        written.append(path)

        lines = ["time,vm_id,from_dc,to_dc,cloudlets_moved"]
        for m in report.migrations:
            lines.append(",".join([
                _fmt(m.time), str(m.vm_id), m.from_dc, m.to_dc, str(m.cloudlets_moved)]))
        path = out / "migrations.csv"
        _write_atomic(path, "\n".join(lines) + "\n")
        written.append(path)

        lines = ["owner,kind,quantity,rate,amount"]
        for inv in report.invoice_rows:
            lines.append(",".join([
                inv.owner, inv.kind, _fmt(inv.quantity), _fmt(inv.rate), _fmt(inv.amount)]))
        path = out / "invoices.csv"
        _write_atomic(path, "\n".join(lines) + "\n")
        written.append(path)

        lines = ["host_count,build_seconds,peak_resident_bytes,method,error"]
        for p in report.profile:
            lines.append(",".join([
                str(p.host_count), _fmt(p.build_seconds), str(p.peak_resident_bytes),
                p.method, p.error or ""]))
        path = out / "profile.csv"
        _write_atomic(path, "\n".join(lines) + "\n")
        written.append(path)

    if "json" in formats:
        summary = {
            "scenario": report.scenario,
            "aggregates": {
                "avg_turnaround_s": report.avg_turnaround,
                "makespan_s": report.makespan,
                "total_cost": report.total_cost,
            },
            "cloudlets": {
                "total": len(report.rows),
                "finished": report.finished_count,
                "failed": report.failed_count,
            },
            "migrations": len(report.migrations),
            "final_time_s": report.final_time,
        }
        path = out / "summary.json"
        _write_atomic(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
        written.append(path)
        path = out / "scenario_echo.json"
        _write_atomic(path, json.dumps(report.scenario, indent=2, sort_keys=True) + "\n")
        written.append(path)

    if report.trace_lines is not None:
        path = out / "trace.log"
        _write_atomic(path, "\n".join(report.trace_lines) + "\n")
        written.append(path)

    return written
