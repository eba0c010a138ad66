"""Declarative scenario files.

Scenarios are TOML (or JSON with the same structure) describing datacenters,
broker workloads, federation settings, and run options. Loading fills every
default and validates the document; the resolved spec is echoed into run
reports so results are reproducible from the report alone.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ScenarioError
from .market import CostRates
from .model import VmSpec
from .scheduling import SchedulerKind

_SCHEDULER_NAMES = {k.value: k for k in SchedulerKind}


@dataclass(frozen=True)
class DatacenterSpec:
    name: str
    host_count: int
    cores_per_host: int = 1
    mips_per_core: float = 1000.0
    ram_mb: float = 1024.0
    storage_mb: float = 2_000_000.0
    bw: float = 1000.0
    vm_scheduler: SchedulerKind = SchedulerKind.SPACE_SHARED
    costs: CostRates = CostRates()
    queueing: bool = False
    initial_busy_hosts: int = 0


@dataclass(frozen=True)
class VmGroupSpec:
    count: int
    cores: int = 1
    mips: float = 1000.0
    ram_mb: float = 512.0
    storage_mb: float = 1024.0
    cloudlet_scheduler: SchedulerKind = SchedulerKind.SPACE_SHARED


@dataclass(frozen=True)
class CloudletGroupSpec:
    count: int
    length_mi: float = 1.0
    input_bytes: float = 0.0
    output_bytes: float = 0.0
    binding: str = "round-robin"
    bindings: tuple[int, ...] = ()
    # Batches of (size, submission offset in seconds).
    schedule: tuple[tuple[int, float], ...] = ()


@dataclass(frozen=True)
class BrokerSpec:
    name: str
    vms: VmGroupSpec
    cloudlets: CloudletGroupSpec
    target: Optional[str] = None
    max_vms: Optional[int] = None


@dataclass(frozen=True)
class FederationSpec:
    enabled: bool = False
    members: tuple[str, ...] = ()
    link_latency: tuple[tuple[str, str, float], ...] = ()
    sensor_period: float = 10.0
    migration_delay: float = 0.0
    reference_vm: Optional[VmSpec] = None
    confirm_cloudlet_submit: bool = False


@dataclass(frozen=True)
class RunSpec:
    trace: bool = False
    output_dir: str = "out"
    seed: int = 0


@dataclass(frozen=True)
class ScenarioSpec:
    datacenters: tuple[DatacenterSpec, ...]
    brokers: tuple[BrokerSpec, ...] = ()
    federation: FederationSpec = FederationSpec()
    run: RunSpec = RunSpec()

    def to_dict(self) -> dict:
        """Fully-resolved plain-dict form; loading it back yields an equal spec."""
        return {
            "datacenters": [
                {
                    "name": d.name,
                    "host_count": d.host_count,
                    "cores_per_host": d.cores_per_host,
                    "mips_per_core": d.mips_per_core,
                    "ram_mb": d.ram_mb,
                    "storage_mb": d.storage_mb,
                    "bw": d.bw,
                    "vm_scheduler": d.vm_scheduler.value,
                    "costs": {
                        "cost_per_sec": d.costs.cost_per_sec,
                        "cost_per_mem": d.costs.cost_per_mem,
                        "cost_per_storage": d.costs.cost_per_storage,
                        "cost_per_bw": d.costs.cost_per_bw,
                    },
                    "queueing": d.queueing,
                    "initial_busy_hosts": d.initial_busy_hosts,
                }
                for d in self.datacenters
            ],
            "brokers": [
                {
                    "name": b.name,
                    **({"target": b.target} if b.target is not None else {}),
                    **({"max_vms": b.max_vms} if b.max_vms is not None else {}),
                    "vms": {
                        "count": b.vms.count,
                        "cores": b.vms.cores,
                        "mips": b.vms.mips,
                        "ram_mb": b.vms.ram_mb,
                        "storage_mb": b.vms.storage_mb,
                        "cloudlet_scheduler": b.vms.cloudlet_scheduler.value,
                    },
                    "cloudlets": {
                        "count": b.cloudlets.count,
                        "length_mi": b.cloudlets.length_mi,
                        "input_bytes": b.cloudlets.input_bytes,
                        "output_bytes": b.cloudlets.output_bytes,
                        "binding": b.cloudlets.binding,
                        **(
                            {"bindings": list(b.cloudlets.bindings)}
                            if b.cloudlets.binding == "explicit"
                            else {}
                        ),
                        "schedule": [[size, offset] for size, offset in b.cloudlets.schedule],
                    },
                }
                for b in self.brokers
            ],
            "federation": {
                "enabled": self.federation.enabled,
                "members": list(self.federation.members),
                "link_latency": _latency_to_dict(self.federation.link_latency),
                "sensor_period": self.federation.sensor_period,
                "migration_delay": self.federation.migration_delay,
                **(
                    {
                        "reference_vm": {
                            "cores": self.federation.reference_vm.cores,
                            "mips": self.federation.reference_vm.mips,
                            "ram_mb": self.federation.reference_vm.ram,
                            "storage_mb": self.federation.reference_vm.storage,
                        }
                    }
                    if self.federation.reference_vm is not None
                    else {}
                ),
                "confirm_cloudlet_submit": self.federation.confirm_cloudlet_submit,
            },
            "run": {
                "trace": self.run.trace,
                "output_dir": self.run.output_dir,
                "seed": self.run.seed,
            },
        }


def _latency_to_dict(entries) -> dict:
    table: dict[str, dict[str, float]] = {}
    for a, b, value in entries:
        table.setdefault(a, {})[b] = value
    return table


# -- parsing ---------------------------------------------------------------------


def _require(table: dict, key: str, kind, path: str):
    if key not in table:
        raise ScenarioError(f"missing required field '{key}'", path)
    return _typed(table[key], key, kind, path)


def _typed(value, key: str, kind, path: str):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise ScenarioError(f"field '{key}' has wrong type {type(value).__name__}", path)
    return value


def _optional(table: dict, key: str, kind, default, path: str):
    if key not in table:
        return default
    return _typed(table[key], key, kind, path)


def _positive(value, key: str, path: str):
    if value <= 0:
        raise ScenarioError(f"field '{key}' must be positive, got {value}", path)
    return value


def _non_negative(value, key: str, path: str):
    if value < 0:
        raise ScenarioError(f"field '{key}' must be non-negative, got {value}", path)
    return value


def _scheduler(table: dict, key: str, default: SchedulerKind, path: str) -> SchedulerKind:
    raw = _optional(table, key, str, default.value, path)
    if raw not in _SCHEDULER_NAMES:
        raise ScenarioError(
            f"field '{key}' must be one of {sorted(_SCHEDULER_NAMES)}, got {raw!r}", path)
    return _SCHEDULER_NAMES[raw]


def _reject_unknown(table: dict, known: set[str], path: str) -> None:
    for key in table:
        if key not in known:
            raise ScenarioError(f"unknown field '{key}'", path)


def _parse_datacenter(table: dict, path: str) -> DatacenterSpec:
    _reject_unknown(table, {
        "name", "host_count", "cores_per_host", "mips_per_core", "ram_mb",
        "storage_mb", "bw", "vm_scheduler", "costs", "queueing", "initial_busy_hosts",
    }, path)
    name = _require(table, "name", str, path)
    host_count = _non_negative(_require(table, "host_count", int, path), "host_count", path)
    costs_table = _optional(table, "costs", dict, {}, path)
    _reject_unknown(costs_table, {"cost_per_sec", "cost_per_mem", "cost_per_storage",
                                  "cost_per_bw"}, f"{path}.costs")
    costs = CostRates(
        cost_per_sec=_non_negative(
            _optional(costs_table, "cost_per_sec", float, 0.0, path), "cost_per_sec", path),
        cost_per_mem=_non_negative(
            _optional(costs_table, "cost_per_mem", float, 0.0, path), "cost_per_mem", path),
        cost_per_storage=_non_negative(
            _optional(costs_table, "cost_per_storage", float, 0.0, path), "cost_per_storage", path),
        cost_per_bw=_non_negative(
            _optional(costs_table, "cost_per_bw", float, 0.0, path), "cost_per_bw", path),
    )
    spec = DatacenterSpec(
        name=name,
        host_count=host_count,
        cores_per_host=_positive(
            _optional(table, "cores_per_host", int, 1, path), "cores_per_host", path),
        mips_per_core=_positive(
            _optional(table, "mips_per_core", float, 1000.0, path), "mips_per_core", path),
        ram_mb=_positive(_optional(table, "ram_mb", float, 1024.0, path), "ram_mb", path),
        storage_mb=_positive(
            _optional(table, "storage_mb", float, 2_000_000.0, path), "storage_mb", path),
        bw=_positive(_optional(table, "bw", float, 1000.0, path), "bw", path),
        vm_scheduler=_scheduler(table, "vm_scheduler", SchedulerKind.SPACE_SHARED, path),
        costs=costs,
        queueing=_optional(table, "queueing", bool, False, path),
        initial_busy_hosts=_non_negative(
            _optional(table, "initial_busy_hosts", int, 0, path), "initial_busy_hosts", path),
    )
    if spec.initial_busy_hosts > spec.host_count:
        raise ScenarioError(
            f"initial_busy_hosts {spec.initial_busy_hosts} exceeds host_count {spec.host_count}",
            path)
    return spec


def _parse_broker(table: dict, dc_names: set[str], path: str) -> BrokerSpec:
    _reject_unknown(table, {"name", "target", "max_vms", "vms", "cloudlets"}, path)
    name = _require(table, "name", str, path)
    target = _optional(table, "target", str, None, path)
    if target is not None and target not in dc_names:
        raise ScenarioError(f"target references unknown datacenter {target!r}", f"{path}.target")
    max_vms = _optional(table, "max_vms", int, None, path)
    if max_vms is not None:
        _non_negative(max_vms, "max_vms", path)

    vms_table = _optional(table, "vms", dict, {"count": 0}, path)
    vpath = f"{path}.vms"
    _reject_unknown(vms_table, {"count", "cores", "mips", "ram_mb", "storage_mb",
                                "cloudlet_scheduler"}, vpath)
    vms = VmGroupSpec(
        count=_non_negative(_require(vms_table, "count", int, vpath), "count", vpath),
        cores=_positive(_optional(vms_table, "cores", int, 1, vpath), "cores", vpath),
        mips=_positive(_optional(vms_table, "mips", float, 1000.0, vpath), "mips", vpath),
        ram_mb=_non_negative(
            _optional(vms_table, "ram_mb", float, 512.0, vpath), "ram_mb", vpath),
        storage_mb=_non_negative(
            _optional(vms_table, "storage_mb", float, 1024.0, vpath), "storage_mb", vpath),
        cloudlet_scheduler=_scheduler(
            vms_table, "cloudlet_scheduler", SchedulerKind.SPACE_SHARED, vpath),
    )

    cl_table = _optional(table, "cloudlets", dict, {"count": 0}, path)
    cpath = f"{path}.cloudlets"
    _reject_unknown(cl_table, {"count", "length_mi", "input_bytes", "output_bytes",
                               "binding", "bindings", "schedule"}, cpath)
    count = _non_negative(_require(cl_table, "count", int, cpath), "count", cpath)
    binding = _optional(cl_table, "binding", str, "round-robin", cpath)
    if binding not in ("round-robin", "explicit"):
        raise ScenarioError(f"binding must be 'round-robin' or 'explicit', got {binding!r}", cpath)
    bindings_raw = _optional(cl_table, "bindings", list, [], cpath)
    if binding == "explicit":
        if len(bindings_raw) != count:
            raise ScenarioError(
                f"explicit binding needs {count} entries, got {len(bindings_raw)}",
                f"{cpath}.bindings")
        for i, b in enumerate(bindings_raw):
            if not isinstance(b, int) or isinstance(b, bool) or not 0 <= b < vms.count:
                raise ScenarioError(
                    f"binding entry {i} must reference a declared VM index, got {b!r}",
                    f"{cpath}.bindings")
    elif bindings_raw:
        raise ScenarioError("bindings are only allowed with binding = 'explicit'",
                            f"{cpath}.bindings")
    if count > 0 and vms.count == 0:
        raise ScenarioError("cloudlets declared but the broker has no VMs", cpath)

    schedule_raw = _optional(cl_table, "schedule", list, None, cpath)
    if schedule_raw is None:
        schedule = ((count, 0.0),) if count else ()
    else:
        schedule = []
        for i, entry in enumerate(schedule_raw):
            spath = f"{cpath}.schedule[{i}]"
            if not isinstance(entry, list) or len(entry) != 2:
                raise ScenarioError("schedule entries are [size, offset_seconds]", spath)
            size = _typed(entry[0], "size", int, spath)
            offset = _typed(entry[1], "offset", float, spath)
            _positive(size, "size", spath)
            _non_negative(offset, "offset", spath)
            schedule.append((size, offset))
        if sum(s for s, _ in schedule) != count:
            raise ScenarioError(
                f"schedule sizes sum to {sum(s for s, _ in schedule)}, expected {count}", cpath)
        schedule = tuple(schedule)

    cloudlets = CloudletGroupSpec(
        count=count,
        length_mi=_non_negative(
            _optional(cl_table, "length_mi", float, 1.0, cpath), "length_mi", cpath),
        input_bytes=_non_negative(
            _optional(cl_table, "input_bytes", float, 0.0, cpath), "input_bytes", cpath),
        output_bytes=_non_negative(
            _optional(cl_table, "output_bytes", float, 0.0, cpath), "output_bytes", cpath),
        binding=binding,
        bindings=tuple(bindings_raw),
        schedule=tuple(schedule),
    )
    return BrokerSpec(name=name, vms=vms, cloudlets=cloudlets, target=target, max_vms=max_vms)


def _parse_federation(table: dict, dc_names: set[str], path: str) -> FederationSpec:
    _reject_unknown(table, {"enabled", "members", "link_latency", "sensor_period",
                            "migration_delay", "reference_vm", "confirm_cloudlet_submit"}, path)
    members_raw = _optional(table, "members", list, [], path)
    members = []
    for i, m in enumerate(members_raw):
        if not isinstance(m, str) or m not in dc_names:
            raise ScenarioError(f"member {m!r} is not a declared datacenter",
                                f"{path}.members[{i}]")
        members.append(m)
    latency_table = _optional(table, "link_latency", dict, {}, path)
    latency = []
    for a, row in latency_table.items():
        if a not in dc_names:
            raise ScenarioError(f"unknown datacenter {a!r}", f"{path}.link_latency")
        if not isinstance(row, dict):
            raise ScenarioError("link_latency rows are tables of name -> seconds",
                                f"{path}.link_latency.{a}")
        for b, value in row.items():
            if b not in dc_names:
                raise ScenarioError(f"unknown datacenter {b!r}", f"{path}.link_latency.{a}")
            value = _typed(value, b, float, f"{path}.link_latency.{a}")
            _non_negative(value, b, f"{path}.link_latency.{a}")
            latency.append((a, b, value))
    ref_table = _optional(table, "reference_vm", dict, None, path)
    reference = None
    if ref_table is not None:
        rpath = f"{path}.reference_vm"
        _reject_unknown(ref_table, {"cores", "mips", "ram_mb", "storage_mb"}, rpath)
        reference = VmSpec(
            cores=_positive(_optional(ref_table, "cores", int, 1, rpath), "cores", rpath),
            mips=_non_negative(_optional(ref_table, "mips", float, 0.0, rpath), "mips", rpath),
            ram=_non_negative(_optional(ref_table, "ram_mb", float, 0.0, rpath), "ram_mb", rpath),
            storage=_non_negative(
                _optional(ref_table, "storage_mb", float, 0.0, rpath), "storage_mb", rpath),
        )
    return FederationSpec(
        enabled=_optional(table, "enabled", bool, False, path),
        members=tuple(members),
        link_latency=tuple(latency),
        sensor_period=_positive(
            _optional(table, "sensor_period", float, 10.0, path), "sensor_period", path),
        migration_delay=_non_negative(
            _optional(table, "migration_delay", float, 0.0, path), "migration_delay", path),
        reference_vm=reference,
        confirm_cloudlet_submit=_optional(table, "confirm_cloudlet_submit", bool, False, path),
    )


def parse_scenario(document: dict, source: str = "<dict>") -> ScenarioSpec:
    if not isinstance(document, dict):
        raise ScenarioError("scenario document must be a table", source)
    _reject_unknown(document, {"datacenters", "brokers", "federation", "run"}, source)
    dcs_raw = document.get("datacenters")
    if not isinstance(dcs_raw, list) or not dcs_raw:
        raise ScenarioError("at least one [[datacenters]] entry is required", "datacenters")
    datacenters = tuple(
        _parse_datacenter(t, f"datacenters[{i}]") for i, t in enumerate(dcs_raw)
    )
    names = [d.name for d in datacenters]
    if len(set(names)) != len(names):
        raise ScenarioError("datacenter names must be unique", "datacenters")
    dc_names = set(names)

    brokers_raw = document.get("brokers", [])
    if not isinstance(brokers_raw, list):
        raise ScenarioError("brokers must be an array of tables", "brokers")
    brokers = tuple(
        _parse_broker(t, dc_names, f"brokers[{i}]") for i, t in enumerate(brokers_raw)
    )
    broker_names = [b.name for b in brokers]
    if len(set(broker_names)) != len(broker_names):
        raise ScenarioError("broker names must be unique", "brokers")

    federation = _parse_federation(document.get("federation", {}), dc_names, "federation")
    if federation.enabled and not federation.members:
        federation = replace(federation, members=tuple(names))

    run_table = document.get("run", {})
    _reject_unknown(run_table, {"trace", "output_dir", "seed"}, "run")
    run = RunSpec(
        trace=_optional(run_table, "trace", bool, False, "run"),
        output_dir=_optional(run_table, "output_dir", str, "out", "run"),
        seed=_optional(run_table, "seed", int, 0, "run"),
    )
    return ScenarioSpec(datacenters=datacenters, brokers=brokers,
                        federation=federation, run=run)


def load_scenario(path) -> ScenarioSpec:
    """Parse and validate a scenario file (.toml, or .json as echoed by reports)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", str(path))
    if path.suffix == ".json":
        try:
            document = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"JSON parse error: {exc}", str(path))
    else:
        try:
            document = tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"TOML parse error: {exc}", str(path))
    return parse_scenario(document, source=str(path))
