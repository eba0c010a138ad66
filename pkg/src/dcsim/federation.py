"""Inter-cloud machinery.

The CIS registry makes datacenters discoverable; brokers drive workloads on
behalf of users; each federated datacenter has a coordinator that handles
provisioning overflow by redirecting VM creation to the least-loaded peer,
informed by sensor load reports aggregated at the cloud exchange.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .errors import ProtocolError
from .kernel import Entity, Event, Tag
from .model import (
    Cloudlet,
    CloudletReturn,
    MigrateCommand,
    OverflowRequest,
    RejectionReason,
    Vm,
    VmCreateAck,
    VmCreateRequest,
    VmLocation,
    VmSpec,
)


@dataclass(frozen=True)
class LoadReport:
    """Snapshot of a datacenter's spare capacity at a point in simulated time."""

    dc_id: int
    free_slots: int
    busy_ratio: float
    host_count: int
    timestamp: float


class Sensor:
    """Senses host availability at its home datacenter and publishes reports."""

    def __init__(self, reference: VmSpec, period: float = 10.0, sinks: tuple[int, ...] = ()):
        self.reference = reference
        self.period = period
        self.sinks = sinks
        self.last_report: Optional[LoadReport] = None

    def observe(self, dc, now: float) -> LoadReport:
        report = LoadReport(
            dc_id=dc.id,
            free_slots=dc.estimate_free_slots(self.reference),
            busy_ratio=dc.busy_ratio(),
            host_count=dc.host_count,
            timestamp=now,
        )
        self.last_report = report
        return report


@dataclass(frozen=True)
class FederationTopology:
    """Federated datacenters and the latency of the links between them."""

    members: tuple[int, ...]
    link_latency: dict = None  # (a, b) -> seconds; missing pairs use the default
    default_latency: float = 0.0

    def latency(self, a: int, b: int) -> float:
        if a == b:
            return 0.0
        table = self.link_latency or {}
        value = table.get((a, b), table.get((b, a), self.default_latency))
        if value < 0:
            raise ValueError("link latency must be non-negative")
        return value


@dataclass(frozen=True)
class PlacementQuery:
    vm_id: int
    exclude_dc: int


@dataclass(frozen=True)
class PlacementAnswer:
    vm_id: int
    dc_id: Optional[int]


@dataclass(frozen=True)
class MigrationRecord:
    time: float
    vm_id: int
    from_dc: int
    to_dc: int
    cloudlets_moved: int


def select_least_loaded(reports: dict[int, LoadReport], exclude: int) -> Optional[int]:
    """Datacenter with the lowest busy ratio among those reporting a free slot.

    Ties break on the lower datacenter id.
    """
    best = None
    for dc_id, report in reports.items():
        if dc_id == exclude or report.free_slots <= 0:
            continue
        key = (report.busy_ratio, dc_id)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


def _consume_slot(reports: dict[int, LoadReport], dc_id: int) -> None:
    """Optimistically account for a placement until the next fresh report arrives."""
    report = reports[dc_id]
    bump = 1.0 / report.host_count if report.host_count else 0.0
    reports[dc_id] = replace(
        report,
        free_slots=report.free_slots - 1,
        busy_ratio=min(1.0, report.busy_ratio + bump),
    )


class CisRegistry(Entity):
    """Cloud Information Service: datacenters register, brokers discover."""

    def __init__(self, name: str = "cis"):
        super().__init__(name)
        self.entries: dict[int, object] = {}

    def handle(self, event: Event) -> None:
        if event.tag is Tag.REGISTER:
            if event.src in self.entries:
                raise ProtocolError(f"datacenter {event.src} is already registered")
            self.entries[event.src] = event.payload
        elif event.tag is Tag.DC_LIST_REQUEST:
            self.send(event.src, 0.0, Tag.DC_LIST_REPLY, self.query(event.payload))

    def query(self, requirements: Optional[VmSpec]) -> tuple[int, ...]:
        """Datacenters able in principle to host the spec, in registration order."""
        return tuple(
            dc_id
            for dc_id, ch in self.entries.items()
            if requirements is None or ch.can_host(requirements)
        )


class CloudExchange(Entity):
    """Match-maker: aggregates published supply and answers placement queries."""

    def __init__(self, name: str = "exchange"):
        super().__init__(name)
        self.supply: dict[int, LoadReport] = {}

    def handle(self, event: Event) -> None:
        if event.tag is Tag.SENSOR_REPORT:
            self._accept_report(event.payload)
        elif event.tag is Tag.PLACEMENT_QUERY:
            query: PlacementQuery = event.payload
            dc_id = select_least_loaded(self.supply, exclude=query.exclude_dc)
            if dc_id is not None:
                _consume_slot(self.supply, dc_id)
            self.send(event.src, 0.0, Tag.PLACEMENT_REPLY, PlacementAnswer(query.vm_id, dc_id))

    def _accept_report(self, report: LoadReport) -> None:
        current = self.supply.get(report.dc_id)
        if current is None or report.timestamp >= current.timestamp:
            self.supply[report.dc_id] = report

    def datacenters_with_capacity(self) -> list[int]:
        return [dc_id for dc_id, r in self.supply.items() if r.free_slots > 0]


@dataclass
class _PendingPlacement:
    vm: Optional[Vm]  # None for live migrations, where the home dc holds the VM
    reply_to: Optional[int]  # broker to relay the ack to; None for live migrations


class CloudCoordinator(Entity):
    """Per-datacenter federation agent: overflow redirection and VM migration."""

    def __init__(self, name: str, home_dc: int, topology: FederationTopology,
                 exchange_id: Optional[int] = None):
        super().__init__(name)
        self.home_dc = home_dc
        self.topology = topology
        self.exchange_id = exchange_id
        self.reports: dict[int, LoadReport] = {}
        self.pending: dict[int, _PendingPlacement] = {}
        self.vm_locations: dict[int, int] = {}
        self.migration_log: list[MigrationRecord] = []
        self.failed_placements: list[tuple[float, int, Optional[int]]] = []
        self._forwarded: set[int] = set()

    def handle(self, event: Event) -> None:
        tag = event.tag
        if tag is Tag.SENSOR_REPORT:
            self._accept_report(event.payload)
        elif tag is Tag.MIGRATE_REQUEST:
            self._on_overflow(event.payload)
        elif tag is Tag.PLACEMENT_REPLY:
            answer: PlacementAnswer = event.payload
            self._place(answer.vm_id, answer.dc_id)
        elif tag is Tag.VM_CREATE_ACK:
            self._on_remote_ack(event.payload)
        elif tag is Tag.MIGRATE_VM:
            self._on_migrate_command(event.payload)

    def _accept_report(self, report: LoadReport) -> None:
        current = self.reports.get(report.dc_id)
        if current is None or report.timestamp >= current.timestamp:
            self.reports[report.dc_id] = report

    def _on_overflow(self, overflow: OverflowRequest) -> None:
        vm = overflow.request.vm
        if vm.id in self._forwarded:
            # A request is forwarded at most once; a second overflow for the
            # same VM reports no capacity rather than risking a loop.
            self._report_location(vm.id, None, RejectionReason.NO_CAPACITY)
            return
        self.pending[vm.id] = _PendingPlacement(vm, overflow.request.reply_to)
        if self.exchange_id is not None:
            self.send(self.exchange_id, 0.0, Tag.PLACEMENT_QUERY,
                      PlacementQuery(vm.id, exclude_dc=self.home_dc))
        else:
            dc_id = select_least_loaded(self.reports, exclude=self.home_dc)
            if dc_id is not None:
                _consume_slot(self.reports, dc_id)
            self._place(vm.id, dc_id)

    def _place(self, vm_id: int, dc_id: Optional[int]) -> None:
        entry = self.pending.get(vm_id)
        if entry is None:
            raise ProtocolError(f"placement answer for unknown VM {vm_id}")
        if dc_id is None:
            self.pending.pop(vm_id)
            self.failed_placements.append((self.now, vm_id, None))
            self._report_location(vm_id, None, RejectionReason.NO_CAPACITY)
            return
        self._forwarded.add(vm_id)
        request = VmCreateRequest(entry.vm, reply_to=self.id, forwarded=True,
                                  origin_dc=self.home_dc)
        self.send(dc_id, self.topology.latency(self.home_dc, dc_id), Tag.VM_CREATE, request)

    def _on_remote_ack(self, ack: VmCreateAck) -> None:
        entry = self.pending.pop(ack.vm_id, None)
        if entry is None:
            raise ProtocolError(f"ack for VM {ack.vm_id} the coordinator never forwarded")
        if ack.success:
            self.vm_locations[ack.vm_id] = ack.dc_id
            self.migration_log.append(MigrationRecord(
                self.now, ack.vm_id, self.home_dc, ack.dc_id, ack.cloudlets_attached))
            self._report_location(ack.vm_id, ack.dc_id, None)
            if entry.reply_to is not None:
                self.send(entry.reply_to, 0.0, Tag.VM_CREATE_ACK, ack)
        else:
            self.failed_placements.append((self.now, ack.vm_id, ack.dc_id))
            self._report_location(ack.vm_id, None, ack.reason or RejectionReason.NO_CAPACITY,
                                  ack.returned_cloudlets)

    def _report_location(self, vm_id: int, dc_id: Optional[int],
                         reason: Optional[RejectionReason],
                         returned_cloudlets: tuple = ()) -> None:
        self.send(self.home_dc, 0.0, Tag.VM_LOCATION,
                  VmLocation(vm_id, dc_id, reason, returned_cloudlets))

    def _on_migrate_command(self, cmd: MigrateCommand) -> None:
        """Live-migrate a running VM: same spec at the destination, tasks keep
        their remaining work, the origin instance is destroyed."""
        self.pending[cmd.vm_id] = _PendingPlacement(vm=None, reply_to=None)
        self.send(self.home_dc, 0.0, Tag.MIGRATE_VM, cmd)


class ShutdownMonitor(Entity):
    """Ends the run once every broker has collected its workload."""

    def __init__(self, name: str, expected_brokers: int):
        super().__init__(name)
        self.remaining = expected_brokers

    def handle(self, event: Event) -> None:
        if event.tag is Tag.START and self.remaining <= 0:
            self.sim.broadcast(self.id, Tag.END_SIMULATION)
        elif event.tag is Tag.BROKER_DONE:
            self.remaining -= 1
            if self.remaining == 0:
                self.sim.broadcast(self.id, Tag.END_SIMULATION)


class DatacenterBroker(Entity):
    """Mediates between a user workload and the datacenters.

    Discovers providers through the CIS, requests VM creation, submits task
    units on schedule, collects results, and destroys each VM once all of its
    tasks have returned.
    """

    def __init__(self, name: str, cis_id: Optional[int] = None,
                 monitor_id: Optional[int] = None, max_vms: Optional[int] = None):
        super().__init__(name)
        self.cis_id = cis_id
        self.monitor_id = monitor_id
        self.max_vms = max_vms
        self.vms: list[Vm] = []
        self.cloudlets: list[Cloudlet] = []
        self.submissions: list[tuple[Cloudlet, float]] = []
        self.target_dc: Optional[int] = None
        self.requirements: Optional[VmSpec] = None
        # Run state.
        self.acks: dict[int, VmCreateAck] = {}
        self.created: set[int] = set()
        self.destroyed: set[int] = set()
        self.collected: list[CloudletReturn] = []
        self.confirmations: list[int] = []
        self.done = False
        self._outstanding: dict[int, int] = {}
        self._returns = 0

    def load_workload(self, vms: list[Vm], cloudlets: list[Cloudlet],
                      submissions: list[tuple[Cloudlet, float]],
                      target_dc: Optional[int] = None,
                      requirements: Optional[VmSpec] = None) -> None:
        self.vms = vms
        self.cloudlets = cloudlets
        self.submissions = submissions
        self.target_dc = target_dc
        self.requirements = requirements
        self._outstanding = {vm.id: 0 for vm in vms}
        for cl in cloudlets:
            self._outstanding[cl.vm_id] = self._outstanding.get(cl.vm_id, 0) + 1

    def handle(self, event: Event) -> None:
        tag = event.tag
        if tag is Tag.START:
            self._on_start()
        elif tag is Tag.DC_LIST_REPLY:
            self._dispatch(event.payload)
        elif tag is Tag.VM_CREATE_ACK:
            self._on_ack(event.payload)
        elif tag is Tag.CLOUDLET_RETURN:
            self._on_return(event.payload)
        elif tag is Tag.CLOUDLET_SUBMIT_ACK:
            self.confirmations.append(event.payload)

    def _on_start(self) -> None:
        if not self.vms and not self.cloudlets:
            self._check_done()
            return
        if self.cis_id is not None:
            self.send(self.cis_id, 0.0, Tag.DC_LIST_REQUEST, self.requirements)
        else:
            self._dispatch((self.target_dc,) if self.target_dc is not None else ())

    def _dispatch(self, dc_list: tuple[int, ...]) -> None:
        target = self.target_dc if self.target_dc is not None else (
            dc_list[0] if dc_list else None)
        if target is None:
            # No provider can host the workload; report everything as failed.
            for vm in self.vms:
                self.acks[vm.id] = VmCreateAck(vm.id, False, None, -1,
                                               RejectionReason.NO_CAPACITY)
            for cl in self.cloudlets:
                self.collected.append(CloudletReturn(cl, False))
                self._returns += 1
            self._check_done()
            return
        self.target_dc = target
        for index, vm in enumerate(self.vms):
            if self.max_vms is not None and index >= self.max_vms:
                # Negotiated quota reached: excess VMs fail without a request.
                self.acks[vm.id] = VmCreateAck(vm.id, False, None, -1,
                                               RejectionReason.NO_CAPACITY)
                continue
            self.send(target, 0.0, Tag.VM_CREATE, VmCreateRequest(vm, reply_to=self.id))
        for cl, offset in self.submissions:
            self.send(target, offset, Tag.CLOUDLET_SUBMIT, cl)
        self._check_done()

    def _on_ack(self, ack: VmCreateAck) -> None:
        self.acks[ack.vm_id] = ack
        if ack.success:
            self.created.add(ack.vm_id)
            self._maybe_destroy(ack.vm_id)
        self._check_done()

    def _on_return(self, ret: CloudletReturn) -> None:
        self.collected.append(ret)
        self._returns += 1
        vm_id = ret.cloudlet.vm_id
        if vm_id in self._outstanding:
            self._outstanding[vm_id] -= 1
        self._maybe_destroy(vm_id)
        self._check_done()

    def _maybe_destroy(self, vm_id: int) -> None:
        if (vm_id in self.created and vm_id not in self.destroyed
                and self._outstanding.get(vm_id, 0) <= 0):
            self.destroyed.add(vm_id)
            self.send(self.target_dc, 0.0, Tag.VM_DESTROY, vm_id)

    def _check_done(self) -> None:
        if self.done:
            return
        if self._returns < len(self.cloudlets):
            return
        if any(vm.id not in self.acks for vm in self.vms):
            return
        self.done = True
        for vm_id in sorted(self.created - self.destroyed):
            self.destroyed.add(vm_id)
            self.send(self.target_dc, 0.0, Tag.VM_DESTROY, vm_id)
        if self.monitor_id is not None:
            self.send(self.monitor_id, 0.0, Tag.BROKER_DONE, self.name)
