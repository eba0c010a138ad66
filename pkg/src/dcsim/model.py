"""Data-center domain model.

Hosts, VMs, task units (cloudlets), SAN storage, advertised characteristics,
and the Datacenter entity that provisions VMs first-come-first-serve, drives
task progress updates, and bills usage. All mutation happens inside the
datacenter's event handler.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .errors import InternalConsistencyError, ProtocolError
from .kernel import Entity, Event, Tag
from .market import CostRates, Invoice, charge_cloudlet_prorated, charge_vm_creation
from .scheduling import (
    SchedulerKind,
    make_cloudlet_scheduler,
    pick_cores_space_shared,
    vm_shares_space_shared,
    vm_shares_time_shared,
)

_SLOT_CAP = 10**9  # free-slot estimates are capped instead of reporting infinity


class RejectionReason(str, enum.Enum):
    NO_CORES = "NO_CORES"
    NO_RAM = "NO_RAM"
    NO_STORAGE = "NO_STORAGE"
    # Federation-level outcome: no datacenter in the federation had a slot.
    NO_CAPACITY = "NO_CAPACITY"


class VmState(str, enum.Enum):
    REQUESTED = "REQUESTED"
    RUNNING = "RUNNING"
    QUEUED = "QUEUED"
    DESTROYED = "DESTROYED"
    MIGRATING = "MIGRATING"


class CloudletStatus(str, enum.Enum):
    CREATED = "CREATED"
    QUEUED = "QUEUED"
    RUNNING = "RUNNING"
    PAUSED = "PAUSED"
    FINISHED = "FINISHED"


@dataclass(frozen=True)
class PeSpec:
    """One processing core, rated in million instructions per second."""

    mips: float

    def __post_init__(self):
        if self.mips <= 0:
            raise ValueError("core MIPS must be positive")


@dataclass(frozen=True)
class VmSpec:
    """Resource requirements of a VM: used for CIS queries and slot estimates."""

    cores: int = 1
    mips: float = 0.0
    ram: float = 0.0
    storage: float = 0.0


class Cloudlet:
    """Application task unit: a fixed amount of work plus I/O sizes."""

    __slots__ = (
        "id",
        "owner",
        "length",
        "input_size",
        "output_size",
        "vm_id",
        "remaining",
        "status",
        "submit_time",
        "start_time",
        "finish_time",
        "cpu_time",
        "current_dc",
        "rate_log",
    )

    def __init__(self, id: int, owner: int, length: float, input_size: float = 0.0,
                 output_size: float = 0.0, vm_id: int = -1):
        if length < 0:
            raise ValueError("cloudlet length must be non-negative")
        self.id = id
        self.owner = owner
        self.length = float(length)
        self.input_size = float(input_size)
        self.output_size = float(output_size)
        self.vm_id = vm_id
        self.remaining = float(length)
        self.status = CloudletStatus.CREATED
        self.submit_time: Optional[float] = None
        self.start_time: Optional[float] = None
        self.finish_time: Optional[float] = None
        self.cpu_time = 0.0
        self.current_dc = -1
        # (t0, t1, rate, dc) for every interval the task was executing.
        self.rate_log: list[tuple[float, float, float, int]] = []

    def __repr__(self):
        return f"Cloudlet({self.id}, vm={self.vm_id}, remaining={self.remaining})"

    # -- lifecycle ---------------------------------------------------------

    def mark_queued(self) -> None:
        if self.status not in (
            CloudletStatus.CREATED,
            CloudletStatus.QUEUED,
            CloudletStatus.PAUSED,
        ):
            raise InternalConsistencyError(f"cannot queue cloudlet in state {self.status}")
        self.status = CloudletStatus.QUEUED

    def mark_running(self, now: float) -> None:
        if self.status not in (
            CloudletStatus.CREATED,
            CloudletStatus.QUEUED,
            CloudletStatus.PAUSED,
        ):
            raise InternalConsistencyError(f"cannot start cloudlet in state {self.status}")
        self.status = CloudletStatus.RUNNING
        if self.start_time is None:
            self.start_time = now

    def mark_paused(self) -> None:
        if self.status is CloudletStatus.FINISHED:
            raise InternalConsistencyError("cannot pause a finished cloudlet")
        self.status = CloudletStatus.PAUSED

    def mark_finished(self, when: float) -> None:
        if self.status is not CloudletStatus.RUNNING:
            raise InternalConsistencyError(f"cannot finish cloudlet in state {self.status}")
        if self.start_time is not None and when < self.start_time - 1e-9:
            raise InternalConsistencyError("finish time precedes start time")
        self.status = CloudletStatus.FINISHED
        self.finish_time = when

    # -- work integration ----------------------------------------------------

    def run_for(self, rate: float, t0: float, t1: float, drain: bool = False) -> None:
        """Consume work over [t0, t1] at ``rate`` MIPS; ``drain`` zeroes the remainder."""
        self.cpu_time += t1 - t0
        self.rate_log.append((t0, t1, rate, self.current_dc))
        if drain:
            self.remaining = 0.0
        else:
            self.remaining = max(0.0, self.remaining - rate * (t1 - t0))

    def executed_mi(self) -> float:
        return sum(rate * (t1 - t0) for t0, t1, rate, _ in self.rate_log)

    def cpu_time_by_dc(self) -> dict[int, float]:
        by_dc: dict[int, float] = {}
        for t0, t1, _, dc in self.rate_log:
            by_dc[dc] = by_dc.get(dc, 0.0) + (t1 - t0)
        return by_dc


class Vm:
    """Virtualized server: requested resources plus a task-unit scheduler."""

    __slots__ = ("id", "owner", "cores", "mips", "ram", "storage",
                 "cloudlet_scheduler", "state", "host_id", "scheduler")

    def __init__(self, id: int, owner: int, cores: int, mips: float, ram: float,
                 storage: float, cloudlet_scheduler: SchedulerKind):
        if cores < 1:
            raise ValueError("a VM requires at least one core")
        if mips <= 0:
            raise ValueError("requested MIPS must be positive")
        self.id = id
        self.owner = owner
        self.cores = cores
        self.mips = float(mips)
        self.ram = float(ram)
        self.storage = float(storage)
        self.cloudlet_scheduler = cloudlet_scheduler
        self.state = VmState.REQUESTED
        self.host_id: Optional[int] = None
        self.scheduler = None

    def __repr__(self):
        return f"Vm({self.id}, {self.state.value}, host={self.host_id})"

    @property
    def spec(self) -> VmSpec:
        return VmSpec(self.cores, self.mips, self.ram, self.storage)


class Host:
    """Physical node: cores, RAM, storage, bandwidth, and a VM scheduling policy."""

    __slots__ = ("id", "cores", "ram", "storage", "bandwidth", "vm_scheduler",
                 "free_ram", "free_storage", "_grants", "_residents", "last_update")

    def __init__(self, id: int, cores: tuple[PeSpec, ...], ram: float, storage: float,
                 bandwidth: float, vm_scheduler: SchedulerKind):
        self.id = id
        self.cores = cores
        self.ram = ram
        self.storage = storage
        self.bandwidth = bandwidth
        self.vm_scheduler = vm_scheduler
        self.free_ram = ram
        self.free_storage = storage
        self._grants: Optional[dict[int, tuple[int, ...]]] = None
        self._residents: Optional[dict[int, Vm]] = None
        self.last_update = 0.0

    def __repr__(self):
        return f"Host({self.id}, cores={len(self.cores)}, {self.vm_scheduler.value})"

    @property
    def grants(self) -> dict[int, tuple[int, ...]]:
        if self._grants is None:
            self._grants = {}
        return self._grants

    @property
    def residents(self) -> dict[int, Vm]:
        if self._residents is None:
            self._residents = {}
        return self._residents

    @property
    def is_busy(self) -> bool:
        return bool(self._residents) or bool(self._grants)

    def occupy_fully(self) -> None:
        """Mark the host as consumed by unmodeled background load."""
        self.grants[-1] = tuple(range(len(self.cores)))
        self.free_ram = 0.0
        self.free_storage = 0.0

    # -- placement checks ------------------------------------------------------

    def _free_qualifying_cores(self, min_mips: float) -> int:
        if not self._grants:
            return sum(1 for pe in self.cores if pe.mips >= min_mips)
        taken = {i for idxs in self._grants.values() for i in idxs}
        return sum(1 for i, pe in enumerate(self.cores) if i not in taken and pe.mips >= min_mips)

    def fits(self, req) -> Optional[RejectionReason]:
        """First failing constraint for the request, or None when it fits now.

        Under time-shared VM scheduling CPU never rejects; shares shrink instead.
        """
        if self.vm_scheduler is SchedulerKind.SPACE_SHARED:
            if self._free_qualifying_cores(req.mips) < req.cores:
                return RejectionReason.NO_CORES
        if req.ram > self.free_ram:
            return RejectionReason.NO_RAM
        if req.storage > self.free_storage:
            return RejectionReason.NO_STORAGE
        return None

    def count_fits(self, req) -> int:
        """How many copies of the request could be placed on this host right now."""
        limits = [_SLOT_CAP]
        if self.vm_scheduler is SchedulerKind.SPACE_SHARED:
            limits.append(self._free_qualifying_cores(req.mips) // req.cores)
        if req.ram > 0:
            limits.append(int(self.free_ram // req.ram))
        if req.storage > 0:
            limits.append(int(self.free_storage // req.storage))
        return min(limits)

    # -- allocation --------------------------------------------------------------

    def allocate(self, vm: Vm) -> None:
        """Grant resources to a VM the caller has already checked with fits()."""
        if self.vm_scheduler is SchedulerKind.SPACE_SHARED:
            idxs = pick_cores_space_shared(
                [pe.mips for pe in self.cores], self.grants, vm.cores, vm.mips
            )
            if idxs is None:
                raise InternalConsistencyError(f"host {self.id} cannot back vm {vm.id}")
            self.grants[vm.id] = idxs
        self.residents[vm.id] = vm
        self.free_ram -= vm.ram
        self.free_storage -= vm.storage
        vm.scheduler = make_cloudlet_scheduler(vm.cloudlet_scheduler, vm.cores)
        vm.host_id = self.id
        self.refresh_shares()

    def release(self, vm: Vm) -> None:
        del self.residents[vm.id]
        self.grants.pop(vm.id, None)
        self.free_ram += vm.ram
        self.free_storage += vm.storage
        vm.scheduler = None
        vm.host_id = None
        self.refresh_shares()

    def refresh_shares(self) -> None:
        residents = self._residents
        if not residents:
            return
        mips = [pe.mips for pe in self.cores]
        if self.vm_scheduler is SchedulerKind.SPACE_SHARED:
            grants = {vm_id: idxs for vm_id, idxs in self.grants.items() if vm_id >= 0}
            shares = vm_shares_space_shared(mips, grants)
        else:
            requests = {vm.id: (vm.cores, vm.mips) for vm in residents.values()}
            shares = vm_shares_time_shared(mips, requests)
        for vm in residents.values():
            vm.scheduler.set_share(shares[vm.id])

    # -- progress protocol ---------------------------------------------------------

    def update_processing(self, now: float) -> tuple[list[Cloudlet], Optional[float]]:
        """Advance every resident VM's tasks to ``now``.

        Returns the tasks that completed in the elapsed interval and the next
        expected completion instant across resident VMs (None when idle).
        """
        if now < self.last_update:
            raise InternalConsistencyError(
                f"host {self.id} asked to update backwards: {self.last_update} -> {now}"
            )
        finished: list[Cloudlet] = []
        if self._residents:
            for vm in self._residents.values():
                finished.extend(vm.scheduler.advance(self.last_update, now))
        self.last_update = now
        return finished, self.next_completion(now)

    def next_completion(self, now: float) -> Optional[float]:
        best = None
        if self._residents:
            for vm in self._residents.values():
                t = vm.scheduler.next_completion(now)
                if t is not None and (best is None or t < best):
                    best = t
        return best

    # -- invariants (exercised by the test suite) -----------------------------------

    def check_invariants(self) -> None:
        if not (-1e-9 <= self.free_ram <= self.ram + 1e-9):
            raise InternalConsistencyError(f"host {self.id} RAM accounting off: {self.free_ram}")
        if not (-1e-9 <= self.free_storage <= self.storage + 1e-9):
            raise InternalConsistencyError(f"host {self.id} storage accounting off")
        seen: set[int] = set()
        for idxs in self.grants.values():
            for i in idxs:
                if i in seen:
                    raise InternalConsistencyError(f"host {self.id} core {i} double-granted")
                seen.add(i)
        if len(seen) > len(self.cores):
            raise InternalConsistencyError(f"host {self.id} granted more cores than it has")
        capacity = sum(pe.mips for pe in self.cores)
        biggest = max((pe.mips for pe in self.cores), default=0.0)
        total_share = 0.0
        for vm in self.residents.values():
            for entry in vm.scheduler.share:
                if entry > biggest + 1e-6:
                    raise InternalConsistencyError(
                        f"host {self.id} share {entry} exceeds core capacity"
                    )
                total_share += entry
        if total_share > capacity + 1e-6:
            raise InternalConsistencyError(
                f"host {self.id} total share {total_share} exceeds capacity {capacity}"
            )


class SanStorage:
    """Storage area network: capacity accounting plus a simple transfer-delay model."""

    def __init__(self, capacity: float, bandwidth: float, latency: float = 0.0):
        self.capacity = capacity
        self.bandwidth = bandwidth
        self.latency = latency
        self.used = 0.0

    def reserve(self, mb: float) -> None:
        if self.used + mb > self.capacity:
            raise ValueError(f"SAN reservation of {mb} MB exceeds capacity")
        self.used += mb

    def free(self, mb: float) -> None:
        self.used = max(0.0, self.used - mb)

    def transfer_time(self, size_bytes: float) -> float:
        return self.latency + (size_bytes * 8.0) / (self.bandwidth * 1e6)


class HostSummary(NamedTuple):
    cores: int
    mips: float
    ram: float
    storage: float

    def can_host(self, req) -> bool:
        return (
            self.cores >= req.cores
            and self.mips >= req.mips
            and self.ram >= req.ram
            and self.storage >= req.storage
        )


@dataclass(frozen=True)
class DatacenterCharacteristics:
    """Advertised capabilities and unit costs; the object registered with the CIS."""

    dc_id: int
    host_summaries: tuple[HostSummary, ...]
    costs: CostRates

    def can_host(self, req) -> bool:
        return any(s.can_host(req) for s in self.host_summaries)


# -- message payloads ---------------------------------------------------------------


@dataclass
class VmCreateRequest:
    vm: Vm
    reply_to: int
    forwarded: bool = False
    origin_dc: Optional[int] = None
    cloudlets: tuple = ()


@dataclass
class VmCreateAck:
    vm_id: int
    success: bool
    host_id: Optional[int]
    dc_id: int
    reason: Optional[RejectionReason] = None
    cloudlets_attached: int = 0
    returned_cloudlets: tuple = ()


@dataclass
class CloudletReturn:
    cloudlet: Cloudlet
    success: bool


@dataclass
class OverflowRequest:
    request: VmCreateRequest
    reason: RejectionReason


@dataclass
class VmLocation:
    vm_id: int
    dc_id: Optional[int]
    reason: Optional[RejectionReason] = None
    returned_cloudlets: tuple = ()


@dataclass
class MigrateCommand:
    vm_id: int
    dest_dc: int


class _HeldVm:
    """A VM request parked at the datacenter (queued or awaiting federation)."""

    __slots__ = ("request", "cloudlets")

    def __init__(self, request: VmCreateRequest):
        self.request = request
        self.cloudlets: list[Cloudlet] = list(request.cloudlets)


class Datacenter(Entity):
    """Core infrastructure entity: hosts, FCFS VM provisioning, billing, updates."""

    def __init__(self, name: str, hosts: list[Host], costs: CostRates = CostRates(),
                 queueing: bool = False):
        super().__init__(name)
        self.hosts = list(hosts)
        self.costs = costs
        self.queueing = queueing
        # Wiring filled in by the scenario runner before the simulation starts.
        self.cis_id: Optional[int] = None
        self.coordinator_id: Optional[int] = None
        self.sensor = None
        self.link_latency: dict[int, float] = {}
        self.migration_delay = 0.0
        self.rates_by_dc: dict[int, CostRates] = {}
        self.confirm_cloudlet_submit = False
        # Live state.
        self.vms: dict[int, Vm] = {}
        self.vm_hosts: dict[int, Host] = {}
        self.pending: deque[_HeldVm] = deque()
        self.resolving: dict[int, _HeldVm] = {}
        self.tombstones: dict[int, int] = {}
        self.invoices: dict[int, Invoice] = {}
        self._predictions: dict[int, tuple[Host, float]] = {}
        self._scheduled_update: Optional[float] = None
        self._characteristics: Optional[DatacenterCharacteristics] = None

    # -- characteristics ------------------------------------------------------------

    def characteristics(self) -> DatacenterCharacteristics:
        if self._characteristics is None:
            cache: dict[HostSummary, HostSummary] = {}
            summaries = []
            for host in self.hosts:
                s = HostSummary(len(host.cores), max(pe.mips for pe in host.cores),
                                host.ram, host.storage)
                summaries.append(cache.setdefault(s, s))
            self._characteristics = DatacenterCharacteristics(
                dc_id=self.id, host_summaries=tuple(summaries), costs=self.costs
            )
        return self._characteristics

    @property
    def host_count(self) -> int:
        return len(self.hosts)

    def busy_ratio(self) -> float:
        if not self.hosts:
            return 0.0
        return sum(1 for h in self.hosts if h.is_busy) / len(self.hosts)

    def estimate_free_slots(self, reference: VmSpec) -> int:
        return min(_SLOT_CAP, sum(h.count_fits(reference) for h in self.hosts))

    def invoice_for(self, owner: int) -> Invoice:
        inv = self.invoices.get(owner)
        if inv is None:
            inv = self.invoices[owner] = Invoice(owner)
        return inv

    def _rates_directory(self) -> dict[int, CostRates]:
        return self.rates_by_dc if self.rates_by_dc else {self.id: self.costs}

    def _latency(self, dc_id: int) -> float:
        return self.link_latency.get(dc_id, 0.0)

    # -- event handling ------------------------------------------------------------

    def handle(self, event: Event) -> None:
        tag = event.tag
        if tag is Tag.INTERNAL_UPDATE:
            self._on_internal_update()
        elif tag is Tag.CLOUDLET_SUBMIT:
            self._on_cloudlet_submit(event)
        elif tag is Tag.VM_CREATE:
            self._on_vm_create(event)
        elif tag is Tag.VM_DESTROY:
            self._on_vm_destroy(event)
        elif tag is Tag.VM_LOCATION:
            self._on_vm_location(event)
        elif tag is Tag.MIGRATE_VM:
            self._on_migrate_out(event)
        elif tag is Tag.SENSOR_TICK:
            self._on_sensor_tick()
        elif tag is Tag.START:
            self._on_start()
        # Other tags (e.g. END_SIMULATION) need no action here.

    def _on_start(self) -> None:
        if self.cis_id is not None:
            self.send(self.cis_id, 0.0, Tag.REGISTER, self.characteristics())
        if self.sensor is not None:
            self.emit_load_report()
            if self.sensor.period > 0:
                self.send(self.id, self.sensor.period, Tag.SENSOR_TICK, daemon=True)

    def _on_sensor_tick(self) -> None:
        self.emit_load_report()
        if self.sensor.period > 0:
            self.send(self.id, self.sensor.period, Tag.SENSOR_TICK, daemon=True)

    def emit_load_report(self) -> None:
        """Publish a fresh availability report; called periodically and on state change."""
        if self.sensor is None:
            return
        report = self.sensor.observe(self, self.now)
        for sink in self.sensor.sinks:
            self.send(sink, 0.0, Tag.SENSOR_REPORT, report, daemon=True)

    # -- VM lifecycle -----------------------------------------------------------------

    def provision(self, vm) -> tuple[Optional[Host], Optional[RejectionReason]]:
        """First host in index order able to satisfy cores, RAM, and storage."""
        reason = None
        for host in self.hosts:
            r = host.fits(vm)
            if r is None:
                return host, None
            if reason is None:
                reason = r
        return None, reason or RejectionReason.NO_CORES

    def _admit(self, held: _HeldVm) -> tuple[Optional[Host], Optional[RejectionReason]]:
        vm = held.request.vm
        host, reason = self.provision(vm)
        if host is None:
            return None, reason
        now = self.now
        self._sync_host(host, now)
        host.allocate(vm)
        vm.state = VmState.RUNNING
        self.vms[vm.id] = vm
        self.vm_hosts[vm.id] = host
        self.invoice_for(vm.owner).extend(charge_vm_creation(self.costs, vm))
        for cl in held.cloudlets:
            if cl.submit_time is None:
                cl.submit_time = now
            cl.current_dc = self.id
            vm.scheduler.submit(cl, now)
        self._refresh_prediction(host, now)
        self.emit_load_report()
        return host, None

    def _on_vm_create(self, event: Event) -> None:
        req: VmCreateRequest = event.payload
        vm = req.vm
        if (vm.id in self.vms or vm.id in self.resolving or vm.id in self.tombstones
                or any(h.request.vm.id == vm.id for h in self.pending)):
            raise ProtocolError(f"duplicate VM id {vm.id} at datacenter {self.name}")
        held = _HeldVm(req)
        host, reason = self._admit(held)
        if host is not None:
            self.send(req.reply_to, 0.0, Tag.VM_CREATE_ACK, VmCreateAck(
                vm.id, True, host.id, self.id, cloudlets_attached=len(req.cloudlets)))
            self._schedule_update()
            return
        if not req.forwarded and self.coordinator_id is not None:
            self.resolving[vm.id] = held
            self.send(self.coordinator_id, 0.0, Tag.MIGRATE_REQUEST,
                      OverflowRequest(req, reason))
        elif not req.forwarded and self.queueing:
            vm.state = VmState.QUEUED
            self.pending.append(held)
        else:
            self.send(req.reply_to, 0.0, Tag.VM_CREATE_ACK, VmCreateAck(
                vm.id, False, None, self.id, reason=reason,
                returned_cloudlets=tuple(held.cloudlets)))

    def _on_vm_location(self, event: Event) -> None:
        loc: VmLocation = event.payload
        held = self.resolving.pop(loc.vm_id, None)
        if held is None:
            raise ProtocolError(f"location update for unknown VM {loc.vm_id}")
        vm = held.request.vm
        if loc.dc_id is not None:
            self.tombstones[vm.id] = loc.dc_id
            for cl in held.cloudlets:
                self.send(loc.dc_id, self._latency(loc.dc_id), Tag.CLOUDLET_SUBMIT, cl)
            return
        held.cloudlets.extend(loc.returned_cloudlets)
        if vm.state is VmState.MIGRATING:
            # Failed live migration: the capacity we freed is still here, so
            # re-admission normally succeeds and the tasks resume locally.
            host, _ = self._admit(held)
            if host is not None:
                self._schedule_update()
                return
        if self.queueing:
            vm.state = VmState.QUEUED
            self.pending.append(held)
        else:
            self.send(held.request.reply_to, 0.0, Tag.VM_CREATE_ACK, VmCreateAck(
                vm.id, False, None, self.id, reason=loc.reason or RejectionReason.NO_CAPACITY))
            self._fail_cloudlets(held.cloudlets)

    def _on_vm_destroy(self, event: Event) -> None:
        vm_id: int = event.payload
        if vm_id in self.tombstones:
            dest = self.tombstones[vm_id]
            self.send(dest, self._latency(dest), Tag.VM_DESTROY, vm_id)
            return
        if vm_id in self.vms:
            vm = self.vms.pop(vm_id)
            host = self.vm_hosts.pop(vm_id)
            now = self.now
            self._sync_host(host, now)
            leftovers = vm.scheduler.detach_all()
            host.release(vm)
            vm.state = VmState.DESTROYED
            self._fail_cloudlets(leftovers)
            self._refresh_prediction(host, now)
            self._activate_pending()
            self.emit_load_report()
            self._schedule_update()
            return
        for held in self.pending:
            if held.request.vm.id == vm_id:
                self.pending.remove(held)
                held.request.vm.state = VmState.DESTROYED
                self._fail_cloudlets(held.cloudlets)
                return
        raise ProtocolError(f"destroy for unknown VM {vm_id} at {self.name}")

    def _activate_pending(self) -> None:
        """Strict FIFO retry: admit queued VMs from the head until one fails."""
        while self.pending:
            held = self.pending[0]
            host, _ = self._admit(held)
            if host is None:
                break
            self.pending.popleft()
            self.send(held.request.reply_to, 0.0, Tag.VM_CREATE_ACK, VmCreateAck(
                held.request.vm.id, True, host.id, self.id))
        self._schedule_update()

    def _on_migrate_out(self, event: Event) -> None:
        cmd: MigrateCommand = event.payload
        if cmd.vm_id not in self.vms:
            raise ProtocolError(f"migrate for VM {cmd.vm_id} not running at {self.name}")
        vm = self.vms.pop(cmd.vm_id)
        host = self.vm_hosts.pop(cmd.vm_id)
        now = self.now
        self._sync_host(host, now)
        moved = vm.scheduler.detach_all()
        host.release(vm)
        vm.state = VmState.MIGRATING
        req = VmCreateRequest(vm, reply_to=event.src, forwarded=True,
                              origin_dc=self.id, cloudlets=tuple(moved))
        held = _HeldVm(req)
        # The detached tasks travel inside the request; the transit buffer only
        # collects submissions that arrive while the VM is in flight.
        held.cloudlets = []
        self.resolving[vm.id] = held
        delay = self._latency(cmd.dest_dc) + self.migration_delay
        self.send(cmd.dest_dc, delay, Tag.VM_CREATE, req)
        self._refresh_prediction(host, now)
        self._activate_pending()
        self.emit_load_report()

    # -- cloudlets ------------------------------------------------------------------

    def _on_cloudlet_submit(self, event: Event) -> None:
        cl: Cloudlet = event.payload
        now = self.now
        if cl.submit_time is None:
            cl.submit_time = now
        vm = self.vms.get(cl.vm_id)
        if vm is not None:
            host = self.vm_hosts[cl.vm_id]
            self._sync_host(host, now)
            cl.current_dc = self.id
            vm.scheduler.submit(cl, now)
            self._refresh_prediction(host, now)
            self._schedule_update()
            if self.confirm_cloudlet_submit:
                self.send(cl.owner, 0.0, Tag.CLOUDLET_SUBMIT_ACK, cl.id)
            return
        held = self.resolving.get(cl.vm_id)
        if held is None:
            for h in self.pending:
                if h.request.vm.id == cl.vm_id:
                    held = h
                    break
        if held is not None:
            cl.mark_queued()
            held.cloudlets.append(cl)
            if self.confirm_cloudlet_submit:
                self.send(cl.owner, 0.0, Tag.CLOUDLET_SUBMIT_ACK, cl.id)
            return
        if cl.vm_id in self.tombstones:
            dest = self.tombstones[cl.vm_id]
            self.send(dest, self._latency(dest), Tag.CLOUDLET_SUBMIT, cl)
            return
        self.send(cl.owner, 0.0, Tag.CLOUDLET_RETURN, CloudletReturn(cl, False))

    def _fail_cloudlets(self, cloudlets) -> None:
        for cl in cloudlets:
            self.send(cl.owner, 0.0, Tag.CLOUDLET_RETURN, CloudletReturn(cl, False))

    def _finish_cloudlet(self, cl: Cloudlet) -> None:
        items = charge_cloudlet_prorated(self._rates_directory(), cl)
        self.invoice_for(cl.owner).extend(items)
        self.send(cl.owner, 0.0, Tag.CLOUDLET_RETURN, CloudletReturn(cl, True))

    # -- progress updates ---------------------------------------------------------

    def _sync_host(self, host: Host, now: float) -> None:
        finished, _ = host.update_processing(now)
        for cl in finished:
            self._finish_cloudlet(cl)
        self._refresh_prediction(host, now)

    def _refresh_prediction(self, host: Host, now: float) -> None:
        nxt = host.next_completion(now)
        if nxt is None:
            self._predictions.pop(host.id, None)
        else:
            self._predictions[host.id] = (host, nxt)

    def _schedule_update(self) -> None:
        if not self._predictions:
            return
        soonest = min(t for _, t in self._predictions.values())
        if self._scheduled_update is None or soonest < self._scheduled_update - 1e-12:
            self.send(self.id, max(0.0, soonest - self.now), Tag.INTERNAL_UPDATE)
            self._scheduled_update = soonest

    def _on_internal_update(self) -> None:
        now = self.now
        self._scheduled_update = None
        due = [host for host, t in self._predictions.values() if t <= now + 1e-9]
        for host in due:
            self._sync_host(host, now)
        self._schedule_update()

    # -- test support -----------------------------------------------------------------

    def check_capacity_invariants(self) -> None:
        for host in self.hosts:
            host.check_invariants()
        for vm_id, host in self.vm_hosts.items():
            if vm_id not in host.residents:
                raise InternalConsistencyError(f"vm {vm_id} missing from host {host.id}")
