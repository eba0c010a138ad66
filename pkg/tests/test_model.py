"""Datacenter model: FCFS provisioning, capacity accounting, VM/cloudlet lifecycle."""

import random

import pytest

from dcsim.errors import SimulationAbort
from dcsim.kernel import Entity, Simulation, Tag
from dcsim.market import CostRates
from dcsim.model import (
    Cloudlet,
    CloudletStatus,
    Datacenter,
    Host,
    PeSpec,
    RejectionReason,
    SanStorage,
    Vm,
    VmCreateRequest,
    VmSpec,
    VmState,
)
from dcsim.scheduling import SchedulerKind

SPACE = SchedulerKind.SPACE_SHARED
TIME = SchedulerKind.TIME_SHARED


def make_host(hid, cores=1, mips=1000.0, ram=1024.0, storage=10_000.0, kind=SPACE):
    return Host(hid, tuple(PeSpec(mips) for _ in range(cores)), ram, storage, 1000.0, kind)


def make_vm(vid, cores=1, mips=1000.0, ram=512.0, storage=1024.0, kind=SPACE, owner=0):
    return Vm(vid, owner, cores, mips, ram, storage, kind)


def make_dc(name="dc", hosts=None, queueing=False, costs=CostRates()):
    return Datacenter(name, hosts if hosts is not None else [make_host(0)],
                      costs=costs, queueing=queueing)


class Driver(Entity):
    """Test entity that runs a callback at START and records everything it receives."""

    def __init__(self, name="driver", script=None):
        super().__init__(name)
        self.script = script or (lambda drv: None)
        self.received = []

    def handle(self, event):
        self.received.append(event)
        if event.tag is Tag.START:
            self.script(self)


def run_with_driver(dc, script, extra_entities=()):
    sim = Simulation()
    sim.register(dc)
    for e in extra_entities:
        sim.register(e)
    driver = Driver(script=script)
    sim.register(driver)
    sim.run()
    return driver


# -- provisioning -------------------------------------------------------------------


def test_fcfs_scans_hosts_in_index_order():
    dc = make_dc(hosts=[make_host(i) for i in range(4)])
    host, reason = dc.provision(make_vm(0).spec)
    assert reason is None and host.id == 0


def test_fcfs_two_hosts_three_single_core_vms():
    # Brute force over the 2-host state space: each host holds one core, so
    # exactly two placements succeed and the third is rejected on cores.
    dc = make_dc(hosts=[make_host(0), make_host(1)])
    sim = Simulation()
    sim.register(dc)
    driver = Driver(script=lambda drv: [
        drv.send(dc.id, 0.0, Tag.VM_CREATE, VmCreateRequest(make_vm(i, owner=drv.id),
                                                            reply_to=drv.id))
        for i in range(3)
    ])
    sim.register(driver)
    sim.run()
    acks = [e.payload for e in driver.received if e.tag is Tag.VM_CREATE_ACK]
    assert [a.success for a in acks] == [True, True, False]
    assert [a.host_id for a in acks[:2]] == [0, 1]
    assert acks[2].reason is RejectionReason.NO_CORES


def test_empty_datacenter_rejects_with_no_cores():
    dc = make_dc(hosts=[])
    host, reason = dc.provision(make_vm(0).spec)
    assert host is None and reason is RejectionReason.NO_CORES


def test_rejection_reasons_ram_and_storage():
    dc = make_dc(hosts=[make_host(0, ram=256.0, storage=10_000.0)])
    _, reason = dc.provision(VmSpec(1, 1000.0, 512.0, 1.0))
    assert reason is RejectionReason.NO_RAM
    _, reason = dc.provision(VmSpec(1, 1000.0, 128.0, 99_999.0))
    assert reason is RejectionReason.NO_STORAGE


def test_fifty_vms_land_on_first_fifty_of_ten_thousand_hosts():
    dc = make_dc(hosts=[make_host(i) for i in range(10_000)])
    placements = []

    def script(drv):
        for i in range(50):
            drv.send(dc.id, 0.0, Tag.VM_CREATE,
                     VmCreateRequest(make_vm(i, owner=drv.id), reply_to=drv.id))

    driver = run_with_driver(dc, script)
    placements = [e.payload.host_id for e in driver.received if e.tag is Tag.VM_CREATE_ACK]
    assert placements == list(range(50))


def test_time_shared_host_never_rejects_on_cpu():
    dc = make_dc(hosts=[make_host(0, cores=1, ram=4096.0, kind=TIME)])

    def script(drv):
        for i in range(4):
            drv.send(dc.id, 0.0, Tag.VM_CREATE,
                     VmCreateRequest(make_vm(i, owner=drv.id, ram=512.0, kind=TIME),
                                     reply_to=drv.id))

    driver = run_with_driver(dc, script)
    acks = [e.payload for e in driver.received if e.tag is Tag.VM_CREATE_ACK]
    assert all(a.success for a in acks)


def test_heterogeneous_cores_grant_the_qualifying_one():
    host = Host(0, (PeSpec(500.0), PeSpec(1000.0)), 1024.0, 10_000.0, 1000.0, SPACE)
    dc = make_dc(hosts=[host])

    def script(drv):
        drv.send(dc.id, 0.0, Tag.VM_CREATE,
                 VmCreateRequest(make_vm(0, mips=800.0, owner=drv.id), reply_to=drv.id))

    run_with_driver(dc, script)
    assert host.grants[0] == (1,)
    vm = dc.vms[0]
    assert vm.scheduler.share == [1000.0]


def test_duplicate_vm_id_is_a_protocol_error():
    dc = make_dc(hosts=[make_host(0), make_host(1)])

    def script(drv):
        for _ in range(2):
            drv.send(dc.id, 0.0, Tag.VM_CREATE,
                     VmCreateRequest(make_vm(7, owner=drv.id), reply_to=drv.id))

    with pytest.raises(SimulationAbort):
        run_with_driver(dc, script)


# -- destroy and queueing ----------------------------------------------------------


def test_destroy_restores_host_capacity_to_spec():
    host = make_host(0)
    dc = make_dc(hosts=[host])

    def script(drv):
        drv.send(dc.id, 0.0, Tag.VM_CREATE,
                 VmCreateRequest(make_vm(0, owner=drv.id), reply_to=drv.id))
        drv.send(dc.id, 1.0, Tag.VM_DESTROY, 0)

    run_with_driver(dc, script)
    assert host.free_ram == host.ram
    assert host.free_storage == host.storage
    assert not host.grants
    assert not host.residents


def test_destroying_running_vm_activates_queued_vm_at_that_instant():
    dc = make_dc(hosts=[make_host(0)], queueing=True)
    acks = []

    def script(drv):
        drv.send(dc.id, 0.0, Tag.VM_CREATE,
                 VmCreateRequest(make_vm(0, owner=drv.id), reply_to=drv.id))
        drv.send(dc.id, 0.0, Tag.VM_CREATE,
                 VmCreateRequest(make_vm(1, owner=drv.id), reply_to=drv.id))
        drv.send(dc.id, 50.0, Tag.VM_DESTROY, 0)

    driver = run_with_driver(dc, script)
    acks = [(e.time, e.payload.vm_id, e.payload.success)
            for e in driver.received if e.tag is Tag.VM_CREATE_ACK]
    assert acks == [(0.0, 0, True), (50.0, 1, True)]
    assert dc.vms[1].state is VmState.RUNNING


def test_destroying_queued_vm_removes_it_without_capacity_change():
    host = make_host(0)
    dc = make_dc(hosts=[host], queueing=True)

    def script(drv):
        drv.send(dc.id, 0.0, Tag.VM_CREATE,
                 VmCreateRequest(make_vm(0, owner=drv.id), reply_to=drv.id))
        drv.send(dc.id, 0.0, Tag.VM_CREATE,
                 VmCreateRequest(make_vm(1, owner=drv.id), reply_to=drv.id))
        drv.send(dc.id, 1.0, Tag.VM_DESTROY, 1)

    run_with_driver(dc, script)
    assert not dc.pending
    assert 0 in dc.vms and 1 not in dc.vms
    assert host.free_ram == host.ram - 512.0


def test_destroy_unknown_vm_is_a_protocol_error():
    dc = make_dc()
    with pytest.raises(SimulationAbort):
        run_with_driver(dc, lambda drv: drv.send(dc.id, 0.0, Tag.VM_DESTROY, 42))


# -- cloudlet submission ------------------------------------------------------------


def _submit_script(dc, vm_count, cloudlets):
    def script(drv):
        for i in range(vm_count):
            drv.send(dc.id, 0.0, Tag.VM_CREATE,
                     VmCreateRequest(make_vm(i, owner=drv.id), reply_to=drv.id))
        for cl, delay in cloudlets:
            cl.owner = drv.id
            drv.send(dc.id, delay, Tag.CLOUDLET_SUBMIT, cl)
    return script


def test_submit_to_idle_vm_starts_immediately():
    dc = make_dc()
    cl = Cloudlet(0, 0, 1000.0, vm_id=0)
    driver = run_with_driver(dc, _submit_script(dc, 1, [(cl, 5.0)]))
    assert cl.submit_time == 5.0
    assert cl.start_time == 5.0
    assert cl.status is CloudletStatus.FINISHED
    returns = [e.payload for e in driver.received if e.tag is Tag.CLOUDLET_RETURN]
    assert len(returns) == 1 and returns[0].success


def test_submit_to_busy_space_shared_vm_queues():
    dc = make_dc()
    first = Cloudlet(0, 0, 1_000_000.0, vm_id=0)
    second = Cloudlet(1, 0, 1_000_000.0, vm_id=0)
    statuses = {}

    class Probe(Driver):
        def handle(self, event):
            super().handle(event)
            if event.tag is Tag.CLOUDLET_RETURN and event.payload.cloudlet.id == 0:
                statuses["at_first_return"] = second.status

    sim = Simulation()
    sim.register(dc)
    probe = Probe(script=_submit_script(dc, 1, [(first, 0.0), (second, 0.0)]))
    sim.register(probe)
    sim.run()
    assert second.start_time == 1000.0  # promoted when the first one finished
    assert second.finish_time == 2000.0


def test_submit_to_unknown_vm_returns_failure():
    dc = make_dc()
    cl = Cloudlet(0, 0, 1000.0, vm_id=99)
    driver = run_with_driver(dc, _submit_script(dc, 0, [(cl, 0.0)]))
    returns = [e.payload for e in driver.received if e.tag is Tag.CLOUDLET_RETURN]
    assert len(returns) == 1 and not returns[0].success


def test_submit_to_queued_vm_waits_for_activation():
    dc = make_dc(hosts=[make_host(0)], queueing=True)
    blocker = Cloudlet(0, 0, 500_000.0, vm_id=0)
    queued_cl = Cloudlet(1, 0, 500_000.0, vm_id=1)

    def script(drv):
        for i in range(2):
            drv.send(dc.id, 0.0, Tag.VM_CREATE,
                     VmCreateRequest(make_vm(i, owner=drv.id), reply_to=drv.id))
        blocker.owner = drv.id
        queued_cl.owner = drv.id
        drv.send(dc.id, 0.0, Tag.CLOUDLET_SUBMIT, blocker)
        drv.send(dc.id, 0.0, Tag.CLOUDLET_SUBMIT, queued_cl)
        drv.send(dc.id, 500.0, Tag.VM_DESTROY, 0)

    run_with_driver(dc, script)
    assert queued_cl.submit_time == 0.0
    assert queued_cl.start_time == 500.0
    assert queued_cl.finish_time == 1000.0


# -- capacity conservation property ---------------------------------------------------


class RandomChurn(Entity):
    """Randomly creates and destroys VMs, acting only on acknowledged state."""

    def __init__(self, dc, rng, steps=30):
        super().__init__("churn")
        self.dc = dc
        self.rng = rng
        self.steps = steps
        self.alive = []
        self.next_vm_id = 0

    def handle(self, event):
        if event.tag is Tag.START:
            for i in range(self.steps):
                self.send(self.id, float(i), Tag.INTERNAL_UPDATE)
        elif event.tag is Tag.VM_CREATE_ACK:
            if event.payload.success:
                self.alive.append(event.payload.vm_id)
        elif event.tag is Tag.INTERNAL_UPDATE:
            if self.alive and self.rng.random() < 0.4:
                victim = self.alive.pop(self.rng.randrange(len(self.alive)))
                self.send(self.dc.id, 0.0, Tag.VM_DESTROY, victim)
            else:
                vm = make_vm(self.next_vm_id, cores=self.rng.randint(1, 2),
                             ram=self.rng.choice([128.0, 512.0]),
                             storage=self.rng.choice([64.0, 256.0]), owner=self.id,
                             kind=self.rng.choice([SPACE, TIME]))
                self.next_vm_id += 1
                self.send(self.dc.id, 0.0, Tag.VM_CREATE,
                          VmCreateRequest(vm, reply_to=self.id))


@pytest.mark.parametrize("seed", range(15))
def test_capacity_invariants_across_random_create_destroy(seed):
    rng = random.Random(seed)
    hosts = [make_host(i, cores=rng.randint(1, 3), ram=rng.choice([512.0, 1024.0]),
                       kind=rng.choice([SPACE, TIME])) for i in range(rng.randint(1, 3))]
    dc = make_dc(hosts=hosts, queueing=False)
    sim = Simulation(trace_hook=lambda ev: dc.check_capacity_invariants())
    sim.register(dc)
    sim.register(RandomChurn(dc, rng))
    sim.run()
    dc.check_capacity_invariants()


def test_placement_uniqueness():
    dc = make_dc(hosts=[make_host(0), make_host(1)])

    def script(drv):
        drv.send(dc.id, 0.0, Tag.VM_CREATE,
                 VmCreateRequest(make_vm(0, owner=drv.id), reply_to=drv.id))
        drv.send(dc.id, 0.0, Tag.VM_CREATE,
                 VmCreateRequest(make_vm(1, owner=drv.id), reply_to=drv.id))

    run_with_driver(dc, script)
    occupants = [vm_id for host in dc.hosts for vm_id in host.residents]
    assert sorted(occupants) == [0, 1]
    assert len(set(occupants)) == len(occupants)


# -- SAN storage ----------------------------------------------------------------------


def test_san_capacity_accounting():
    san = SanStorage(capacity=1000.0, bandwidth=1000.0, latency=0.002)
    san.reserve(600.0)
    assert san.used == 600.0
    with pytest.raises(ValueError):
        san.reserve(500.0)
    san.free(100.0)
    san.reserve(500.0)
    assert san.used == 1000.0


def test_san_transfer_time():
    san = SanStorage(capacity=1000.0, bandwidth=1000.0, latency=0.002)
    # 1 Mbit/s per... 1000 Mbit/s: 125000 bytes take 0.001 s plus latency.
    assert san.transfer_time(125_000) == pytest.approx(0.003)


# -- characteristics / lifecycle stamps -----------------------------------------------


def test_characteristics_summaries_and_costs():
    dc = make_dc(hosts=[make_host(0, cores=2, mips=750.0)],
                 costs=CostRates(0.01, 0.05, 0.001, 0.0))
    ch = dc.characteristics()
    assert len(ch.host_summaries) == 1
    s = ch.host_summaries[0]
    assert (s.cores, s.mips, s.ram, s.storage) == (2, 750.0, 1024.0, 10_000.0)
    assert ch.costs.cost_per_mem == 0.05
    assert ch.can_host(VmSpec(2, 750.0, 512.0, 1024.0))
    assert not ch.can_host(VmSpec(3, 750.0, 512.0, 1024.0))


def test_cloudlet_lifecycle_stamps_are_ordered():
    dc = make_dc()
    cl = Cloudlet(0, 0, 123_456.0, vm_id=0)
    run_with_driver(dc, _submit_script(dc, 1, [(cl, 2.5)]))
    assert cl.submit_time <= cl.start_time <= cl.finish_time
    assert cl.status is CloudletStatus.FINISHED
    assert cl.remaining == 0.0


def test_free_slot_estimates():
    hosts = [make_host(i, ram=256.0) for i in range(50)]
    dc = make_dc(hosts=hosts)
    ref = VmSpec(1, 1000.0, 256.0, 1024.0)
    assert dc.estimate_free_slots(ref) == 50
    for host in hosts[:25]:
        host.occupy_fully()
    assert dc.estimate_free_slots(ref) == 25
    assert dc.busy_ratio() == 0.5
    for host in hosts:
        host.occupy_fully()
    assert dc.estimate_free_slots(ref) == 0


def test_fcfs_follows_host_insertion_order():
    # Permuting host insertion order permutes placements accordingly.
    forward = make_dc("fwd", hosts=[make_host(0, cores=1), make_host(1, cores=2)])
    assert forward.provision(VmSpec(2, 1000.0, 1.0, 1.0))[0].id == 1
    backward = make_dc("bwd", hosts=[make_host(0, cores=2), make_host(1, cores=1)])
    assert backward.provision(VmSpec(2, 1000.0, 1.0, 1.0))[0].id == 0
    assert forward.provision(VmSpec(1, 1000.0, 1.0, 1.0))[0].id == 0


def test_no_cloudlet_finishes_between_internal_updates():
    # Predicted-completion soundness: every completion is collected by an
    # event delivered at exactly the completion instant.
    events = []
    sim = Simulation(trace_hook=lambda ev: events.append(ev))
    dc = make_dc(hosts=[make_host(0, cores=2)])
    sim.register(dc)
    cls = [Cloudlet(i, 0, float(length), vm_id=0)
           for i, length in enumerate([150_000, 400_000, 250_000, 100_000])]
    driver = Driver(script=_submit_script(dc, 1, [(cl, float(i)) for i, cl in enumerate(cls)]))
    sim.register(driver)
    sim.run()
    return_times = {ev.payload.cloudlet.id: ev.time for ev in events
                    if ev.tag is Tag.CLOUDLET_RETURN}
    assert len(return_times) == 4
    for cl in cls:
        assert cl.finish_time == pytest.approx(return_times[cl.id], abs=1e-9)
