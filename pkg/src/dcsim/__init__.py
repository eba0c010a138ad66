"""dcsim: discrete-event simulation toolkit for virtualized cloud data centers."""

from .errors import (
    DcsimError,
    InternalConsistencyError,
    LifecycleError,
    NameConflictError,
    ProtocolError,
    RoutingError,
    ScenarioError,
    SimulationAbort,
    StateError,
)
from .kernel import Entity, Event, Simulation, Tag
from .market import CostKind, CostRates, Invoice, LineItem, charge_cloudlet, charge_vm_creation
from .model import (
    Cloudlet,
    CloudletStatus,
    Datacenter,
    DatacenterCharacteristics,
    Host,
    PeSpec,
    RejectionReason,
    SanStorage,
    Vm,
    VmSpec,
    VmState,
)
from .profiler import ProfileRow, profile_instantiation
from .runner import RunReport, build_simulation, emit_reports, run_scenario
from .scenario import ScenarioSpec, load_scenario, parse_scenario
from .scheduling import SchedulerKind

__version__ = "0.1.0"

__all__ = [
    "Cloudlet",
    "CloudletStatus",
    "CostKind",
    "CostRates",
    "Datacenter",
    "DatacenterCharacteristics",
    "DcsimError",
    "Entity",
    "Event",
    "Host",
    "InternalConsistencyError",
    "Invoice",
    "LifecycleError",
    "LineItem",
    "NameConflictError",
    "PeSpec",
    "ProfileRow",
    "ProtocolError",
    "RejectionReason",
    "RoutingError",
    "RunReport",
    "SanStorage",
    "ScenarioError",
    "ScenarioSpec",
    "SchedulerKind",
    "SimulationAbort",
    "Simulation",
    "StateError",
    "Tag",
    "Vm",
    "VmSpec",
    "VmState",
    "build_simulation",
    "charge_cloudlet",
    "charge_vm_creation",
    "emit_reports",
    "load_scenario",
    "parse_scenario",
    "profile_instantiation",
    "run_scenario",
]
