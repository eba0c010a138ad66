"""Usage-based cost accounting.

Four unit costs per datacenter: processing (per core-second), memory and
storage (per MB, charged once at VM creation), and bandwidth (per byte
transferred). A VM that never runs a task unit is billed for memory and
storage only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import StateError


class CostKind(str, enum.Enum):
    MEM = "MEM"
    STORAGE = "STORAGE"
    CPU = "CPU"
    BW = "BW"


@dataclass(frozen=True)
class CostRates:
    """Unit prices advertised by a datacenter. All rates are >= 0."""

    cost_per_sec: float = 0.0
    cost_per_mem: float = 0.0
    cost_per_storage: float = 0.0
    cost_per_bw: float = 0.0

    def __post_init__(self):
        for name in ("cost_per_sec", "cost_per_mem", "cost_per_storage", "cost_per_bw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class LineItem:
    kind: CostKind
    quantity: float
    rate: float

    @property
    def amount(self) -> float:
        return self.quantity * self.rate


@dataclass
class Invoice:
    """Accumulated charges for one workload owner."""

    owner: int
    items: list[LineItem] = field(default_factory=list)

    @property
    def total(self) -> float:
        return sum(item.amount for item in self.items)

    def extend(self, items) -> None:
        self.items.extend(items)

    def merged_with(self, other: "Invoice") -> "Invoice":
        if other.owner != self.owner:
            raise ValueError("cannot merge invoices of different owners")
        return Invoice(self.owner, self.items + other.items)


def charge_vm_creation(rates: CostRates, vm) -> list[LineItem]:
    """Memory and storage charges incurred when a VM is created."""
    return [
        LineItem(CostKind.MEM, vm.ram, rates.cost_per_mem),
        LineItem(CostKind.STORAGE, vm.storage, rates.cost_per_storage),
    ]


def charge_cloudlet(rates: CostRates, cloudlet) -> list[LineItem]:
    """Processing and data-transfer charges for a finished task unit.

    Default policy: CPU is billed on consumed core-seconds, bandwidth on
    input plus output bytes. Replaceable per datacenter.
    """
    if cloudlet.finish_time is None:
        raise StateError(f"cloudlet {cloudlet.id} is not finished; nothing to charge")
    return [
        LineItem(CostKind.CPU, cloudlet.cpu_time, rates.cost_per_sec),
        LineItem(CostKind.BW, cloudlet.input_size + cloudlet.output_size, rates.cost_per_bw),
    ]


def charge_cloudlet_prorated(rates_by_dc: dict[int, CostRates], cloudlet) -> list[LineItem]:
    """Charges for a finished task that may have run in several datacenters.

    CPU time is billed per datacenter at the rates that applied while the task
    ran there; input bandwidth at the first datacenter, output at the last.
    Collapses to :func:`charge_cloudlet` when the task never migrated.
    """
    if cloudlet.finish_time is None:
        raise StateError(f"cloudlet {cloudlet.id} is not finished; nothing to charge")
    by_dc = cloudlet.cpu_time_by_dc()
    if len(by_dc) <= 1:
        dc = next(iter(by_dc), cloudlet.current_dc)
        return charge_cloudlet(rates_by_dc[dc], cloudlet)
    items = [
        LineItem(CostKind.CPU, seconds, rates_by_dc[dc].cost_per_sec)
        for dc, seconds in by_dc.items()
    ]
    first_dc = cloudlet.rate_log[0][3]
    last_dc = cloudlet.rate_log[-1][3]
    items.append(LineItem(CostKind.BW, cloudlet.input_size, rates_by_dc[first_dc].cost_per_bw))
    items.append(LineItem(CostKind.BW, cloudlet.output_size, rates_by_dc[last_dc].cost_per_bw))
    return items
