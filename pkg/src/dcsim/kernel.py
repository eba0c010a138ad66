"""Deterministic discrete-event kernel.

Single-context reactive dispatch: one future-event queue ordered by
(time, sequence), one clock, entities that react only inside their event
handler. Simultaneous events are delivered in send order, which makes every
run of the same scenario produce an identical trace.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .errors import (
    LifecycleError,
    NameConflictError,
    RoutingError,
    SimulationAbort,
    StateError,
)


class Tag(enum.Enum):
    """Message kinds understood by the entities in this toolkit."""

    START = enum.auto()
    REGISTER = enum.auto()
    DC_LIST_REQUEST = enum.auto()
    DC_LIST_REPLY = enum.auto()
    VM_CREATE = enum.auto()
    VM_CREATE_ACK = enum.auto()
    VM_DESTROY = enum.auto()
    CLOUDLET_SUBMIT = enum.auto()
    CLOUDLET_SUBMIT_ACK = enum.auto()
    CLOUDLET_RETURN = enum.auto()
    INTERNAL_UPDATE = enum.auto()
    SENSOR_TICK = enum.auto()
    SENSOR_REPORT = enum.auto()
    PLACEMENT_QUERY = enum.auto()
    PLACEMENT_REPLY = enum.auto()
    MIGRATE_REQUEST = enum.auto()
    MIGRATE_VM = enum.auto()
    VM_LOCATION = enum.auto()
    BROKER_DONE = enum.auto()
    END_SIMULATION = enum.auto()


@dataclass(frozen=True)
class Event:
    """A timestamped message between entities; the unit of simulation progress.

    Background events (``daemon=True``) never keep a run alive: once only
    background events remain queued, the run terminates. Periodic sensor
    ticks use this so an otherwise-finished simulation does not spin forever.
    """

    time: float
    seq: int
    src: int
    dst: int
    tag: Tag
    payload: Any = None
    daemon: bool = False

    def trace_line(self) -> str:
        return f"{self.time!r},{self.seq},{self.src},{self.dst},{self.tag.name}"


class Entity:
    """Base class for simulation entities.

    Subclasses implement ``handle``; all cross-entity effects must travel as
    events sent through the owning :class:`Simulation`.
    """

    def __init__(self, name: str):
        self.name = name
        self.id: int = -1
        self.sim: Simulation = None  # set at registration

    def handle(self, event: Event) -> None:
        raise NotImplementedError

    # Convenience wrappers so entity code reads naturally.

    @property
    def now(self) -> float:
        return self.sim.now()

    def send(self, dst: int, delay: float, tag: Tag, payload: Any = None,
             daemon: bool = False) -> None:
        self.sim.send(self.id, dst, delay, tag, payload, daemon)


class Simulation:
    """One independent simulation instance: clock, event queue, entity table."""

    def __init__(self, trace_hook: Optional[Callable[[Event], None]] = None):
        self._entities: list[Entity] = []
        self._names: set[str] = set()
        self._queue: list[tuple[float, int, Event]] = []
        self._foreground_pending = 0
        self._seq = 0
        self._clock = 0.0
        self._started = False
        self._running = False
        self._stop_requested = False
        self._trace_hook = trace_hook
        self.sent_count = 0
        self.delivered_count = 0

    # -- entity lifecycle ----------------------------------------------------

    def register(self, entity: Entity) -> int:
        """Register an entity, assign the next dense id, queue its START event."""
        if self._started:
            raise LifecycleError("cannot register entities after the run has started")
        if entity.name in self._names:
            raise NameConflictError(f"entity name already registered: {entity.name!r}")
        entity.id = len(self._entities)
        entity.sim = self
        self._entities.append(entity)
        self._names.add(entity.name)
        self._push(Event(0.0, self._next_seq(), entity.id, entity.id, Tag.START))
        return entity.id

    def entity(self, entity_id: int) -> Entity:
        return self._entities[entity_id]

    @property
    def entity_ids(self) -> range:
        return range(len(self._entities))

    # -- messaging -----------------------------------------------------------

    def send(self, src: int, dst: int, delay: float, tag: Tag, payload: Any = None,
             daemon: bool = False) -> None:
        if not (isinstance(delay, (int, float)) and math.isfinite(delay)):
            raise ValueError(f"delay must be finite, got {delay!r}")
        if delay < 0:
            raise ValueError(f"delay must be non-negative, got {delay!r}")
        if not (0 <= dst < len(self._entities)):
            raise RoutingError(f"unknown destination entity id {dst}")
        if not (0 <= src < len(self._entities)):
            raise RoutingError(f"unknown source entity id {src}")
        self._push(Event(self._clock + delay, self._next_seq(), src, dst, tag, payload, daemon))

    def broadcast(self, src: int, tag: Tag, payload: Any = None) -> None:
        """Send a zero-delay event to every registered entity."""
        for dst in range(len(self._entities)):
            self.send(src, dst, 0.0, tag, payload)

    def _next_seq(self) -> int:
        seq = self._seq
        self._seq += 1
        return seq

    def _push(self, event: Event) -> None:
        heapq.heappush(self._queue, (event.time, event.seq, event))
        self.sent_count += 1
        if not event.daemon:
            self._foreground_pending += 1

    # -- clock and execution --------------------------------------------------

    def now(self) -> float:
        if not self._running:
            raise StateError("now() is only defined inside a running simulation")
        return self._clock

    def stop(self) -> None:
        """Request termination; honored after the current handler returns."""
        self._stop_requested = True

    def run(self, until: Optional[float] = None) -> float:
        """Dispatch events in (time, seq) order until the queue empties.

        Returns the clock value at termination. Also stops after an
        END_SIMULATION event is delivered, or past ``until`` if given.
        """
        if not self._entities:
            raise LifecycleError("run() requires at least one registered entity")
        if self._started:
            raise LifecycleError("a simulation instance can only run once")
        self._started = True
        self._running = True
        try:
            while self._queue and self._foreground_pending and not self._stop_requested:
                time, _, event = self._queue[0]
                if until is not None and time > until:
                    break
                heapq.heappop(self._queue)
                if not event.daemon:
                    self._foreground_pending -= 1
                self._clock = time
                try:
                    self._entities[event.dst].handle(event)
                except Exception as exc:
                    raise SimulationAbort(
                        f"handler of entity {event.dst} failed on {event.tag.name}: {exc}",
                        event=event,
                    ) from exc
                self.delivered_count += 1
                if self._trace_hook is not None:
                    self._trace_hook(event)
                if event.tag is Tag.END_SIMULATION:
                    self._stop_requested = True
        finally:
            self._running = False
        return self._clock

    @property
    def pending_count(self) -> int:
        return len(self._queue)
