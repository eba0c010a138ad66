"""Two-level CPU scheduling.

Host level: how physical core capacity is divided among resident VMs
(space-shared grants whole cores, time-shared scales requested MIPS by a
common factor under contention). VM level: how a VM's granted MIPS are
divided among its task units (space-shared pins one task per virtual core
with FIFO waiting, time-shared runs everything concurrently).

Progress is integrated analytically between update points: completion
times are computed as remaining/rate, never by stepping.
"""

from __future__ import annotations

import enum
from collections import deque
from typing import Optional, Sequence

from .errors import InternalConsistencyError

# A task unit is considered finished once this much work (in MI) remains.
COMPLETION_EPSILON_MI = 1e-9


class SchedulerKind(str, enum.Enum):
    SPACE_SHARED = "space_shared"
    TIME_SHARED = "time_shared"


# -- host-level share computation ---------------------------------------------


def vm_shares_space_shared(
    core_mips: Sequence[float], grants: dict[int, tuple[int, ...]]
) -> dict[int, list[float]]:
    """Per-VM MIPS share under space-shared core grants.

    ``grants`` maps vm id to the physical core indices it holds; each granted
    core is dedicated at full capacity.
    """
    return {vm_id: [core_mips[i] for i in idxs] for vm_id, idxs in grants.items()}


def vm_shares_time_shared(
    core_mips: Sequence[float], requests: dict[int, tuple[int, float]]
) -> dict[int, list[float]]:
    """Per-VM MIPS share under time-shared core scheduling.

    ``requests`` maps vm id to (virtual core count, requested MIPS per core).
    Requests are granted in full while the host has spare capacity; under
    oversubscription every virtual core is scaled by the common factor
    capacity/demand. No request is ever rejected here. A single virtual core
    can never run faster than the largest physical core.
    """
    if not requests:
        return {}
    capacity = sum(core_mips)
    biggest_core = max(core_mips)
    clamped = {vm: (n, min(mips, biggest_core)) for vm, (n, mips) in requests.items()}
    demand = sum(n * mips for n, mips in clamped.values())
    factor = 1.0 if demand <= capacity else capacity / demand
    return {vm: [mips * factor] * n for vm, (n, mips) in clamped.items()}


def free_core_indices(
    core_mips: Sequence[float], grants: dict[int, tuple[int, ...]], min_mips: float = 0.0
) -> list[int]:
    taken = {i for idxs in grants.values() for i in idxs}
    return [i for i, mips in enumerate(core_mips) if i not in taken and mips >= min_mips]


def pick_cores_space_shared(
    core_mips: Sequence[float],
    grants: dict[int, tuple[int, ...]],
    want_cores: int,
    want_mips: float,
) -> Optional[tuple[int, ...]]:
    """Lowest-index free cores able to back the request, or None if it cannot fit now."""
    candidates = free_core_indices(core_mips, grants, min_mips=want_mips)
    if len(candidates) < want_cores:
        return None
    return tuple(candidates[:want_cores])


def cloudlet_rate_time_shared(mips_share: Sequence[float], active_count: int) -> float:
    """Execution rate of each task under time-shared task scheduling.

    The VM's total share is split evenly across active tasks; a sequential
    task can never exceed a single virtual core's rate.
    """
    if active_count <= 0 or not mips_share:
        return 0.0
    return min(sum(mips_share) / active_count, max(mips_share))


# -- VM-level task execution ----------------------------------------------------


def _advance(cloudlet, rate: float, t0: float, t1: float) -> Optional[float]:
    """Integrate one task over [t0, t1] at a constant rate.

    Returns the analytic completion instant if the task crosses zero remaining
    work inside the interval, else None.
    """
    remaining = cloudlet.remaining
    if remaining <= COMPLETION_EPSILON_MI:
        return t0
    if rate <= 0.0:
        return None
    work = rate * (t1 - t0)
    if remaining <= work + COMPLETION_EPSILON_MI:
        crossing = t0 + remaining / rate
        cloudlet.run_for(rate, t0, crossing, drain=True)
        return crossing
    if t1 > t0:
        cloudlet.run_for(rate, t0, t1)
    return None


class CloudletScheduler:
    """Per-VM execution engine: owns the run/wait queues and the current share."""

    kind: SchedulerKind

    def __init__(self, vcores: int):
        if vcores <= 0:
            raise ValueError("a VM needs at least one virtual core")
        self.vcores = vcores
        self.share: list[float] = [0.0] * vcores

    def set_share(self, share: Sequence[float]) -> None:
        if len(share) != self.vcores:
            raise InternalConsistencyError(
                f"share has {len(share)} entries for {self.vcores} virtual cores"
            )
        self.share = list(share)

    # Subclass interface: submit / advance / next_completion / unfinished /
    # detach_all / active_count.

    def submit(self, cloudlet, now: float) -> None:
        raise NotImplementedError

    def advance(self, t0: float, t1: float) -> list:
        raise NotImplementedError

    def next_completion(self, now: float) -> Optional[float]:
        raise NotImplementedError

    def unfinished(self) -> list:
        raise NotImplementedError

    def detach_all(self) -> list:
        """Remove every unfinished task (for migration); they keep their remaining work."""
        raise NotImplementedError


class SpaceSharedCloudletScheduler(CloudletScheduler):
    """One task per virtual core at that core's rate; the rest wait FIFO."""

    kind = SchedulerKind.SPACE_SHARED

    def __init__(self, vcores: int):
        super().__init__(vcores)
        self._running: list = [None] * vcores
        self._waiting: deque = deque()

    def submit(self, cloudlet, now: float) -> None:
        for idx in range(self.vcores):
            if self._running[idx] is None:
                self._running[idx] = cloudlet
                cloudlet.mark_running(now)
                return
        cloudlet.mark_queued()
        self._waiting.append(cloudlet)

    def advance(self, t0: float, t1: float) -> list:
        if t1 < t0:
            raise InternalConsistencyError(f"time ran backwards: {t0} -> {t1}")
        crossings = []
        for idx, cloudlet in enumerate(self._running):
            if cloudlet is None:
                continue
            crossing = _advance(cloudlet, self.share[idx], t0, t1)
            if crossing is not None:
                crossings.append((crossing, cloudlet.id, idx, cloudlet))
        # Simultaneous completions are processed in cloudlet-id order; each
        # freed virtual core is immediately handed to the FIFO queue head.
        crossings.sort(key=lambda c: (c[0], c[1]))
        finished = []
        for crossing, _, idx, cloudlet in crossings:
            self._running[idx] = None
            cloudlet.mark_finished(crossing)
            finished.append(cloudlet)
            if self._waiting:
                promoted = self._waiting.popleft()
                self._running[idx] = promoted
                promoted.mark_running(crossing)
        return finished

    def next_completion(self, now: float) -> Optional[float]:
        best = None
        for idx, cloudlet in enumerate(self._running):
            if cloudlet is None:
                continue
            if cloudlet.remaining <= COMPLETION_EPSILON_MI:
                t = now
            elif self.share[idx] > 0.0:
                t = now + cloudlet.remaining / self.share[idx]
            else:
                continue
            if best is None or t < best:
                best = t
        return best

    def unfinished(self) -> list:
        return [c for c in self._running if c is not None] + list(self._waiting)

    def detach_all(self) -> list:
        detached = self.unfinished()
        self._running = [None] * self.vcores
        self._waiting.clear()
        for cloudlet in detached:
            cloudlet.mark_paused()
        return detached

    @property
    def active_count(self) -> int:
        return sum(1 for c in self._running if c is not None) + len(self._waiting)


class TimeSharedCloudletScheduler(CloudletScheduler):
    """Every unfinished task runs concurrently; no wait queue."""

    kind = SchedulerKind.TIME_SHARED

    def __init__(self, vcores: int):
        super().__init__(vcores)
        self._active: list = []

    def submit(self, cloudlet, now: float) -> None:
        self._active.append(cloudlet)
        cloudlet.mark_running(now)

    def advance(self, t0: float, t1: float) -> list:
        if t1 < t0:
            raise InternalConsistencyError(f"time ran backwards: {t0} -> {t1}")
        rate = cloudlet_rate_time_shared(self.share, len(self._active))
        crossings = []
        for cloudlet in self._active:
            crossing = _advance(cloudlet, rate, t0, t1)
            if crossing is not None:
                crossings.append((crossing, cloudlet.id, cloudlet))
        crossings.sort(key=lambda c: (c[0], c[1]))
        finished = []
        for crossing, _, cloudlet in crossings:
            self._active.remove(cloudlet)
            cloudlet.mark_finished(crossing)
            finished.append(cloudlet)
        return finished

    def next_completion(self, now: float) -> Optional[float]:
        rate = cloudlet_rate_time_shared(self.share, len(self._active))
        best = None
        for cloudlet in self._active:
            if cloudlet.remaining <= COMPLETION_EPSILON_MI:
                t = now
            elif rate > 0.0:
                t = now + cloudlet.remaining / rate
            else:
                continue
            if best is None or t < best:
                best = t
        return best

    def unfinished(self) -> list:
        return list(self._active)

    def detach_all(self) -> list:
        detached = list(self._active)
        self._active.clear()
        for cloudlet in detached:
            cloudlet.mark_paused()
        return detached

    @property
    def active_count(self) -> int:
        return len(self._active)


def make_cloudlet_scheduler(kind: SchedulerKind, vcores: int) -> CloudletScheduler:
    if kind is SchedulerKind.SPACE_SHARED:
        return SpaceSharedCloudletScheduler(vcores)
    return TimeSharedCloudletScheduler(vcores)
