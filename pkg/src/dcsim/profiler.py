"""Instantiation-scalability profiler.

Measures how long it takes and how much memory it costs to build the full
datacenter object graph at increasing host counts, without executing any
workload. Memory is Python-level allocation tracked by tracemalloc; the
measurement method is recorded next to the numbers.
"""

from __future__ import annotations

import gc
import time
import tracemalloc
from dataclasses import dataclass, replace
from typing import Optional

from .scenario import DatacenterSpec

# Matches the scalability experiment's host configuration.
DEFAULT_HOST_TEMPLATE = DatacenterSpec(
    name="profile",
    host_count=0,
    cores_per_host=1,
    mips_per_core=1000.0,
    ram_mb=1024.0,
    storage_mb=2_000_000.0,
)


@dataclass(frozen=True)
class ProfileRow:
    host_count: int
    build_seconds: float
    peak_resident_bytes: int
    method: str = "tracemalloc"
    error: Optional[str] = None


def profile_instantiation(host_counts, template: DatacenterSpec = DEFAULT_HOST_TEMPLATE,
                          ) -> list[ProfileRow]:
    """Build-and-tear-down rows for each host count, smallest first.

    A failing count is reported in its row; remaining counts are still tried.
    """
    counts = list(host_counts)
    if counts != sorted(counts):
        raise ValueError("host counts must be sorted ascending")
    from .runner import build_datacenter

    # Warm-up build so one-time allocations (interned strings, enum caches)
    # are not charged to the first measured row.
    build_datacenter(replace(template, host_count=1))

    rows = []
    for count in counts:
        gc.collect()
        tracemalloc.start()
        started = time.perf_counter()
        try:
            dc = build_datacenter(replace(template, host_count=count))
            dc.characteristics()
            elapsed = time.perf_counter() - started
            _, peak = tracemalloc.get_traced_memory()
            rows.append(ProfileRow(count, elapsed, peak))
            del dc
        except Exception as exc:  # report the row, keep profiling
            rows.append(ProfileRow(count, 0.0, 0, error=f"{type(exc).__name__}: {exc}"))
        finally:
            tracemalloc.stop()
        gc.collect()
    return rows
