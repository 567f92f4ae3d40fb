"""Seeded random instances for validation and benchmarks.

All randomness flows through random.Random(seed), so an instance is fully
determined by its seed.  Sizes default to the limits brute_force_oracle
accepts, which keeps exhaustive cross-checking cheap.
"""
from __future__ import annotations

import random

from .cluster import ChipTypeSpec, ClusterSpec, ProfileTable, WorkloadSpec, synthesize_profile

GIB = 1024**3


def random_instance(
    seed: int,
    *,
    max_types: int = 3,
    max_total_chips: int = 256,
    max_layers: int = 64,
    max_batch: int = 64,
) -> tuple[ClusterSpec, ProfileTable, WorkloadSpec]:
    """A small planner instance: cluster, matching profile, workload.

    Chip counts are powers of two so most dp/tp combinations divide evenly;
    memory budgets are drawn wide enough that instances are usually feasible
    but recompute sometimes matters.
    """
    rng = random.Random(seed)
    n_types = rng.randint(1, max_types)

    chips: list[ChipTypeSpec] = []
    profile = ProfileTable()
    budget = max_total_chips
    for i in range(n_types):
        remaining = n_types - 1 - i
        hi = budget - remaining * 2
        count = 2 ** rng.randint(1, max(1, hi.bit_length() - 1))
        count = min(count, hi)
        if count < 2:
            count = 2
        budget -= count
        memory = rng.uniform(16.0, 64.0) * GIB
        flops_ratio = rng.uniform(0.3, 1.0)
        tp_max = 2 ** rng.randint(0, 3)
        name = f"chip{i}"
        chips.append(
            ChipTypeSpec(name=name, count=count, safe_memory=memory, tp_max=tp_max)
        )
        profile = profile.merged_with(
            synthesize_profile(
                flops_ratio,
                memory,
                rng.uniform(0.75, 0.95),
                rng.uniform(0.05, 0.4),
                chip=name,
                tp_max=tp_max,
            )
        )

    cluster = ClusterSpec.build(chips)
    layers = rng.randint(max(4, len(chips) * 2), max_layers)
    batch = 2 ** rng.randint(0, max(1, max_batch.bit_length() - 1))
    workload = WorkloadSpec(total_layers=layers, global_batch=batch)
    return cluster, profile, workload


def random_sim_instance(seed: int) -> tuple[ClusterSpec, ProfileTable, WorkloadSpec]:
    """A small instance sized for the discrete-event simulator tests."""
    return random_instance(
        seed, max_types=2, max_total_chips=64, max_layers=24, max_batch=32
    )
