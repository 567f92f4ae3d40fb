"""Cluster, profile, and workload data model.

Chip types carry the per-type hardware facts the planner needs (count, safe
memory, max tensor-parallel width, NIC layout, link bandwidths); a cluster is
an ordered collection of them.  Profiles store measured or synthesized
per-layer step times and memory footprints keyed by the parallel settings that
change them.  All times are seconds, all memory and message sizes are bytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .errors import ProfileLookupError, ValidationError

GIB = 1024 ** 3


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


@dataclass(frozen=True)
class ChipTypeSpec:
    """One accelerator type inside a heterogeneous cluster.

    affinity_bandwidth is the per-chip cross-node bandwidth when the chip owns
    its preferred NIC exclusively; non_affinity_bandwidth applies when it has
    to share or use a foreign NIC.  intra_node_bandwidth is the device-to-device
    bandwidth inside one node.
    """

    name: str
    count: int
    safe_memory: float
    tp_max: int
    chips_per_node: int = 8
    nic_count_per_node: int = 8
    affinity_bandwidth: float = 9.56 * GIB
    non_affinity_bandwidth: float = 5.51 * GIB
    intra_node_bandwidth: float = 64.0 * GIB

    def validate(self) -> None:
        _require(bool(self.name), "chip type name must be non-empty")
        _require(self.count >= 1, f"chip type {self.name}: count must be >= 1, got {self.count}")
        _require(self.safe_memory > 0, f"chip type {self.name}: safe_memory must be positive")
        _require(
            self.tp_max >= 1 and self.tp_max & (self.tp_max - 1) == 0,
            f"chip type {self.name}: tp_max must be a power of two, got {self.tp_max}",
        )
        _require(self.chips_per_node >= 1, f"chip type {self.name}: chips_per_node must be >= 1")
        _require(
            self.tp_max <= self.chips_per_node,
            f"chip type {self.name}: tp_max {self.tp_max} exceeds chips_per_node {self.chips_per_node}",
        )
        _require(self.nic_count_per_node >= 1, f"chip type {self.name}: nic_count_per_node must be >= 1")
        for fname in ("affinity_bandwidth", "non_affinity_bandwidth", "intra_node_bandwidth"):
            _require(getattr(self, fname) > 0, f"chip type {self.name}: {fname} must be positive")


@dataclass(frozen=True)
class ClusterSpec:
    """Ordered set of chip types.

    Types are kept in descending safe-memory order (name ascending on ties);
    pipeline stages are assigned to types in exactly this order, so the order
    is part of the type's contract, not a presentation detail.  Use build()
    to sort an arbitrarily ordered list.
    """

    chip_types: tuple[ChipTypeSpec, ...]

    def __post_init__(self) -> None:
        _require(len(self.chip_types) >= 1, "cluster must contain at least one chip type")
        names = [c.name for c in self.chip_types]
        _require(len(set(names)) == len(names), f"duplicate chip type names: {sorted(names)}")
        for chip in self.chip_types:
            chip.validate()
        keys = [(-c.safe_memory, c.name) for c in self.chip_types]
        _require(
            keys == sorted(keys),
            "chip types must be ordered by descending safe_memory (name ascending on ties); "
            "use ClusterSpec.build() to sort",
        )

    @classmethod
    def build(cls, chip_types: Sequence[ChipTypeSpec]) -> "ClusterSpec":
        ordered = sorted(chip_types, key=lambda c: (-c.safe_memory, c.name))
        return cls(chip_types=tuple(ordered))

    @property
    def total_chips(self) -> int:
        return sum(c.count for c in self.chip_types)

    def chip(self, name: str) -> ChipTypeSpec:
        for c in self.chip_types:
            if c.name == name:
                return c
        raise ValidationError(f"unknown chip type {name!r}; cluster has {[c.name for c in self.chip_types]}")


@dataclass(frozen=True)
class WorkloadSpec:
    """Training job description.

    global_batch counts microbatches of one sequence each; convert token
    budgets with microbatches_from_tokens().  bubble_coefficient weights the
    pipeline-bubble term of the analytic iteration-time model (1.0 for plain
    1F1B, 0 for a bubble-free schedule).  pipeline_overhead is an optional
    additive constant on the total iteration time; it is not anchored to any
    measured quantity and defaults to 0.
    """

    total_layers: int
    global_batch: int
    bubble_coefficient: float = 1.0
    pipeline_overhead: float = 0.0

    def validate(self) -> None:
        _require(self.total_layers >= 1, f"total_layers must be >= 1, got {self.total_layers}")
        _require(self.global_batch >= 1, f"global_batch must be >= 1, got {self.global_batch}")
        _require(self.bubble_coefficient >= 0, "bubble_coefficient must be non-negative")
        _require(self.pipeline_overhead >= 0, "pipeline_overhead must be non-negative")


def microbatches_from_tokens(tokens: int, sequence_length: int) -> int:
    """Convert a token global batch to a microbatch count (one sequence each)."""
    _require(sequence_length >= 1, "sequence_length must be >= 1")
    _require(tokens >= 1, "tokens must be >= 1")
    _require(
        tokens % sequence_length == 0,
        f"token batch {tokens} is not a whole number of sequences of length {sequence_length}",
    )
    return tokens // sequence_length


@dataclass(frozen=True)
class ProfileEntry:
    """Resolved per-layer numbers for one (chip, dp, tp, recompute) setting."""

    t_fwd: float
    t_bwd: float
    t_recomp: float
    t_update: float
    mem_act: float
    mem_model: float


@dataclass
class ProfileTable:
    """Per-layer step times and memory, keyed by the settings they depend on.

    compute[(chip, tp)] -> (t_fwd, t_bwd, t_recomp)
    update[(chip, dp, tp)] -> t_update
    activation[(chip, tp, recompute)] -> bytes resident per layer per in-flight microbatch
    model[(chip, dp, tp)] -> bytes of weights/grads/optimizer state per layer
    """

    compute: dict[tuple[str, int], tuple[float, float, float]] = field(default_factory=dict)
    update: dict[tuple[str, int, int], float] = field(default_factory=dict)
    activation: dict[tuple[str, int, bool], float] = field(default_factory=dict)
    model: dict[tuple[str, int, int], float] = field(default_factory=dict)

    def compute_times(self, chip: str, tp: int) -> tuple[float, float, float]:
        try:
            return self.compute[(chip, tp)]
        except KeyError:
            raise ProfileLookupError(f"profile entry absent: compute times for chip={chip!r} tp={tp}") from None

    def update_time(self, chip: str, dp: int, tp: int) -> float:
        try:
            return self.update[(chip, dp, tp)]
        except KeyError:
            raise ProfileLookupError(
                f"profile entry absent: update time for chip={chip!r} dp={dp} tp={tp}"
            ) from None

    def activation_bytes(self, chip: str, tp: int, recompute: bool) -> float:
        try:
            return self.activation[(chip, tp, bool(recompute))]
        except KeyError:
            raise ProfileLookupError(
                f"profile entry absent: activation memory for chip={chip!r} tp={tp} recompute={bool(recompute)}"
            ) from None

    def model_bytes(self, chip: str, dp: int, tp: int) -> float:
        try:
            return self.model[(chip, dp, tp)]
        except KeyError:
            raise ProfileLookupError(
                f"profile entry absent: model memory for chip={chip!r} dp={dp} tp={tp}"
            ) from None

    @property
    def chips(self) -> list[str]:
        names = {chip for chip, _ in self.compute}
        return sorted(names)

    def merged_with(self, other: "ProfileTable") -> "ProfileTable":
        out = ProfileTable(dict(self.compute), dict(self.update), dict(self.activation), dict(self.model))
        out.compute.update(other.compute)
        out.update.update(other.update)
        out.activation.update(other.activation)
        out.model.update(other.model)
        return out

    def renamed(self, chip: str, new_name: str) -> "ProfileTable":
        """Copy of this table with one chip's entries duplicated under a new name."""
        out = ProfileTable()
        out.compute = {(new_name, tp): v for (c, tp), v in self.compute.items() if c == chip}
        out.update = {(new_name, dp, tp): v for (c, dp, tp), v in self.update.items() if c == chip}
        out.activation = {(new_name, tp, r): v for (c, tp, r), v in self.activation.items() if c == chip}
        out.model = {(new_name, dp, tp): v for (c, dp, tp), v in self.model.items() if c == chip}
        return out

    def validate(self) -> None:
        for key, (f, b, rc) in self.compute.items():
            _require(f > 0 and b > 0 and rc > 0, f"non-positive compute time for {key}")
        for key, t in self.update.items():
            _require(t > 0, f"non-positive update time for {key}")
        for key, m in self.activation.items():
            _require(m > 0, f"non-positive activation memory for {key}")
        for key, m in self.model.items():
            _require(m > 0, f"non-positive model memory for {key}")
        for (chip, tp, rec), m in self.activation.items():
            if rec:
                full = self.activation.get((chip, tp, False))
                if full is not None:
                    _require(
                        m <= full,
                        f"activation memory with recompute exceeds without for chip={chip!r} tp={tp}",
                    )


def validate_profile_for_cluster(profile: ProfileTable, cluster: ClusterSpec) -> None:
    """Check that every power-of-two tp <= tp_max has compute entries per chip."""
    profile.validate()
    for chip in cluster.chip_types:
        tp = 1
        while tp <= chip.tp_max:
            if (chip.name, tp) not in profile.compute:
                raise ValidationError(
                    f"profile missing compute entry for chip={chip.name!r} tp={tp} (tp_max={chip.tp_max})"
                )
            tp *= 2


def lookup_profile(profile: ProfileTable, chip: str, dp: int, tp: int, recompute: bool) -> ProfileEntry:
    """Resolve all per-layer numbers for one setting; absent keys raise ProfileLookupError."""
    f, b, rc = profile.compute_times(chip, tp)
    return ProfileEntry(
        t_fwd=f,
        t_bwd=b,
        t_recomp=rc,
        t_update=profile.update_time(chip, dp, tp),
        mem_act=profile.activation_bytes(chip, tp, recompute),
        mem_model=profile.model_bytes(chip, dp, tp),
    )


def _efficiency(tp: int, tp_efficiency: float | Mapping[int, float]) -> float:
    if isinstance(tp_efficiency, Mapping):
        try:
            return float(tp_efficiency[tp])
        except KeyError:
            raise ValidationError(f"tp_efficiency mapping has no entry for tp={tp}") from None
    # scalar shorthand: per-doubling retention factor, so eff(1) == 1
    return float(tp_efficiency) ** int(math.log2(tp))


def synthesize_profile(
    flops_ratio: float,
    memory: float,
    tp_efficiency: float | Mapping[int, float],
    base_layer_seconds: float,
    *,
    chip: str = "chip",
    tp_max: int = 8,
    dp_candidates: Sequence[int] = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512),
    model_fraction: float = 1.0 / 32.0,
    act_fraction: float = 1.0 / 48.0,
    recompute_saving: float = 1.0 / 6.0,
    update_scale: float = 0.5,
    dp_sync_coeff: float = 0.1,
) -> ProfileTable:
    """Build a synthetic profile for one chip type.

    Compute times follow the scaling rules the planner is calibrated against:
    t_fwd = base_layer_seconds / (flops_ratio * tp * eff(tp)), t_bwd = 2*t_fwd,
    t_recomp = t_fwd.  tp_efficiency is either a mapping {tp: eff in (0, 1]}
    or a scalar per-doubling retention factor.

    Memory and update entries have no measured anchor, so they follow simple
    documented rules: one layer's model state is memory*model_fraction split
    2/3 tp-sharded (weights+grads) and 1/3 tp-and-dp-sharded (optimizer);
    activation per in-flight microbatch is memory*act_fraction/tp, scaled by
    recompute_saving when recompute is on; the optimizer step costs
    update_scale*base/(flops_ratio*tp) growing by dp_sync_coeff per dp
    doubling.  Deterministic: same arguments, same table.
    """
    _require(flops_ratio > 0, "flops_ratio must be positive")
    _require(memory > 0, "memory must be positive")
    _require(base_layer_seconds > 0, "base_layer_seconds must be positive")
    _require(tp_max >= 1 and tp_max & (tp_max - 1) == 0, "tp_max must be a power of two")
    _require(0 < model_fraction < 1 and 0 < act_fraction < 1, "memory fractions must be in (0, 1)")
    _require(0 < recompute_saving <= 1, "recompute_saving must be in (0, 1]")
    _require(update_scale > 0 and dp_sync_coeff >= 0, "update coefficients must be positive")
    dps = sorted(set(int(d) for d in dp_candidates))
    _require(dps and dps[0] >= 1, "dp_candidates must contain positive integers")

    table = ProfileTable()
    tp = 1
    while tp <= tp_max:
        eff = _efficiency(tp, tp_efficiency)
        _require(0 < eff <= 1, f"tp_efficiency for tp={tp} must be in (0, 1], got {eff}")
        t_fwd = base_layer_seconds / (flops_ratio * tp * eff)
        table.compute[(chip, tp)] = (t_fwd, 2.0 * t_fwd, t_fwd)
        act_full = memory * act_fraction / tp
        table.activation[(chip, tp, False)] = act_full
        table.activation[(chip, tp, True)] = act_full * recompute_saving
        layer_model = memory * model_fraction
        for dp in dps:
            table.model[(chip, dp, tp)] = (layer_model * (2.0 / 3.0)) / tp + (layer_model / 3.0) / (tp * dp)
            table.update[(chip, dp, tp)] = (
                update_scale * base_layer_seconds / (flops_ratio * tp) * (1.0 + dp_sync_coeff * math.log2(dp))
            )
        tp *= 2
    return table


def grouped_cluster(cluster: ClusterSpec, group_size: int) -> tuple[ClusterSpec, dict[str, str]]:
    """Split each chip type into groups of group_size chips (remainder last).

    Returns the derived cluster plus a mapping group-name -> parent-name.
    A type that fits in a single group keeps its original name so degenerate
    grouping is the identity.
    """
    _require(group_size >= 1, f"group_size must be >= 1, got {group_size}")
    groups: list[ChipTypeSpec] = []
    parents: dict[str, str] = {}
    for chip in cluster.chip_types:
        if chip.count <= group_size:
            groups.append(chip)
            parents[chip.name] = chip.name
            continue
        full, rem = divmod(chip.count, group_size)
        sizes = [group_size] * full + ([rem] if rem else [])
        # zero-pad so lexicographic cluster order equals group-index order
        width = len(str(len(sizes) - 1))
        for idx, size in enumerate(sizes):
            name = f"{chip.name}#{idx:0{width}d}"
            groups.append(replace(chip, name=name, count=size))
            parents[name] = chip.name
    return ClusterSpec.build(groups), parents


def grouped_profile(profile: ProfileTable, parents: dict[str, str]) -> ProfileTable:
    """Profile for a grouped cluster: each group inherits its parent's entries."""
    out = ProfileTable()
    for group, parent in parents.items():
        out = out.merged_with(profile.renamed(parent, group))
    return out
