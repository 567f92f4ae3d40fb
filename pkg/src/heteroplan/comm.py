"""Analytic transfer-time model for cross-stage activation movement.

Three link modes are modeled with one latency-bandwidth form: a base latency
plus a per-byte cost, where CPU-mediated modes pay an extra per-byte staging
penalty for the host bounce copy and device-direct pays none.  Resharding
between stages of different TP widths can either ship the whole tensor over
one link (naive) or split it into k parallel shard streams and all-gather the
shards inside the destination node (send_recv_all_gather).

Default constants ship in data/default_links.json.  They are synthetic: the
two CPU-mediated/device-direct endpoints were fitted so the time ratio over
message sizes 4KB..256MB has a geometric mean near 10x while the per-size
ratio stays inside a wide plausibility band; they are not measurements.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError

CPU_MEDIATED_TCP = "cpu_mediated_tcp"
CPU_MEDIATED_RDMA = "cpu_mediated_rdma"
DEVICE_DIRECT_RDMA = "device_direct_rdma"
LINK_MODES = (CPU_MEDIATED_TCP, CPU_MEDIATED_RDMA, DEVICE_DIRECT_RDMA)

NAIVE = "naive"
SEND_RECV_ALL_GATHER = "send_recv_all_gather"
RESHARD_METHODS = (NAIVE, SEND_RECV_ALL_GATHER)

AFFINITY = "affinity"
NON_AFFINITY = "non_affinity"


@dataclass(frozen=True)
class LinkModel:
    """One point-to-point link: t(bytes) = base_latency + bytes*(1/bandwidth + staging_penalty)."""

    mode: str
    base_latency: float
    bandwidth: float
    staging_penalty: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in LINK_MODES:
            raise ValidationError(f"unknown link mode {self.mode!r}, expected one of {LINK_MODES}")
        if self.bandwidth <= 0:
            raise ValidationError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.base_latency < 0:
            raise ValidationError(f"base_latency must be >= 0, got {self.base_latency}")
        # host staging cost exists exactly when a CPU sits on the path
        if self.mode == DEVICE_DIRECT_RDMA:
            if self.staging_penalty != 0.0:
                raise ValidationError("device_direct_rdma links take no staging penalty")
        elif self.staging_penalty <= 0:
            raise ValidationError(f"{self.mode} links need a positive staging penalty")


def p2p_transfer_time(nbytes: float, link: LinkModel) -> float:
    """Seconds to move nbytes over one link."""
    if nbytes < 0:
        raise ValidationError(f"byte count must be >= 0, got {nbytes}")
    return link.base_latency + nbytes * (1.0 / link.bandwidth + link.staging_penalty)


def _is_pow2(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def resharding_time(
    activation_bytes: float,
    tp_src: int,
    tp_dst: int,
    dst_nic_count: int,
    link: LinkModel,
    intra_bandwidth: float,
    method: str = SEND_RECV_ALL_GATHER,
) -> float:
    """Seconds to move one boundary activation between TP groups.

    naive sends the full tensor over a single link.  send_recv_all_gather
    sends k = min(tp_dst, dst_nic_count) shards over k links in parallel,
    then all-gathers them inside the destination node; the source TP group
    holds replicated activations, so sharding the send is free.
    """
    if not _is_pow2(tp_src) or not _is_pow2(tp_dst):
        raise ValidationError(f"tp sizes must be powers of two, got src={tp_src} dst={tp_dst}")
    if dst_nic_count < 1:
        raise ValidationError(f"dst_nic_count must be >= 1, got {dst_nic_count}")
    if intra_bandwidth <= 0:
        raise ValidationError(f"intra_bandwidth must be positive, got {intra_bandwidth}")
    if method == NAIVE:
        return p2p_transfer_time(activation_bytes, link)
    if method != SEND_RECV_ALL_GATHER:
        raise ValidationError(f"unknown resharding method {method!r}, expected one of {RESHARD_METHODS}")
    k = min(tp_dst, dst_nic_count)
    all_gather = activation_bytes * (k - 1) / (k * intra_bandwidth)
    return p2p_transfer_time(activation_bytes / k, link) + all_gather


@dataclass(frozen=True)
class NicAssignment:
    """Per-chip NIC index and bandwidth class (affinity or non_affinity)."""

    nics: tuple[int, ...]
    classes: tuple[str, ...]

    def load(self, nic: int) -> int:
        return sum(1 for n in self.nics if n == nic)


def assign_nics(
    chips_in_group: int,
    nic_count: int,
    affinity_map: Sequence[int] | None = None,
) -> NicAssignment:
    """Balanced NIC assignment honoring per-chip affinity where possible.

    A chip transfers at the affinity class only when it is the sole user of
    its preferred NIC; sharing or reassignment demotes it to non_affinity.
    Loads are balanced to within one chip per NIC.
    """
    if chips_in_group < 0:
        raise ValidationError(f"chips_in_group must be >= 0, got {chips_in_group}")
    if nic_count < 1:
        raise ValidationError(f"nic_count must be >= 1, got {nic_count}")
    if affinity_map is None:
        prefs = [i % nic_count for i in range(chips_in_group)]
    else:
        if len(affinity_map) != chips_in_group:
            raise ValidationError(
                f"affinity_map length {len(affinity_map)} != chips_in_group {chips_in_group}"
            )
        prefs = [int(p) for p in affinity_map]
        for p in prefs:
            if not 0 <= p < nic_count:
                raise ValidationError(f"affinity NIC {p} out of range 0..{nic_count - 1}")

    nics = prefs.copy()
    loads = [0] * nic_count
    for n in nics:
        loads[n] += 1

    # rebalance: repeatedly move one chip off the most loaded NIC onto the
    # least loaded one; prefer evicting a chip that already lost affinity
    while max(loads) - min(loads) > 1:
        src = loads.index(max(loads))
        dst = loads.index(min(loads))
        victim = -1
        for i in range(chips_in_group - 1, -1, -1):
            if nics[i] == src:
                if victim < 0:
                    victim = i
                if prefs[i] != src:
                    victim = i
                    break
        nics[victim] = dst
        loads[src] -= 1
        loads[dst] += 1

    classes = tuple(
        AFFINITY if nics[i] == prefs[i] and loads[nics[i]] == 1 else NON_AFFINITY
        for i in range(chips_in_group)
    )
    return NicAssignment(nics=tuple(nics), classes=classes)


def default_links() -> dict[str, LinkModel]:
    """The shipped synthetic calibration, one LinkModel per mode."""
    from . import io

    return io.load_default_links()
