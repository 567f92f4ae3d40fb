"""Transfer-time model, resharding, NIC assignment, and shipped constants."""
import math
import random

import pytest
from hypothesis import given, strategies as st

from heteroplan.comm import (
    AFFINITY,
    CPU_MEDIATED_RDMA,
    CPU_MEDIATED_TCP,
    DEVICE_DIRECT_RDMA,
    NAIVE,
    NON_AFFINITY,
    SEND_RECV_ALL_GATHER,
    LinkModel,
    assign_nics,
    default_links,
    p2p_transfer_time,
    resharding_time,
)
from heteroplan.errors import ValidationError

GIB = 1024**3


def test_link_model_staging_rules():
    LinkModel(DEVICE_DIRECT_RDMA, 1e-5, 10 * GIB, 0.0)
    with pytest.raises(ValidationError):
        LinkModel(DEVICE_DIRECT_RDMA, 1e-5, 10 * GIB, 1e-10)
    with pytest.raises(ValidationError):
        LinkModel(CPU_MEDIATED_TCP, 1e-5, 10 * GIB, 0.0)
    with pytest.raises(ValidationError):
        LinkModel("carrier_pigeon", 1e-5, 10 * GIB, 0.0)
    with pytest.raises(ValidationError):
        LinkModel(DEVICE_DIRECT_RDMA, 1e-5, 0.0, 0.0)


def test_p2p_transfer_time_formula():
    link = LinkModel(CPU_MEDIATED_RDMA, 2e-5, 2 * GIB, 1e-10)
    nbytes = 1 * GIB
    want = 2e-5 + nbytes * (1.0 / (2 * GIB) + 1e-10)
    assert p2p_transfer_time(nbytes, link) == want
    assert p2p_transfer_time(0, link) == 2e-5
    with pytest.raises(ValidationError):
        p2p_transfer_time(-1, link)


def test_resharding_unequal_tp_splits_across_links():
    link = LinkModel(DEVICE_DIRECT_RDMA, 0.0, 1 * GIB, 0.0)
    nbytes = 8 * GIB
    # k = min(tp_dst, nic) = 2 shard streams, all-gather over infinite
    # intra bandwidth is free, so the send halves
    got = resharding_time(nbytes, 4, 2, 8, link, math.inf, SEND_RECV_ALL_GATHER)
    assert got == p2p_transfer_time(nbytes / 2, link)
    # naive ships the whole tensor regardless of tp
    assert resharding_time(nbytes, 4, 2, 8, link, math.inf, NAIVE) == p2p_transfer_time(nbytes, link)
    # finite intra bandwidth adds the all-gather term
    got = resharding_time(nbytes, 4, 2, 8, link, 4 * GIB, SEND_RECV_ALL_GATHER)
    assert got == p2p_transfer_time(nbytes / 2, link) + nbytes * (2 - 1) / (2 * 4 * GIB)


def test_resharding_validation():
    link = LinkModel(DEVICE_DIRECT_RDMA, 0.0, 1 * GIB, 0.0)
    with pytest.raises(ValidationError):
        resharding_time(1.0, 3, 2, 8, link, 1 * GIB)
    with pytest.raises(ValidationError):
        resharding_time(1.0, 4, 2, 0, link, 1 * GIB)
    with pytest.raises(ValidationError):
        resharding_time(1.0, 4, 2, 8, link, 0.0)
    with pytest.raises(ValidationError):
        resharding_time(1.0, 4, 2, 8, link, 1 * GIB, "optimistic")


def test_resharding_never_loses_to_naive_bulk():
    # sharded send + all-gather beats one bulk link whenever the intra-node
    # path is at least as fast as the link; 10k random inputs
    rng = random.Random(0)
    for _ in range(10_000):
        nbytes = rng.uniform(1.0, 256 * 1024 * 1024)
        tp_dst = 2 ** rng.randint(0, 3)
        nic = rng.randint(1, 8)
        bw = rng.uniform(0.5 * GIB, 40 * GIB)
        link = LinkModel(DEVICE_DIRECT_RDMA, rng.uniform(0.0, 1e-3), bw, 0.0)
        intra = bw * rng.uniform(1.0, 64.0)
        fast = resharding_time(nbytes, 8, tp_dst, nic, link, intra, SEND_RECV_ALL_GATHER)
        bulk = resharding_time(nbytes, 8, tp_dst, nic, link, intra, NAIVE)
        assert fast <= bulk + 1e-12


def test_equal_tp_needs_no_resharding_inside_simulator_config():
    from heteroplan.simulator import CommConfig

    link = LinkModel(CPU_MEDIATED_TCP, 1e-4, 1 * GIB, 3e-10)
    comm = CommConfig(link=link, activation_bytes=1 * GIB)
    assert comm.boundary_time(4, 4) == p2p_transfer_time(1 * GIB, link)
    assert comm.boundary_time(4, 2) == resharding_time(
        1 * GIB, 4, 2, 8, link, comm.intra_bandwidth, comm.method
    )


def test_default_links_cpu_tcp_penalty_band():
    links = default_links()
    assert set(links) == {CPU_MEDIATED_TCP, CPU_MEDIATED_RDMA, DEVICE_DIRECT_RDMA}
    tcp, direct = links[CPU_MEDIATED_TCP], links[DEVICE_DIRECT_RDMA]
    sizes = [4 * 1024 * 2**i for i in range(17)]  # 4KB .. 256MB
    ratios = [p2p_transfer_time(s, tcp) / p2p_transfer_time(s, direct) for s in sizes]
    geo = math.exp(sum(math.log(r) for r in ratios) / len(ratios))
    assert 8.0 <= geo <= 12.0
    assert all(1.79 <= r <= 16.0 for r in ratios)
    # the RDMA bounce path sits between plain TCP and device-direct
    rdma = links[CPU_MEDIATED_RDMA]
    for s in sizes:
        assert p2p_transfer_time(s, direct) < p2p_transfer_time(s, rdma) < p2p_transfer_time(s, tcp)


def test_assign_nics_identity_when_counts_match():
    out = assign_nics(8, 8)
    assert out.nics == tuple(range(8))
    assert out.classes == (AFFINITY,) * 8
    assert all(out.load(n) == 1 for n in range(8))


def test_assign_nics_balances_and_demotes():
    # all chips prefer NIC 0: loads must still even out, and nobody keeps
    # exclusive use of a shared NIC
    out = assign_nics(8, 4, affinity_map=[0] * 8)
    loads = [out.load(n) for n in range(4)]
    assert max(loads) - min(loads) <= 1
    assert sum(loads) == 8
    assert all(cls == NON_AFFINITY for cls in out.classes)


def test_assign_nics_validation():
    with pytest.raises(ValidationError):
        assign_nics(4, 0)
    with pytest.raises(ValidationError):
        assign_nics(4, 8, affinity_map=[0, 1])
    with pytest.raises(ValidationError):
        assign_nics(2, 2, affinity_map=[0, 5])


@given(chips=st.integers(0, 40), nics=st.integers(1, 12))
def test_assign_nics_always_balances(chips, nics):
    out = assign_nics(chips, nics)
    loads = [out.load(n) for n in range(nics)]
    assert sum(loads) == chips
    assert max(loads) - min(loads) <= 1 if chips else True
    # affinity class only with exclusive ownership of the preferred NIC
    for i, cls in enumerate(out.classes):
        if cls == AFFINITY:
            assert out.nics[i] == i % nics
            assert out.load(out.nics[i]) == 1
