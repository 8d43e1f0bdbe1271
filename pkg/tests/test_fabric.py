import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tomofuse.fabric import PFS, STAGING, Fabric, StorageModel


def test_broadcast_single_rank_costs_nothing():
    fab = Fabric(n_ranks=4)
    out, t = fab.broadcast(2, b"payload", [2])
    assert out == {2: b"payload"}
    assert t == 0.0


def test_broadcast_time_model():
    # 1 MiB to 8 ranks at 1 GiB/s with 1 us latency: 3 us + 0.9765625 ms
    fab = Fabric(n_ranks=8, link_bandwidth=1 << 30, link_latency=1e-6)
    payload = bytes(1 << 20)
    out, t = fab.broadcast(0, payload, range(8))
    assert t == pytest.approx(3e-6 + (1 << 20) / (1 << 30), rel=1e-12)
    assert all(out[r] == payload for r in range(8))


def test_broadcast_payload_integrity_and_errors():
    fab = Fabric(n_ranks=4)
    payload = bytes(range(256))
    out, _ = fab.broadcast(1, payload, [0, 1, 3])
    assert set(out) == {0, 1, 3}
    assert all(v == payload for v in out.values())
    with pytest.raises(ValueError):
        fab.broadcast(2, b"", [0, 1])  # root outside group
    with pytest.raises(ValueError):
        fab.broadcast(0, b"", [0, 7])  # rank outside fabric


def test_reduce_scatter_identity_on_one_rank():
    fab = Fabric(n_ranks=2)
    out, t = fab.reduce_scatter_block({0: np.array([1.0, 2.0])}, [0])
    assert np.array_equal(out[0], [1.0, 2.0])
    assert t == 0.0


def test_reduce_scatter_hand_example():
    fab = Fabric(n_ranks=2)
    contribs = {0: np.array([1.0, 2, 3, 4]), 1: np.array([10.0, 20, 30, 40])}
    out, _ = fab.reduce_scatter_block(contribs, [0, 1])
    assert np.array_equal(out[0], [11.0, 22.0])
    assert np.array_equal(out[1], [33.0, 44.0])


def test_reduce_scatter_matches_gather_sum_scatter():
    rng = np.random.default_rng(0)
    fab = Fabric(n_ranks=6)
    for n in (2, 3, 6):
        ranks = list(range(n))
        contribs = {r: rng.normal(size=12) for r in ranks}
        out, _ = fab.reduce_scatter_block(contribs, ranks)
        # serial oracle with identical ascending-rank order
        total = np.zeros(12)
        for r in ranks:
            total = total + contribs[r]
        blocks = total.reshape(n, -1)
        for i, r in enumerate(ranks):
            assert np.array_equal(out[r], blocks[i])


def test_reduce_scatter_validation():
    fab = Fabric(n_ranks=4)
    with pytest.raises(ValueError):  # length not divisible
        fab.reduce_scatter_block({0: np.zeros(3), 1: np.zeros(3)}, [0, 1])
    with pytest.raises(ValueError):  # length mismatch
        fab.reduce_scatter_block({0: np.zeros(4), 1: np.zeros(2)}, [0, 1])
    with pytest.raises(ValueError):  # contributions don't cover group
        fab.reduce_scatter_block({0: np.zeros(4)}, [0, 1])


def test_reduce_scatter_time_model():
    fab = Fabric(n_ranks=4, link_bandwidth=1e9, link_latency=1e-6)
    contribs = {r: np.zeros(1000, dtype=np.float64) for r in range(4)}
    _, t = fab.reduce_scatter_block(contribs, range(4))
    assert t == pytest.approx(0.75 * 8000 / 1e9 + 3e-6)


def test_all_to_all_empty():
    fab = Fabric(n_ranks=3, link_latency=2e-6)
    send = {i: {j: b"" for j in range(3)} for i in range(3)}
    recv, t = fab.all_to_all_v(send, range(3))
    assert all(recv[j][i] == b"" for i in range(3) for j in range(3))
    assert t == pytest.approx(2 * 2e-6)


def test_all_to_all_transpose_property():
    rng = np.random.default_rng(1)
    fab = Fabric(n_ranks=4)
    send = {
        i: {j: rng.bytes(rng.integers(0, 64)) for j in range(4)} for i in range(4)
    }
    recv, _ = fab.all_to_all_v(send, range(4))
    for i in range(4):
        for j in range(4):
            assert recv[j][i] == send[i][j]


def test_all_to_all_byte_arithmetic():
    # rank i sends i bytes to each destination: rank j receives 0+1+2+3
    fab = Fabric(n_ranks=4)
    send = {i: {j: bytes(i) for j in range(4)} for i in range(4)}
    recv, _ = fab.all_to_all_v(send, range(4))
    for j in range(4):
        assert sum(len(recv[j][i]) for i in range(4)) == 6


def test_all_to_all_rejects_ragged_matrix():
    fab = Fabric(n_ranks=2)
    with pytest.raises(ValueError):
        fab.all_to_all_v({0: {0: b"", 1: b""}, 1: {0: b""}}, [0, 1])


def test_storage_counters_and_times():
    storage = StorageModel(pfs_read_bw=2 << 30, pfs_write_bw=1 << 30, staging_bw=4 << 30)
    assert storage.read(PFS, 0) == 0.0
    t = storage.read(PFS, 8 << 30)
    assert t == pytest.approx(4.0)
    assert storage.write(PFS, 1 << 30) == pytest.approx(1.0)
    assert storage.write(STAGING, 4 << 30) == pytest.approx(1.0)
    snap = storage.snapshot()
    assert snap["pfs_read"] == 8 << 30
    assert snap["pfs_write"] == 1 << 30
    assert snap["staging_write"] == 4 << 30
    assert snap["staging_read"] == 0


def test_storage_equal_share_concurrency():
    storage = StorageModel(pfs_read_bw=1 << 30)
    t = storage.read(PFS, 1 << 30, streams=2)
    assert t == pytest.approx(2.0)


def test_storage_unknown_tier():
    storage = StorageModel()
    with pytest.raises(ValueError):
        storage.read("tape", 1)
    with pytest.raises(ValueError):
        storage.write("tape", 1)
    with pytest.raises(ValueError):
        storage.read(PFS, -1)


def test_fabric_validation():
    with pytest.raises(ValueError):
        Fabric(n_ranks=0)
    with pytest.raises(ValueError):
        Fabric(n_ranks=1, link_bandwidth=0)
    fab = Fabric(n_ranks=2)
    with pytest.raises(ValueError):
        fab.broadcast(0, b"", [])
    with pytest.raises(ValueError):
        fab.broadcast(0, b"", [0, 0])


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 6),
    length=st.integers(1, 8),
    seed=st.integers(0, 1000),
)
def test_reduce_scatter_deterministic(n, length, seed):
    rng = np.random.default_rng(seed)
    fab = Fabric(n_ranks=n)
    ranks = list(range(n))
    contribs = {r: rng.normal(size=n * length) for r in ranks}
    a, ta = fab.reduce_scatter_block(contribs, ranks)
    b, tb = fab.reduce_scatter_block(contribs, ranks)
    assert ta == tb
    for r in ranks:
        assert np.array_equal(a[r], b[r])
