"""Deterministic in-process stand-in for a multi-rank fabric.

Collectives operate on per-rank data passed in as dictionaries and return
the delivered per-rank results together with a modeled transfer time; no
real threads or sockets are involved, so every call is reproducible.
Time models are explicit and documented per operation (binomial-tree
broadcast, ring reduce-scatter, bisection-style all-to-all); they are
analytic placeholders, not measurements.

Float reductions always run in ascending rank order so distributed sums
are bit-stable for a fixed set of contributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PFS = "pfs"
STAGING = "staging"


@dataclass(frozen=True)
class Fabric:
    """Simulated rank fabric: size plus link cost model parameters."""

    n_ranks: int
    link_bandwidth: float = 1 << 30  # bytes/sec
    link_latency: float = 1e-6  # sec
    seed: int = 0

    def __post_init__(self):
        if self.n_ranks < 1:
            raise ValueError("n_ranks must be >= 1")
        if self.link_bandwidth <= 0 or self.link_latency < 0:
            raise ValueError("bandwidth must be positive and latency >= 0")

    def _check_group(self, group) -> tuple[int, ...]:
        ranks = tuple(sorted(group))
        if not ranks:
            raise ValueError("rank group is empty")
        if len(set(ranks)) != len(ranks):
            raise ValueError(f"duplicate ranks in group {ranks}")
        if ranks[0] < 0 or ranks[-1] >= self.n_ranks:
            raise ValueError(f"group {ranks} outside fabric of {self.n_ranks}")
        return ranks

    def broadcast(self, root: int, payload: bytes, group) -> tuple[dict, float]:
        """Binomial-tree broadcast: latency * ceil(log2 n) + bytes/bandwidth.

        A single-rank group involves no transfer and costs nothing.
        """
        ranks = self._check_group(group)
        if root not in ranks:
            raise ValueError(f"root {root} not in group {ranks}")
        delivered = {r: payload for r in ranks}
        n = len(ranks)
        if n == 1:
            return delivered, 0.0
        time = self.link_latency * math.ceil(math.log2(n)) + (
            len(payload) / self.link_bandwidth
        )
        return delivered, time

    def reduce_scatter_block(
        self, contributions: dict[int, np.ndarray], group
    ) -> tuple[dict[int, np.ndarray], float]:
        """Element-wise sum of equal-length arrays, scattered in rank blocks.

        Block i of the sum lands on the i-th rank of the (ascending) group;
        the reduction accumulates in ascending rank order.  Ring time
        model: (n-1)/n * bytes/bandwidth + (n-1) * latency.
        """
        ranks = self._check_group(group)
        if set(contributions) != set(ranks):
            raise ValueError("contributions must cover exactly the group ranks")
        n = len(ranks)
        arrays = [np.asarray(contributions[r]) for r in ranks]
        length = arrays[0].shape
        for a in arrays[1:]:
            if a.shape != length:
                raise ValueError("contribution lengths differ")
        flat = arrays[0].ravel()
        if flat.size % n != 0:
            raise ValueError(
                f"array length {flat.size} not divisible by group size {n}"
            )
        total = arrays[0].astype(np.float64, copy=True).ravel()
        for a in arrays[1:]:
            total += a.ravel()
        blocks = total.reshape(n, -1)
        out = {r: blocks[i].copy() for i, r in enumerate(ranks)}
        nbytes = arrays[0].nbytes
        time = 0.0
        if n > 1:
            time = (n - 1) / n * nbytes / self.link_bandwidth + (
                n - 1
            ) * self.link_latency
        return out, time

    def all_to_all_v(
        self, sendbufs: dict[int, dict[int, bytes]], group
    ) -> tuple[dict[int, dict[int, bytes]], float]:
        """Variable all-to-all exchange: recv[j][i] == send[i][j].

        Every (source, destination) pair must be present (empty payloads
        allowed).  Time model: max over ranks of its total in+out bytes
        over the link bandwidth, plus (n-1) latencies.
        """
        ranks = self._check_group(group)
        if set(sendbufs) != set(ranks):
            raise ValueError("sendbufs must cover exactly the group ranks")
        for src, row in sendbufs.items():
            if set(row) != set(ranks):
                raise ValueError(
                    f"send matrix row for rank {src} must cover the group"
                )
        recv = {dst: {src: sendbufs[src][dst] for src in ranks} for dst in ranks}
        busiest = max(
            sum(len(sendbufs[r][d]) for d in ranks)
            + sum(len(sendbufs[s][r]) for s in ranks)
            for r in ranks
        )
        time = busiest / self.link_bandwidth + (len(ranks) - 1) * self.link_latency
        return recv, time


@dataclass
class StorageModel:
    """Bandwidth-limited storage tiers with exact byte counters.

    Concurrent accessors share a tier's bandwidth equally: a transfer
    issued alongside ``streams`` total concurrent streams takes
    ``streams`` times longer.
    """

    pfs_read_bw: float = 2 << 30
    pfs_write_bw: float = 2 << 30
    staging_bw: float = 8 << 30
    counters: dict[str, int] = field(
        default_factory=lambda: {
            "pfs_read": 0,
            "pfs_write": 0,
            "staging_read": 0,
            "staging_write": 0,
        }
    )

    def __post_init__(self):
        if min(self.pfs_read_bw, self.pfs_write_bw, self.staging_bw) <= 0:
            raise ValueError("storage bandwidths must be positive")

    def _bw(self, tier: str, write: bool) -> float:
        if tier == PFS:
            return self.pfs_write_bw if write else self.pfs_read_bw
        if tier == STAGING:
            return self.staging_bw
        raise ValueError(f"unknown storage tier {tier!r}")

    def read(self, tier: str, nbytes: int, streams: int = 1) -> float:
        if nbytes < 0:
            raise ValueError("byte count must be >= 0")
        bw = self._bw(tier, write=False)
        self.counters[f"{tier}_read"] += int(nbytes)
        return nbytes * streams / bw

    def write(self, tier: str, nbytes: int, streams: int = 1) -> float:
        if nbytes < 0:
            raise ValueError("byte count must be >= 0")
        bw = self._bw(tier, write=True)
        self.counters[f"{tier}_write"] += int(nbytes)
        return nbytes * streams / bw

    def snapshot(self) -> dict[str, int]:
        return dict(self.counters)
