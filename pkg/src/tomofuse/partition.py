"""Work partitioning across a simulated rank grid.

Each specimen's detector rows are split into ``p_row`` slabs; slabs from
all specimens are packed into groups (longest-processing-time greedy, so
group costs stay within the classic 4/3 bound of optimal).  Within a
group every slab expands into ``p_proj * p_slice`` work units: angle
chunks crossed with near-square slice tiles.  Units are mapped to ranks
either block-style (unit index modulo rank count, identical in every
group) or cyclically (rotated by the group index so ranks see diverse
workloads).

The workload model counts, exactly, the (angle, voxel) pairs of a unit
whose ray lands on the detector; offset scans make this count asymmetric
across tiles and angle chunks, which is the load imbalance the cyclic
mapping flattens.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import AcquisitionParams, SpecimenSet, VolumeDims, ray_coordinate


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class RankGrid:
    p_row: int = 1
    p_proj: int = 1
    p_slice: int = 1

    def __post_init__(self):
        if min(self.p_row, self.p_proj, self.p_slice) < 1:
            raise ValueError("rank grid factors must be >= 1")

    @property
    def total(self) -> int:
        return self.p_row * self.p_proj * self.p_slice


@dataclass(frozen=True)
class WorkUnit:
    specimen_id: str
    row_slab: tuple[int, int]
    angle_chunk: tuple[int, int]
    slice_tile: tuple[int, int, int, int]  # (x0, x1, y0, y1)
    est_cost: float

    def __post_init__(self):
        r0, r1 = self.row_slab
        a0, a1 = self.angle_chunk
        x0, x1, y0, y1 = self.slice_tile
        if not (r0 < r1 and a0 < a1 and x0 < x1 and y0 < y1):
            raise ValueError(f"work unit has an empty range: {self}")
        if self.est_cost < 0:
            raise ValueError("est_cost must be >= 0")


@dataclass
class GroupPlan:
    groups: list[list[WorkUnit]]
    assignments: list[list[int]]  # rank id per unit, aligned with groups
    grid: RankGrid
    strategy: str  # "block" | "cyclic"

    def rank_of(self, group: int, unit_index: int) -> int:
        return self.assignments[group][unit_index]

    def to_json(self) -> str:
        doc = {
            "strategy": self.strategy,
            "grid": {
                "p_row": self.grid.p_row,
                "p_proj": self.grid.p_proj,
                "p_slice": self.grid.p_slice,
            },
            "groups": [
                [
                    {
                        "specimen_id": u.specimen_id,
                        "row_slab": list(u.row_slab),
                        "angle_chunk": list(u.angle_chunk),
                        "slice_tile": list(u.slice_tile),
                        "est_cost": u.est_cost,
                        "rank": self.assignments[g][i],
                    }
                    for i, u in enumerate(units)
                ]
                for g, units in enumerate(self.groups)
            ],
        }
        return json.dumps(doc, indent=2)


def split_range(n: int, parts: int) -> list[tuple[int, int]]:
    """Split [0, n) into ``parts`` contiguous near-equal half-open ranges."""
    if parts < 1 or parts > n:
        raise PartitionError(f"cannot split {n} items into {parts} parts")
    base, extra = divmod(n, parts)
    out = []
    start = 0
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        out.append((start, start + size))
        start += size
    return out


def tile_grid(nx: int, ny: int, p_slice: int) -> list[tuple[int, int, int, int]]:
    """Cut the (nx, ny) slice plane into exactly p_slice near-square tiles.

    ceil(sqrt(p_slice)) columns; rows that cannot be filled evenly get one
    tile fewer, spanning proportionally more width.
    """
    cols = math.isqrt(p_slice)
    if cols * cols < p_slice:
        cols += 1
    rows = math.ceil(p_slice / cols)
    if rows > ny or cols > nx:
        raise PartitionError(
            f"p_slice={p_slice} does not fit a {nx}x{ny} slice plane"
        )
    base, extra = divmod(p_slice, rows)
    per_row = [base + (1 if i < extra else 0) for i in range(rows)]
    y_bands = split_range(ny, rows)
    tiles = []
    for (y0, y1), n_tiles in zip(y_bands, per_row):
        for x0, x1 in split_range(nx, n_tiles):
            tiles.append((x0, x1, y0, y1))
    return tiles


def footprint_count(
    angle_chunk: tuple[int, int],
    tile: tuple[int, int, int, int],
    params: AcquisitionParams,
    dims: VolumeDims,
) -> int:
    """(angle, voxel) pairs in one slice whose ray lands in [0, n_chan).

    Counted per angle by clipping the tile against the on-detector band:
    for each x column the admissible y interval is solved analytically and
    its integer endpoints are then verified (and nudged) against the same
    ray_coordinate evaluation a brute-force count would use, so the result
    matches exhaustive counting exactly.
    """
    a0, a1 = angle_chunk
    x0, x1, y0, y1 = tile
    theta = params.angles()
    xs = np.arange(x0, x1)
    n_chan = params.n_chan
    total = 0
    for k in range(a0, a1):
        b = math.sin(theta[k]) * dims.voxel_pitch / params.pixel_pitch
        t_at_y0 = ray_coordinate(xs, y0, theta[k], params, dims)
        if abs(b) * max(1, y1 - y0) < 1e-9:
            # near-axial angle: t barely depends on y and float rounding
            # noise dominates the band edges, so count voxels directly
            t = ray_coordinate(xs, np.arange(y0, y1)[:, None], theta[k], params, dims)
            total += int(((t >= 0) & (t < n_chan)).sum())
            continue
        # real-valued y bounds of the on-detector band, then integer repair
        edge_lo = y0 + (0.0 - t_at_y0) / b
        edge_hi = y0 + (n_chan - t_at_y0) / b
        lo = np.minimum(edge_lo, edge_hi)
        hi = np.maximum(edge_lo, edge_hi)
        ylo = np.ceil(lo).astype(np.int64)
        yhi = np.ceil(hi).astype(np.int64)  # exclusive

        def on_detector(yv):
            t = ray_coordinate(xs, yv, theta[k], params, dims)
            return (t >= 0) & (t < n_chan)

        ylo = np.where(on_detector(ylo - 1), ylo - 1, ylo)
        ylo = np.where(~on_detector(ylo), ylo + 1, ylo)
        yhi = np.where(on_detector(yhi), yhi + 1, yhi)
        yhi = np.where(~on_detector(yhi - 1), yhi - 1, yhi)
        ylo = np.clip(ylo, y0, y1)
        yhi = np.clip(yhi, y0, y1)
        total += int(np.maximum(yhi - ylo, 0).sum())
    return total


def workload_model(
    unit: WorkUnit, params: AcquisitionParams, dims: VolumeDims
) -> float:
    """Exact on-detector (angle, voxel) count of a work unit, over its rows."""
    r0, r1 = unit.row_slab
    per_slice = footprint_count(unit.angle_chunk, unit.slice_tile, params, dims)
    return float(per_slice * (r1 - r0))


def partition_specimens(
    specimens: SpecimenSet, grid: RankGrid, group_size: int
) -> GroupPlan:
    """Build a block-mapped plan: slabs -> LPT-packed groups -> work units."""
    if group_size < 1:
        raise PartitionError("group_size must be >= 1")

    # one slab per (specimen, row band), costed over its full angle/slice extent
    slabs = []
    for s in specimens:
        params, dims = s.params, s.dims
        if grid.p_row > params.n_rows:
            raise PartitionError(
                f"p_row={grid.p_row} exceeds rows of specimen {s.specimen_id}"
            )
        if grid.p_proj > params.n_proj:
            raise PartitionError(
                f"p_proj={grid.p_proj} exceeds angles of specimen {s.specimen_id}"
            )
        tiles = tile_grid(dims.nx, dims.ny, grid.p_slice)  # validates fit
        chunks = split_range(params.n_proj, grid.p_proj)
        for slab in split_range(params.n_rows, grid.p_row):
            cost = 0.0
            units = []
            for chunk in chunks:
                for tile in tiles:
                    c = float(
                        footprint_count(chunk, tile, params, dims) * (slab[1] - slab[0])
                    )
                    units.append(
                        WorkUnit(
                            specimen_id=s.specimen_id,
                            row_slab=slab,
                            angle_chunk=chunk,
                            slice_tile=tile,
                            est_cost=c,
                        )
                    )
                    cost += c
            slabs.append((cost, len(slabs), units))

    # longest-processing-time greedy with a per-group slab capacity
    n_groups = math.ceil(len(slabs) / group_size)
    order = sorted(slabs, key=lambda t: (-t[0], t[1]))
    group_cost = [0.0] * n_groups
    group_fill = [0] * n_groups
    grouped: list[list[tuple[int, list[WorkUnit]]]] = [[] for _ in range(n_groups)]
    for cost, idx, units in order:
        candidates = [g for g in range(n_groups) if group_fill[g] < group_size]
        g = min(candidates, key=lambda i: (group_cost[i], i))
        grouped[g].append((idx, units))
        group_cost[g] += cost
        group_fill[g] += 1

    groups = []
    assignments = []
    for g in range(n_groups):
        units = [u for _, slab_units in sorted(grouped[g]) for u in slab_units]
        groups.append(units)
        assignments.append([i % grid.total for i in range(len(units))])
    return GroupPlan(groups=groups, assignments=assignments, grid=grid, strategy="block")


def map_cyclic(plan: GroupPlan) -> GroupPlan:
    """Rotate each group's block mapping by its group index."""
    if plan.strategy != "block":
        raise PartitionError(f"expected a block-mapped plan, got {plan.strategy!r}")
    total = plan.grid.total
    assignments = [
        [(i + g) % total for i in range(len(units))]
        for g, units in enumerate(plan.groups)
    ]
    return GroupPlan(
        groups=plan.groups,
        assignments=assignments,
        grid=plan.grid,
        strategy="cyclic",
    )


@dataclass(frozen=True)
class ImbalanceReport:
    per_group: list[dict]
    overall: dict

    def to_csv(self) -> str:
        lines = ["scope,max_over_mean,cv"]
        for i, row in enumerate(self.per_group):
            lines.append(f"group{i},{row['max_over_mean']:.6f},{row['cv']:.6f}")
        o = self.overall
        lines.append(f"overall,{o['max_over_mean']:.6f},{o['cv']:.6f}")
        return "\n".join(lines) + "\n"


def _stats(per_rank: np.ndarray) -> dict:
    mean = per_rank.mean()
    if mean == 0:
        return {"max_over_mean": 1.0, "cv": 0.0}
    return {
        "max_over_mean": float(per_rank.max() / mean),
        "cv": float(per_rank.std() / mean),
    }


def imbalance(plan: GroupPlan) -> ImbalanceReport:
    """Per-group and overall cost spread across ranks (max/mean and cv)."""
    if not plan.groups:
        raise PartitionError("plan has no groups")
    total = plan.grid.total
    overall = np.zeros(total)
    per_group = []
    for units, ranks in zip(plan.groups, plan.assignments):
        costs = np.zeros(total)
        for unit, rank in zip(units, ranks):
            costs[rank] += unit.est_cost
        overall += costs
        per_group.append(_stats(costs))
    return ImbalanceReport(per_group=per_group, overall=_stats(overall))
