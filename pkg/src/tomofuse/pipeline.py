"""Four-stage reconstruction pipeline over group row partitions.

Each group flows through Load (sinogram slabs PFS -> staging, once),
Compute (staging read, per-chunk broadcast, preprocess + filter +
back-project), Communicate (reduce-scatter of partial volumes across the
projection-parallel ranks) and Store (quantize, then either write uint16
volumes or hand slices to the fused segmenter and write 2-bit masks).

Stage durations are modeled from the fabric/storage cost models plus a
configurable compute rate; with overlap enabled, stage s of group g may
start once both group g's previous stage and group g-1's stage s have
finished (a 4-deep software pipeline).  Scheduling never changes the
arithmetic: volumes are identical for any grid, group size, or overlap
flag up to float summation-order effects.

Byte accounting convention: sinograms and partial volumes move as float32
(4 bytes per sample), stored volumes as uint16, stored masks at 2 bits
per voxel, and the hypothetical staged-baseline mask at 32 bits.  FLOPs
are accounted at 32 per (angle, voxel) pair back-projected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .fabric import PFS, STAGING, Fabric, StorageModel
from .fbp import FilterSpec, HuWindow, back_project, preprocess, quantize, ramp_filter
from .geometry import SpecimenSet
from .partition import GroupPlan, RankGrid, map_cyclic, partition_specimens
from .segmentation import ThresholdSegmenter, fused_infer

STAGES = ("load", "comp", "comm", "store")
FLOPS_PER_SAMPLE = 32


class MemoryBudgetError(RuntimeError):
    pass


@dataclass
class StageRecord:
    group: int
    stage: str
    start: float = 0.0
    end: float = 0.0
    bytes_moved: int = 0
    flops: int = 0
    pfs_read: int = 0
    pfs_write: int = 0
    staging_read: int = 0
    staging_write: int = 0


@dataclass
class StageTrace:
    records: list[StageRecord] = field(default_factory=list)
    total_voxels: int = 0

    def durations(self) -> np.ndarray:
        """(n_groups, 4) stage durations in model seconds."""
        groups = 1 + max((r.group for r in self.records), default=-1)
        out = np.zeros((groups, len(STAGES)))
        for r in self.records:
            out[r.group, STAGES.index(r.stage)] = r.end - r.start
        return out

    @property
    def makespan(self) -> float:
        return max((r.end for r in self.records), default=0.0)

    def pfs_bytes(self) -> tuple[int, int]:
        read = sum(r.pfs_read for r in self.records)
        written = sum(r.pfs_write for r in self.records)
        return read, written

    def to_csv(self) -> str:
        lines = ["group,stage,start,end,bytes,flops"]
        for r in self.records:
            lines.append(
                f"{r.group},{r.stage},{r.start:.9f},{r.end:.9f},"
                f"{r.bytes_moved},{r.flops}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class PipelineConfig:
    grid: RankGrid
    group_size: int = 1
    overlap: bool = True
    fuse_ai: bool = False
    mapping: str = "cyclic"  # "cyclic" | "block"
    i0: float = 1e5
    filter_spec: FilterSpec = field(default_factory=FilterSpec)
    hu_window: HuWindow = field(default_factory=lambda: HuWindow(0.0, 4e-4))
    feather_band: int = 32
    compute_rate: float = 5e9  # modeled flops/sec per rank
    per_rank_memory: int = 4 << 30
    retain_volume: bool = False
    patch_budget: int = 64
    patch_size: int = 16
    segmenter: ThresholdSegmenter | None = None
    dtype: type = np.float32


@dataclass
class RunResult:
    volumes: dict[str, np.ndarray]  # float reconstruction per specimen
    quantized: dict[str, np.ndarray]  # uint16
    masks: dict[str, np.ndarray]  # uint8 labels (fuse_ai only)
    trace: StageTrace
    plan: GroupPlan
    makespan: float


def run(
    specimens: SpecimenSet,
    sinograms: dict[str, np.ndarray],
    cfg: PipelineConfig,
    fab: Fabric,
    storage: StorageModel,
) -> RunResult:
    """Execute the pipeline on raw count sinograms; see module docstring."""
    plan = partition_specimens(specimens, cfg.grid, cfg.group_size)
    if cfg.mapping == "cyclic":
        plan = map_cyclic(plan)
    elif cfg.mapping != "block":
        raise ValueError(f"unknown mapping {cfg.mapping!r}")
    if cfg.fuse_ai and cfg.segmenter is None:
        raise ValueError("fuse_ai requires a segmenter")

    total_ranks = cfg.grid.total
    dtype = cfg.dtype
    volumes = {
        s.specimen_id: np.zeros(s.dims.shape, dtype=dtype) for s in specimens
    }
    masks = {
        s.specimen_id: np.zeros(s.dims.shape, dtype=np.uint8) for s in specimens
    } if cfg.fuse_ai else {}
    records: list[StageRecord] = []
    durations = np.zeros((len(plan.groups), 4))

    for g, units in enumerate(plan.groups):
        slabs = sorted({(u.specimen_id, u.row_slab) for u in units})

        # ---- stage 1: load slabs PFS -> staging, once per group
        rec_load = StageRecord(group=g, stage="load")
        t_load = 0.0
        for sid, (r0, r1) in slabs:
            spec = specimens.by_id(sid)
            nbytes = spec.params.n_proj * (r1 - r0) * spec.params.n_chan * 4
            t_load += storage.read(PFS, nbytes)
            t_load += storage.write(STAGING, nbytes)
            rec_load.pfs_read += nbytes
            rec_load.staging_write += nbytes
        rec_load.bytes_moved = rec_load.pfs_read + rec_load.staging_write
        durations[g, 0] = t_load
        records.append(rec_load)

        # ---- stage 2: staging read + broadcast + filter + back-project
        rec_comp = StageRecord(group=g, stage="comp")
        overhead = 0.0
        comp_rank = np.zeros(total_ranks)
        resident = np.zeros(total_ranks, dtype=np.int64)
        filtered: dict[tuple, np.ndarray] = {}
        slab_geom: dict[tuple, tuple] = {}
        for sid, slab in slabs:
            spec = specimens.by_id(sid)
            r0, r1 = slab
            raw = np.asarray(sinograms[sid])[:, r0:r1, :]
            slab_params = dataclasses.replace(spec.params, n_rows=r1 - r0)
            slab_dims = dataclasses.replace(spec.dims, nz=r1 - r0)
            depth = preprocess(raw, cfg.i0)
            filt = ramp_filter(depth, cfg.filter_spec, spec.params.pixel_pitch)
            filtered[(sid, slab)] = filt.astype(dtype)
            slab_geom[(sid, slab)] = (slab_params, slab_dims)

        chunk_keys = sorted(
            {(u.specimen_id, u.row_slab, u.angle_chunk) for u in units}
        )
        unit_rank = {
            (u.specimen_id, u.row_slab, u.angle_chunk, u.slice_tile): rank
            for u, rank in zip(units, plan.assignments[g])
        }
        for sid, slab, chunk in chunk_keys:
            spec = specimens.by_id(sid)
            a0, a1 = chunk
            r0, r1 = slab
            nbytes = (a1 - a0) * (r1 - r0) * spec.params.n_chan * 4
            overhead += storage.read(STAGING, nbytes)
            rec_comp.staging_read += nbytes
            sharing = sorted(
                {
                    rank
                    for key, rank in unit_rank.items()
                    if key[:3] == (sid, slab, chunk)
                }
            )
            payload = np.ascontiguousarray(
                np.asarray(sinograms[sid], dtype=np.float32)[a0:a1, r0:r1]
            ).tobytes()
            _, t_b = fab.broadcast(sharing[0], payload, sharing)
            overhead += t_b
            rec_comp.bytes_moved += len(payload)

        partials: dict[tuple, np.ndarray] = {}
        for u, rank in zip(units, plan.assignments[g]):
            slab_params, slab_dims = slab_geom[(u.specimen_id, u.row_slab)]
            x0, x1, y0, y1 = u.slice_tile
            part = back_project(
                filtered[(u.specimen_id, u.row_slab)],
                slab_dims,
                slab_params,
                rows=(0, slab_params.n_rows),
                angles=u.angle_chunk,
                tile=u.slice_tile,
                feather_band=cfg.feather_band,
                dtype=dtype,
            )
            partials[(u.specimen_id, u.row_slab, u.angle_chunk, u.slice_tile)] = part
            a0, a1 = u.angle_chunk
            flops = FLOPS_PER_SAMPLE * (a1 - a0) * (x1 - x0) * (y1 - y0) * (
                slab_params.n_rows
            )
            rec_comp.flops += flops
            comp_rank[rank] += flops / cfg.compute_rate
            resident[rank] += part.nbytes
            if resident[rank] > cfg.per_rank_memory:
                raise MemoryBudgetError(
                    f"rank {rank} resident partial volumes exceed "
                    f"{cfg.per_rank_memory} bytes in group {g}"
                )
        durations[g, 1] = overhead + comp_rank.max()
        records.append(rec_comp)

        # ---- stage 3: reduce-scatter partial volumes across chunk owners
        rec_comm = StageRecord(group=g, stage="comm")
        comm_rank = np.zeros(total_ranks)
        reduce_keys = sorted({(u.specimen_id, u.row_slab, u.slice_tile) for u in units})
        for sid, slab, tile in reduce_keys:
            x0, x1, y0, y1 = tile
            contribs: dict[int, np.ndarray] = {}
            for u, rank in zip(units, plan.assignments[g]):
                if (u.specimen_id, u.row_slab, u.slice_tile) != (sid, slab, tile):
                    continue
                flat = partials[
                    (u.specimen_id, u.row_slab, u.angle_chunk, u.slice_tile)
                ][:, y0:y1, x0:x1].ravel()
                if rank in contribs:
                    contribs[rank] = contribs[rank] + flat
                else:
                    contribs[rank] = flat
            owners = sorted(contribs)
            n_owners = len(owners)
            flat_len = next(iter(contribs.values())).size
            pad = (-flat_len) % n_owners
            if pad:
                contribs = {
                    r: np.concatenate([a, np.zeros(pad, dtype=dtype)])
                    for r, a in contribs.items()
                }
            blocks, t_rs = fab.reduce_scatter_block(contribs, owners)
            for r in owners:
                comm_rank[r] += t_rs
            rec_comm.bytes_moved += contribs[owners[0]].nbytes
            total = np.concatenate([blocks[r] for r in owners])[:flat_len]
            r0, r1 = slab
            volumes[sid][r0:r1, y0:y1, x0:x1] = total.reshape(
                r1 - r0, y1 - y0, x1 - x0
            ).astype(dtype)
        durations[g, 2] = comm_rank.max()
        records.append(rec_comm)

        # ---- stage 4: quantize, then store volume or fused masks
        rec_store = StageRecord(group=g, stage="store")
        t_store = 0.0
        for sid, (r0, r1) in slabs:
            spec = specimens.by_id(sid)
            slab_vol = quantize(volumes[sid][r0:r1], cfg.hu_window)
            if cfg.fuse_ai:
                local = {r: {} for r in range(total_ranks)}
                for i, z in enumerate(range(r0, r1)):
                    local[i % total_ranks][z] = slab_vol[z - r0]
                mask_out, rep = fused_infer(
                    local,
                    cfg.patch_budget,
                    cfg.segmenter,
                    fab,
                    patch_size=cfg.patch_size,
                )
                t_store += rep.time_step2 + rep.time_step4
                for rank_masks in mask_out.values():
                    for z, mask in rank_masks.items():
                        masks[sid][z] = mask
                nbytes = (r1 - r0) * ((spec.dims.nx * spec.dims.ny + 3) // 4)
                t_store += storage.write(PFS, nbytes)
                rec_store.pfs_write += nbytes
                if cfg.retain_volume:
                    t_store += storage.write(PFS, slab_vol.nbytes)
                    rec_store.pfs_write += slab_vol.nbytes
            else:
                t_store += storage.write(PFS, slab_vol.nbytes)
                rec_store.pfs_write += slab_vol.nbytes
        rec_store.bytes_moved = rec_store.pfs_write
        durations[g, 3] = t_store
        records.append(rec_store)

    _schedule(records, durations, cfg.overlap)
    trace = StageTrace(
        records=records,
        total_voxels=sum(s.dims.n_voxels for s in specimens),
    )
    quantized = {sid: quantize(v, cfg.hu_window) for sid, v in volumes.items()}
    return RunResult(
        volumes=volumes,
        quantized=quantized,
        masks=masks,
        trace=trace,
        plan=plan,
        makespan=trace.makespan,
    )


def _schedule(records: list[StageRecord], durations: np.ndarray, overlap: bool):
    """Assign start/end times: strict serial or 4-deep pipelined."""
    n_groups, n_stages = durations.shape
    end = np.zeros((n_groups, n_stages))
    start = np.zeros((n_groups, n_stages))
    clock = 0.0
    for g in range(n_groups):
        for s in range(n_stages):
            if overlap:
                ready = 0.0
                if s > 0:
                    ready = end[g, s - 1]
                if g > 0:
                    ready = max(ready, end[g - 1, s])
            else:
                ready = clock
            start[g, s] = ready
            end[g, s] = ready + durations[g, s]
            clock = end[g, s]
    for r in records:
        s = STAGES.index(r.stage)
        r.start = start[r.group, s]
        r.end = end[r.group, s]


def makespan_model(stage_times: np.ndarray) -> float:
    """Predicted pipelined makespan from per-group per-stage durations.

    prediction = sum of the first group's four stages (pipeline fill)
    plus, for every later group, its slowest stage.  Always lies between
    the busiest-stage total and the serial sum.
    """
    t = np.asarray(stage_times, dtype=np.float64)
    if t.ndim != 2 or t.shape[1] != len(STAGES):
        raise ValueError(f"expected (groups, {len(STAGES)}) stage times")
    if t.size == 0:
        return 0.0
    if np.any(t < 0):
        raise ValueError("stage times must be >= 0")
    return float(t[0].sum() + t[1:].max(axis=1).sum())


@dataclass(frozen=True)
class IoAudit:
    pfs_bytes_read: int
    pfs_bytes_written: int
    staged_baseline_bytes: int
    fused_bytes: int
    savings_vs_staged: float
    degenerate: bool = False

    def report(self) -> str:
        return (
            f"pfs_read={self.pfs_bytes_read} pfs_write={self.pfs_bytes_written} "
            f"staged_baseline={self.staged_baseline_bytes} fused={self.fused_bytes} "
            f"savings={self.savings_vs_staged:.4f}"
            + (" (degenerate)" if self.degenerate else "")
        )


def io_audit(trace: StageTrace, fuse_ai: bool) -> IoAudit:
    """PFS byte audit against the staged (store-then-reload) baseline.

    Staged baseline: sinogram read + uint16 volume write + uint16 volume
    read back + 32-bit mask write.  Fused: the bytes the run actually
    moved (sinogram read + 2-bit mask write, plus the uint16 volume only
    if retention was configured).  With fusion off the savings are zero by
    definition.
    """
    read, written = trace.pfs_bytes()
    v = trace.total_voxels
    if v == 0:
        return IoAudit(read, written, 0, 0, 0.0, degenerate=True)
    staged = read + 2 * v + 2 * v + 4 * v
    if not fuse_ai:
        return IoAudit(read, written, staged, staged, 0.0)
    fused = read + written
    return IoAudit(read, written, staged, fused, 1.0 - fused / staged)
