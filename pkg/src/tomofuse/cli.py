"""Command-line surface driving the module chains end to end.

Commands: simulate, reconstruct, plan, run-fused, analyze, bench.  All
are deterministic given (config, seed); file writes are atomic.  Set
TOMOFUSE_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fbp, formats, phantom, pipeline
from .config import Config, ConfigError, load_config
from .fabric import Fabric, StorageModel
from .formats import FormatError
from .geometry import Specimen, SpecimenSet
from .partition import PartitionError, imbalance, map_cyclic, partition_specimens
from .segmentation import connected_components, dice, dice_macro

log = logging.getLogger("tomofuse")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tomofuse",
        description="parallel-beam XCT reconstruction fused with patch segmentation",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="key=value config file")
    common.add_argument("--seed", type=int, default=None, help="RNG seed override")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--ranks", default=None, help="rank grid PxQxR (row x proj x slice)")
    common.add_argument("--groups", type=int, default=None, help="group size override")
    common.add_argument("--overlap", choices=["on", "off"], default=None)
    common.add_argument("--fuse", choices=["on", "off"], default=None)

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="phantom -> sinogram + truth mask")
    p = sub.add_parser("reconstruct", parents=[common], help="sinogram -> uint16 volume")
    p.add_argument("sino", type=Path)
    sub.add_parser("plan", parents=[common], help="emit partition plan and imbalance CSV")
    p = sub.add_parser("run-fused", parents=[common], help="sinogram -> 2-bit mask + IO audit")
    p.add_argument("sino", type=Path)
    p = sub.add_parser("analyze", parents=[common], help="mask vs truth Dice + components")
    p.add_argument("pred", type=Path)
    p.add_argument("truth", type=Path)
    sub.add_parser("bench", parents=[common], help="sweep grids, compare makespan model")
    return parser


def _config_from_args(args) -> Config:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.ranks is not None:
        try:
            p_row, p_proj, p_slice = (int(x) for x in args.ranks.lower().split("x"))
        except ValueError:
            raise ConfigError(f"--ranks expects PxQxR, got {args.ranks!r}")
        overrides.update(p_row=p_row, p_proj=p_proj, p_slice=p_slice)
    if args.groups is not None:
        overrides["group_size"] = args.groups
    if args.overlap is not None:
        overrides["overlap"] = args.overlap == "on"
    if args.fuse is not None:
        overrides["fuse"] = args.fuse == "on"
    return load_config(args.config, overrides)


def _specimen_set(cfg: Config, params=None, specimen_id: str = "specimen0") -> SpecimenSet:
    params = params if params is not None else cfg.acquisition()
    import dataclasses

    dims = dataclasses.replace(cfg.volume(), nz=params.n_rows)
    return SpecimenSet(specimens=(Specimen(params=params, dims=dims, specimen_id=specimen_id),))


def _pipeline_config(cfg: Config, fuse: bool) -> pipeline.PipelineConfig:
    return pipeline.PipelineConfig(
        grid=cfg.rank_grid(),
        group_size=cfg.group_size,
        overlap=cfg.overlap,
        fuse_ai=fuse,
        mapping=cfg.mapping,
        i0=cfg.i0,
        filter_spec=cfg.filter_spec(),
        hu_window=cfg.hu_window(),
        feather_band=cfg.feather_band,
        compute_rate=cfg.compute_rate,
        per_rank_memory=cfg.per_rank_memory,
        retain_volume=cfg.retain_volume,
        patch_budget=cfg.patch_budget,
        patch_size=cfg.patch_size,
        segmenter=cfg.segmenter() if fuse else None,
    )


def _models(cfg: Config) -> tuple[Fabric, StorageModel]:
    fab = Fabric(
        n_ranks=cfg.rank_grid().total,
        link_bandwidth=cfg.link_bandwidth,
        link_latency=cfg.link_latency,
        seed=cfg.seed,
    )
    storage = StorageModel(
        pfs_read_bw=cfg.pfs_read_bw,
        pfs_write_bw=cfg.pfs_write_bw,
        staging_bw=cfg.staging_bw,
    )
    return fab, storage


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    params = cfg.acquisition()
    dims = cfg.volume()
    if dims.nz != params.n_rows:
        raise ConfigError(f"nz ({dims.nz}) must equal n_rows ({params.n_rows})")
    log.info("generating %dx%dx%d microstructure", *dims.shape)
    micro = phantom.generate_microstructure(
        dims, cfg.aggregate_fraction, cfg.pore_fraction, seed=cfg.seed
    )
    counts = phantom.intensity_sinogram(micro, params, cfg.degradation())
    eff = phantom.effective_params(params, cfg.sparsity)
    args.out.mkdir(parents=True, exist_ok=True)
    formats.write_sino(args.out / "specimen.sino", counts, eff)
    formats.write_mask(args.out / "truth.msk2", micro.labels)
    print(f"wrote {args.out / 'specimen.sino'} and {args.out / 'truth.msk2'}")
    return 0


def _run(args, fuse: bool):
    cfg = _config_from_args(args)
    counts, params = formats.read_sino(args.sino, pixel_pitch=cfg.pixel_pitch)
    specimens = _specimen_set(cfg, params=params)
    fab, storage = _models(cfg)
    result = pipeline.run(
        specimens,
        {"specimen0": counts},
        _pipeline_config(cfg, fuse),
        fab,
        storage,
    )
    return cfg, result


def cmd_reconstruct(args) -> int:
    cfg, result = _run(args, fuse=False)
    args.out.mkdir(parents=True, exist_ok=True)
    formats.write_vol(args.out / "volume.vol", result.quantized["specimen0"], cfg.voxel_pitch)
    (args.out / "trace.csv").write_text(result.trace.to_csv())
    print(f"wrote {args.out / 'volume.vol'}; makespan {result.makespan:.6f} s (model)")
    return 0


def cmd_run_fused(args) -> int:
    cfg, result = _run(args, fuse=True)
    args.out.mkdir(parents=True, exist_ok=True)
    formats.write_mask(args.out / "mask.msk2", result.masks["specimen0"])
    (args.out / "trace.csv").write_text(result.trace.to_csv())
    audit = pipeline.io_audit(result.trace, fuse_ai=True)
    (args.out / "io_audit.txt").write_text(audit.report() + "\n")
    print(audit.report())
    return 0


def cmd_plan(args) -> int:
    cfg = _config_from_args(args)
    specimens = _specimen_set(cfg)
    block = partition_specimens(specimens, cfg.rank_grid(), cfg.group_size)
    cyclic = map_cyclic(block)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "plan.json").write_text(cyclic.to_json())
    rows = ["mapping,scope,max_over_mean,cv"]
    for name, plan in (("block", block), ("cyclic", cyclic)):
        rep = imbalance(plan)
        for i, grp in enumerate(rep.per_group):
            rows.append(f"{name},group{i},{grp['max_over_mean']:.6f},{grp['cv']:.6f}")
        o = rep.overall
        rows.append(f"{name},overall,{o['max_over_mean']:.6f},{o['cv']:.6f}")
    (args.out / "imbalance.csv").write_text("\n".join(rows) + "\n")
    block_mm = imbalance(block).overall["max_over_mean"]
    cyclic_mm = imbalance(cyclic).overall["max_over_mean"]
    print(f"overall max/mean: block={block_mm:.4f} cyclic={cyclic_mm:.4f}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _config_from_args(args)
    pred = formats.read_mask(args.pred)
    truth = formats.read_mask(args.truth)
    if pred.shape != truth.shape:
        raise FormatError(
            f"mask shapes differ: {pred.shape} vs {truth.shape}"
        )
    args.out.mkdir(parents=True, exist_ok=True)
    lines = ["class,dice"]
    for c in np.unique(truth):
        lines.append(f"{int(c)},{dice(pred, truth, int(c)):.6f}")
    macro = dice_macro(pred, truth)
    lines.append(f"macro,{macro:.6f}")
    (args.out / "dice.csv").write_text("\n".join(lines) + "\n")
    comp = connected_components(pred, phantom.AGGREGATE, connectivity=6)
    (args.out / "components.csv").write_text(comp.to_csv())
    print(f"macro dice {macro:.4f}; {comp.n_components} aggregate components")
    return 0


def cmd_bench(args) -> int:
    cfg = _config_from_args(args)
    params = cfg.acquisition()
    dims = cfg.volume()
    micro = phantom.generate_microstructure(
        dims, cfg.aggregate_fraction, cfg.pore_fraction, seed=cfg.seed
    )
    counts = phantom.intensity_sinogram(micro, params, cfg.degradation())
    specimens = _specimen_set(cfg)
    rows = ["p_proj,p_slice,group_size,executed,model,serial_sum,max_stage"]
    import dataclasses

    for p_proj in (1, 2, 4):
        for p_slice in (1, 2):
            for group_size in (1, 2):
                run_cfg = _pipeline_config(cfg, fuse=False)
                run_cfg = dataclasses.replace(
                    run_cfg,
                    grid=dataclasses.replace(
                        cfg.rank_grid(), p_proj=p_proj, p_slice=p_slice
                    ),
                    group_size=group_size,
                )
                fab, storage = _models(cfg)
                fab = dataclasses.replace(fab, n_ranks=run_cfg.grid.total)
                result = pipeline.run(
                    specimens, {"specimen0": counts}, run_cfg, fab, storage
                )
                t = result.trace.durations()
                rows.append(
                    f"{p_proj},{p_slice},{group_size},{result.makespan:.6f},"
                    f"{pipeline.makespan_model(t):.6f},{t.sum():.6f},"
                    f"{t.sum(axis=0).max():.6f}"
                )
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "bench.csv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "plan": cmd_plan,
    "run-fused": cmd_run_fused,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
}

_ERROR_PREFIXES = (
    (ConfigError, "config error"),
    (FormatError, "format error"),
    (PartitionError, "partition error"),
    (pipeline.MemoryBudgetError, "memory error"),
    (FileNotFoundError, "io error"),
    (ValueError, "input error"),
)


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("TOMOFUSE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single exit point for the CLI
        for klass, prefix in _ERROR_PREFIXES:
            if isinstance(exc, klass):
                print(f"{prefix}: {exc}", file=sys.stderr)
                return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
