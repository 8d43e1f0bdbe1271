"""Plain-text key=value configuration.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Unknown keys are rejected so typos fail loudly; value semantics are
validated by the owning module when the objects are constructed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .fbp import FilterSpec, HuWindow
from .geometry import AcquisitionParams, ScanMode, VolumeDims
from .partition import RankGrid
from .phantom import DegradationSpec
from .segmentation import ThresholdSegmenter


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class Config:
    # acquisition
    n_proj: int = 180
    n_rows: int = 64
    n_chan: int = 64
    angle_span: float = 3.141592653589793
    pixel_pitch: float = 12.0
    scan_mode: str = "normal"
    offset_chan: int = 0
    # volume
    nx: int = 64
    ny: int = 64
    nz: int = 64
    voxel_pitch: float = 12.0
    # phantom
    aggregate_fraction: float = 0.25
    pore_fraction: float = 0.04
    # degradation
    poisson_flux: float = 1e5
    gaussian_sigma: float = 0.0
    blur_sigma: float = 0.0
    ring_gain_sigma: float = 0.0
    sparsity: int = 1
    poisson_enabled: bool = True
    # reconstruction
    i0: float = 1e5
    filter_kind: str = "ramlak"
    filter_blur_sigma: float = 0.0
    hu_lo: float = 0.0
    hu_hi: float = 4e-4
    feather_band: int = 32
    # parallel layout
    p_row: int = 1
    p_proj: int = 1
    p_slice: int = 1
    group_size: int = 1
    mapping: str = "cyclic"
    overlap: bool = True
    fuse: bool = False
    retain_volume: bool = False
    per_rank_memory: int = 4 << 30
    # patching and segmentation
    patch_budget: int = 64
    patch_size: int = 16
    canny_sigma: float = 1.0
    canny_low: float = 0.1
    canny_high: float = 0.2
    # midpoints of the default quantized class levels (0/8192/32768/57344)
    seg_t1: float = 4096.0
    seg_t2: float = 20480.0
    seg_t3: float = 45056.0
    # fabric and storage models
    link_bandwidth: float = float(1 << 30)
    link_latency: float = 1e-6
    pfs_read_bw: float = float(2 << 30)
    pfs_write_bw: float = float(2 << 30)
    staging_bw: float = float(8 << 30)
    compute_rate: float = 5e9
    # misc
    seed: int = 0

    def acquisition(self) -> AcquisitionParams:
        return AcquisitionParams(
            n_proj=self.n_proj,
            n_rows=self.n_rows,
            n_chan=self.n_chan,
            angle_span=self.angle_span,
            pixel_pitch=self.pixel_pitch,
            scan_mode=ScanMode.OFFSET if self.scan_mode == "offset" else ScanMode.NORMAL,
            offset_chan=self.offset_chan,
        )

    def volume(self) -> VolumeDims:
        return VolumeDims(nx=self.nx, ny=self.ny, nz=self.nz, voxel_pitch=self.voxel_pitch)

    def degradation(self) -> DegradationSpec:
        return DegradationSpec(
            poisson_flux=self.poisson_flux,
            gaussian_sigma=self.gaussian_sigma,
            blur_sigma=self.blur_sigma,
            ring_gain_sigma=self.ring_gain_sigma,
            sparsity=self.sparsity,
            seed=self.seed,
            poisson_enabled=self.poisson_enabled,
        )

    def filter_spec(self) -> FilterSpec:
        return FilterSpec(kind=self.filter_kind, blur_sigma=self.filter_blur_sigma)

    def hu_window(self) -> HuWindow:
        return HuWindow(lo=self.hu_lo, hi=self.hu_hi)

    def rank_grid(self) -> RankGrid:
        return RankGrid(p_row=self.p_row, p_proj=self.p_proj, p_slice=self.p_slice)

    def segmenter(self) -> ThresholdSegmenter:
        return ThresholdSegmenter(t1=self.seg_t1, t2=self.seg_t2, t3=self.seg_t3)


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def load_config(path: str | Path | None, overrides: dict | None = None) -> Config:
    """Read a key=value file (optional) and apply overrides on top."""
    cfg = Config()
    if path is not None:
        text = Path(path).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            _apply(cfg, key, value, where=f"{path}:{lineno}")
    for key, value in (overrides or {}).items():
        _apply(cfg, key, value, where="override")
    return cfg


def _apply(cfg: Config, key: str, value, where: str) -> None:
    if key not in _FIELD_TYPES:
        raise ConfigError(f"{where}: unknown key {key!r}")
    current = getattr(cfg, key)
    if isinstance(value, str):
        try:
            if isinstance(current, bool):
                value = _parse_bool(value)
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}")
    setattr(cfg, key, value)


def dump_config(cfg: Config) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(Config)]
    return "\n".join(lines) + "\n"
