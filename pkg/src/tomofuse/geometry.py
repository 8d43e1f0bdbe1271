"""Acquisition and volume coordinate conventions.

Conventions used throughout the package:

* the volume is centered at voxel ((nx-1)/2, (ny-1)/2), the detector at
  channel (n_chan-1)/2 (magnification 1, parallel beam, voxel pitch equal
  to detector pitch by default);
* projection angles are evenly spaced, theta_k = k * angle_span / n_proj;
* a normal scan sweeps pi, an offset scan sweeps 2*pi so that laterally
  shifted detectors still cover every voxel at least once.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ScanMode(enum.IntEnum):
    NORMAL = 0
    OFFSET = 1


@dataclass(frozen=True)
class AcquisitionParams:
    """Parallel-beam scan description: angle count, detector shape, geometry."""

    n_proj: int
    n_rows: int
    n_chan: int
    angle_span: float = math.pi
    pixel_pitch: float = 1.0
    scan_mode: ScanMode = ScanMode.NORMAL
    offset_chan: int = 0

    def __post_init__(self):
        if self.n_proj < 1:
            raise ValueError(f"n_proj must be >= 1, got {self.n_proj}")
        if self.n_rows < 1:
            raise ValueError(f"n_rows must be >= 1, got {self.n_rows}")
        if self.n_chan < 2:
            raise ValueError(f"n_chan must be >= 2, got {self.n_chan}")
        if self.angle_span <= 0:
            raise ValueError("angle_span must be positive")
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be positive")
        if self.scan_mode == ScanMode.NORMAL and self.offset_chan != 0:
            raise ValueError("normal scan requires offset_chan == 0")
        if self.scan_mode == ScanMode.OFFSET and not (
            0 < abs(self.offset_chan) < self.n_chan
        ):
            raise ValueError(
                f"offset scan requires 0 < |offset_chan| < n_chan, "
                f"got {self.offset_chan}"
            )

    @property
    def detector_center(self) -> float:
        return (self.n_chan - 1) / 2.0

    @property
    def axis_channel(self) -> float:
        """Channel onto which the rotation axis projects, at every angle."""
        return self.detector_center - self.offset_chan

    def angles(self) -> np.ndarray:
        return np.arange(self.n_proj) * (self.angle_span / self.n_proj)


@dataclass(frozen=True)
class VolumeDims:
    """Reconstruction grid: voxel counts and physical spacing in micrometers."""

    nx: int
    ny: int
    nz: int
    voxel_pitch: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"nx, ny must be >= 2, got {self.nx}x{self.ny}")
        if self.nz < 1:
            raise ValueError(f"nz must be >= 1, got {self.nz}")
        if self.voxel_pitch <= 0:
            raise ValueError("voxel_pitch must be positive")

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape in (z, y, x) order."""
        return (self.nz, self.ny, self.nx)


@dataclass(frozen=True)
class Specimen:
    params: AcquisitionParams
    dims: VolumeDims
    specimen_id: str

    def __post_init__(self):
        check_consistent(self.params, self.dims)


@dataclass(frozen=True)
class SpecimenSet:
    specimens: tuple[Specimen, ...]

    def __post_init__(self):
        if not self.specimens:
            raise ValueError("specimen set must not be empty")
        ids = [s.specimen_id for s in self.specimens]
        if len(set(ids)) != len(ids):
            raise ValueError(f"specimen ids must be unique, got {ids}")

    def __iter__(self):
        return iter(self.specimens)

    def __len__(self):
        return len(self.specimens)

    def by_id(self, specimen_id: str) -> Specimen:
        for s in self.specimens:
            if s.specimen_id == specimen_id:
                return s
        raise KeyError(specimen_id)


def check_consistent(params: AcquisitionParams, dims: VolumeDims) -> None:
    """Detector rows map one-to-one onto volume slices."""
    if params.n_rows != dims.nz:
        raise ValueError(
            f"detector rows ({params.n_rows}) must equal volume slices ({dims.nz})"
        )


def ray_coordinate(x, y, theta: float, params: AcquisitionParams, dims: VolumeDims):
    """Continuous detector channel hit by the ray through voxel (x, y) at theta.

    Accepts scalars or broadcastable arrays for x and y.  A voxel at the
    rotation center maps to ``(n_chan-1)/2 - offset_chan`` for every angle.
    """
    cx = (dims.nx - 1) / 2.0
    cy = (dims.ny - 1) / 2.0
    scale = dims.voxel_pitch / params.pixel_pitch
    t = (np.asarray(x, dtype=np.float64) - cx) * math.cos(theta)
    t = t + (np.asarray(y, dtype=np.float64) - cy) * math.sin(theta)
    return t * scale + params.axis_channel
