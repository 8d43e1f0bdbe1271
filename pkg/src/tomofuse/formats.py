"""Binary file containers for sinograms, volumes and packed masks.

All headers are little-endian:

* SINO: magic "TSIN", u32 version, u32 n_proj, u32 n_rows, u32 n_chan,
  u8 scan_mode (0 normal / 1 offset), i32 offset_chan, f32 angle_span,
  then f32 samples angle-major.
* VOL:  magic "TVOL", u32 nx, u32 ny, u32 nz, f32 voxel_pitch, then u16
  voxels z-major.
* MSK2: magic "TMK2", u32 nx, u32 ny, u32 nz, u8 bits (= 2), then the
  2-bit packed payload of ceil(n/4) bytes.

Writes go to a temporary sibling and are renamed into place, so an
interrupted run never leaves a truncated artifact.  The sinogram header
does not carry the detector pitch; readers default it to 1.0 and callers
that care pass the real pitch out of band (the config file).
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .geometry import AcquisitionParams, ScanMode, VolumeDims
from .segmentation import BitmapMask, decode_bitmap, encode_bitmap

SINO_MAGIC = b"TSIN"
VOL_MAGIC = b"TVOL"
MSK_MAGIC = b"TMK2"
SINO_VERSION = 1

_SINO_HEADER = struct.Struct("<4sIIIIBif")
_VOL_HEADER = struct.Struct("<4sIIIf")
_MSK_HEADER = struct.Struct("<4sIIIB")


class FormatError(ValueError):
    pass


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _read_exact(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"missing file: {path}")


def write_sino(path: str | Path, sino: np.ndarray, params: AcquisitionParams) -> None:
    s = np.asarray(sino, dtype="<f4")
    if s.shape != (params.n_proj, params.n_rows, params.n_chan):
        raise FormatError(
            f"sinogram shape {s.shape} does not match params "
            f"({params.n_proj}, {params.n_rows}, {params.n_chan})"
        )
    header = _SINO_HEADER.pack(
        SINO_MAGIC,
        SINO_VERSION,
        params.n_proj,
        params.n_rows,
        params.n_chan,
        int(params.scan_mode),
        params.offset_chan,
        params.angle_span,
    )
    atomic_write(path, header + np.ascontiguousarray(s).tobytes())


def read_sino(
    path: str | Path, pixel_pitch: float = 1.0
) -> tuple[np.ndarray, AcquisitionParams]:
    blob = _read_exact(Path(path))
    if len(blob) < _SINO_HEADER.size:
        raise FormatError(f"malformed header: {path} truncated")
    magic, version, n_proj, n_rows, n_chan, mode, offset, span = _SINO_HEADER.unpack_from(blob)
    if magic != SINO_MAGIC:
        raise FormatError(f"malformed header: {path} is not a SINO file")
    if version != SINO_VERSION:
        raise FormatError(f"malformed header: unsupported SINO version {version}")
    params = AcquisitionParams(
        n_proj=n_proj,
        n_rows=n_rows,
        n_chan=n_chan,
        angle_span=float(span),
        pixel_pitch=pixel_pitch,
        scan_mode=ScanMode(mode),
        offset_chan=offset,
    )
    expected = n_proj * n_rows * n_chan * 4
    body = blob[_SINO_HEADER.size :]
    if len(body) != expected:
        raise FormatError(
            f"malformed payload: {path} holds {len(body)} bytes, expected {expected}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(n_proj, n_rows, n_chan)
    return data.astype(np.float64), params


def write_vol(path: str | Path, volume: np.ndarray, voxel_pitch: float = 1.0) -> None:
    v = np.asarray(volume)
    if v.ndim != 3 or v.dtype != np.uint16:
        raise FormatError("volume must be a 3D uint16 array (z, y, x)")
    nz, ny, nx = v.shape
    header = _VOL_HEADER.pack(VOL_MAGIC, nx, ny, nz, voxel_pitch)
    atomic_write(path, header + np.ascontiguousarray(v, dtype="<u2").tobytes())


def read_vol(path: str | Path) -> tuple[np.ndarray, VolumeDims]:
    blob = _read_exact(Path(path))
    if len(blob) < _VOL_HEADER.size:
        raise FormatError(f"malformed header: {path} truncated")
    magic, nx, ny, nz, pitch = _VOL_HEADER.unpack_from(blob)
    if magic != VOL_MAGIC:
        raise FormatError(f"malformed header: {path} is not a VOL file")
    body = blob[_VOL_HEADER.size :]
    expected = nx * ny * nz * 2
    if len(body) != expected:
        raise FormatError(
            f"malformed payload: {path} holds {len(body)} bytes, expected {expected}"
        )
    vol = np.frombuffer(body, dtype="<u2").reshape(nz, ny, nx)
    return vol.copy(), VolumeDims(nx=nx, ny=ny, nz=nz, voxel_pitch=float(pitch))


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    m = np.asarray(mask)
    if m.ndim != 3:
        raise FormatError("mask must be a 3D array (z, y, x)")
    nz, ny, nx = m.shape
    bm = encode_bitmap(m)
    header = _MSK_HEADER.pack(MSK_MAGIC, nx, ny, nz, 2)
    atomic_write(path, header + bm.payload)


def read_mask(path: str | Path) -> np.ndarray:
    blob = _read_exact(Path(path))
    if len(blob) < _MSK_HEADER.size:
        raise FormatError(f"malformed header: {path} truncated")
    magic, nx, ny, nz, bits = _MSK_HEADER.unpack_from(blob)
    if magic != MSK_MAGIC:
        raise FormatError(f"malformed header: {path} is not a MSK2 file")
    if bits != 2:
        raise FormatError(f"malformed header: unsupported label width {bits}")
    body = blob[_MSK_HEADER.size :]
    expected = (nx * ny * nz + 3) // 4
    if len(body) != expected:
        raise FormatError(
            f"malformed payload: {path} holds {len(body)} bytes, expected {expected}"
        )
    return decode_bitmap(BitmapMask(dims=(nz, ny, nx), payload=body))


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """8-bit PGM preview of a 2D slice (min-max scaled)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise FormatError("PGM dump expects a 2D slice")
    lo, hi = float(img.min()), float(img.max())
    scale = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    data = (scale * 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    atomic_write(path, header + data.tobytes())
