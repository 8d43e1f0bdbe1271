import numpy as np
import pytest

from tomofuse.geometry import AcquisitionParams, VolumeDims


def make_disc(n: int, radius: float, value: float = 1.0, center=None) -> np.ndarray:
    """Single-slice float volume holding a uniform disc."""
    cy = cx = (n - 1) / 2.0 if center is None else center
    yy, xx = np.ogrid[0:n, 0:n]
    img = np.where((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2, value, 0.0)
    return img[None, :, :]


@pytest.fixture
def small_scan():
    params = AcquisitionParams(n_proj=24, n_rows=4, n_chan=32)
    dims = VolumeDims(nx=32, ny=32, nz=4)
    return params, dims
