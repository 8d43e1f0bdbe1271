"""Synthetic labeled microstructures and their simulated acquisition.

A specimen is a cement-paste cylinder on empty background, filled with
non-overlapping spherical aggregates and pores by seeded dart throwing.
The four label classes are background (0), pore (1), cement paste (2) and
aggregate (3); per-class linear attenuation coefficients turn labels into
an attenuation volume.

``forward_project`` is the exact transpose of the back-projection
interpolation in :mod:`tomofuse.fbp` (scatter instead of gather), scaled
by the voxel pitch so sinogram samples are dimensionless optical depths.
``degrade`` applies the acquisition degradation suite in a fixed order:
Beer-Lambert to intensity, static per-channel ring gains, channel blur,
Poisson counting noise, additive Gaussian readout noise, clamping, back to
optical depth, then angle subsampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse

from .geometry import AcquisitionParams, VolumeDims, check_consistent, ray_coordinate

BACKGROUND, PORE, CEMENT, AGGREGATE = 0, 1, 2, 3
N_CLASSES = 4

# attenuation in 1/um; ordering background <= pore < cement < aggregate
DEFAULT_ATTENUATION = np.array([0.0, 5e-5, 2e-4, 3.5e-4])

POISSON_EXACT_MEAN = 30.0  # exact sampling below, Gaussian approximation above
MIN_RING_GAIN = 0.05
MIN_COUNTS = 1.0


@dataclass(frozen=True)
class Microstructure:
    """Labeled voxel volume plus per-class attenuation coefficients."""

    labels: np.ndarray  # (nz, ny, nx) uint8, values 0..3
    attenuation: np.ndarray  # (4,) 1/um

    def __post_init__(self):
        labels = np.asarray(self.labels)
        att = np.asarray(self.attenuation, dtype=np.float64)
        if labels.ndim != 3:
            raise ValueError("labels must be a 3D (nz, ny, nx) array")
        if labels.size and labels.max() >= N_CLASSES:
            raise ValueError("labels must be < 4")
        if att.shape != (N_CLASSES,):
            raise ValueError("attenuation must have one coefficient per class")
        if np.any(att < 0):
            raise ValueError("attenuation coefficients must be >= 0")
        if not (att[BACKGROUND] <= att[PORE] < att[CEMENT] < att[AGGREGATE]):
            raise ValueError(
                "attenuation must be ordered background <= pore < cement < aggregate"
            )
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "attenuation", att)

    @property
    def dims_shape(self) -> tuple[int, int, int]:
        return self.labels.shape

    def attenuation_volume(self) -> np.ndarray:
        return self.attenuation[self.labels]


@dataclass(frozen=True)
class DegradationSpec:
    """Degradation suite parameters; identical seeds give identical output."""

    poisson_flux: float = 1e5
    gaussian_sigma: float = 0.0
    blur_sigma: float = 0.0
    ring_gain_sigma: float = 0.0
    sparsity: int = 1
    seed: int = 0
    poisson_enabled: bool = True

    def __post_init__(self):
        if self.poisson_flux <= 0:
            raise ValueError("poisson_flux must be positive")
        if min(self.gaussian_sigma, self.blur_sigma, self.ring_gain_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.sparsity < 1:
            raise ValueError("sparsity must be >= 1")


def _place_spheres(
    labels: np.ndarray,
    rng: np.random.Generator,
    target_voxels: int,
    radius_range: tuple[float, float],
    new_label: int,
    max_failures: int = 20000,
) -> int:
    """Dart-throw spheres of ``new_label`` into cement paste.

    A candidate is accepted only if every voxel it covers is currently
    cement, which keeps spheres inside the cylinder and non-overlapping.
    Returns the number of voxels converted.
    """
    nz, ny, nx = labels.shape
    placed = 0
    failures = 0
    r_lo, r_hi = radius_range
    while placed < target_voxels and failures < max_failures:
        r = rng.uniform(r_lo, r_hi)
        cz = rng.uniform(r, nz - 1 - r) if nz - 1 > 2 * r else (nz - 1) / 2.0
        cy = rng.uniform(r, ny - 1 - r)
        cx = rng.uniform(r, nx - 1 - r)
        z0, z1 = int(np.floor(cz - r)), int(np.ceil(cz + r)) + 1
        y0, y1 = int(np.floor(cy - r)), int(np.ceil(cy + r)) + 1
        x0, x1 = int(np.floor(cx - r)), int(np.ceil(cx + r)) + 1
        z0, y0, x0 = max(z0, 0), max(y0, 0), max(x0, 0)
        z1, y1, x1 = min(z1, nz), min(y1, ny), min(x1, nx)
        zz, yy, xx = np.ogrid[z0:z1, y0:y1, x0:x1]
        ball = (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        box = labels[z0:z1, y0:y1, x0:x1]
        if not ball.any() or np.any(box[ball] != CEMENT):
            failures += 1
            continue
        box[ball] = new_label
        placed += int(ball.sum())
        failures = 0
    return placed


def generate_microstructure(
    dims: VolumeDims,
    aggregate_fraction: float,
    pore_fraction: float,
    seed: int,
    attenuation: np.ndarray | None = None,
    aggregate_radius: tuple[float, float] = (0.06, 0.14),
    pore_radius: tuple[float, float] = (0.02, 0.05),
    cylinder_radius: float = 0.45,
) -> Microstructure:
    """Generate a labeled cylinder specimen with the requested composition.

    Fractions are relative to the in-cylinder voxel count; realized
    fractions land within +-20% relative of the request (spheres are
    thrown until the running count reaches the target).  Radius ranges are
    fractions of min(nx, ny).  Deterministic per seed.
    """
    if dims.n_voxels == 0:
        raise ValueError("volume has zero voxels")
    if aggregate_fraction < 0 or pore_fraction < 0:
        raise ValueError("fractions must be >= 0")
    if aggregate_fraction + pore_fraction >= 1:
        raise ValueError("aggregate_fraction + pore_fraction must be < 1")

    nz, ny, nx = dims.shape
    rng = np.random.default_rng(seed)
    labels = np.full(dims.shape, BACKGROUND, dtype=np.uint8)

    cyl_r = cylinder_radius * min(nx, ny)
    cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0
    yy, xx = np.ogrid[0:ny, 0:nx]
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= cyl_r * cyl_r
    labels[:, inside] = CEMENT
    cylinder_voxels = int(inside.sum()) * nz

    scale = min(nx, ny)
    for fraction, radius_range, label in (
        (aggregate_fraction, aggregate_radius, AGGREGATE),
        (pore_fraction, pore_radius, PORE),
    ):
        if fraction <= 0:
            continue
        target = int(round(fraction * cylinder_voxels))
        r_lo = max(1.2, radius_range[0] * scale)
        r_hi = max(r_lo, radius_range[1] * scale)
        placed = _place_spheres(labels, rng, target, (r_lo, r_hi), label)
        if placed < 0.8 * target:
            raise RuntimeError(
                f"could not reach requested fraction {fraction} for label "
                f"{label}: placed {placed}/{target} voxels"
            )

    att = DEFAULT_ATTENUATION if attenuation is None else attenuation
    return Microstructure(labels=labels, attenuation=np.asarray(att, float))


def forward_project(m: Microstructure, params: AcquisitionParams) -> np.ndarray:
    """Discrete Radon transform of the attenuation volume, slice by slice.

    Uses the transpose of the back-projection gather (linear interpolation
    between adjacent channels, rays off the detector dropped) so that
    forward and back projection form an adjoint pair.  Output has shape
    (n_proj, n_rows, n_chan) in dimensionless optical depth.
    """
    return project_volume(m.attenuation_volume(), params)


def project_volume(volume: np.ndarray, params: AcquisitionParams) -> np.ndarray:
    """Line integrals of an arbitrary float volume (see forward_project).

    Material outside the scanned field of view is invisible (zeroed before
    projection), mirroring the reconstruction-side FoV mask so the two
    operators stay exact adjoints; specimens are generated inside the FoV.
    """
    from .fbp import fov_radius_channels

    vol = np.asarray(volume, dtype=np.float64)
    nz, ny, nx = vol.shape
    if params.n_rows != nz:
        raise ValueError(
            f"params.n_rows ({params.n_rows}) must equal volume slices ({nz})"
        )
    dims = VolumeDims(nx=nx, ny=ny, nz=nz, voxel_pitch=params.pixel_pitch)
    yy, xx = np.ogrid[0:ny, 0:nx]
    rr = ((xx - (nx - 1) / 2.0) ** 2 + (yy - (ny - 1) / 2.0) ** 2) * (
        dims.voxel_pitch / params.pixel_pitch
    ) ** 2
    if (rr > fov_radius_channels(params) ** 2).any():
        vol = vol.copy()
        vol[:, rr > fov_radius_channels(params) ** 2] = 0.0
    mu = vol.reshape(nz, ny * nx)
    theta = params.angles()
    n_chan = params.n_chan
    npix = ny * nx
    xs = np.arange(nx)
    ys = np.arange(ny)[:, None]
    pix = np.arange(npix)

    sino = np.empty((params.n_proj, nz, n_chan), dtype=np.float64)
    for k in range(params.n_proj):
        t = ray_coordinate(xs, ys, theta[k], params, dims).ravel()
        i0 = np.floor(t).astype(np.int64)
        frac = t - i0
        i1 = i0 + 1
        valid0 = (i0 >= 0) & (i0 < n_chan)
        valid1 = (i1 >= 0) & (i1 < n_chan)
        # linear splat of each voxel onto its two neighboring channels,
        # expressed as a sparse pixel -> channel scatter matrix
        scatter = sparse.csr_matrix(
            (
                np.concatenate(
                    [np.where(valid0, 1.0 - frac, 0.0), np.where(valid1, frac, 0.0)]
                ),
                (
                    np.concatenate([pix, pix]),
                    np.concatenate(
                        [np.where(valid0, i0, 0), np.where(valid1, i1, 0)]
                    ),
                ),
            ),
            shape=(npix, n_chan),
        )
        sino[k] = mu @ scatter
    return sino * dims.voxel_pitch


def degrade(sino: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply the acquisition degradation suite to an optical-depth sinogram."""
    p = np.asarray(sino, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    flux = spec.poisson_flux
    intensity = flux * np.exp(-p)

    if spec.ring_gain_sigma > 0:
        gains = 1.0 + rng.normal(0.0, spec.ring_gain_sigma, size=p.shape[-1])
        gains = np.maximum(gains, MIN_RING_GAIN)
        intensity = intensity * gains

    if spec.blur_sigma > 0:
        intensity = ndimage.gaussian_filter1d(
            intensity, spec.blur_sigma, axis=-1, mode="nearest"
        )

    if spec.poisson_enabled:
        intensity = _sample_poisson(intensity, rng)

    if spec.gaussian_sigma > 0:
        intensity = intensity + rng.normal(0.0, spec.gaussian_sigma, size=p.shape)

    intensity = np.maximum(intensity, MIN_COUNTS)
    out = -np.log(intensity / flux)
    return out[:: spec.sparsity]


def effective_params(params: AcquisitionParams, sparsity: int) -> AcquisitionParams:
    """Acquisition parameters after keep-every-k angle subsampling.

    The retained angles stay evenly spaced; the span is adjusted so that
    theta_j = j * span' / n_proj' reproduces them exactly.
    """
    import dataclasses

    if sparsity == 1:
        return params
    kept = -(-params.n_proj // sparsity)  # ceil
    span = kept * sparsity * params.angle_span / params.n_proj
    return dataclasses.replace(params, n_proj=kept, angle_span=span)


def _sample_poisson(mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Poisson draw, exact below POISSON_EXACT_MEAN, Gaussian above."""
    out = np.empty_like(mean)
    small = mean < POISSON_EXACT_MEAN
    out[small] = rng.poisson(mean[small])
    big = ~small
    if big.any():
        approx = rng.normal(mean[big], np.sqrt(mean[big]))
        out[big] = np.maximum(np.round(approx), 0.0)
    return out


def intensity_sinogram(
    m: Microstructure, params: AcquisitionParams, spec: DegradationSpec
) -> np.ndarray:
    """Simulate raw detector counts: project, degrade, convert to intensity.

    Convenience wrapper producing the count data the reconstruction
    pipeline ingests (its preprocessing inverts Beer-Lambert again).
    """
    depth = degrade(forward_project(m, params), spec)
    return spec.poisson_flux * np.exp(-depth)
