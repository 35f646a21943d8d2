"""Training-time augmentations (elastic deformation, z-rotation, brightness)
and the 8-variant axis-reflection family used at test time.

All augmentations are deterministic functions of (input, parameters, seed);
labels are only ever resampled with nearest-neighbor lookup, and sampling
outside the volume clamps to the edge.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadVariantId, NonPositiveMagnitude, NonPositiveSigma
from .volume import MODALITIES, MultiModalCase


@dataclass
class DeformationField:
    """Smoothed per-voxel displacement grids, in voxel units."""

    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray
    sigma: float
    magnitude: float


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1D Gaussian truncated at radius ceil(3*sigma), renormalized to sum 1."""
    if sigma <= 0:
        raise NonPositiveSigma(f"sigma={sigma}")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_filter_3d(grid: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with replicate edge handling."""
    kernel = gaussian_kernel(sigma)
    out = grid.astype(np.float64)
    for axis in range(3):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="nearest")
    return out.astype(grid.dtype) if np.issubdtype(grid.dtype, np.floating) else out


def make_deformation_field(dims, sigma: float, magnitude: float,
                           rng: np.random.Generator) -> DeformationField:
    if sigma <= 0:
        raise NonPositiveSigma(f"sigma={sigma}")
    if magnitude < 0:
        raise NonPositiveMagnitude(f"magnitude={magnitude}")
    raw = rng.uniform(-1.0, 1.0, size=(3,) + tuple(dims)) * magnitude
    return DeformationField(
        dx=gaussian_filter_3d(raw[0], sigma),
        dy=gaussian_filter_3d(raw[1], sigma),
        dz=gaussian_filter_3d(raw[2], sigma),
        sigma=sigma,
        magnitude=magnitude,
    )


def _sample(data: np.ndarray, coords, order: int) -> np.ndarray:
    return ndimage.map_coordinates(data, coords, order=order, mode="nearest")


def _warp_case(case: MultiModalCase, coords) -> MultiModalCase:
    modalities = {
        m: case.modalities[m].with_data(
            _sample(case.modalities[m].data.astype(np.float32), coords, order=1)
        )
        for m in MODALITIES
    }
    label = None
    if case.label is not None:
        label = _sample(case.label, coords, order=0).astype(case.label.dtype)
    return MultiModalCase(case_id=case.case_id, modalities=modalities, label=label)


def elastic_deform(case: MultiModalCase, sigma: float, magnitude: float,
                   seed: int) -> MultiModalCase:
    """Warp all modalities (trilinear) and the label (nearest) by one shared
    random smoothed displacement field."""
    rng = np.random.default_rng(seed)
    field = make_deformation_field(case.dims, sigma, magnitude, rng)
    if magnitude == 0:
        return case
    idx = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in case.dims],
                      indexing="ij")
    coords = np.stack([idx[0] + field.dx, idx[1] + field.dy, idx[2] + field.dz])
    return _warp_case(case, coords)


def rotate_case(case: MultiModalCase, angle_deg: float) -> MultiModalCase:
    """Rotate about the z axis around the volume center."""
    if angle_deg == 0:
        return case
    theta = np.deg2rad(angle_deg)
    nx, ny, _ = case.dims
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    idx = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in case.dims],
                      indexing="ij")
    x0, y0 = idx[0] - cx, idx[1] - cy
    # Backward mapping: source coordinates for each output voxel.
    xs = np.cos(theta) * x0 - np.sin(theta) * y0 + cx
    ys = np.sin(theta) * x0 + np.cos(theta) * y0 + cy
    coords = np.stack([xs, ys, idx[2]])
    return _warp_case(case, coords)


def random_rotation(case: MultiModalCase, max_angle_deg: float,
                    seed: int) -> MultiModalCase:
    rng = np.random.default_rng(seed)
    angle = rng.uniform(-max_angle_deg, max_angle_deg) if max_angle_deg > 0 else 0.0
    return rotate_case(case, angle)


def random_brightness(case: MultiModalCase, max_delta: float,
                      seed: int) -> MultiModalCase:
    """Add an independent uniform offset per modality; label untouched."""
    rng = np.random.default_rng(seed)
    modalities = {}
    for m in MODALITIES:
        delta = rng.uniform(-max_delta, max_delta) if max_delta > 0 else 0.0
        vol = case.modalities[m]
        modalities[m] = vol.with_data(vol.data + np.float32(delta))
    return MultiModalCase(case_id=case.case_id, modalities=modalities,
                          label=case.label)


# -- test-time augmentation family ------------------------------------------

@dataclass(frozen=True)
class TtaVariant:
    """One of the 8 axis-reflection combinations; bits of id = flip flags."""

    id: int

    def __post_init__(self):
        if not 0 <= self.id <= 7:
            raise BadVariantId(f"variant id {self.id} not in 0..7")

    @property
    def flips(self) -> tuple:
        return (bool(self.id & 1), bool(self.id & 2), bool(self.id & 4))


ALL_TTA_VARIANTS = tuple(TtaVariant(i) for i in range(8))


def tta_apply(array: np.ndarray, variant: TtaVariant) -> np.ndarray:
    """Reflect the three leading (spatial) axes per the variant's flip bits.

    Works on (H, W, D), (H, W, D, C) and label arrays alike; each variant is
    its own exact inverse.
    """
    axes = [axis for axis, flip in enumerate(variant.flips) if flip]
    return np.flip(array, axis=axes) if axes else array


def tta_invert(array: np.ndarray, variant: TtaVariant) -> np.ndarray:
    return tta_apply(array, variant)
