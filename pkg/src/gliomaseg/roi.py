"""Region-of-interest cropping: bounding box from a binary mask, tolerance
expansion, minimum-size zero padding, and exact restoration to the original
grid."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBox, RecordMismatch
from .volume import MODALITIES, MultiModalCase

DEFAULT_TOLERANCE = 12
DEFAULT_MIN_DIMS = (48, 48, 128)


@dataclass(frozen=True)
class BBox3:
    """Inclusive voxel-index bounds on three axes."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise EmptyBox(f"lo {self.lo} exceeds hi {self.hi}")

    def extent(self) -> tuple:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))


def mask_bbox(binary_probs: np.ndarray, threshold: float = 0.5) -> BBox3 | None:
    """Tightest box containing all voxels above threshold; None if empty."""
    hits = np.argwhere(binary_probs > threshold)
    if hits.size == 0:
        return None
    return BBox3(lo=tuple(int(v) for v in hits.min(axis=0)),
                 hi=tuple(int(v) for v in hits.max(axis=0)))


def nonzero_bbox(case: MultiModalCase) -> BBox3 | None:
    """Bounding box of voxels that are nonzero in any modality."""
    mask = np.zeros(case.dims, dtype=bool)
    for m in MODALITIES:
        mask |= case.modalities[m].data != 0
    return mask_bbox(mask.astype(np.float32), threshold=0.5)


def expand_bbox(bbox: BBox3, tolerance: int, bounds) -> BBox3:
    """Move every face outward by ``tolerance`` voxels, clipped to bounds."""
    lo = tuple(max(l - tolerance, 0) for l in bbox.lo)
    hi = tuple(min(h + tolerance, d - 1) for h, d in zip(bbox.hi, bounds))
    return BBox3(lo=lo, hi=hi)


@dataclass
class CropRecord:
    """Everything needed to place a cropped prediction back exactly."""

    original_dims: tuple
    crop_lo: tuple      # inclusive source start per axis
    crop_hi: tuple      # inclusive source end per axis
    pad_lo: tuple       # zero padding prepended per axis
    pad_hi: tuple       # zero padding appended per axis

    def cropped_dims(self) -> tuple:
        return tuple(h - l + 1 + pl + ph for l, h, pl, ph in
                     zip(self.crop_lo, self.crop_hi, self.pad_lo, self.pad_hi))

    def to_json(self) -> str:
        return json.dumps({
            "original_dims": list(self.original_dims),
            "crop_lo": list(self.crop_lo),
            "crop_hi": list(self.crop_hi),
            "pad_lo": list(self.pad_lo),
            "pad_hi": list(self.pad_hi),
        })

    @classmethod
    def from_json(cls, text: str) -> "CropRecord":
        doc = json.loads(text)
        return cls(**{k: tuple(doc[k]) for k in
                      ("original_dims", "crop_lo", "crop_hi", "pad_lo", "pad_hi")})


def _xy_window(lo: int, hi: int, min_dim: int):
    extent = hi - lo + 1
    short = max(min_dim - extent, 0)
    return lo, hi, short // 2, short - short // 2


def _z_window(lo: int, hi: int, target: int, dim: int):
    center = (lo + hi) // 2
    start = center - target // 2
    end = start + target - 1
    crop_lo = max(start, 0)
    crop_hi = min(end, dim - 1)
    return crop_lo, crop_hi, crop_lo - start, end - crop_hi


def make_crop_record(dims, bbox: BBox3, min_dims=DEFAULT_MIN_DIMS) -> CropRecord:
    """Crop window from an (expanded) bbox: x/y from the box with symmetric
    zero padding up to the minimum, z re-centered to exactly min_dims[2]."""
    x = _xy_window(bbox.lo[0], bbox.hi[0], min_dims[0])
    y = _xy_window(bbox.lo[1], bbox.hi[1], min_dims[1])
    z = _z_window(bbox.lo[2], bbox.hi[2], min_dims[2], dims[2])
    return CropRecord(
        original_dims=tuple(dims),
        crop_lo=(x[0], y[0], z[0]),
        crop_hi=(x[1], y[1], z[1]),
        pad_lo=(x[2], y[2], z[2]),
        pad_hi=(x[3], y[3], z[3]),
    )


def _crop_array(data: np.ndarray, rec: CropRecord) -> np.ndarray:
    sl = tuple(slice(l, h + 1) for l, h in zip(rec.crop_lo, rec.crop_hi))
    pads = tuple((pl, ph) for pl, ph in zip(rec.pad_lo, rec.pad_hi))
    if data.ndim > 3:
        sl = sl + (slice(None),) * (data.ndim - 3)
        pads = pads + ((0, 0),) * (data.ndim - 3)
    return np.pad(data[sl], pads)


def crop_case(case: MultiModalCase, bbox: BBox3,
              min_dims=DEFAULT_MIN_DIMS) -> tuple:
    """Crop every channel of a case to the ROI window; returns the cropped
    case and the record needed to undo it."""
    rec = make_crop_record(case.dims, bbox, min_dims)
    new_dims = rec.cropped_dims()
    modalities = {}
    for m in MODALITIES:
        vol = case.modalities[m]
        modalities[m] = vol.__class__(
            dims=new_dims, spacing=vol.spacing,
            data=_crop_array(vol.data, rec), name=vol.name)
    label = _crop_array(case.label, rec) if case.label is not None else None
    return (MultiModalCase(case_id=case.case_id, modalities=modalities,
                           label=label), rec)


def restore_to_original(cropped_pred: np.ndarray, record: CropRecord) -> np.ndarray:
    """Place a cropped prediction back on the original grid.

    Synthetic padding voxels are dropped.  Outside the crop, probability
    fields (4D) get background probability 1 in channel 0; 3D arrays
    (masks, confidence maps) get zeros.
    """
    expected = record.cropped_dims()
    if tuple(cropped_pred.shape[:3]) != expected:
        raise RecordMismatch(
            f"cropped prediction {cropped_pred.shape[:3]} vs record {expected}")
    inner = cropped_pred[tuple(
        slice(pl, s - ph) for pl, ph, s in
        zip(record.pad_lo, record.pad_hi, cropped_pred.shape[:3]))]
    if cropped_pred.ndim == 4:
        full = np.zeros(tuple(record.original_dims) + (cropped_pred.shape[3],),
                        dtype=cropped_pred.dtype)
        full[..., 0] = 1.0
    else:
        full = np.zeros(tuple(record.original_dims), dtype=cropped_pred.dtype)
    sl = tuple(slice(l, h + 1) for l, h in zip(record.crop_lo, record.crop_hi))
    full[sl] = inner
    return full
