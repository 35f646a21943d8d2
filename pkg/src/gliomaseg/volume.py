"""Core volumetric data types, Z-score normalization, and case assembly."""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConstantRegionWarning,
    DataError,
    DimsMismatch,
    MissingModality,
    NonFiniteVoxel,
    UnknownLabelValue,
)

MODALITIES = ("T1", "T1GD", "T2", "FLAIR")

#: Internal segmentation alphabet: 0 background, 1 necrotic/non-enhancing
#: core, 2 peritumoral edema, 3 enhancing tumor.
INTERNAL_LABELS = (0, 1, 2, 3)

#: Conventional BraTS on-disk encoding (enhancing stored as 4).
BRATS_LABEL_ENCODING = {0: 0, 1: 1, 2: 2, 4: 3}


@dataclass
class Volume:
    """One 3D scalar grid with voxel spacing and provenance metadata."""

    dims: tuple
    spacing: tuple
    data: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise DimsMismatch(f"invalid dims {self.dims}")
        if self.data.shape != self.dims:
            raise DimsMismatch(
                f"data shape {self.data.shape} does not match dims {self.dims}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteVoxel(f"volume {self.name!r} contains non-finite voxels")

    def with_data(self, data: np.ndarray, name=None) -> "Volume":
        return Volume(dims=self.dims, spacing=self.spacing, data=data,
                      name=self.name if name is None else name)


@dataclass
class MultiModalCase:
    """Four co-registered modality volumes plus an optional label mask."""

    case_id: str
    modalities: dict
    label: np.ndarray | None = None

    def __post_init__(self):
        missing = [m for m in MODALITIES if m not in self.modalities]
        if missing:
            raise MissingModality(f"case {self.case_id}: missing {missing}")
        dims0 = self.modalities[MODALITIES[0]].dims
        for m in MODALITIES:
            if self.modalities[m].dims != dims0:
                raise DimsMismatch(
                    f"case {self.case_id}: {m} dims {self.modalities[m].dims} != {dims0}")
        if self.label is not None and tuple(self.label.shape) != dims0:
            raise DimsMismatch(
                f"case {self.case_id}: label shape {self.label.shape} != {dims0}")

    @property
    def dims(self) -> tuple:
        return self.modalities[MODALITIES[0]].dims

    def stacked(self) -> np.ndarray:
        """Modalities stacked channels-last: (nx, ny, nz, 4) float32."""
        return np.stack(
            [self.modalities[m].data.astype(np.float32) for m in MODALITIES], axis=-1)


@dataclass
class CaseEntry:
    case_id: str
    modality_paths: dict
    label_path: str | None = None


@dataclass
class DatasetManifest:
    """On-disk dataset index: case records plus the external label alphabet."""

    entries: list
    label_encoding: dict
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [e.case_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("manifest contains duplicate case_ids")
        for e in self.entries:
            for m, p in e.modality_paths.items():
                if not str(p):
                    raise DataError(f"case {e.case_id}: empty path for {m}")

    def case_ids(self) -> list:
        return [e.case_id for e in self.entries]

    def entry(self, case_id: str) -> CaseEntry:
        for e in self.entries:
            if e.case_id == case_id:
                return e
        raise DataError(f"case {case_id!r} not in manifest")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: {exc}") from exc
        try:
            encoding = {int(k): int(v) for k, v in doc["label_encoding"].items()}
            entries = [
                CaseEntry(
                    case_id=rec["case_id"],
                    modality_paths=dict(rec["modalities"]),
                    label_path=rec.get("label"),
                )
                for rec in doc["cases"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from exc
        return cls(entries=entries, label_encoding=encoding, root=path.parent)

    def save(self, path) -> None:
        doc = {
            "label_encoding": {str(k): v for k, v in self.label_encoding.items()},
            "cases": [
                {
                    "case_id": e.case_id,
                    "modalities": e.modality_paths,
                    **({"label": e.label_path} if e.label_path else {}),
                }
                for e in self.entries
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)


def zscore_normalize(volume: Volume, region: str = "nonzero") -> Volume:
    """Standardize to zero mean / unit variance over the selected region.

    ``region`` is ``"all"`` or ``"nonzero"``; with ``"nonzero"`` only voxels
    that are exactly zero are excluded (MRI background after skull stripping)
    and stay zero in the output.  A (near-)constant region yields an all-zero
    result and a :class:`ConstantRegionWarning`.
    """
    if region not in ("all", "nonzero"):
        raise ValueError(f"unknown region {region!r}")
    data = volume.data.astype(np.float32)
    mask = data != 0 if region == "nonzero" else np.ones_like(data, dtype=bool)
    out = np.zeros_like(data)
    if mask.any():
        vals = data[mask].astype(np.float64)
        mu = vals.mean()
        sigma = vals.std()  # population standard deviation
        if sigma < 1e-8:
            warnings.warn(
                f"volume {volume.name!r}: constant {region} region",
                ConstantRegionWarning, stacklevel=2)
        else:
            out[mask] = ((vals - mu) / sigma).astype(np.float32)
    else:
        warnings.warn(
            f"volume {volume.name!r}: empty {region} region",
            ConstantRegionWarning, stacklevel=2)
    return volume.with_data(out)


def read_volume(path) -> Volume:
    """Dispatch on extension: .nii -> NIfTI, anything else -> raw+sidecar."""
    from . import nifti, rawio

    if str(path).endswith(".nii"):
        return nifti.read_nifti(path)
    return rawio.read_raw(path)


def remap_label(raw: np.ndarray, encoding: dict) -> np.ndarray:
    """Map external label values to the internal {0..3} alphabet."""
    rounded = np.rint(raw).astype(np.int64)
    out = np.zeros(rounded.shape, dtype=np.uint8)
    seen = np.zeros(rounded.shape, dtype=bool)
    for ext, internal in encoding.items():
        hit = rounded == ext
        out[hit] = internal
        seen |= hit
    if not seen.all():
        bad = rounded[~seen].flat[0]
        raise UnknownLabelValue(int(bad))
    return out


def load_case(manifest: DatasetManifest, case_id: str,
              normalize: bool = True, region: str = "nonzero") -> MultiModalCase:
    """Read, normalize, and assemble the four modalities (+ label) of a case."""
    entry = manifest.entry(case_id)
    modalities = {}
    for m in MODALITIES:
        if m not in entry.modality_paths:
            raise MissingModality(f"case {case_id}: no path for {m}")
        vol = read_volume(manifest.root / entry.modality_paths[m])
        if normalize:
            vol = zscore_normalize(vol, region=region)
        modalities[m] = vol
    label = None
    if entry.label_path:
        label_vol = read_volume(manifest.root / entry.label_path)
        label = remap_label(label_vol.data, manifest.label_encoding)
    return MultiModalCase(case_id=case_id, modalities=modalities, label=label)
