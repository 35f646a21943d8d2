"""Synthetic multi-modal cases with nested ellipsoidal tumor regions.

Each phantom is a brain ellipsoid (background exactly zero) containing an
edema ellipsoid that wraps a tumor core; the core splits into a necrotic
interior and an enhancing rim.  Modality contrasts mimic MRI semantics:
T2/FLAIR are bright over fluid (edema), T1-Gd is bright over the enhancing
rim.  Generation is deterministic per seed and writes the raw+sidecar
format plus a dataset manifest using the conventional external alphabet
(enhancing stored as 4).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rawio import write_raw
from .volume import BRATS_LABEL_ENCODING, CaseEntry, DatasetManifest, Volume

#: per-modality intensity of (healthy brain, edema, necrotic, enhancing)
_PROFILES = {
    "t1": (1.0, 0.85, 0.7, 0.9),
    "t1gd": (1.0, 0.95, 0.6, 2.2),
    "t2": (1.0, 1.9, 1.4, 1.2),
    "flair": (1.0, 2.1, 1.4, 1.3),
}

_EXTERNAL_LABEL = {0: 0, 1: 1, 2: 2, 3: 4}


@dataclass
class PhantomSpec:
    dims: tuple = (48, 48, 48)
    count: int = 10
    seed: int = 0
    edema_radius: tuple = (9.0, 13.0)
    core_fraction: tuple = (0.55, 0.7)   # core radius as a fraction of edema
    necrotic_fraction: float = 0.6       # necrotic interior of the core
    noise_std: float = 0.05


def _ellipsoid(dims, center, radii) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims],
                        indexing="ij")
    q = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return q <= 1.0


def generate_case(spec: PhantomSpec, rng: np.random.Generator):
    """One phantom: returns ({modality: array}, internal label array)."""
    dims = np.asarray(spec.dims, dtype=np.float64)
    center = dims / 2.0 - 0.5
    brain_radii = dims * rng.uniform(0.38, 0.44, size=3)
    brain = _ellipsoid(spec.dims, center, brain_radii)

    re = rng.uniform(*spec.edema_radius)
    # Tumor center kept inside the brain with room for the edema envelope.
    offset = rng.uniform(-0.35, 0.35, size=3) * (brain_radii - re)
    t_center = center + offset
    squash = rng.uniform(0.8, 1.0, size=3)
    edema = _ellipsoid(spec.dims, t_center, re * squash) & brain
    rc = re * rng.uniform(*spec.core_fraction)
    core = _ellipsoid(spec.dims, t_center, rc * squash) & brain
    necrotic = _ellipsoid(spec.dims, t_center,
                          rc * spec.necrotic_fraction * squash) & brain

    label = np.zeros(spec.dims, dtype=np.uint8)
    label[edema] = 2
    label[core] = 3        # enhancing rim
    label[necrotic] = 1    # necrotic interior

    modalities = {}
    for name, (v_brain, v_edema, v_necrotic, v_enh) in _PROFILES.items():
        img = np.zeros(spec.dims, dtype=np.float32)
        img[brain] = v_brain
        img[label == 2] = v_edema
        img[label == 1] = v_necrotic
        img[label == 3] = v_enh
        noise = rng.normal(0.0, spec.noise_std, size=spec.dims).astype(np.float32)
        img[brain] += noise[brain]
        # Background must stay exactly zero; interior voxels must not.
        img[brain] = np.maximum(img[brain], 0.05)
        modalities[name] = img
    return modalities, label


def phantom_generate(spec: PhantomSpec, out_dir) -> Path:
    """Write ``spec.count`` phantoms plus a manifest; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    spacing = (1.0, 1.0, 1.0)
    for i in range(spec.count):
        case_id = f"phantom_{i:03d}"
        case_dir = out_dir / case_id
        case_dir.mkdir(exist_ok=True)
        modalities, label = generate_case(spec, rng)
        paths = {}
        for name, img in modalities.items():
            rel = f"{case_id}/{name}.raw"
            write_raw(Volume(dims=spec.dims, spacing=spacing, data=img,
                             name=case_id), out_dir / rel)
            paths[name.upper()] = rel
        external = np.vectorize(_EXTERNAL_LABEL.get)(label).astype(np.float32)
        label_rel = f"{case_id}/seg.raw"
        write_raw(Volume(dims=spec.dims, spacing=spacing, data=external,
                         name=case_id), out_dir / label_rel)
        entries.append(CaseEntry(
            case_id=case_id,
            modality_paths={"T1": paths["T1"], "T1GD": paths["T1GD"],
                            "T2": paths["T2"], "FLAIR": paths["FLAIR"]},
            label_path=label_rel,
        ))
    manifest = DatasetManifest(entries=entries,
                               label_encoding=dict(BRATS_LABEL_ENCODING),
                               root=out_dir)
    manifest_path = out_dir / "manifest.json"
    manifest.save(manifest_path)
    return manifest_path
