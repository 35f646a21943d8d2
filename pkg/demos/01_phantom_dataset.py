"""Generate a synthetic phantom dataset and inspect its anatomy.

Each phantom is a brain ellipsoid containing nested tumor regions: edema
(label 2) wrapping an enhancing rim (label 3) around a necrotic interior
(label 1).  Modality contrasts mimic MRI semantics: FLAIR/T2 are bright
over fluid, T1-Gd over the enhancing rim.  On disk the enhancing class is
stored as 4, the conventional BraTS encoding, and remapped on load.

Run:  python3 demos/01_phantom_dataset.py
"""

from pathlib import Path

import numpy as np

from gliomaseg.phantom import PhantomSpec, phantom_generate
from gliomaseg.volume import DatasetManifest, load_case

out = Path("demo_output/phantoms")
manifest_path = phantom_generate(PhantomSpec(count=4, seed=0), out)
print(f"wrote dataset -> {manifest_path}")

manifest = DatasetManifest.load(manifest_path)
print(f"cases: {manifest.case_ids()}")
print(f"label encoding (external -> internal): {manifest.label_encoding}")

case = load_case(manifest, manifest.case_ids()[0])
print(f"\ncase {case.case_id}: dims {case.dims}, stacked {case.stacked().shape}")

label = case.label
total = label.size
for value, name in [(0, "background"), (1, "necrotic"), (2, "edema"),
                    (3, "enhancing")]:
    frac = (label == value).sum() / total
    print(f"  label {value} ({name:10s}): {frac:7.2%} of voxels")

# The class imbalance the two-stage design targets: background dominates.
flair = case.modalities["FLAIR"].data
print(f"\nFLAIR mean over edema:  {flair[label == 2].mean():+.2f} (z-scored)")
print(f"FLAIR mean over brain:  {flair[(flair != 0) & (label == 0)].mean():+.2f}")

z_tumor = int(np.round(np.argwhere(label > 0)[:, 2].mean()))
mid = label[:, :, z_tumor]
glyphs = np.array(list(" .xE"))
print(f"\naxial slice z={z_tumor} (.: necrotic, x: edema, E: enhancing):")
for row in glyphs[mid[::2, ::2]]:
    print("  " + "".join(row))
