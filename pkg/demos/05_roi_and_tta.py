"""ROI cropping algebra and the 8-variant flip family used at test time.

Run:  python3 demos/05_roi_and_tta.py
"""

import numpy as np

from gliomaseg.augment import ALL_TTA_VARIANTS, tta_apply, tta_invert
from gliomaseg.roi import (
    BBox3,
    crop_case,
    expand_bbox,
    mask_bbox,
    restore_to_original,
)
from gliomaseg.volume import MODALITIES, MultiModalCase, Volume

rng = np.random.default_rng(1)

# -- a synthetic case with a small lesion -----------------------------------
dims = (64, 64, 140)
label = np.zeros(dims, dtype=np.uint8)
label[30:40, 25:38, 60:95] = 3
modalities = {m: Volume(dims=dims, spacing=(1, 1, 1),
                        data=rng.normal(size=dims).astype(np.float32))
              for m in MODALITIES}
case = MultiModalCase(case_id="demo", modalities=modalities, label=label)

box = mask_bbox((label > 0).astype(np.float32))
print(f"tight bbox:    lo={box.lo} hi={box.hi} extent={box.extent()}")
box = expand_bbox(box, tolerance=12, bounds=dims)
print(f"+12 tolerance: lo={box.lo} hi={box.hi} extent={box.extent()}")

cropped, record = crop_case(case, box)  # pads x/y up to the (48,48,128) floor
print(f"cropped dims:  {cropped.dims} (minimum window enforced)")

restored = restore_to_original(cropped.label, record)
print(f"restore bit-exact: {np.array_equal(restored, label)}")

# -- the flip family: 8 involutions -----------------------------------------
vol = rng.normal(size=(5, 6, 7, 4)).astype(np.float32)
print("\nTTA variants (flip flags x/y/z) and involution check:")
for v in ALL_TTA_VARIANTS:
    ok = np.array_equal(tta_invert(tta_apply(vol, v), v), vol)
    print(f"  variant {v.id}: flips={tuple(int(f) for f in v.flips)} "
          f"involution={'ok' if ok else 'BROKEN'}")
