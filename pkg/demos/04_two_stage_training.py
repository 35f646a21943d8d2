"""Train the two-stage pipeline on phantoms, end to end, at demo scale.

Stage 1 (binary U-Net) finds tumor presence on a downsampled whole brain;
its mask, expanded by a voxel tolerance, crops a region of interest.
Stage 2 (attention U-Net) labels necrotic/edema/enhancing inside the ROI
with sliding-window patch inference.

This demo shrinks the epoch counts so it finishes in about a minute; the
`toy` preset as-is is what the acceptance bar uses.

Run:  python3 demos/04_two_stage_training.py
"""

import json
from pathlib import Path

from gliomaseg.phantom import PhantomSpec, phantom_generate
from gliomaseg.pipeline import (
    PipelineConfig,
    evaluate,
    predict_to_dir,
    preset,
    split_cases,
    train_binary,
    train_multiclass,
)
from gliomaseg.volume import DatasetManifest

out = Path("demo_output/training")
out.mkdir(parents=True, exist_ok=True)

manifest = DatasetManifest.load(
    phantom_generate(PhantomSpec(count=8, seed=5), out / "data"))

doc = preset("toy").to_dict()
doc["binary"]["epochs"] = 8
doc["multiclass"]["epochs"] = 10
config = PipelineConfig.from_dict(doc)

print("stage 1: binary tumor-presence U-Net")
bin_result = train_binary(config, manifest, out / "binary.ckpt",
                          log_path=out / "binary_log.jsonl")
print(f"  best validation dice: {bin_result['best_val_dice']:.3f}")

print("stage 2: multiclass attention U-Net on ROI crops")
mc_result = train_multiclass(config, manifest, out / "multiclass.ckpt",
                             binary_ckpt=out / "binary.ckpt",
                             log_path=out / "multiclass_log.jsonl")
print(f"  best validation mean dice: {mc_result['best_val_mean_dice']:.3f}")

_train_ids, val_ids = split_cases(manifest, config.val_fraction, config.seed)
predict_to_dir(manifest, val_ids, out / "binary.ckpt", out / "multiclass.ckpt",
               config, out / "preds")
report = evaluate(manifest, out / "preds", case_ids=val_ids)
print("\nvalidation region dice (whole / core / enhancing):")
print(json.dumps(report["aggregate"], indent=2))
print("\n(at this demo scale the numbers are rough; the toy preset's longer "
      "schedule is what clears the acceptance bar)")
