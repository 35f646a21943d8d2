"""End-to-end orchestration: configuration presets, two-stage training,
full-pipeline prediction (binary -> ROI -> multiclass -> TTA -> confidence),
evaluation, and percentile reporting."""

import json
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .augment import elastic_deform, random_brightness, random_rotation
from .autodiff import backward, no_grad
from .errors import ConfigError, DataError, GridMismatch, MissingPrediction, NumericFailure
from .losses import LOSSES, case_report, dice_metric, one_hot
from .models import (
    BinaryUNet,
    BinaryUNetConfig,
    MulticlassUNet,
    MulticlassUNetConfig,
    PatchSpec,
    model_from_checkpoint,
    save_checkpoint,
    sliding_window_predict,
)
from .optim import OPTIMIZER_NAMES, make_optimizer
from .resample import resize, resize_channels
from .rawio import read_raw, write_raw
from .roi import (
    BBox3,
    CropRecord,
    crop_case,
    expand_bbox,
    mask_bbox,
    nonzero_bbox,
    restore_to_original,
)
from .uncertainty import confidence_map, tta_aggregate
from .volume import DatasetManifest, MODALITIES, MultiModalCase, Volume, load_case

LOSS_NAMES = tuple(LOSSES)

#: The loss/optimizer rows of the published ablation matrix.
TABLE1_ROWS = {
    "DL+A": ("DL", "A"),
    "CE+A": ("CE", "A"),
    "DL+CE+A": ("DL+CE", "A"),
    "LC+A": ("LC", "A"),
    "LC+R": ("LC", "R"),
    "LC+RA": ("LC", "RA"),
    "LC+A+LH": ("LC", "A+LH"),
}


@dataclass
class BinaryStageConfig:
    widths: tuple = (8, 16, 32)
    bridge: int = 40
    input_size: tuple = (32, 32, 32)
    epochs: int = 30
    batch_size: int = 2
    loss: str = "LC"
    optimizer: str = "A+LH"
    lr: float = 1e-2
    elastic_sigma: float = 2.0
    elastic_magnitude: float = 3.0
    rotation_deg: float = 10.0
    brightness: float = 0.1
    augment: bool = True
    threshold: float = 0.5
    val_every: int = 2


@dataclass
class MulticlassStageConfig:
    widths: tuple = (8, 16, 32)
    bridge: int = 40
    patch_dims: tuple = (24, 24, 32)
    overlap: tuple = (12, 12, 0)
    min_dims: tuple = (24, 24, 32)
    epochs: int = 40
    batch_size: int = 3
    loss: str = "LC"
    optimizer: str = "A+LH"
    lr: float = 1e-2
    elastic_sigma_range: tuple = (3.0, 4.0)
    elastic_magnitude: float = 3.0
    rotation_deg: float = 10.0
    brightness: float = 0.1
    augment: bool = True
    val_every: int = 2


@dataclass
class PipelineConfig:
    scale: str = "toy"
    seed: int = 0
    val_fraction: float = 0.2
    roi_tolerance: int = 4
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    tta: bool = True
    binary: BinaryStageConfig = field(default_factory=BinaryStageConfig)
    multiclass: MulticlassStageConfig = field(default_factory=MulticlassStageConfig)

    def __post_init__(self):
        for stage in (self.binary, self.multiclass):
            if stage.loss not in LOSS_NAMES:
                raise ConfigError(f"unknown loss {stage.loss!r} (choose from {LOSS_NAMES})")
            if stage.optimizer not in OPTIMIZER_NAMES:
                raise ConfigError(
                    f"unknown optimizer {stage.optimizer!r} (choose from {OPTIMIZER_NAMES})")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        try:
            binary = BinaryStageConfig(**_tupled(doc.pop("binary", {})))
            multiclass = MulticlassStageConfig(**_tupled(doc.pop("multiclass", {})))
            return cls(binary=binary, multiclass=multiclass, **doc)
        except TypeError as exc:
            raise ConfigError(f"bad config field: {exc}") from exc

    @classmethod
    def load(cls, path, overrides=()) -> "PipelineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for item in overrides:
            doc = _apply_override(doc, item)
        return cls.from_dict(doc)


def _tupled(doc: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}


def _apply_override(doc: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, value = item.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set path {key!r} crosses a non-object")
    node[parts[-1]] = parsed
    return doc


def preset(scale: str = "toy") -> PipelineConfig:
    """Built-in configurations: desk-scale 'toy' and published 'paper'."""
    if scale == "toy":
        return PipelineConfig()
    if scale == "paper":
        return PipelineConfig(
            scale="paper",
            roi_tolerance=12,
            binary=BinaryStageConfig(
                widths=(40, 40, 80, 160), bridge=200, input_size=(128, 128, 128),
                epochs=300, batch_size=2, loss="DL", optimizer="A", lr=3e-4,
                elastic_sigma=2.0, elastic_magnitude=8.0, rotation_deg=15.0),
            multiclass=MulticlassStageConfig(
                widths=(64, 128, 256), bridge=320, patch_dims=(48, 48, 128),
                overlap=(24, 24, 0), min_dims=(48, 48, 128),
                epochs=300, batch_size=6, loss="LC", optimizer="A+LH", lr=3e-4,
                elastic_sigma_range=(10.0, 13.0), elastic_magnitude=8.0,
                rotation_deg=15.0),
        )
    raise ConfigError(f"unknown scale preset {scale!r}")


def split_cases(manifest: DatasetManifest, val_fraction: float, seed: int) -> tuple:
    """Seeded shuffle into train/validation case id lists."""
    ids = list(manifest.case_ids())
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n_val = max(1, int(round(len(ids) * val_fraction))) if len(ids) > 1 else 0
    return ids[n_val:], ids[:n_val]


# -- optimizer state (de)serialization --------------------------------------

def optimizer_state_arrays(opt) -> dict:
    out = {}

    def walk(state, prefix):
        for key, value in state.items():
            name = f"{prefix}{key}"
            if isinstance(value, dict):
                walk(value, name + "/")
            elif value is not None:
                out[name] = np.atleast_1d(np.asarray(value, dtype=np.float64))

    walk(opt.state_dict(), "opt/")
    return out


# -- binary stage ------------------------------------------------------------

def _slice_case(case: MultiModalCase, bbox: BBox3) -> MultiModalCase:
    sl = tuple(slice(l, h + 1) for l, h in zip(bbox.lo, bbox.hi))
    dims = bbox.extent()
    modalities = {
        m: Volume(dims=dims, spacing=case.modalities[m].spacing,
                  data=case.modalities[m].data[sl], name=case.modalities[m].name)
        for m in MODALITIES
    }
    label = case.label[sl] if case.label is not None else None
    return MultiModalCase(case_id=case.case_id, modalities=modalities, label=label)


def _resize_case(case: MultiModalCase, dims) -> MultiModalCase:
    modalities = {
        m: Volume(dims=tuple(dims), spacing=case.modalities[m].spacing,
                  data=resize(case.modalities[m].data, dims, order=1),
                  name=case.modalities[m].name)
        for m in MODALITIES
    }
    label = None
    if case.label is not None:
        label = resize(case.label, dims, order=0)
    return MultiModalCase(case_id=case.case_id, modalities=modalities, label=label)


def _prep_binary_case(case: MultiModalCase, input_size) -> MultiModalCase:
    """Brain-crop and resize one case for the tumor-presence stage; the
    label collapses to the union of all tumor classes."""
    bbox = nonzero_bbox(case)
    if bbox is not None:
        case = _slice_case(case, bbox)
    binary = MultiModalCase(
        case_id=case.case_id, modalities=case.modalities,
        label=(case.label > 0).astype(np.uint8) if case.label is not None else None)
    return _resize_case(binary, input_size)


def _augment_case(case, seed, sigma, magnitude, rotation_deg, brightness):
    case = elastic_deform(case, sigma, magnitude, seed)
    case = random_rotation(case, rotation_deg, seed + 1)
    return random_brightness(case, brightness, seed + 2)


def _step(model, opt, batch_x, batch_y, loss_fn):
    probs, _ = model.forward(batch_x)
    loss = loss_fn(probs, batch_y)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericFailure(f"non-finite training loss {value}")
    backward(loss)
    grads = model.params.grad_flat()
    theta = model.params.flatten().astype(np.float64)
    model.params.set_flat(opt.step(theta, grads))
    model.params.zero_grad()
    return value


def train_binary(config: PipelineConfig, manifest: DatasetManifest,
                 out_ckpt, log_path=None) -> dict:
    """Train the tumor-presence network; checkpoint at best validation dice."""
    stage = config.binary
    model_cfg = BinaryUNetConfig(widths=tuple(stage.widths), bridge=stage.bridge,
                                 input_size=tuple(stage.input_size))
    model = BinaryUNet(model_cfg, seed=config.seed)
    opt = make_optimizer(stage.optimizer, lr=stage.lr,
                         k=config.lookahead_k, alpha=config.lookahead_alpha)
    loss_fn = LOSSES[stage.loss]

    train_ids, val_ids = split_cases(manifest, config.val_fraction, config.seed)
    if not train_ids:
        raise DataError("no training cases after split")
    prepped = {
        cid: _prep_binary_case(load_case(manifest, cid), stage.input_size)
        for cid in train_ids + val_ids
    }

    rng = np.random.default_rng(config.seed + 1)
    history = []
    best = -1.0
    for epoch in range(stage.epochs):
        order = list(train_ids)
        rng.shuffle(order)
        losses = []
        for i in range(0, len(order), stage.batch_size):
            chunk = order[i:i + stage.batch_size]
            xs, ys = [], []
            for j, cid in enumerate(chunk):
                case = prepped[cid]
                if stage.augment:
                    seed = config.seed * 100003 + epoch * 1009 + (i + j) * 7
                    case = _augment_case(case, seed, stage.elastic_sigma,
                                         stage.elastic_magnitude,
                                         stage.rotation_deg, stage.brightness)
                xs.append(case.stacked())
                ys.append(case.label[..., None].astype(np.float32))
            losses.append(_step(model, opt, np.stack(xs), np.stack(ys), loss_fn))

        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_ids and (epoch % stage.val_every == 0 or epoch == stage.epochs - 1):
            dices = []
            with no_grad():
                for cid in val_ids:
                    case = prepped[cid]
                    probs, _ = model.forward(case.stacked()[None])
                    pred = probs.data[0, ..., 0] > stage.threshold
                    dices.append(dice_metric(pred, case.label.astype(bool)))
            record["val_dice"] = float(np.mean(dices))
            if record["val_dice"] >= best:
                best = record["val_dice"]
                save_checkpoint(out_ckpt, model_cfg.to_dict(), model.params,
                                extra=optimizer_state_arrays(opt))
        history.append(record)
        if log_path:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
    if best < 0:
        save_checkpoint(out_ckpt, model_cfg.to_dict(), model.params,
                        extra=optimizer_state_arrays(opt))
    return {"history": history, "best_val_dice": best}


# -- ROI application ---------------------------------------------------------

def binary_mask_for_case(binary_model: BinaryUNet, case: MultiModalCase,
                         threshold: float = 0.5) -> np.ndarray:
    """Whole-grid uint8 tumor mask from the binary stage (resize round trip)."""
    bbox = nonzero_bbox(case)
    sliced = _slice_case(case, bbox) if bbox is not None else case
    resized = _resize_case(sliced, binary_model.config.input_size)
    with no_grad():
        probs, _ = binary_model.forward(resized.stacked()[None])
    small = (probs.data[0, ..., 0] > threshold).astype(np.uint8)
    back = resize(small, sliced.dims, order=0)
    full = np.zeros(case.dims, dtype=np.uint8)
    if bbox is not None:
        sl = tuple(slice(l, h + 1) for l, h in zip(bbox.lo, bbox.hi))
        full[sl] = back
    else:
        full = back
    return full


def roi_crop(case: MultiModalCase, tumor_mask: np.ndarray,
             tolerance: int, min_dims) -> tuple:
    """Expand the detected box by the tolerance and crop; falls back to the
    whole-brain box (with a warning) when the mask is empty."""
    bbox = mask_bbox(tumor_mask.astype(np.float32), threshold=0.5)
    if bbox is None:
        warnings.warn(f"case {case.case_id}: empty binary mask, "
                      "falling back to whole-brain box", stacklevel=2)
        bbox = nonzero_bbox(case)
        if bbox is None:
            bbox = BBox3((0, 0, 0), tuple(d - 1 for d in case.dims))
    bbox = expand_bbox(bbox, tolerance, case.dims)
    return crop_case(case, bbox, min_dims)


# -- multiclass stage --------------------------------------------------------

def _sample_patch(stacked: np.ndarray, label: np.ndarray, patch_dims,
                  rng: np.random.Generator) -> tuple:
    dims = stacked.shape[:3]
    tumor = np.argwhere(label > 0)
    if tumor.size:
        center = tumor[rng.integers(len(tumor))]
        start = [int(np.clip(c - p // 2, 0, d - p))
                 for c, p, d in zip(center, patch_dims, dims)]
    else:
        start = [int(rng.integers(0, d - p + 1)) for p, d in zip(patch_dims, dims)]
    sl = tuple(slice(s, s + p) for s, p in zip(start, patch_dims))
    return stacked[sl], label[sl]


def train_multiclass(config: PipelineConfig, manifest: DatasetManifest,
                     out_ckpt, binary_ckpt=None, use_roi: bool = True,
                     log_path=None) -> dict:
    """Train the four-class network on ROI-cropped cases (or whole volumes
    when ``use_roi`` is off, the ablation baseline)."""
    stage = config.multiclass
    model_cfg = MulticlassUNetConfig(widths=tuple(stage.widths), bridge=stage.bridge)
    model = MulticlassUNet(model_cfg, seed=config.seed + 7)
    opt = make_optimizer(stage.optimizer, lr=stage.lr,
                         k=config.lookahead_k, alpha=config.lookahead_alpha)
    loss_fn = LOSSES[stage.loss]
    patch_spec = PatchSpec(patch_dims=tuple(stage.patch_dims),
                           overlap=tuple(stage.overlap))

    binary_model = None
    if use_roi:
        if binary_ckpt is None:
            raise ConfigError("ROI training requires a binary checkpoint")
        binary_model, _ = model_from_checkpoint(binary_ckpt)

    train_ids, val_ids = split_cases(manifest, config.val_fraction, config.seed)
    if not train_ids:
        raise DataError("no training cases after split")
    prepped = {}
    for cid in train_ids + val_ids:
        case = load_case(manifest, cid)
        if use_roi:
            mask = binary_mask_for_case(binary_model, case, config.binary.threshold)
            case, _rec = roi_crop(case, mask, config.roi_tolerance, stage.min_dims)
        prepped[cid] = case

    rng = np.random.default_rng(config.seed + 2)
    history = []
    best = -1.0
    for epoch in range(stage.epochs):
        order = list(train_ids)
        rng.shuffle(order)
        losses = []
        for i in range(0, len(order), stage.batch_size):
            chunk = order[i:i + stage.batch_size]
            xs, ys = [], []
            for j, cid in enumerate(chunk):
                case = prepped[cid]
                if stage.augment:
                    seed = config.seed * 90001 + epoch * 2003 + (i + j) * 11
                    sigma = float(np.random.default_rng(seed).uniform(
                        *stage.elastic_sigma_range))
                    case = _augment_case(case, seed + 3, sigma,
                                         stage.elastic_magnitude,
                                         stage.rotation_deg, stage.brightness)
                px, py = _sample_patch(case.stacked(), case.label,
                                       stage.patch_dims, rng)
                xs.append(px)
                ys.append(one_hot(py, 4))
            losses.append(_step(model, opt, np.stack(xs), np.stack(ys), loss_fn))

        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_ids and (epoch % stage.val_every == 0 or epoch == stage.epochs - 1):
            scores = []
            for cid in val_ids:
                case = prepped[cid]
                probs, _ = sliding_window_predict(model, case.stacked(), patch_spec)
                pred = np.argmax(probs, axis=-1)
                scores.append(case_report(pred, case.label)["mean"])
            record["val_mean_dice"] = float(np.mean(scores))
            if record["val_mean_dice"] >= best:
                best = record["val_mean_dice"]
                save_checkpoint(out_ckpt, model_cfg.to_dict(), model.params,
                                extra=optimizer_state_arrays(opt))
        history.append(record)
        if log_path:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
    if best < 0:
        save_checkpoint(out_ckpt, model_cfg.to_dict(), model.params,
                        extra=optimizer_state_arrays(opt))
    return {"history": history, "best_val_mean_dice": best}


# -- full-pipeline prediction ------------------------------------------------

def predict_case(case: MultiModalCase, binary_model: BinaryUNet,
                 multiclass_model: MulticlassUNet, config: PipelineConfig,
                 tta: bool | None = None) -> tuple:
    """binary -> ROI -> multiclass (sliding window, optional TTA) ->
    confidence; returns (label mask, confidence map, crop record) on the
    original grid."""
    stage = config.multiclass
    tta = config.tta if tta is None else tta
    mask_full = binary_mask_for_case(binary_model, case, config.binary.threshold)
    cropped, rec = roi_crop(case, mask_full, config.roi_tolerance, stage.min_dims)
    patch_spec = PatchSpec(patch_dims=tuple(stage.patch_dims),
                           overlap=tuple(stage.overlap))
    stacked = cropped.stacked()
    if tta:
        probs, logits = tta_aggregate(multiclass_model, stacked, patch_spec)
    else:
        probs, logits = sliding_window_predict(multiclass_model, stacked, patch_spec)
    mask_c = np.argmax(probs, axis=-1).astype(np.uint8)
    conf_c = confidence_map(logits).astype(np.float32)
    mask = restore_to_original(mask_c, rec).astype(np.uint8)
    conf = restore_to_original(conf_c, rec)
    return mask, conf, rec


def predict_to_dir(manifest: DatasetManifest, case_ids, binary_ckpt,
                   multiclass_ckpt, config: PipelineConfig, out_dir,
                   tta: bool | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    binary_model, _ = model_from_checkpoint(binary_ckpt)
    multiclass_model, _ = model_from_checkpoint(multiclass_ckpt)
    for cid in case_ids:
        case = load_case(manifest, cid)
        mask, conf, rec = predict_case(case, binary_model, multiclass_model,
                                       config, tta=tta)
        case_dir = out_dir / cid
        case_dir.mkdir(exist_ok=True)
        spacing = case.modalities[MODALITIES[0]].spacing
        write_raw(Volume(dims=case.dims, spacing=spacing,
                         data=mask.astype(np.float32), name=cid),
                  case_dir / "pred_seg.raw")
        write_raw(Volume(dims=case.dims, spacing=spacing, data=conf, name=cid),
                  case_dir / "confidence.raw")
        (case_dir / "crop_record.json").write_text(rec.to_json(), encoding="utf-8")


def evaluate(manifest: DatasetManifest, predictions_dir, case_ids=None) -> dict:
    """Per-case whole/core/enhancing dice plus aggregate means."""
    predictions_dir = Path(predictions_dir)
    case_ids = list(case_ids) if case_ids is not None else manifest.case_ids()
    per_case = []
    for cid in case_ids:
        pred_path = predictions_dir / cid / "pred_seg.raw"
        if not pred_path.exists():
            raise MissingPrediction(f"no prediction for case {cid} at {pred_path}")
        pred = np.rint(read_raw(pred_path).data).astype(np.uint8)
        case = load_case(manifest, cid, normalize=False)
        if case.label is None:
            raise DataError(f"case {cid} has no ground-truth label")
        if pred.shape != case.label.shape:
            raise GridMismatch(f"case {cid}: {pred.shape} vs {case.label.shape}")
        scores = case_report(pred, case.label)
        scores["case_id"] = cid
        per_case.append(scores)
    aggregate = {
        key: float(np.mean([c[key] for c in per_case]))
        for key in ("whole", "core", "enh", "mean")
    }
    return {"cases": per_case, "aggregate": aggregate}


def percentile_indices(n: int) -> list:
    """Nearest-rank indices of the 0/25/50/75/100th percentiles."""
    return [int(round(p / 100.0 * (n - 1))) for p in (0, 25, 50, 75, 100)]


def percentile_report(report: dict, manifest: DatasetManifest,
                      predictions_dir, out_dir) -> list:
    """Rank cases by mean dice and render axial mid-slice panel rows
    (FLAIR, T1-Gd, prediction, truth, confidence) for the five percentile
    cases.  Returns the written image paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    predictions_dir = Path(predictions_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ranked = sorted(report["cases"], key=lambda c: c["mean"])
    picks = [ranked[i] for i in percentile_indices(len(ranked))]
    written = []
    for pct, entry in zip((0, 25, 50, 75, 100), picks):
        cid = entry["case_id"]
        case = load_case(manifest, cid, normalize=False)
        pred = np.rint(read_raw(predictions_dir / cid / "pred_seg.raw").data)
        conf = read_raw(predictions_dir / cid / "confidence.raw").data
        z = case.dims[2] // 2
        panels = [
            ("FLAIR", case.modalities["FLAIR"].data[:, :, z], "gray"),
            ("T1-Gd", case.modalities["T1GD"].data[:, :, z], "gray"),
            ("Prediction", pred[:, :, z], "viridis"),
            ("Truth", case.label[:, :, z], "viridis"),
            ("Confidence", conf[:, :, z], "inferno"),
        ]
        fig, axes = plt.subplots(1, 5, figsize=(15, 3.2))
        for ax, (title, img, cmap) in zip(axes, panels):
            shown = img.T
            if title == "Confidence":
                lo, hi = float(shown.min()), float(shown.max())
                shown = (shown - lo) / (hi - lo) if hi > lo else shown * 0.0
            ax.imshow(shown, cmap=cmap, origin="lower")
            ax.set_title(title)
            ax.axis("off")
        fig.suptitle(f"{pct}th percentile: {cid} (mean dice {entry['mean']:.3f})")
        path = out_dir / f"percentile_{pct:03d}.png"
        fig.savefig(path, dpi=90, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written
