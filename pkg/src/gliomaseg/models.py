"""The two segmentation networks, sliding-window whole-volume inference,
and the versioned checkpoint container."""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamSet, Tensor, conv3d, conv_transpose3d, concat_channels, no_grad
from .errors import CheckpointMismatch, IndivisibleDims, IoFailure, PatchLargerThanVolume, ShapeMismatch
from .layers import (
    add_channel_bias,
    attention_gate,
    conv_block1,
    conv_block2,
    elu,
    he_uniform,
    init_attention_gate,
    init_conv_block1,
    init_conv_block2,
    instance_norm,
    relu,
    sigmoid,
    softmax_channels,
)


@dataclass
class BinaryUNetConfig:
    """Tumor-presence network: ELU encoder/decoder, sigmoid output."""

    in_channels: int = 4
    widths: tuple = (40, 40, 80, 160)
    bridge: int = 200
    input_size: tuple = (128, 128, 128)

    @property
    def depth(self) -> int:
        return len(self.widths)

    def to_dict(self) -> dict:
        return {"kind": "binary", "in_channels": self.in_channels,
                "widths": list(self.widths), "bridge": self.bridge,
                "input_size": list(self.input_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryUNetConfig":
        return cls(in_channels=d["in_channels"], widths=tuple(d["widths"]),
                   bridge=d["bridge"], input_size=tuple(d["input_size"]))


@dataclass
class MulticlassUNetConfig:
    """Four-class network: ReLU, channel attention, gated skips, softmax."""

    in_channels: int = 4
    num_classes: int = 4
    widths: tuple = (64, 128, 256)
    bridge: int = 320

    @property
    def depth(self) -> int:
        return len(self.widths)

    def to_dict(self) -> dict:
        return {"kind": "multiclass", "in_channels": self.in_channels,
                "num_classes": self.num_classes, "widths": list(self.widths),
                "bridge": self.bridge}

    @classmethod
    def from_dict(cls, d: dict) -> "MulticlassUNetConfig":
        return cls(in_channels=d["in_channels"], num_classes=d["num_classes"],
                   widths=tuple(d["widths"]), bridge=d["bridge"])


@dataclass
class PatchSpec:
    """Sliding-window tiling: patch extents and per-axis overlap."""

    patch_dims: tuple = (48, 48, 128)
    overlap: tuple = (24, 24, 0)

    def __post_init__(self):
        if any(o >= p for o, p in zip(self.overlap, self.patch_dims)):
            raise ShapeMismatch(f"overlap {self.overlap} >= patch {self.patch_dims}")


def _check_divisible(shape, depth: int) -> None:
    f = 2 ** depth
    if any(s % f for s in shape):
        raise IndivisibleDims(f"spatial dims {shape} not divisible by {f}")


class BinaryUNet:
    """Encoder/decoder with strided downsampling and plain concatenated
    skips; one sigmoid output channel."""

    def __init__(self, config: BinaryUNetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        ps = self.params
        cin = config.in_channels
        self.enc = []
        self.down = []
        prev = cin
        for i, w in enumerate(config.widths):
            self.enc.append(init_conv_block1(ps, rng, f"enc{i}", prev, w, dtype))
            sw = ps.register(f"down{i}.w", he_uniform(rng, (3, 3, 3, w, w), 27 * w, dtype))
            sb = ps.register(f"down{i}.b", np.zeros(w, dtype))
            self.down.append((sw, sb))
            prev = w
        self.bridge = init_conv_block1(ps, rng, "bridge", prev, config.bridge, dtype)
        self.up = []
        self.dec = []
        prev = config.bridge
        for i in reversed(range(config.depth)):
            w = config.widths[i]
            tw = ps.register(f"up{i}.w", he_uniform(rng, (2, 2, 2, prev, w), 8 * prev, dtype))
            tb = ps.register(f"up{i}.b", np.zeros(w, dtype))
            self.up.append((tw, tb))
            self.dec.append(init_conv_block1(ps, rng, f"dec{i}", 2 * w, w, dtype))
            prev = w
        self.w_out = ps.register(
            "out.w", he_uniform(rng, (1, 1, 1, prev, 1), prev, dtype))
        self.b_out = ps.register("out.b", np.zeros(1, dtype))

    def forward(self, batch) -> tuple:
        """Returns (probabilities, logits), both (T, H, W, D, 1)."""
        x = batch if isinstance(batch, Tensor) else Tensor(
            np.asarray(batch, dtype=self.dtype))
        _check_divisible(x.data.shape[1:4], self.config.depth)
        h = x
        skips = []
        for block, (sw, sb) in zip(self.enc, self.down):
            h = conv_block1(h, block)
            skips.append(h)
            h = instance_norm(elu(add_channel_bias(
                conv3d(h, sw, stride=2, padding="same"), sb)))
        h = conv_block1(h, self.bridge)
        for (tw, tb), block, skip in zip(self.up, self.dec, reversed(skips)):
            h = add_channel_bias(conv_transpose3d(h, tw), tb)
            h = concat_channels(h, skip)
            h = conv_block1(h, block)
        logits = add_channel_bias(conv3d(h, self.w_out), self.b_out)
        return sigmoid(logits), logits

    def num_params(self) -> int:
        return self.params.size()


class MulticlassUNet:
    """Attention U-Net: channel-attention blocks plus gated skips."""

    def __init__(self, config: MulticlassUNetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        ps = self.params
        prev = config.in_channels
        self.enc = []
        self.down = []
        for i, w in enumerate(config.widths):
            self.enc.append(init_conv_block2(ps, rng, f"enc{i}", prev, w, dtype))
            sw = ps.register(f"down{i}.w", he_uniform(rng, (3, 3, 3, w, w), 27 * w, dtype))
            sb = ps.register(f"down{i}.b", np.zeros(w, dtype))
            self.down.append((sw, sb))
            prev = w
        self.bridge = init_conv_block2(ps, rng, "bridge", prev, config.bridge, dtype)
        self.gates = []
        self.up = []
        self.dec = []
        prev = config.bridge
        for i in reversed(range(config.depth)):
            w = config.widths[i]
            self.gates.append(init_attention_gate(ps, rng, f"gate{i}", cx=w, cg=prev,
                                                  dtype=dtype))
            tw = ps.register(f"up{i}.w", he_uniform(rng, (2, 2, 2, prev, w), 8 * prev, dtype))
            tb = ps.register(f"up{i}.b", np.zeros(w, dtype))
            self.up.append((tw, tb))
            self.dec.append(init_conv_block2(ps, rng, f"dec{i}", 2 * w, w, dtype))
            prev = w
        self.w_out = ps.register(
            "out.w", he_uniform(rng, (1, 1, 1, prev, config.num_classes), prev, dtype))
        self.b_out = ps.register("out.b", np.zeros(config.num_classes, dtype))

    def forward(self, batch) -> tuple:
        """Returns (probabilities, logits), both (T, H, W, D, num_classes)."""
        x = batch if isinstance(batch, Tensor) else Tensor(
            np.asarray(batch, dtype=self.dtype))
        _check_divisible(x.data.shape[1:4], self.config.depth)
        h = x
        skips = []
        for block, (sw, sb) in zip(self.enc, self.down):
            h = conv_block2(h, block)
            skips.append(h)
            h = instance_norm(relu(add_channel_bias(
                conv3d(h, sw, stride=2, padding="same"), sb)))
        h = conv_block2(h, self.bridge)
        for gate, (tw, tb), block, skip in zip(
                self.gates, self.up, self.dec, reversed(skips)):
            gated = attention_gate(skip, h, gate)
            h = add_channel_bias(conv_transpose3d(h, tw), tb)
            h = concat_channels(h, gated)
            h = conv_block2(h, block)
        logits = add_channel_bias(conv3d(h, self.w_out), self.b_out)
        return softmax_channels(logits), logits

    def num_params(self) -> int:
        return self.params.size()


def build_binary_unet(config: BinaryUNetConfig, seed: int = 0,
                      dtype=np.float32) -> BinaryUNet:
    return BinaryUNet(config, seed=seed, dtype=dtype)


def build_multiclass_unet(config: MulticlassUNetConfig, seed: int = 0,
                          dtype=np.float32) -> MulticlassUNet:
    return MulticlassUNet(config, seed=seed, dtype=dtype)


# -- sliding-window inference -----------------------------------------------

def _axis_starts(dim: int, patch: int, overlap: int) -> list:
    if patch > dim:
        raise PatchLargerThanVolume(f"patch {patch} > volume extent {dim}")
    stride = max(patch - overlap, 1)
    starts = list(range(0, dim - patch + 1, stride))
    if starts[-1] != dim - patch:
        starts.append(dim - patch)
    return starts


def sliding_window_predict(model, volume4: np.ndarray,
                           patch_spec: PatchSpec) -> tuple:
    """Tile the volume, run the model per patch, average overlapping outputs.

    ``volume4`` is (X, Y, Z, C_in); returns (probabilities, logits), each
    (X, Y, Z, C_out) with uniform-weight averaging where patches overlap.
    """
    px, py, pz = patch_spec.patch_dims
    nx, ny, nz, _ = volume4.shape
    xs = _axis_starts(nx, px, patch_spec.overlap[0])
    ys = _axis_starts(ny, py, patch_spec.overlap[1])
    zs = _axis_starts(nz, pz, patch_spec.overlap[2])

    prob_acc = None
    logit_acc = None
    counts = np.zeros((nx, ny, nz, 1), dtype=np.float64)
    with no_grad():
        for x0 in xs:
            for y0 in ys:
                for z0 in zs:
                    patch = volume4[x0:x0 + px, y0:y0 + py, z0:z0 + pz, :]
                    probs, logits = model.forward(patch[None])
                    if prob_acc is None:
                        c_out = probs.data.shape[-1]
                        prob_acc = np.zeros((nx, ny, nz, c_out), dtype=np.float64)
                        logit_acc = np.zeros((nx, ny, nz, c_out), dtype=np.float64)
                    sl = (slice(x0, x0 + px), slice(y0, y0 + py), slice(z0, z0 + pz))
                    prob_acc[sl] += probs.data[0]
                    logit_acc[sl] += logits.data[0]
                    counts[sl] += 1.0
    probs = (prob_acc / counts).astype(np.float32)
    logits = (logit_acc / counts).astype(np.float32)
    return probs, logits


# -- checkpoint container ---------------------------------------------------

CKPT_MAGIC = b"GSCK"
CKPT_VERSION = 1


def save_checkpoint(path, config_dict: dict, params: ParamSet,
                    extra: dict | None = None) -> None:
    """Versioned container: config echo, named float32 parameter tensors,
    and optional extra arrays (optimizer state) for resumable training."""
    tensors = []
    blobs = []
    offset = 0
    entries = list(params.items())
    for name, arr in (extra or {}).items():
        entries.append((f"extra/{name}", _ExtraWrap(np.asarray(arr))))
    for name, p in entries:
        arr = p.data
        dtype = "<f8" if arr.dtype == np.float64 else "<f4"
        blob = np.ascontiguousarray(arr.astype(dtype)).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape),
                        "dtype": dtype, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({
        "version": CKPT_VERSION,
        "config": config_dict,
        "tensors": tensors,
    }).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


class _ExtraWrap:
    def __init__(self, data):
        self.data = data


def load_checkpoint(path) -> tuple:
    """Returns (config_dict, {param name: array}, {extra name: array})."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointMismatch(f"{path}: bad checkpoint magic")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    if header.get("version") != CKPT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported version {header.get('version')}")
    payload = raw[8 + hlen:]
    tensors = {}
    extra = {}
    for rec in header["tensors"]:
        blob = payload[rec["offset"]:rec["offset"] + rec["nbytes"]]
        arr = np.frombuffer(blob, dtype=rec["dtype"]).reshape(rec["shape"]).copy()
        if rec["name"].startswith("extra/"):
            extra[rec["name"][len("extra/"):]] = arr
        else:
            tensors[rec["name"]] = arr
    return header["config"], tensors, extra


def load_params_into(params: ParamSet, tensors: dict, path="checkpoint") -> None:
    names = set(params.names())
    if names != set(tensors):
        missing = names - set(tensors)
        surplus = set(tensors) - names
        raise CheckpointMismatch(
            f"{path}: parameter name mismatch (missing {sorted(missing)}, "
            f"unexpected {sorted(surplus)})")
    for name, p in params.items():
        arr = tensors[name]
        if tuple(arr.shape) != p.data.shape:
            raise CheckpointMismatch(
                f"{path}: {name} shape {arr.shape} != {p.data.shape}")
        p.data = arr.astype(p.data.dtype)


def model_from_checkpoint(path):
    """Rebuild a network (architecture + weights) from its checkpoint."""
    config, tensors, extra = load_checkpoint(path)
    kind = config.get("kind")
    if kind == "binary":
        model = BinaryUNet(BinaryUNetConfig.from_dict(config))
    elif kind == "multiclass":
        model = MulticlassUNet(MulticlassUNetConfig.from_dict(config))
    else:
        raise CheckpointMismatch(f"{path}: unknown model kind {kind!r}")
    load_params_into(model.params, tensors, path)
    return model, extra
