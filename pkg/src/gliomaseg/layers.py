"""Differentiable building blocks: instance norm, activations, channel
attention, attention gates, and the two convolutional block types used by
the segmentation networks.  All tensors are channels-last (T, H, W, D, C)."""

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamSet, Tensor, conv3d
from .errors import DegenerateSpatial, ShapeMismatch

SPATIAL_AXES = (1, 2, 3)


# -- fused primitive ops ----------------------------------------------------

def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.data.shape != (x.data.shape[-1],):
        raise ShapeMismatch(f"bias {b.data.shape} vs channels {x.data.shape[-1]}")
    return Tensor(x.data + b.data, (x, b),
                  lambda g: (g, g.sum(axis=(0, 1, 2, 3))))


def instance_norm(x: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Per-(instance, channel) standardization over the spatial axes."""
    if x.data.ndim != 5:
        raise ShapeMismatch(f"instance_norm expects 5D input, got {x.data.shape}")
    n_sp = x.data.shape[1] * x.data.shape[2] * x.data.shape[3]
    if n_sp < 2:
        raise DegenerateSpatial("instance_norm needs at least 2 spatial voxels")
    mu = x.data.mean(axis=SPATIAL_AXES, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=SPATIAL_AXES, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    y = (x.data - mu) * inv_std

    def bw(g):
        g_mean = g.mean(axis=SPATIAL_AXES, keepdims=True)
        gy_mean = (g * y).mean(axis=SPATIAL_AXES, keepdims=True)
        return ((g - g_mean - y * gy_mean) * inv_std,)

    return Tensor(y, (x,), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    neg = alpha * (np.exp(np.minimum(x.data, 0)) - 1.0)
    y = np.where(x.data >= 0, x.data, neg)
    grad = np.where(x.data >= 0, 1.0, neg + alpha).astype(x.data.dtype)
    return Tensor(y, (x,), lambda g: (g * grad,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return Tensor(y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over the channel axis, computed with max-subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return Tensor(y, (x,), bw)


def channel_attention(x: Tensor, wc: Tensor) -> Tensor:
    """Scale each channel by sigmoid(global-average(channel) * weight)."""
    if x.data.ndim != 5 or wc.data.shape != (x.data.shape[-1],):
        raise ShapeMismatch(
            f"channel_attention: x {x.data.shape}, wc {wc.data.shape}")
    n_sp = x.data.shape[1] * x.data.shape[2] * x.data.shape[3]
    gap = x.data.mean(axis=SPATIAL_AXES)                  # (T, C)
    alpha = _sigmoid(gap * wc.data)                       # (T, C)
    alpha_b = alpha[:, None, None, None, :]
    out = x.data * alpha_b

    def bw(g):
        g_alpha = (g * x.data).sum(axis=SPATIAL_AXES)     # (T, C)
        g_pre = g_alpha * alpha * (1.0 - alpha)
        g_wc = (g_pre * gap).sum(axis=0) if wc.requires_grad else None
        gx = None
        if x.requires_grad:
            g_gap = g_pre * wc.data
            gx = g * alpha_b + g_gap[:, None, None, None, :] / n_sp
        return (gx, g_wc)

    return Tensor(out, (x, wc), bw)


def scale_voxels(x: Tensor, alpha: Tensor) -> Tensor:
    """Multiply features by a single-channel per-voxel field (broadcast C)."""
    if alpha.data.shape != x.data.shape[:-1] + (1,):
        raise ShapeMismatch(
            f"scale_voxels: alpha {alpha.data.shape} vs x {x.data.shape}")
    return Tensor(x.data * alpha.data, (x, alpha),
                  lambda g: (g * alpha.data,
                             (g * x.data).sum(axis=-1, keepdims=True)))


def _up_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(arr, axis, 0)
    left = np.concatenate([a[:1], a[:-1]], axis=0)
    right = np.concatenate([a[1:], a[-1:]], axis=0)
    out = np.empty((2 * a.shape[0],) + a.shape[1:], dtype=arr.dtype)
    out[0::2] = 0.75 * a + 0.25 * left
    out[1::2] = 0.75 * a + 0.25 * right
    return np.moveaxis(out, 0, axis)


def _up_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    gg = np.moveaxis(g, axis, 0)
    ge, go = gg[0::2], gg[1::2]
    ga = 0.75 * (ge + go)
    ga[:-1] += 0.25 * ge[1:]
    ga[0] += 0.25 * ge[0]
    ga[1:] += 0.25 * go[:-1]
    ga[-1] += 0.25 * go[-1]
    return np.moveaxis(ga, 0, axis)


def upsample2x(x: Tensor) -> Tensor:
    """Trilinear 2x upsampling of the three spatial axes (edge-clamping)."""
    out = x.data
    for axis in SPATIAL_AXES:
        out = _up_axis(out, axis)

    def bw(g):
        for axis in reversed(SPATIAL_AXES):
            g = _up_axis_adjoint(g, axis)
        return (g,)

    return Tensor(out, (x,), bw)


# -- parameter containers ---------------------------------------------------

def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass
class ConvBlock1Params:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class ConvBlock2Params:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    wc: Tensor


@dataclass
class AttentionGateParams:
    wx: Tensor
    wg: Tensor
    wpsi: Tensor


def init_conv_block1(ps: ParamSet, rng, prefix: str, cin: int, cout: int,
                     dtype=np.float32) -> ConvBlock1Params:
    return ConvBlock1Params(
        w1=ps.register(f"{prefix}.w1", he_uniform(rng, (3, 3, 3, cin, cout), 27 * cin, dtype)),
        b1=ps.register(f"{prefix}.b1", np.zeros(cout, dtype)),
        w2=ps.register(f"{prefix}.w2", he_uniform(rng, (3, 3, 3, cout, cout), 27 * cout, dtype)),
        b2=ps.register(f"{prefix}.b2", np.zeros(cout, dtype)),
    )


def init_conv_block2(ps: ParamSet, rng, prefix: str, cin: int, cout: int,
                     dtype=np.float32) -> ConvBlock2Params:
    return ConvBlock2Params(
        w1=ps.register(f"{prefix}.w1", he_uniform(rng, (3, 3, 3, cin, cout), 27 * cin, dtype)),
        b1=ps.register(f"{prefix}.b1", np.zeros(cout, dtype)),
        w2=ps.register(f"{prefix}.w2", he_uniform(rng, (3, 3, 3, cout, cout), 27 * cout, dtype)),
        b2=ps.register(f"{prefix}.b2", np.zeros(cout, dtype)),
        wc=ps.register(f"{prefix}.wc", np.zeros(cout, dtype)),
    )


def init_attention_gate(ps: ParamSet, rng, prefix: str, cx: int, cg: int,
                        inter: int | None = None, dtype=np.float32) -> AttentionGateParams:
    # Internal width defaults to half the skip channels.
    f = max(cx // 2, 1) if inter is None else inter
    return AttentionGateParams(
        wx=ps.register(f"{prefix}.wx", he_uniform(rng, (1, 1, 1, cx, f), cx, dtype)),
        wg=ps.register(f"{prefix}.wg", he_uniform(rng, (1, 1, 1, cg, f), cg, dtype)),
        wpsi=ps.register(f"{prefix}.wpsi", he_uniform(rng, (1, 1, 1, f, 1), f, dtype)),
    )


# -- composite blocks -------------------------------------------------------

def conv_block1(x: Tensor, p: ConvBlock1Params) -> Tensor:
    h = instance_norm(elu(add_channel_bias(conv3d(x, p.w1), p.b1)))
    return instance_norm(elu(add_channel_bias(conv3d(h, p.w2), p.b2)))


def conv_block2(x: Tensor, p: ConvBlock2Params) -> Tensor:
    h = instance_norm(relu(add_channel_bias(conv3d(x, p.w1), p.b1)))
    h = instance_norm(relu(add_channel_bias(conv3d(h, p.w2), p.b2)))
    return instance_norm(channel_attention(h, p.wc))


def attention_gate(x: Tensor, g: Tensor, p: AttentionGateParams) -> Tensor:
    """Gate skip features by a coarse-grid attention field.

    The skip input is brought onto the gating grid with a stride-2 1x1x1
    projection, the coefficient field is computed there, then trilinearly
    upsampled back to the skip resolution and multiplied in.
    """
    xa = conv3d(x, p.wx, stride=2, padding="same")
    ga = conv3d(g, p.wg, stride=1, padding="same")
    if xa.data.shape[:-1] != ga.data.shape[:-1]:
        raise ShapeMismatch(
            f"attention_gate: projected grids differ {xa.data.shape} vs {ga.data.shape}")
    t = relu(xa + ga)
    alpha = sigmoid(conv3d(t, p.wpsi))
    alpha_up = upsample2x(alpha)
    if alpha_up.data.shape[:-1] != x.data.shape[:-1]:
        raise ShapeMismatch(
            f"attention_gate: upsampled alpha {alpha_up.data.shape} vs x {x.data.shape}")
    return scale_voxels(x, alpha_up)
