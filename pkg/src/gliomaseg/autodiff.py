"""Reverse-mode automatic differentiation over dense numpy arrays.

Tensors form an implicit tape: each produced tensor records its parents and
a function mapping the upstream gradient to per-parent gradients.  The op
set is exactly what the two segmentation networks need: elementwise
arithmetic, exp/log/sqrt/log-cosh, reductions, channel concat/broadcast,
3D convolution (kernels 1-3, strides 1-2) and the stride-2 transposed
convolution.  Layout is channels-last: (T, H, W, D, C).
"""

import contextlib

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch, UnsupportedKernel

LOG_EPS = 1e-12

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Array node on the differentiation tape."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, parents=(), backward_fn=None,
                 requires_grad=False, name=None):
        self.data = np.asarray(data)
        if _GRAD_ENABLED:
            self.parents = tuple(parents)
            self.backward_fn = backward_fn
            self.requires_grad = requires_grad or any(
                p.requires_grad for p in self.parents)
        else:
            self.parents = ()
            self.backward_fn = None
            self.requires_grad = False
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, dtype={self.data.dtype})"


def Parameter(data, name=None) -> Tensor:
    """Leaf tensor that accumulates gradients."""
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data))


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _check_same_shape(a, b, what):
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeMismatch(f"{what}: {a.data.shape} vs {b.data.shape}")


def _reduce_to(grad, shape):
    """Sum a gradient down to ``shape`` (handles scalar operands)."""
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape) if shape == () else grad


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_same_shape(a, b, "add")
    return Tensor(a.data + b.data, (a, b),
                  lambda g: (_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)))


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_same_shape(a, b, "sub")
    return Tensor(a.data - b.data, (a, b),
                  lambda g: (_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)))


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_same_shape(a, b, "mul")
    return Tensor(a.data * b.data, (a, b),
                  lambda g: (_reduce_to(g * b.data, a.data.shape),
                             _reduce_to(g * a.data, b.data.shape)))


def div(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_same_shape(a, b, "div")
    out = a.data / b.data
    return Tensor(out, (a, b),
                  lambda g: (_reduce_to(g / b.data, a.data.shape),
                             _reduce_to(-g * out / b.data, b.data.shape)))


def neg(a):
    return Tensor(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float):
    c = float(c)
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def exp(a):
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a):
    """Natural log with the argument clamped below at ``LOG_EPS``."""
    clamped = np.maximum(a.data, LOG_EPS)
    mask = a.data > LOG_EPS
    return Tensor(np.log(clamped), (a,), lambda g: (g / clamped * mask,))


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor(out, (a,), lambda g: (g * 0.5 / out,))


def max_const(a, c: float):
    """Elementwise max(x, c)."""
    c = float(c)
    mask = a.data > c
    return Tensor(np.maximum(a.data, c), (a,), lambda g: (g * mask,))


def logcosh(a):
    """Numerically stable log(cosh(x)); gradient is tanh(x)."""
    x = a.data
    out = np.abs(x) + np.log1p(np.exp(-2.0 * np.abs(x))) - np.log(2.0)
    return Tensor(out, (a,), lambda g: (g * np.tanh(x),))


# -- reductions and shape ops ----------------------------------------------

def reduce_sum(a, axes=None, keepdims=False):
    out = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bw(g):
        if axes is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)
        g_exp = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(g_exp, a.data.shape).astype(a.data.dtype, copy=False),)

    return Tensor(out, (a,), bw)


def reduce_mean(a, axes=None, keepdims=False):
    count = a.data.size if axes is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axes)])
    return scale(reduce_sum(a, axes, keepdims), 1.0 / float(count))


def concat_channels(a, b):
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeMismatch(
            f"concat_channels: non-channel dims differ {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[-1]
    return Tensor(np.concatenate([a.data, b.data], axis=-1), (a, b),
                  lambda g: (g[..., :ca], g[..., ca:]))


def broadcast_channels(vec, like_shape):
    """Expand a (C,) vector across a (T, H, W, D, C) shape."""
    like_shape = tuple(like_shape)
    if vec.data.shape != (like_shape[-1],):
        raise ShapeMismatch(
            f"broadcast_channels: vec {vec.data.shape} vs channels {like_shape[-1]}")
    out = np.broadcast_to(vec.data, like_shape).astype(vec.data.dtype, copy=False)
    axes = tuple(range(len(like_shape) - 1))
    return Tensor(out.copy(), (vec,), lambda g: (g.sum(axis=axes),))


# -- convolution ------------------------------------------------------------

def _out_and_pads(n, k, s, padding):
    if padding == "same":
        out = -(-n // s)
        total = max((out - 1) * s + k - n, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        return (n - k) // s + 1, 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def conv3d(x, w, stride: int = 1, padding: str = "same"):
    """Cross-correlation of (T,H,W,D,Ci) with kernel (k,k,k,Ci,Co)."""
    k = int(w.data.shape[0])
    if k not in (1, 2, 3):
        raise UnsupportedKernel(f"kernel size {k} not in {{1,2,3}}")
    if stride not in (1, 2):
        raise UnsupportedKernel(f"stride {stride} not in {{1,2}}")
    if x.data.ndim != 5 or w.data.ndim != 5 or w.data.shape[:3] != (k, k, k):
        raise ShapeMismatch(f"conv3d: x {x.data.shape}, w {w.data.shape}")
    if w.data.shape[3] != x.data.shape[4]:
        raise ShapeMismatch(
            f"conv3d: input channels {x.data.shape[4]} != kernel Cin {w.data.shape[3]}")

    t, h, wd, d, _ = x.data.shape
    co = w.data.shape[4]
    (oh, ph0, ph1) = _out_and_pads(h, k, stride, padding)
    (ow, pw0, pw1) = _out_and_pads(wd, k, stride, padding)
    (od, pd0, pd1) = _out_and_pads(d, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (ph0, ph1), (pw0, pw1), (pd0, pd1), (0, 0)))

    wdata = w.data
    out = np.zeros((t, oh, ow, od, co), dtype=x.data.dtype)
    for a in range(k):
        for b in range(k):
            for c in range(k):
                sl = xp[:, a:a + stride * oh:stride,
                        b:b + stride * ow:stride,
                        c:c + stride * od:stride, :]
                out += sl @ wdata[a, b, c]

    def bw(g):
        gw = np.zeros_like(wdata) if w.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    sl = xp[:, a:a + stride * oh:stride,
                            b:b + stride * ow:stride,
                            c:c + stride * od:stride, :]
                    if gw is not None:
                        gw[a, b, c] = np.tensordot(
                            sl, g, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
                    if gxp is not None:
                        gxp[:, a:a + stride * oh:stride,
                            b:b + stride * ow:stride,
                            c:c + stride * od:stride, :] += g @ wdata[a, b, c].T
        gx = None
        if gxp is not None:
            gx = gxp[:, ph0:ph0 + h, pw0:pw0 + wd, pd0:pd0 + d, :]
        return (gx, gw)

    return Tensor(out, (x, w), bw)


def conv_transpose3d(x, w):
    """Stride-2 transposed convolution with a 2x2x2 kernel (Ci, Co last axes).

    Doubles each spatial extent; the adjoint of the matching stride-2 valid
    cross-correlation with the Ci/Co-transposed kernel.
    """
    if x.data.ndim != 5 or w.data.shape[:3] != (2, 2, 2):
        raise ShapeMismatch(f"conv_transpose3d: x {x.data.shape}, w {w.data.shape}")
    if w.data.shape[3] != x.data.shape[4]:
        raise ShapeMismatch(
            f"conv_transpose3d: channels {x.data.shape[4]} != kernel Cin {w.data.shape[3]}")
    t, h, wd, d, _ = x.data.shape
    co = w.data.shape[4]
    wdata = w.data
    out = np.empty((t, 2 * h, 2 * wd, 2 * d, co), dtype=x.data.dtype)
    for a in range(2):
        for b in range(2):
            for c in range(2):
                out[:, a::2, b::2, c::2, :] = x.data @ wdata[a, b, c]

    def bw(g):
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gw = np.zeros_like(wdata) if w.requires_grad else None
        for a in range(2):
            for b in range(2):
                for c in range(2):
                    gsl = g[:, a::2, b::2, c::2, :]
                    if gx is not None:
                        gx += gsl @ wdata[a, b, c].T
                    if gw is not None:
                        gw[a, b, c] = np.tensordot(
                            x.data, gsl, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
        return (gx, gw)

    return Tensor(out, (x, w), bw)


# -- backward pass ----------------------------------------------------------

def _topo_order(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable leaf."""
    if loss.data.shape != ():
        raise NonScalarLoss(f"loss has shape {loss.data.shape}")
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(_topo_order(loss)):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


# -- parameter registry -----------------------------------------------------

class ParamSet:
    """Named leaf tensors with a flat-vector view for optimizer steps."""

    def __init__(self):
        self._params = {}

    def register(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        p = Parameter(np.asarray(data), name=name)
        self._params[name] = p
        return p

    def adopt(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def size(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self._params.values()])

    def grad_flat(self) -> np.ndarray:
        out = np.zeros(self.size(), dtype=np.float64)
        i = 0
        for p in self._params.values():
            n = p.data.size
            if p.grad is not None:
                out[i:i + n] = np.asarray(p.grad).ravel()
            i += n
        return out

    def set_flat(self, vec: np.ndarray) -> None:
        if vec.size != self.size():
            raise ShapeMismatch(f"flat vector {vec.size} != parameter count {self.size()}")
        i = 0
        for p in self._params.values():
            n = p.data.size
            p.data = np.asarray(vec[i:i + n], dtype=p.data.dtype).reshape(p.data.shape)
            i += n

    def astype(self, dtype) -> "ParamSet":
        out = ParamSet()
        for name, p in self._params.items():
            out.register(name, p.data.astype(dtype))
        return out
