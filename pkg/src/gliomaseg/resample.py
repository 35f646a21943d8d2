"""Grid resizing between the native and network input resolutions."""

import numpy as np
from scipy import ndimage


def _coords(src_dims, dst_dims):
    axes = [
        (np.arange(m, dtype=np.float64) + 0.5) * (n / m) - 0.5
        for n, m in zip(src_dims, dst_dims)
    ]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def resize(data: np.ndarray, new_dims, order: int = 1) -> np.ndarray:
    """Resample a 3D array to ``new_dims``; order 1 trilinear, 0 nearest."""
    if tuple(data.shape) == tuple(new_dims):
        return data.copy()
    coords = _coords(data.shape, new_dims)
    out = ndimage.map_coordinates(data.astype(np.float64), coords,
                                  order=order, mode="nearest")
    return out.astype(data.dtype)


def resize_channels(data: np.ndarray, new_dims, order: int = 1) -> np.ndarray:
    """Resample a (X, Y, Z, C) array channel by channel."""
    out = np.empty(tuple(new_dims) + (data.shape[-1],), dtype=data.dtype)
    for c in range(data.shape[-1]):
        out[..., c] = resize(data[..., c], new_dims, order)
    return out
