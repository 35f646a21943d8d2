"""Minimal uncompressed NIfTI-1 reader/writer.

Only the single-file ``.nii`` layout is handled: a 348-byte little-endian
header (magic ``n+1\\0``) followed by the voxel payload at ``vox_offset``.
Supported on-disk datatypes are uint8, int16, float32 and float64; values
are rescaled by ``scl_slope``/``scl_inter`` when the slope is nonzero and
returned as float32.
"""

import struct

import numpy as np

from .errors import BadMagic, IoFailure, NonFiniteVoxel, TruncatedPayload, UnsupportedDatatype
from .volume import Volume

HEADER_SIZE = 348
MAGIC = b"n+1\x00"

_DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    16: np.dtype("<f4"),
    64: np.dtype("<f8"),
}


def read_nifti(path) -> Volume:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayload(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    if raw[344:348] != MAGIC:
        raise BadMagic(f"{path}: magic {raw[344:348]!r} is not {MAGIC!r}")

    dim = struct.unpack_from("<8h", raw, 40)
    datatype = struct.unpack_from("<h", raw, 70)[0]
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset = int(struct.unpack_from("<f", raw, 108)[0])
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)

    if datatype not in _DTYPES:
        raise UnsupportedDatatype(datatype)
    dims = tuple(max(int(d), 1) for d in dim[1:4])
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1:4])

    offset = vox_offset if vox_offset >= HEADER_SIZE else HEADER_SIZE
    dtype = _DTYPES[datatype]
    count = dims[0] * dims[1] * dims[2]
    payload = raw[offset:offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise TruncatedPayload(f"{path}: payload holds fewer than {count} voxels")

    flat = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if scl_slope != 0.0:
        flat = flat * np.float32(scl_slope) + np.float32(scl_inter)
    if not np.all(np.isfinite(flat)):
        raise NonFiniteVoxel(f"{path}: non-finite voxel values after scaling")
    data = flat.reshape(dims, order="F")
    return Volume(dims=dims, spacing=spacing, data=data, name=str(path))


def write_nifti(volume: Volume, path) -> None:
    """Emit ``volume`` as an uncompressed float32 .nii file."""
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    nx, ny, nz = volume.dims
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, 16)          # float32
    struct.pack_into("<h", header, 72, 32)          # bitpix
    sx, sy, sz = volume.spacing
    struct.pack_into("<8f", header, 76, 1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", header, 108, 352.0)      # vox_offset
    struct.pack_into("<2f", header, 112, 0.0, 0.0)  # scl_slope/inter: unscaled
    header[344:348] = MAGIC

    payload = np.ascontiguousarray(volume.data.astype(np.float32).ravel(order="F"))
    try:
        with open(path, "wb") as fh:
            fh.write(bytes(header))
            fh.write(b"\x00" * 4)                   # pad to vox_offset 352
            fh.write(payload.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
