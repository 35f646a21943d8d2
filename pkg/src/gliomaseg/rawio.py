"""Raw volume format: little-endian float32 payload (x-fastest) plus a JSON
sidecar ``{dims, dtype, spacing}``."""

import json

import numpy as np

from .errors import IoFailure, LengthMismatch, NonFiniteVoxel, SidecarParse
from .volume import Volume


def sidecar_path_for(data_path) -> str:
    return str(data_path) + ".json"


def read_raw(data_path, sidecar_path=None) -> Volume:
    if sidecar_path is None:
        sidecar_path = sidecar_path_for(data_path)
    try:
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SidecarParse(f"{sidecar_path}: {exc}") from exc

    try:
        dims = tuple(int(d) for d in meta["dims"])
        dtype = meta["dtype"]
        spacing = tuple(float(s) for s in meta["spacing"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SidecarParse(f"{sidecar_path}: missing/invalid field ({exc})") from exc
    if len(dims) != 3 or len(spacing) != 3 or dtype != "f32":
        raise SidecarParse(f"{sidecar_path}: expected 3 dims, 3 spacings, dtype 'f32'")

    try:
        with open(data_path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    count = dims[0] * dims[1] * dims[2]
    if len(payload) != 4 * count:
        raise LengthMismatch(
            f"{data_path}: payload is {len(payload)} bytes, dims imply {4 * count}")
    flat = np.frombuffer(payload, dtype="<f4")
    if not np.all(np.isfinite(flat)):
        raise NonFiniteVoxel(f"{data_path}: non-finite voxel values")
    data = flat.reshape(dims, order="F").copy()
    return Volume(dims=dims, spacing=spacing, data=data, name=str(data_path))


def write_raw(volume: Volume, data_path, sidecar_path=None) -> None:
    if sidecar_path is None:
        sidecar_path = sidecar_path_for(data_path)
    meta = {
        "dims": list(volume.dims),
        "dtype": "f32",
        "spacing": list(volume.spacing),
    }
    payload = np.ascontiguousarray(volume.data.astype("<f4").ravel(order="F"))
    try:
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh)
        with open(data_path, "wb") as fh:
            fh.write(payload.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
