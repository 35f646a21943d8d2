"""Raw+sidecar and NIfTI round trips, normalization, manifests, labels."""

import json
import struct

import numpy as np
import pytest

from gliomaseg.errors import (
    BadMagic,
    ConstantRegionWarning,
    LengthMismatch,
    MissingModality,
    NonFiniteVoxel,
    SidecarParse,
    UnknownLabelValue,
    UnsupportedDatatype,
)
from gliomaseg.nifti import read_nifti, write_nifti
from gliomaseg.rawio import read_raw, sidecar_path_for, write_raw
from gliomaseg.volume import (
    BRATS_LABEL_ENCODING,
    DatasetManifest,
    Volume,
    remap_label,
    zscore_normalize,
)


def _vol(rng, dims=(5, 6, 7), spacing=(1.0, 1.0, 2.5)):
    data = rng.normal(size=dims).astype(np.float32)
    return Volume(dims=dims, spacing=spacing, data=data, name="t")


class TestRawFormat:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        vol = _vol(rng)
        path = tmp_path / "vol.raw"
        write_raw(vol, path)
        back = read_raw(path)
        assert back.data.dtype == np.float32
        assert np.array_equal(back.data, vol.data)
        assert back.dims == vol.dims
        assert back.spacing == vol.spacing

    def test_payload_is_x_fastest_little_endian(self, rng, tmp_path):
        # [DERIVED] independent byte-level oracle: element (x,y,z) lives at
        # offset 4*(x + nx*y + nx*ny*z) as a little-endian float32.
        vol = _vol(rng, dims=(3, 4, 5))
        path = tmp_path / "vol.raw"
        write_raw(vol, path)
        blob = path.read_bytes()
        nx, ny, _ = vol.dims
        for (x, y, z) in [(0, 0, 0), (2, 1, 3), (1, 3, 4)]:
            offset = 4 * (x + nx * y + nx * ny * z)
            (value,) = struct.unpack_from("<f", blob, offset)
            assert value == vol.data[x, y, z]

    def test_sidecar_contents(self, rng, tmp_path):
        vol = _vol(rng)
        path = tmp_path / "vol.raw"
        write_raw(vol, path)
        doc = json.loads((tmp_path / "vol.raw.json").read_text())
        assert doc["dims"] == list(vol.dims)
        assert doc["dtype"] == "f32"
        assert doc["spacing"] == list(vol.spacing)

    def test_sidecar_path_for(self):
        assert sidecar_path_for("a/b.raw").endswith("b.raw.json")

    def test_truncated_payload_rejected(self, rng, tmp_path):
        vol = _vol(rng)
        path = tmp_path / "vol.raw"
        write_raw(vol, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(LengthMismatch):
            read_raw(path)

    def test_bad_sidecar_rejected(self, rng, tmp_path):
        vol = _vol(rng)
        path = tmp_path / "vol.raw"
        write_raw(vol, path)
        (tmp_path / "vol.raw.json").write_text("{not json")
        with pytest.raises(SidecarParse):
            read_raw(path)


class TestNifti:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        vol = _vol(rng)
        path = tmp_path / "vol.nii"
        write_nifti(vol, path)
        back = read_nifti(path)
        assert np.array_equal(back.data, vol.data)
        assert back.dims == vol.dims
        assert back.spacing == pytest.approx(vol.spacing)

    def test_header_fields_at_documented_offsets(self, rng, tmp_path):
        # [DERIVED] NIfTI-1 layout oracle: sizeof_hdr@0, dim@40, datatype@70,
        # pixdim@76, vox_offset@108, magic@344.
        vol = _vol(rng, dims=(4, 5, 6), spacing=(1.0, 2.0, 3.0))
        path = tmp_path / "vol.nii"
        write_nifti(vol, path)
        blob = path.read_bytes()
        assert struct.unpack_from("<i", blob, 0)[0] == 348
        dim = struct.unpack_from("<8h", blob, 40)
        assert dim[0] == 3 and dim[1:4] == (4, 5, 6)
        assert struct.unpack_from("<h", blob, 70)[0] == 16  # float32
        pixdim = struct.unpack_from("<8f", blob, 76)
        assert pixdim[1:4] == pytest.approx((1.0, 2.0, 3.0))
        assert struct.unpack_from("<f", blob, 108)[0] >= 348
        assert blob[344:348] == b"n+1\x00"

    def test_reads_scaled_int16(self, tmp_path):
        # Hand-built header with datatype int16 and scl_slope/inter applied.
        dims = (2, 2, 2)
        data = np.arange(8, dtype=np.int16).reshape(dims, order="F")
        header = bytearray(348)
        struct.pack_into("<i", header, 0, 348)
        struct.pack_into("<8h", header, 40, 3, *dims, 1, 1, 1, 1)
        struct.pack_into("<h", header, 70, 4)      # int16
        struct.pack_into("<h", header, 72, 16)     # bitpix
        struct.pack_into("<8f", header, 76, 1, 1, 1, 1, 1, 1, 1, 1)
        struct.pack_into("<f", header, 108, 352.0)
        struct.pack_into("<f", header, 112, 2.0)   # scl_slope
        struct.pack_into("<f", header, 116, 1.0)   # scl_inter
        header[344:348] = b"n+1\x00"
        path = tmp_path / "i16.nii"
        path.write_bytes(bytes(header) + b"\0" * 4 + data.tobytes(order="F"))
        vol = read_nifti(path)
        assert np.array_equal(vol.data, 2.0 * data.astype(np.float32) + 1.0)

    def test_bad_magic_rejected(self, rng, tmp_path):
        vol = _vol(rng)
        path = tmp_path / "vol.nii"
        write_nifti(vol, path)
        blob = bytearray(path.read_bytes())
        blob[344:348] = b"oops"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagic):
            read_nifti(path)

    def test_unsupported_datatype_rejected(self, rng, tmp_path):
        vol = _vol(rng)
        path = tmp_path / "vol.nii"
        write_nifti(vol, path)
        blob = bytearray(path.read_bytes())
        struct.pack_into("<h", blob, 70, 128)  # RGB, unsupported
        path.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedDatatype):
            read_nifti(path)


class TestVolume:
    def test_rejects_nan(self):
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteVoxel):
            Volume(dims=(2, 2, 2), spacing=(1, 1, 1), data=data)


class TestZScore:
    def test_nonzero_region_stats(self, rng):
        data = rng.normal(3.0, 2.0, size=(8, 8, 8)).astype(np.float32)
        data[:2] = 0.0  # "outside brain"
        vol = Volume(dims=(8, 8, 8), spacing=(1, 1, 1), data=data)
        out = zscore_normalize(vol, region="nonzero").data
        inside = out[data != 0]
        # [DERIVED] population statistics of the nonzero region only.
        assert abs(inside.mean()) < 1e-5
        assert abs(inside.std() - 1.0) < 1e-4
        ref = (data[data != 0] - data[data != 0].mean()) / data[data != 0].std()
        assert np.allclose(inside, ref, atol=1e-5)

    def test_all_region(self, rng):
        data = rng.normal(size=(6, 6, 6)).astype(np.float32)
        vol = Volume(dims=(6, 6, 6), spacing=(1, 1, 1), data=data)
        out = zscore_normalize(vol, region="all").data
        assert abs(out.mean()) < 1e-5
        assert abs(out.std() - 1.0) < 1e-4

    def test_constant_region_warns_and_zeroes(self):
        data = np.full((4, 4, 4), 5.0, dtype=np.float32)
        vol = Volume(dims=(4, 4, 4), spacing=(1, 1, 1), data=data)
        with pytest.warns(ConstantRegionWarning):
            out = zscore_normalize(vol)
        assert np.all(out.data == 0.0)


class TestLabelsAndManifest:
    def test_brats_remap(self):
        raw = np.array([[[0.0, 1.0], [2.0, 4.0]]], dtype=np.float32)
        out = remap_label(raw, BRATS_LABEL_ENCODING)
        assert out.tolist() == [[[0, 1], [2, 3]]]

    def test_unknown_label_rejected(self):
        raw = np.array([[[5.0]]], dtype=np.float32)
        with pytest.raises(UnknownLabelValue):
            remap_label(raw, BRATS_LABEL_ENCODING)

    def test_manifest_round_trip(self, mini_dataset, tmp_path):
        path = tmp_path / "manifest.json"
        mini_dataset.save(path)
        back = DatasetManifest.load(path)
        assert back.case_ids() == mini_dataset.case_ids()
        assert back.label_encoding == mini_dataset.label_encoding

    def test_load_case_shapes(self, mini_dataset):
        from gliomaseg.volume import load_case

        case = load_case(mini_dataset, mini_dataset.case_ids()[0])
        assert case.stacked().shape == case.dims + (4,)
        assert case.stacked().dtype == np.float32
        assert set(np.unique(case.label)) <= {0, 1, 2, 3}

    def test_missing_modality(self, mini_dataset, tmp_path):
        from gliomaseg.volume import load_case

        path = mini_dataset.root / "manifest_copy.json"
        mini_dataset.save(path)
        clone = DatasetManifest.load(path)
        entry = clone.entry(clone.case_ids()[0])
        entry.modality_paths = {k: v for k, v in entry.modality_paths.items()
                                if k != "T2"}
        with pytest.raises(MissingModality):
            load_case(clone, entry.case_id)
