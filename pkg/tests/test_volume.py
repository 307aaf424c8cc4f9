import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbc.volume import (
    IGNORE_LABEL,
    VOLUME_MAGIC,
    BodyRegionLabel,
    HUVolume,
    LabelVolume,
    ProbabilityVolume,
    Spacing,
    VolumeFormatError,
    assert_paired,
    load_volume,
    save_volume,
    voxel_volume_ml,
)


class TestSpacing:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Spacing(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            Spacing(5.0, -1.0, 1.0)
        with pytest.raises(ValueError):
            Spacing(5.0, 1.0, float("inf"))

    def test_voxel_volume_examples(self):
        assert voxel_volume_ml(Spacing(5, 1, 1)) == pytest.approx(0.005)
        assert voxel_volume_ml(Spacing(5, 2, 2)) == pytest.approx(0.020)
        assert voxel_volume_ml(Spacing(1, 1, 1)) == pytest.approx(0.001)

    @given(
        z=st.floats(0.1, 10), y=st.floats(0.1, 10), x=st.floats(0.1, 10), f=st.floats(0.5, 4)
    )
    @settings(max_examples=50)
    def test_voxel_volume_multiplicative_in_each_axis(self, z, y, x, f):
        base = voxel_volume_ml(Spacing(z, y, x))
        assert voxel_volume_ml(Spacing(z * f, y, x)) == pytest.approx(base * f)
        assert voxel_volume_ml(Spacing(z, y * f, x)) == pytest.approx(base * f)
        assert voxel_volume_ml(Spacing(z, y, x * f)) == pytest.approx(base * f)


class TestVolumeTypes:
    def test_hu_rejects_nonfinite(self):
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, 0, 0] = np.nan
        with pytest.raises(VolumeFormatError):
            HUVolume(data)

    def test_labels_reject_out_of_domain(self):
        data = np.zeros((2, 2, 2), dtype=np.uint8)
        data[1, 1, 1] = 7
        with pytest.raises(VolumeFormatError, match="7"):
            LabelVolume(data)

    def test_labels_accept_ignore(self):
        data = np.full((2, 2, 2), IGNORE_LABEL, dtype=np.uint8)
        data[0, 0, 0] = BodyRegionLabel.MUSCLE
        assert LabelVolume(data).dims == (2, 2, 2)

    def test_zero_voxel_dims_rejected(self):
        with pytest.raises(VolumeFormatError):
            HUVolume(np.zeros((0, 2, 2), dtype=np.float32))

    def test_pairing_asserts_dims(self, tiny_hu, tiny_labels):
        assert_paired(tiny_hu, tiny_labels)
        other = LabelVolume(np.zeros((2, 8, 8), dtype=np.uint8))
        with pytest.raises(VolumeFormatError):
            assert_paired(tiny_hu, other)

    def test_probability_volume_checks_normalization(self):
        good = np.full((6, 2, 2, 2), 1 / 6, dtype=np.float32)
        ProbabilityVolume(good)
        bad = good.copy()
        bad[0] += 0.01
        with pytest.raises(VolumeFormatError):
            ProbabilityVolume(bad)


class TestVbcFormat:
    def test_round_trip_hu(self, tmp_path, rng):
        vol = HUVolume(rng.normal(size=(4, 8, 8)).astype(np.float32), Spacing(5, 1, 1))
        p = tmp_path / "v.vbc"
        save_volume(vol, p)
        back = load_volume(p)
        assert isinstance(back, HUVolume)
        assert back.dims == vol.dims
        assert back.spacing == vol.spacing
        np.testing.assert_array_equal(back.data, vol.data)

    def test_round_trip_labels(self, tmp_path, tiny_labels):
        p = tmp_path / "l.vbc"
        save_volume(tiny_labels, p)
        back = load_volume(p)
        assert isinstance(back, LabelVolume)
        np.testing.assert_array_equal(back.data, tiny_labels.data)

    def test_save_load_save_is_byte_identical(self, tmp_path, rng):
        vol = HUVolume(rng.normal(size=(3, 4, 4)).astype(np.float32), Spacing(5, 1.5, 1.5))
        p1, p2 = tmp_path / "a.vbc", tmp_path / "b.vbc"
        save_volume(vol, p1)
        save_volume(load_volume(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_records_spacing(self, tmp_path):
        vol = HUVolume(np.zeros((2, 2, 2), dtype=np.float32), Spacing(5, 1, 1))
        p = tmp_path / "v.vbc"
        save_volume(vol, p)
        raw = p.read_bytes()
        (hlen,) = struct.unpack_from("<I", raw, len(VOLUME_MAGIC))
        header = json.loads(raw[len(VOLUME_MAGIC) + 4 : len(VOLUME_MAGIC) + 4 + hlen])
        assert header["spacing_mm"] == [5.0, 1.0, 1.0]
        assert header["kind"] == "hu"

    def test_payload_size_mismatch(self, tmp_path):
        header = json.dumps(
            {"kind": "hu", "dims": [2, 2, 2], "spacing_mm": [5, 1, 1]}
        ).encode()
        p = tmp_path / "bad.vbc"
        p.write_bytes(VOLUME_MAGIC + struct.pack("<I", len(header)) + header + b"\0" * 28)
        with pytest.raises(VolumeFormatError, match="payload"):
            load_volume(p)

    def test_label_payload_outside_domain(self, tmp_path):
        header = json.dumps(
            {"kind": "label", "dims": [1, 2, 2], "spacing_mm": [5, 1, 1]}
        ).encode()
        p = tmp_path / "bad.vbc"
        p.write_bytes(VOLUME_MAGIC + struct.pack("<I", len(header)) + header + bytes([0, 1, 7, 2]))
        with pytest.raises(VolumeFormatError):
            load_volume(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.vbc"
        p.write_bytes(b"NOTAVOL!" + b"\0" * 32)
        with pytest.raises(VolumeFormatError, match="magic"):
            load_volume(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_volume(tmp_path / "absent.vbc")
