import numpy as np
import pytest

from conftest import make_volume, random_header
from sonomesh.errors import (
    MetaParseError,
    PayloadSizeError,
    UnsupportedElementTypeError,
    ValidationError,
)
from sonomesh.volume_io import (
    downsample,
    load_volume,
    normalize,
    parse_meta,
    read_volume,
    write_meta,
    write_volume,
)


class TestParseMeta:
    def test_reference_header(self, reference_mhd_text):
        header = parse_meta(reference_mhd_text)
        assert header.dim_size == (768, 768, 1280)
        assert header.element_spacing == (0.49479, 0.49479, 0.3125)
        assert header.element_type == "MET_USHORT"
        assert header.byte_order_msb is False
        assert header.data_file == "scan_001.raw"
        assert header.anatomical_orientation == "RAI"
        assert header.extra_tags == ()

    def test_tag_order_insensitive(self, reference_mhd_text):
        lines = reference_mhd_text.strip().splitlines()
        shuffled = "\n".join(lines[::-1]) + "\n"
        assert parse_meta(shuffled) == parse_meta(reference_mhd_text)

    def test_unsupported_element_type(self, reference_mhd_text):
        text = reference_mhd_text.replace("MET_USHORT", "MET_FLOAT")
        with pytest.raises(UnsupportedElementTypeError):
            parse_meta(text)

    @pytest.mark.parametrize("tag", ["NDims", "DimSize", "ElementSpacing", "ElementDataFile"])
    def test_missing_required_tag_is_named(self, reference_mhd_text, tag):
        text = "\n".join(
            line for line in reference_mhd_text.splitlines() if not line.startswith(tag)
        )
        with pytest.raises(MetaParseError, match=tag):
            parse_meta(text)

    def test_compressed_rejected(self, reference_mhd_text):
        text = reference_mhd_text.replace("CompressedData = False", "CompressedData = True")
        with pytest.raises(UnsupportedElementTypeError):
            parse_meta(text)

    def test_unknown_tags_preserved_in_order(self, reference_mhd_text):
        text = reference_mhd_text + "Foo = bar\nBaz = 1 2 3\n"
        header = parse_meta(text)
        assert header.extra_tags == (("Foo", "bar"), ("Baz", "1 2 3"))


class TestWriteMeta:
    def test_reference_byte_identity(self, reference_mhd_text):
        assert write_meta(parse_meta(reference_mhd_text)) == reference_mhd_text

    def test_extra_tag_after_known(self, reference_mhd_text):
        header = parse_meta(reference_mhd_text + "Foo = bar\n")
        out = write_meta(header)
        assert out.endswith("ElementDataFile = scan_001.raw\nFoo = bar\n")

    def test_spacing_formatting(self, reference_mhd_text):
        header = parse_meta(
            reference_mhd_text.replace(
                "ElementSpacing = 0.49479 0.49479 0.3125", "ElementSpacing = 0.5 0.5 0.3125"
            )
        )
        assert "ElementSpacing = 0.5 0.5 0.3125\n" in write_meta(header)

    def test_roundtrip_on_random_headers(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            header = random_header(rng)
            assert parse_meta(write_meta(header)) == header


class TestLoadVolume:
    def _header(self, dims, msb=False):
        text = (
            f"NDims = 3\nDimSize = {dims[0]} {dims[1]} {dims[2]}\n"
            "ElementSpacing = 1.0 1.0 1.0\nElementDataFile = x.raw\n"
            f"BinaryDataByteOrderMSB = {msb}\n"
        )
        return parse_meta(text)

    def test_linear_index_order(self):
        header = self._header((2, 2, 2))
        payload = np.arange(8, dtype="<u2").tobytes()
        vol = load_volume(header, payload)
        assert vol.data.shape == (2, 2, 2)
        assert vol.data[1, 1, 1] == 7
        for z in range(2):
            for y in range(2):
                for x in range(2):
                    assert vol.data[z, y, x] == x + 2 * y + 4 * z

    def test_shape_follows_header(self):
        header = self._header((6, 4, 2))
        vol = load_volume(header, bytes(6 * 4 * 2 * 2))
        assert vol.data.shape == (2, 4, 6)

    def test_truncated_payload(self):
        header = self._header((2, 2, 2))
        with pytest.raises(PayloadSizeError, match="15.*16|16.*15"):
            load_volume(header, bytes(15))

    def test_big_endian(self):
        values = np.arange(8, dtype=np.uint16)
        vol = load_volume(self._header((2, 2, 2), msb=True), values.astype(">u2").tobytes())
        assert np.array_equal(vol.data.ravel(), values)

    def test_lossless(self):
        rng = np.random.default_rng(0)
        payload = rng.integers(0, 65536, size=24, dtype=np.uint16).astype("<u2").tobytes()
        vol = load_volume(self._header((2, 3, 4)), payload)
        assert vol.data.astype("<u2").tobytes() == payload

    def test_volume_immutable(self):
        vol = load_volume(self._header((2, 2, 2)), bytes(16))
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 1


class TestDownsample:
    def test_factor_three_reaches_standard_resolution(self):
        vol = make_volume(np.zeros((2, 768, 768), dtype=np.uint16), spacing=(0.49479, 0.49479, 0.3125))
        out = downsample(vol, 3)
        assert out.data.shape == (2, 256, 256)
        assert out.spacing == pytest.approx((0.49479 * 3, 0.49479 * 3, 0.3125))
        assert out.header.dim_size == (256, 256, 2)

    def test_factor_two(self):
        vol = make_volume(np.zeros((2, 768, 768), dtype=np.uint16))
        assert downsample(vol, 2).data.shape == (2, 384, 384)

    def test_identity(self):
        data = np.arange(2 * 4 * 4, dtype=np.uint16).reshape(2, 4, 4)
        vol = make_volume(data)
        out = downsample(vol, 1)
        assert np.array_equal(out.data, data)
        assert out.spacing == vol.spacing

    def test_stride_keeps_grid_values(self):
        data = np.arange(1 * 6 * 6, dtype=np.uint16).reshape(1, 6, 6)
        out = downsample(make_volume(data), 2)
        assert np.array_equal(out.data, data[:, ::2, ::2])

    def test_stride_composition(self):
        rng = np.random.default_rng(3)
        for ny, nx in [(30, 30), (31, 29), (37, 41)]:
            data = rng.integers(0, 100, size=(2, ny, nx)).astype(np.uint16)
            vol = make_volume(data)
            once = downsample(vol, 6)
            twice = downsample(downsample(vol, 2), 3)
            assert np.array_equal(once.data, twice.data)

    def test_mean_method(self):
        data = np.array([[[0, 2], [4, 6]]], dtype=np.uint16)
        out = downsample(make_volume(data), 2, method="mean")
        assert out.data.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == pytest.approx(3.0)

    def test_bad_factor(self):
        vol = make_volume(np.zeros((1, 4, 4), dtype=np.uint16))
        with pytest.raises(ValidationError):
            downsample(vol, 0)


class TestNormalize:
    def test_affine_rescale(self):
        vol = make_volume(np.array([[[0, 32768, 65535]]], dtype=np.uint16))
        out = normalize(vol).data
        assert out[0, 0, 0] == 0.0
        assert out[0, 0, 2] == 1.0
        assert abs(out[0, 0, 1] - 0.5) < 1e-4

    def test_constant_maps_to_zero(self):
        out = normalize(make_volume(np.full((2, 3, 4), 7, dtype=np.uint16)))
        assert not out.data.any()

    def test_random_hits_exact_bounds(self):
        rng = np.random.default_rng(11)
        data = rng.integers(100, 60000, size=(3, 8, 8)).astype(np.uint16)
        out = normalize(make_volume(data)).data
        assert out.min() == 0.0
        assert out.max() == 1.0

    def test_idempotent(self):
        rng = np.random.default_rng(12)
        vol = make_volume(rng.integers(0, 65536, size=(2, 5, 5)).astype(np.uint16))
        once = normalize(vol)
        twice = normalize(once)
        assert np.abs(twice.data - once.data).max() < 1e-12


def test_file_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    data = rng.integers(0, 65536, size=(3, 4, 5), dtype=np.uint16)
    vol = make_volume(data, spacing=(0.5, 0.25, 1.5))
    path = tmp_path / "vol.mhd"
    write_volume(path, vol)
    back = read_volume(path)
    assert np.array_equal(back.data, data)
    assert back.spacing == vol.spacing
