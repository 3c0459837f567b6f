"""Tests for the netpbm reader and writer."""

import numpy as np
import pytest

from cxr_net.datapipe.imageio import decode_netpbm, encode_netpbm, load_image, save_image
from cxr_net.errors import FormatError, ShapeError


class TestDecode:

    def test_p5_8bit_constant(self):
        data = b"P5\n3 2\n255\n" + bytes([128] * 6)
        image = decode_netpbm(data)
        assert image.shape == (2, 3)
        np.testing.assert_array_equal(image, 128 / 255)

    def test_p5_16bit_is_big_endian(self):
        data = b"P5 2 1 65535\n" + b"\x01\x00\x00\x01"
        np.testing.assert_array_equal(decode_netpbm(data), [[256 / 65535, 1 / 65535]])

    def test_p2_with_comments(self):
        data = b"P2\n# written by hand\n2 2\n# maxval next\n15\n0 5\n10 15\n"
        np.testing.assert_allclose(decode_netpbm(data), [[0, 1 / 3], [2 / 3, 1]])

    def test_colour(self):
        data = b"P6\n1 2\n255\n" + bytes([255, 0, 0, 0, 0, 255])
        image = decode_netpbm(data)
        assert image.shape == (2, 1, 3)
        np.testing.assert_array_equal(image[0, 0], [1, 0, 0])
        plain = decode_netpbm(b"P3 1 1 255 0 255 0")
        np.testing.assert_array_equal(plain[0, 0], [0, 1, 0])

    def test_truncated_raster_names_missing_bytes(self):
        data = b"P5\n3 2\n255\n" + bytes(4)
        with pytest.raises(FormatError, match="missing 2 bytes") as err:
            decode_netpbm(data)
        assert err.value.offset == len(data)

    def test_truncated_plain_raster(self):
        with pytest.raises(FormatError, match="missing 1 samples"):
            decode_netpbm(b"P2 2 2 9 1 2 3")

    def test_bad_magic(self):
        with pytest.raises(FormatError) as err:
            decode_netpbm(b"P7\n1 1\n255\n\x00")
        assert err.value.offset == 0

    @pytest.mark.parametrize("data", [b"P5\n3", b"P5\n3 x 255\n", b"P5\n0 2 255\n\x00",
                                      b"P5\n1 1 70000\n\x00\x00"])
    def test_malformed_header(self, data):
        with pytest.raises(FormatError):
            decode_netpbm(data)

    def test_sample_above_maxval(self):
        with pytest.raises(FormatError):
            decode_netpbm(b"P2 1 1 7 9")


class TestEncode:

    def test_16bit_round_trip_quantizes(self, rng):
        image = rng.uniform(size=(5, 7))
        decoded = decode_netpbm(encode_netpbm(image))
        np.testing.assert_array_equal(decoded, np.rint(image * 65535) / 65535)

    def test_8bit_and_clipping(self):
        data = encode_netpbm(np.array([[-0.5, 0.5, 2.0]]), bits=8)
        assert data.startswith(b"P5\n3 1\n255\n")
        assert data[-3:] == bytes([0, 128, 255])

    def test_colour_round_trip(self, rng):
        image = rng.uniform(size=(3, 4, 3))
        np.testing.assert_allclose(decode_netpbm(encode_netpbm(image)), image, atol=1 / 65535)

    def test_unsupported_shapes(self):
        with pytest.raises(ShapeError):
            encode_netpbm(np.zeros((2, 2, 2)))
        with pytest.raises(ShapeError):
            encode_netpbm(np.zeros((2, 2)), bits=12)


class TestFiles:

    def test_save_then_load(self, tmp_path, rng):
        image = rng.uniform(size=(6, 4))
        path = save_image(image, tmp_path / "nested" / "im.pgm")
        np.testing.assert_allclose(load_image(path), image, atol=1 / 65535)

    def test_error_names_the_file(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00")
        with pytest.raises(FormatError) as err:
            load_image(path)
        assert str(path) in str(err.value)
        assert str(err.value).count("format error") == 1
