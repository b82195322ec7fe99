import io
from fractions import Fraction

import numpy as np
import pytest

from pupilnet import imaging
from pupilnet.imaging import GrayImage, PatchSpec


def test_decode_known_bytes():
    img = imaging.decode_pgm(b"P5\n2 2\n255\n\x00\xff\x80\x40")
    assert img.size == (2, 2)
    assert np.array_equal(img.pixels, np.array([[0, 255], [128, 64]]) / 255)


def test_header_comments_are_skipped():
    img = imaging.decode_pgm(b"P5 # made by hand\n# another\n3 1\n255\n\x01\x02\x03")
    assert img.size == (3, 1)


@pytest.mark.parametrize("blob", [
    b"P2\n2 2\n255\n0 1 2 3",             # ASCII variant unsupported
    b"P5\n2 2\n65535\n" + b"\0" * 8,        # 16-bit maxval
    b"P5\n2 2\n255\n\x00\x01\x02",          # truncated raster
    b"P5\n2",                               # truncated header
    b"P5\n0 2\n255\n",                      # empty image
])
def test_malformed_pgm_rejected(blob):
    with pytest.raises(imaging.PgmError):
        imaging.decode_pgm(blob)


def test_round_trip_is_exact_on_8bit_values(tmp_path, rng):
    raw = rng.integers(0, 256, size=(5, 7))
    img = GrayImage(raw / 255.0)
    blob = imaging.encode_pgm(img)
    assert blob.startswith(b"P5\n7 5\n255\n")
    assert np.array_equal(imaging.decode_pgm(blob).pixels, img.pixels)
    imaging.save_pgm(img, tmp_path / "a.pgm")
    assert np.array_equal(imaging.load_pgm(tmp_path / "a.pgm").pixels, img.pixels)
    buf = io.BytesIO()
    imaging.save_pgm(img, buf)
    assert buf.getvalue() == blob


def test_gray_image_validates_and_is_read_only():
    with pytest.raises(ValueError):
        GrayImage(np.array([[1.5]]))
    with pytest.raises(ValueError):
        GrayImage(np.zeros(4))
    img = GrayImage(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1.0


def test_cubic_kernel_interpolates():
    assert imaging.cubic_kernel(0.0) == 1.0
    assert np.allclose(imaging.cubic_kernel(np.array([1.0, -1.0, 2.0, 2.5])), 0.0)
    x = np.linspace(-0.99, 0.99, 23)
    # partition of unity over integer shifts
    total = sum(imaging.cubic_kernel(x + k) for k in range(-3, 4))
    assert np.allclose(total, 1.0)


def test_downscale_shape(rng):
    small = imaging.bicubic_resize(GrayImage(rng.random((288, 384))), Fraction(1, 4))
    assert small.size == (96, 72)


@pytest.mark.parametrize("factor", [Fraction(1, 4), Fraction(1, 2), Fraction(3, 1), Fraction(2, 3)])
def test_constant_image_stays_constant(factor):
    img = GrayImage(np.full((30, 41), 0.37))
    out = imaging.bicubic_resize(img, factor)
    assert np.allclose(out.pixels, 0.37, rtol=0, atol=1e-12)


def test_factor_one_is_identity(rng):
    img = GrayImage(rng.random((9, 13)))
    assert np.array_equal(imaging.bicubic_resize(img, 1).pixels, img.pixels)


def test_down_then_up_is_close_on_smooth_images():
    y, x = np.mgrid[0:96, 0:128]
    img = GrayImage(0.5 + 0.3 * np.sin(x / 15.0) * np.cos(y / 11.0))
    back = imaging.bicubic_resize(imaging.bicubic_resize(img, Fraction(1, 4)), 4)
    assert back.size == img.size
    assert np.mean(np.abs(back.pixels - img.pixels)) < 0.02


def test_resize_rejects_nonpositive_factor():
    with pytest.raises(ValueError):
        imaging.resize_array(np.zeros((4, 4)), 0)


def test_patch_bounds():
    img = GrayImage(np.zeros((72, 96)))
    assert imaging.extract_window(img, 72, 48, 24).shape == (24, 24)
    with pytest.raises(imaging.PatchBoundsError):
        imaging.extract_window(img, 73, 48, 24)
    with pytest.raises(imaging.PatchBoundsError):
        imaging.extract_window(img, 72, 49, 24)
    with pytest.raises(imaging.PatchBoundsError):
        imaging.extract_window(img, -1, 0, 24)


def test_odd_patch_is_centred():
    pix = np.zeros((200, 200))
    pix[100, 120] = 1.0
    patch = imaging.extract_patch(GrayImage(pix), PatchSpec(120, 100, 89))
    assert patch[44, 44] == 1.0 and patch.sum() == 1.0


def test_even_patch_center_convention():
    spec = PatchSpec.at(10, 20, 24)
    assert (spec.center_x, spec.center_y) == (21.5, 31.5)
    assert spec.top_left == (10, 20)
    with pytest.raises(ValueError):
        PatchSpec(21.0, 31.5, 24).top_left


def test_patch_is_a_copy():
    img = GrayImage(np.zeros((30, 30)))
    p = imaging.extract_window(img, 0, 0, 24)
    p[0, 0] = 1.0
    assert img.pixels[0, 0] == 0.0
