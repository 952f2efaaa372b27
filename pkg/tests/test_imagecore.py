import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signlab.errors import IoFailure
from signlab.imagecore import (BLACK, BadMagic, Box, BoxOutOfBounds, FillMode, Image, Mask,
                               MissingFile, TruncatedData, UnsupportedMaxval, ZeroDimension,
                               crop, encode_ppm, load_pgm, load_ppm, quantize, read_pnm_size,
                               resize_bilinear, resize_mask, round_half_away, sample_bilinear,
                               save_pgm, save_ppm)

images = st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1)).map(
    lambda t: Image(np.random.default_rng(t[2]).integers(0, 256, (t[1], t[0], 3)).astype(np.uint8)))


def test_decode_single_red_pixel(tmp_path):
    p = tmp_path / "red.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
    img = load_ppm(p)
    assert img.size == (1, 1)
    assert tuple(img.pixels[0, 0]) == (255, 0, 0)


def test_save_black_pixel_exact_bytes(tmp_path):
    p = tmp_path / "k.ppm"
    save_ppm(Image.filled(1, 1), p)
    assert p.read_bytes() == b"P6\n1 1\n255\n\0\0\0"
    assert len(p.read_bytes()) == 14  # 11 header bytes + 3 payload bytes


def test_payload_is_row_major():
    img = Image(np.array([[[1, 2, 3], [4, 5, 6]]], dtype=np.uint8))
    assert encode_ppm(img).endswith(bytes([1, 2, 3, 4, 5, 6]))


def test_header_comments_and_whitespace(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6 # made by hand\n# another\n 2\t1 #w h\n255\n" + bytes(range(6)))
    img = load_ppm(p)
    assert img.size == (2, 1)
    assert img.data == bytes(range(6))
    assert read_pnm_size(p) == (2, 1)


@pytest.mark.parametrize("blob, exc", [
    (b"P3\n1 1\n255\n0 0 0\n", BadMagic),
    (b"P6\n1 1\n65535\n" + bytes(6), UnsupportedMaxval),
    (b"P6\n2 2\n255\n" + bytes(11), TruncatedData),
    (b"P6\n2 2", TruncatedData),
    (b"P6\n0 2\n255\n", ZeroDimension),
])
def test_decode_errors(tmp_path, blob, exc):
    p = tmp_path / "bad.ppm"
    p.write_bytes(blob)
    with pytest.raises(exc):
        load_ppm(p)


def test_missing_and_unwritable(tmp_path):
    with pytest.raises(MissingFile):
        load_ppm(tmp_path / "nope.ppm")
    with pytest.raises(IoFailure):
        save_ppm(Image.filled(1, 1), tmp_path / "no_dir" / "x.ppm")


def test_pgm_round_trip(tmp_path, rng):
    a = rng.integers(0, 256, (4, 6)).astype(np.uint8)
    save_pgm(a, tmp_path / "m.pgm")
    m = load_pgm(tmp_path / "m.pgm")
    assert np.array_equal(m.alpha8, a)
    assert m.alpha[0, 0] == pytest.approx(a[0, 0] / 255)
    save_pgm(m, tmp_path / "m2.pgm")
    assert (tmp_path / "m.pgm").read_bytes() == (tmp_path / "m2.pgm").read_bytes()


@settings(max_examples=60, deadline=None)
@given(images)
def test_ppm_round_trip(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("rt") / "x.ppm"
    save_ppm(img, p)
    again = load_ppm(p)
    assert again == img
    save_ppm(again, p.with_name("y.ppm"))
    assert p.read_bytes() == p.with_name("y.ppm").read_bytes()


def test_image_is_immutable():
    img = Image.filled(2, 2, (1, 2, 3))
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 9
    with pytest.raises(ValueError):
        Image(np.full((2, 2, 3), 300))


def test_round_half_away():
    assert list(round_half_away([0.5, 1.5, 2.5, -0.5, -1.5, 127.5, 0.49])) == [1, 2, 3, -1, -2, 128, 0]
    assert list(quantize([-3.0, 255.7, 127.5])) == [0, 255, 128]


def test_sample_bilinear_basics(random_image):
    img = random_image(6, 5)
    assert sample_bilinear(img, 2, 3) == tuple(float(v) for v in img.pixels[3, 2])
    ramp = Image(np.array([[[0] * 3, [255] * 3]], dtype=np.uint8))
    assert sample_bilinear(ramp, 0.5, 0) == (127.5, 127.5, 127.5)
    assert sample_bilinear(img, -5, -5, FillMode.constant(0)) == (0.0, 0.0, 0.0)
    assert sample_bilinear(img, -5, -5, FillMode.clamp()) == tuple(float(v) for v in img.pixels[0, 0])


def test_integer_sampling_reads_every_pixel(random_image):
    img = random_image(9, 7)
    for y in range(img.height):
        for x in range(img.width):
            assert sample_bilinear(img, x, y, BLACK) == tuple(float(v) for v in img.pixels[y, x])


def test_resize_examples(random_image):
    img = random_image(5, 4)
    assert resize_bilinear(img, 5, 4) == img
    checker = Image(np.repeat(np.array([[0, 255], [255, 0]], dtype=np.uint8)[..., None], 3, axis=2))
    assert tuple(resize_bilinear(checker, 1, 1).pixels[0, 0]) == (128, 128, 128)
    one = Image.filled(1, 1, (10, 20, 30))
    assert resize_bilinear(one, 4, 4) == Image.filled(4, 4, (10, 20, 30))
    with pytest.raises(ZeroDimension):
        resize_bilinear(img, 0, 3)


@settings(max_examples=60, deadline=None)
@given(images, st.integers(1, 12), st.integers(1, 12))
def test_resize_is_value_bounded(img, w, h):
    out = resize_bilinear(img, w, h).pixels
    assert out.shape == (h, w, 3)
    lo, hi = img.pixels.min(axis=(0, 1)), img.pixels.max(axis=(0, 1))
    assert np.all(out >= lo) and np.all(out <= hi)


def test_resize_mask_keeps_extremes():
    m = Mask(np.full((4, 4), 255, dtype=np.uint8))
    assert np.all(resize_mask(m, 8, 3).alpha8 == 255)


def test_crop_examples():
    ab = Image(np.array([[[1, 1, 1], [2, 2, 2]]], dtype=np.uint8))
    assert crop(ab, Box(0, 0, 2, 1)) == ab
    assert crop(ab, Box(1, 0, 2, 1)) == Image(np.array([[[2, 2, 2]]], dtype=np.uint8))
    with pytest.raises(BoxOutOfBounds):
        crop(ab, Box(0, 0, 3, 1))


@settings(max_examples=60, deadline=None)
@given(images, st.data())
def test_crop_composes(img, data):
    x0 = data.draw(st.integers(0, img.width - 1))
    y0 = data.draw(st.integers(0, img.height - 1))
    a = Box(x0, y0, data.draw(st.integers(x0 + 1, img.width)), data.draw(st.integers(y0 + 1, img.height)))
    bx0 = data.draw(st.integers(0, a.width - 1))
    by0 = data.draw(st.integers(0, a.height - 1))
    b = Box(bx0, by0, data.draw(st.integers(bx0 + 1, a.width)), data.draw(st.integers(by0 + 1, a.height)))
    assert crop(crop(img, a), b) == crop(img, b.offset(a.x0, a.y0))
