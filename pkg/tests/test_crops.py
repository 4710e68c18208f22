import numpy as np
import pytest

from rgbxtrack.boxes import BBox
from rgbxtrack.harness.crops import Window, crop, crop_pair, search_window, template_pair, window_at
from rgbxtrack.tokenizer import Frame, normalize_image


def test_native_window_is_exact_slice(rng):
    img = rng.random((3, 64, 64))
    win = window_at(30.0, 20.0, 16, (64, 64))
    assert (win.x0, win.y0, win.scale) == (22.0, 12.0, 1.0)
    np.testing.assert_array_equal(crop(img, win), img[:, 12:28, 22:38])


def test_window_clamps_to_frame():
    win = window_at(2.0, 63.0, 32, (64, 64))
    assert (win.x0, win.y0) == (0.0, 32.0)


def test_coordinate_round_trip():
    win = Window(10.0, 5.0, 32, 2.0)
    b = BBox(30.0, 25.0, 8.0, 6.0)
    assert win.to_crop(b) == BBox(10.0, 10.0, 4.0, 3.0)
    back = win.to_frame(win.to_crop(b))
    assert back == b


def test_resampled_window_bilinear(rng):
    # a linear ramp is reproduced exactly by bilinear resampling
    xs = np.arange(64, dtype=float)
    img = np.broadcast_to(xs, (3, 64, 64)).copy()
    win = search_window(BBox(32.0, 32.0, 10.0, 10.0), 16, (64, 64), factor=2.0)
    assert win.scale == pytest.approx(20.0 / 16)
    out = crop(img, win)
    centers = win.x0 + (np.arange(16) + 0.5) * win.scale - 0.5
    np.testing.assert_allclose(out[0, 0], centers, atol=1e-12)


def test_crop_pair_rgb_only(rng):
    f = Frame(rng.random((3, 64, 64)), rng.random((3, 64, 64)), "thermal", BBox(30, 30, 10, 10))
    win = search_window(f.gt_box, 32, f.size)
    rgb, x = crop_pair(f, win, rgb_only=True)
    np.testing.assert_array_equal(rgb, x)
    rgb, x = crop_pair(f, win)
    np.testing.assert_array_equal(x, normalize_image(crop(f.x, win), "thermal", "x"))
    z_rgb, z_x = template_pair(f, f.gt_box, 16)
    assert z_rgb.shape == z_x.shape == (3, 16, 16)
