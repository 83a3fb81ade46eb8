"""The numba and numpy kernel paths must agree: identical argmin/argmax
positions and tie-breaks, matching values up to float accumulation order."""

import numpy as np
import pytest

from kneegrade._kernels import IMPLEMENTATIONS, NUMBA_ENABLED

numpy_impl = IMPLEMENTATIONS["numpy"]
numba_impl = IMPLEMENTATIONS["numba"]

needs_numba = pytest.mark.skipif(numba_impl is None, reason="numba unavailable")


def test_active_backend_consistent():
    assert NUMBA_ENABLED == (numba_impl is not None) or not NUMBA_ENABLED


@needs_numba
@pytest.mark.parametrize("stride", [1, 2, 3])
def test_min_distance_scan_paths_agree(stride):
    rng = np.random.default_rng(0)
    img = rng.random((37, 45))
    templates = rng.random((5, 8, 8))
    a = numpy_impl["min_distance_scan"](img, templates, stride)
    b = numba_impl["min_distance_scan"](img, templates, stride)
    assert a[:2] == b[:2]
    assert abs(a[2] - b[2]) < 1e-9


@needs_numba
@pytest.mark.parametrize("stride", [1, 2])
def test_correlate_scan_paths_agree(stride):
    rng = np.random.default_rng(1)
    img = rng.random((30, 41))
    kernel = rng.normal(size=(7, 7))
    a = numpy_impl["correlate_scan"](img, kernel, 0.25, stride)
    b = numba_impl["correlate_scan"](img, kernel, 0.25, stride)
    assert a[:2] == b[:2]
    assert abs(a[2] - b[2]) < 1e-9


def test_min_distance_scan_matches_brute_force_on_stride_grid():
    rng = np.random.default_rng(2)
    img = rng.random((20, 24))
    templates = rng.random((3, 6, 6))
    y, x, d2 = numpy_impl["min_distance_scan"](img, templates, 2)
    best = (np.inf, None)
    for yy in range(0, 15, 2):
        for xx in range(0, 19, 2):
            for t in templates:
                d = np.sum((img[yy : yy + 6, xx : xx + 6] - t) ** 2)
                if d < best[0]:
                    best = (d, (yy, xx))
    assert (y, x) == best[1]
    assert abs(d2 - best[0]) < 1e-12


@needs_numba
@pytest.mark.parametrize("pad,stride", [(0, 1), (1, 1), (1, 2)])
def test_im2col_col2im_paths_agree(pad, stride):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 9, 11))
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    k = 3
    ho = (xp.shape[2] - k) // stride + 1
    wo = (xp.shape[3] - k) // stride + 1
    a = numpy_impl["im2col"](xp, k, stride, ho, wo)
    b = numba_impl["im2col"](xp, k, stride, ho, wo)
    assert np.array_equal(a, b)
    dcols = rng.normal(size=a.shape)
    da = numpy_impl["col2im_add"](dcols, 2, 3, xp.shape[2], xp.shape[3], k, stride, ho, wo)
    db = numba_impl["col2im_add"](dcols, 2, 3, xp.shape[2], xp.shape[3], k, stride, ho, wo)
    assert np.allclose(da, db, rtol=1e-12, atol=1e-14)


@needs_numba
@pytest.mark.parametrize("q,t", [(2, 2), (3, 3), (3, 2)])
def test_maxpool_paths_agree_including_ties(q, t):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 2, 8, 10))
    # force ties inside some windows to check the tie-break matches
    x[0, 0, :2, :2] = 1.5
    oa, aa = numpy_impl["maxpool_forward"](x, q, t)
    ob, ab = numba_impl["maxpool_forward"](x, q, t)
    assert np.array_equal(oa, ob)
    assert np.array_equal(aa, ab)
    dout = rng.normal(size=oa.shape)
    da = numpy_impl["maxpool_backward"](dout, aa, 8, 10)
    db = numba_impl["maxpool_backward"](dout, ab, 8, 10)
    assert np.allclose(da, db, rtol=1e-12, atol=1e-14)


def test_maxpool_forward_values():
    x = np.array([[[[1.0, 3.0], [2.0, 0.0]]]])
    out, arg = numpy_impl["maxpool_forward"](x, 2, 2)
    assert out[0, 0, 0, 0] == 3.0
    assert arg[0, 0, 0, 0] == 1  # flat index row 0, col 1
