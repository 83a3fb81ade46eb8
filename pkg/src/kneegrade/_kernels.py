"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel exists twice: a numba ``@njit`` version and a vectorized numpy
fallback. The active backend is chosen at import time:

- ``KNEEGRADE_NUMBA=0`` (or ``false``/``off``/``no``) forces the numpy path;
- ``KNEEGRADE_NUMBA=1`` requires numba and raises if it cannot be imported;
- unset/``auto`` uses numba when importable, numpy otherwise.

Both paths implement identical tie-break rules (first hit in row-major
order), so argmin/argmax positions agree; accumulated floating-point sums may
differ in the last ulps between backends. ``benchmarks/bench_kernels.py``
times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("KNEEGRADE_NUMBA", "auto").strip().lower()
if _FLAG in ("0", "false", "off", "no"):
    _WANT_NUMBA = False
elif _FLAG in ("1", "true", "on", "yes"):
    _WANT_NUMBA = True
else:
    _WANT_NUMBA = None  # auto

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _HAVE_NUMBA = False
    if _WANT_NUMBA is True:
        raise ImportError("KNEEGRADE_NUMBA=1 but numba is not importable")

NUMBA_ENABLED = _HAVE_NUMBA and _WANT_NUMBA is not False
BACKEND = "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _np_min_distance_scan(img, templates, stride):
    """Best window by minimum squared L2 distance to any template.

    img: (H, W) float64; templates: (T, k, k) float64.
    Returns (y, x, d2) of the first (row-major) stride-grid window attaining
    the global minimum over all windows and templates.
    """
    k = templates.shape[1]
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k))[::stride, ::stride]
    dmap = np.full(win.shape[:2], np.inf)
    for t in range(templates.shape[0]):
        d = ((win - templates[t]) ** 2).sum(axis=(2, 3))
        np.minimum(dmap, d, out=dmap)
    flat = int(np.argmin(dmap))
    y, x = divmod(flat, dmap.shape[1])
    return y * stride, x * stride, float(dmap[y, x])


def _np_correlate_scan(img, kernel, bias, stride):
    """Best window by maximum affine score kernel.window + bias.

    Returns (y, x, score) of the first (row-major) argmax window on the
    stride grid.
    """
    k = kernel.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k))[::stride, ::stride]
    scores = np.tensordot(win, kernel, axes=([2, 3], [0, 1])) + bias
    flat = int(np.argmax(scores))
    y, x = divmod(flat, scores.shape[1])
    return y * stride, x * stride, float(scores[y, x])


def _np_im2col(xp, k, s, ho, wo):
    """Gather conv patches: xp (N,C,Hp,Wp) -> (N,ho,wo,C*k*k)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::s, ::s]  # (N, C, ho, wo, k, k)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        xp.shape[0], ho, wo, -1
    )


def _np_col2im_add(dcols, n, c, hp, wp, k, s, ho, wo):
    """Scatter-add conv patch gradients back to (N,C,Hp,Wp)."""
    dxp = np.zeros((n, c, hp, wp))
    d6 = dcols.reshape(n, ho, wo, c, k, k)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += (
                d6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return dxp


def _np_maxpool_forward(x, q, t):
    """Max pooling with argmax. Returns (out, arg); arg holds flat row*W+col
    indices into the (H, W) plane, ties resolved to the first element in
    row-major window order."""
    n, c, h, w = x.shape
    ho = (h - q) // t + 1
    wo = (w - q) // t + 1
    parts = np.stack(
        [
            x[:, :, di : di + (ho - 1) * t + 1 : t, dj : dj + (wo - 1) * t + 1 : t]
            for di in range(q)
            for dj in range(q)
        ],
        axis=-1,
    )
    local = parts.argmax(axis=-1)
    out = np.take_along_axis(parts, local[..., None], axis=-1)[..., 0]
    di, dj = local // q, local % q
    rows = np.arange(ho)[:, None] * t + di
    cols = np.arange(wo)[None, :] * t + dj
    arg = (rows * w + cols).astype(np.int64)
    return out, arg


def _np_maxpool_backward(dout, arg, h, w):
    """Scatter pooled gradients to argmax positions."""
    n, c = dout.shape[:2]
    dx = np.zeros((n, c, h * w))
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(dx, (ni, ci, arg), dout)
    return dx.reshape(n, c, h, w)


_NUMPY_IMPL = {
    "min_distance_scan": _np_min_distance_scan,
    "correlate_scan": _np_correlate_scan,
    "im2col": _np_im2col,
    "col2im_add": _np_col2im_add,
    "maxpool_forward": _np_maxpool_forward,
    "maxpool_backward": _np_maxpool_backward,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_min_distance_scan(img, templates, stride):
        h, w = img.shape
        nt, k, _ = templates.shape
        best = np.inf
        best_y = 0
        best_x = 0
        for y in range(0, h - k + 1, stride):
            for x in range(0, w - k + 1, stride):
                dmin = np.inf
                for t in range(nt):
                    s = 0.0
                    for i in range(k):
                        for j in range(k):
                            diff = img[y + i, x + j] - templates[t, i, j]
                            s += diff * diff
                    if s < dmin:
                        dmin = s
                if dmin < best:
                    best = dmin
                    best_y = y
                    best_x = x
        return best_y, best_x, best

    @njit(cache=True)
    def _nb_correlate_scan(img, kernel, bias, stride):
        h, w = img.shape
        k = kernel.shape[0]
        best = -np.inf
        best_y = 0
        best_x = 0
        for y in range(0, h - k + 1, stride):
            for x in range(0, w - k + 1, stride):
                s = bias
                for i in range(k):
                    for j in range(k):
                        s += img[y + i, x + j] * kernel[i, j]
                if s > best:
                    best = s
                    best_y = y
                    best_x = x
        return best_y, best_x, best

    @njit(cache=True)
    def _nb_im2col(xp, k, s, ho, wo):
        n, c, _, _ = xp.shape
        cols = np.empty((n, ho, wo, c * k * k))
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    idx = 0
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                cols[b, y, x, idx] = xp[b, ch, y * s + i, x * s + j]
                                idx += 1
        return cols

    @njit(cache=True)
    def _nb_col2im_add(dcols, n, c, hp, wp, k, s, ho, wo):
        dxp = np.zeros((n, c, hp, wp))
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    idx = 0
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                dxp[b, ch, y * s + i, x * s + j] += dcols[b, y, x, idx]
                                idx += 1
        return dxp

    @njit(cache=True)
    def _nb_maxpool_forward(x, q, t):
        n, c, h, w = x.shape
        ho = (h - q) // t + 1
        wo = (w - q) // t + 1
        out = np.empty((n, c, ho, wo))
        arg = np.empty((n, c, ho, wo), dtype=np.int64)
        for b in range(n):
            for ch in range(c):
                for y in range(ho):
                    for x0 in range(wo):
                        bi = y * t
                        bj = x0 * t
                        mv = x[b, ch, bi, bj]
                        mi = bi * w + bj
                        for i in range(q):
                            for j in range(q):
                                v = x[b, ch, bi + i, bj + j]
                                if v > mv:
                                    mv = v
                                    mi = (bi + i) * w + (bj + j)
                        out[b, ch, y, x0] = mv
                        arg[b, ch, y, x0] = mi
        return out, arg

    @njit(cache=True)
    def _nb_maxpool_backward(dout, arg, h, w):
        n, c, ho, wo = dout.shape
        dx = np.zeros((n, c, h * w))
        for b in range(n):
            for ch in range(c):
                for y in range(ho):
                    for x in range(wo):
                        dx[b, ch, arg[b, ch, y, x]] += dout[b, ch, y, x]
        return dx.reshape(n, c, h, w)

    _NUMBA_IMPL = {
        "min_distance_scan": _nb_min_distance_scan,
        "correlate_scan": _nb_correlate_scan,
        "im2col": _nb_im2col,
        "col2im_add": _nb_col2im_add,
        "maxpool_forward": _nb_maxpool_forward,
        "maxpool_backward": _nb_maxpool_backward,
    }
else:  # pragma: no cover
    _NUMBA_IMPL = None

IMPLEMENTATIONS = {"numpy": _NUMPY_IMPL, "numba": _NUMBA_IMPL}

_active = _NUMBA_IMPL if NUMBA_ENABLED else _NUMPY_IMPL

min_distance_scan = _active["min_distance_scan"]
correlate_scan = _active["correlate_scan"]
im2col = _active["im2col"]
col2im_add = _active["col2im_add"]
maxpool_forward = _active["maxpool_forward"]
maxpool_backward = _active["maxpool_backward"]
