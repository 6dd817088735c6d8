"""Hot loop kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``MXFONTPP_NO_NUMBA``: any value
other than empty/``0`` forces the numpy path.  ``use_backend`` switches it
temporarily, which the benchmark and the cross-backend tests rely on.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator


def _default_backend() -> str:
    flag = os.environ.get("MXFONTPP_NO_NUMBA", "").strip()
    if flag not in ("", "0") or not HAVE_NUMBA:
        return "numpy"
    return "numba"


BACKEND = _default_backend()


def get_backend() -> str:
    return BACKEND


@contextlib.contextmanager
def use_backend(name: str):
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous = BACKEND
    BACKEND = name
    try:
        yield
    finally:
        BACKEND = previous


# --------------------------------------------------------------------------
# conv2d (cross-correlation), batched NCHW; both paths lower to one GEMM and
# differ in how patches are gathered and scattered back
# --------------------------------------------------------------------------

def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


@njit(cache=True)
def _im2col_nb(xp, kh, kw, stride, ho, wo):
    n, c, _, _ = xp.shape
    cols = np.empty((n * ho * wo, c * kh * kw), dtype=xp.dtype)
    for b in range(n):
        for r in range(ho):
            for q in range(wo):
                row = (b * ho + r) * wo + q
                k = 0
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            cols[row, k] = xp[b, ic, r * stride + i, q * stride + j]
                            k += 1
    return cols


@njit(cache=True)
def _col2im_nb(gcols, shape, kh, kw, stride, ho, wo):
    n, c, hp, wp = shape
    gxp = np.zeros((n, c, hp, wp), dtype=gcols.dtype)
    for b in range(n):
        for r in range(ho):
            for q in range(wo):
                row = (b * ho + r) * wo + q
                k = 0
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            gxp[b, ic, r * stride + i, q * stride + j] += gcols[row, k]
                            k += 1
    return gxp


def _conv2d_fwd_nb(xp, w, stride, ho, wo):
    n, o = xp.shape[0], w.shape[0]
    cols = _im2col_nb(xp, w.shape[2], w.shape[3], stride, ho, wo)
    y = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def _conv2d_bwd_nb(xp, w, gy, stride):
    n = xp.shape[0]
    o, _, kh, kw = w.shape
    ho, wo = gy.shape[2:]
    cols = _im2col_nb(xp, kh, kw, stride, ho, wo)
    gflat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
    gw = (gflat.T @ cols).reshape(w.shape)
    gcols = np.ascontiguousarray(gflat @ w.reshape(o, -1))
    return _col2im_nb(gcols, xp.shape, kh, kw, stride, ho, wo), gw


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    n, c = xp.shape[:2]
    # (N, Ho, Wo, C, kh, kw) flattened to rows of patches
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def _conv2d_fwd_np(xp, w, stride, ho, wo):
    n = xp.shape[0]
    o = w.shape[0]
    cols = _windows(xp, w.shape[2], w.shape[3], stride, ho, wo)
    y = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def _conv2d_bwd_np(xp, w, gy, stride):
    n, c = xp.shape[:2]
    o, _, kh, kw = w.shape
    ho, wo = gy.shape[2:]
    cols = _windows(xp, kh, kw, stride, ho, wo)
    gflat = gy.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    gw = (gflat.T @ cols).reshape(w.shape)
    gcols = (gflat @ w.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return gxp, gw


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Batched cross-correlation; ``x`` is (N, C, H, W), ``w`` is (O, C, kh, kw)."""
    ho = conv_out_size(x.shape[2], w.shape[2], stride, pad)
    wo = conv_out_size(x.shape[3], w.shape[3], stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x)
    if BACKEND == "numba":
        return _conv2d_fwd_nb(xp, np.ascontiguousarray(w), stride, ho, wo)
    return _conv2d_fwd_np(xp, w, stride, ho, wo)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, gy: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x)
    gy = np.ascontiguousarray(gy)
    if BACKEND == "numba":
        gxp, gw = _conv2d_bwd_nb(xp, np.ascontiguousarray(w), gy, stride)
    else:
        gxp, gw = _conv2d_bwd_np(xp, w, gy, stride)
    if pad:
        gxp = gxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gxp), gw


# --------------------------------------------------------------------------
# stroke rasterization: supersampled coverage of thick line segments
# --------------------------------------------------------------------------

@njit(cache=True)
def _coverage_nb(segs, half_width, size, ss):
    out = np.zeros((size, size))
    nseg = segs.shape[0]
    hw2 = half_width * half_width
    inv = 1.0 / (ss * ss)
    for r in range(size):
        for c in range(size):
            hits = 0
            for a in range(ss):
                py = r + (a + 0.5) / ss
                for b in range(ss):
                    px = c + (b + 0.5) / ss
                    for k in range(nseg):
                        x0 = segs[k, 0]
                        y0 = segs[k, 1]
                        dx = segs[k, 2] - x0
                        dy = segs[k, 3] - y0
                        ll = dx * dx + dy * dy
                        t = 0.0
                        if ll > 0.0:
                            t = ((px - x0) * dx + (py - y0) * dy) / ll
                            if t < 0.0:
                                t = 0.0
                            elif t > 1.0:
                                t = 1.0
                        ex = x0 + t * dx - px
                        ey = y0 + t * dy - py
                        if ex * ex + ey * ey <= hw2:
                            hits += 1
                            break
            out[r, c] = hits * inv
    return out


def _coverage_np(segs, half_width, size, ss):
    offs = (np.arange(ss) + 0.5) / ss
    grid = np.arange(size)
    py = (grid[:, None] + offs[None, :]).reshape(-1)
    px = py.copy()
    sy, sx = np.meshgrid(py, px, indexing="ij")
    pts_x = sx.reshape(-1, 1)
    pts_y = sy.reshape(-1, 1)
    x0, y0, x1, y1 = (segs[:, i][None, :] for i in range(4))
    dx, dy = x1 - x0, y1 - y0
    ll = dx * dx + dy * dy
    safe = np.where(ll > 0.0, ll, 1.0)
    t = np.where(ll > 0.0, ((pts_x - x0) * dx + (pts_y - y0) * dy) / safe, 0.0)
    t = np.clip(t, 0.0, 1.0)
    ex = x0 + t * dx - pts_x
    ey = y0 + t * dy - pts_y
    inside = ((ex * ex + ey * ey) <= half_width * half_width).any(axis=1)
    inside = inside.reshape(size, ss, size, ss)
    return inside.mean(axis=(1, 3))


def stroke_coverage(segs: np.ndarray, half_width: float, size: int, ss: int = 4) -> np.ndarray:
    """Fraction of each pixel's ``ss``×``ss`` subsamples within ``half_width`` of any segment.

    ``segs`` is (S, 4) rows of ``x0, y0, x1, y1`` in pixel units, pixel ``(r, c)``
    spanning ``[c, c+1) × [r, r+1)``.
    """
    segs = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
    if segs.shape[0] == 0:
        return np.zeros((size, size))
    if BACKEND == "numba":
        return _coverage_nb(segs, float(half_width), size, ss)
    return _coverage_np(segs, float(half_width), size, ss)


# --------------------------------------------------------------------------
# sliding-window means (valid positions, stride 1)
# --------------------------------------------------------------------------

@njit(cache=True)
def _window_mean_nb(img, win):
    h, w = img.shape
    oh = h - win + 1
    ow = w - win + 1
    out = np.empty((oh, ow))
    scale = 1.0 / (win * win)
    for r in range(oh):
        for c in range(ow):
            acc = 0.0
            for i in range(win):
                for j in range(win):
                    acc += img[r + i, c + j]
            out[r, c] = acc * scale
    return out


def _window_mean_np(img, win):
    s = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    s[1:, 1:] = np.cumsum(np.cumsum(img, axis=0), axis=1)
    total = s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]
    return total / (win * win)


def window_mean(img: np.ndarray, win: int) -> np.ndarray:
    img = np.ascontiguousarray(img, dtype=np.float64)
    if BACKEND == "numba":
        return _window_mean_nb(img, win)
    return _window_mean_np(img, win)


# --------------------------------------------------------------------------
# linear assignment (square cost matrix, minimisation)
# --------------------------------------------------------------------------

@njit(cache=True)
def _hungarian_nb(cost):
    # shortest augmenting path with potentials; 1-based bookkeeping rows/cols
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign


def linear_assignment(cost: np.ndarray) -> np.ndarray:
    """Column assigned to each row minimising the summed cost of a square matrix."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if BACKEND == "numba":
        return _hungarian_nb(cost)
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(cost)
    out = np.empty(cost.shape[0], dtype=np.int64)
    out[rows] = cols
    return out
