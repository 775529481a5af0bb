"""O(n^2) pairwise kernel sums shared by the bandwidth selectors.

Two interchangeable backends: a numba-compiled parallel path (partitioned over
index pairs) and a chunked numpy path. Results agree with plain serial
summation up to floating-point reassociation (<= 1e-9 relative); tests pin
this. Set KDEMAP_NO_NUMBA=1 to force the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised indirectly
    if os.environ.get("KDEMAP_NO_NUMBA"):
        raise ImportError("numba disabled via KDEMAP_NO_NUMBA")
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

_CHUNK = 256


def _moment_sums_numpy(xs, ys, a, b, c, ea, eb):
    n = xs.size
    out = np.zeros(ea.size)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        dx = xs[start:stop, None] - xs[None, :]
        dy = ys[start:stop, None] - ys[None, :]
        # keep strictly-upper pairs only: column index > row index
        cols = np.arange(n)[None, :]
        rows = np.arange(start, stop)[:, None]
        keep = cols > rows
        q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        ker = np.where(keep, np.exp(-0.5 * q), 0.0)
        for k in range(ea.size):
            out[k] += float(np.sum(dx ** ea[k] * dy ** eb[k] * ker))
    return out


def _ucv_sums_numpy(xs, ys, a, b, c):
    n = xs.size
    s_h = 0.0
    s_2h = 0.0
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        dx = xs[start:stop, None] - xs[None, :]
        dy = ys[start:stop, None] - ys[None, :]
        cols = np.arange(n)[None, :]
        rows = np.arange(start, stop)[:, None]
        keep = cols > rows
        q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        e4 = np.where(keep, np.exp(-0.25 * q), 0.0)
        s_2h += float(e4.sum())
        s_h += float((e4 * e4).sum())
    return s_h, s_2h


if HAVE_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _moment_sums_numba(xs, ys, a, b, c, ea, eb):  # pragma: no cover
        n = xs.size
        nm = ea.size
        out = np.zeros((n, nm))
        for i in prange(n - 1):
            xi = xs[i]
            yi = ys[i]
            for j in range(i + 1, n):
                dx = xi - xs[j]
                dy = yi - ys[j]
                q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                ker = np.exp(-0.5 * q)
                px2 = dx * dx
                px4 = px2 * px2
                py2 = dy * dy
                py4 = py2 * py2
                px = (1.0, dx, px2, px2 * dx, px4, px4 * dx, px4 * px2)
                py = (1.0, dy, py2, py2 * dy, py4, py4 * dy, py4 * py2)
                for k in range(nm):
                    out[i, k] += px[ea[k]] * py[eb[k]] * ker
        return out.sum(axis=0)

    @njit(parallel=True, fastmath=True, cache=True)
    def _ucv_sums_numba(xs, ys, a, b, c):  # pragma: no cover
        n = xs.size
        s_h = 0.0
        s_2h = 0.0
        for i in prange(n - 1):
            acc1 = 0.0
            acc2 = 0.0
            xi = xs[i]
            yi = ys[i]
            for j in range(i + 1, n):
                dx = xi - xs[j]
                dy = yi - ys[j]
                q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                e4 = np.exp(-0.25 * q)
                acc2 += e4
                acc1 += e4 * e4
            s_h += acc1
            s_2h += acc2
        return s_h, s_2h


def kernel_moment_sums(xs, ys, a, b, c, ea, eb) -> np.ndarray:
    """sum over pairs i<j of dx^ea[k] * dy^eb[k] * exp(-q/2) for each k,
    with q the quadratic form of [a b; b c] at (dx, dy) = X_i - X_j.
    """
    xs = np.ascontiguousarray(xs, dtype=float)
    ys = np.ascontiguousarray(ys, dtype=float)
    ea = np.asarray(ea, dtype=np.int64)
    eb = np.asarray(eb, dtype=np.int64)
    if HAVE_NUMBA:
        return _moment_sums_numba(xs, ys, float(a), float(b), float(c), ea, eb)
    return _moment_sums_numpy(xs, ys, float(a), float(b), float(c), ea, eb)


def ucv_pair_sums(xs, ys, a, b, c) -> tuple[float, float]:
    """(sum exp(-q/2), sum exp(-q/4)) over pairs i<j; q as above for H^-1."""
    xs = np.ascontiguousarray(xs, dtype=float)
    ys = np.ascontiguousarray(ys, dtype=float)
    if HAVE_NUMBA:
        s_h, s_2h = _ucv_sums_numba(xs, ys, float(a), float(b), float(c))
    else:
        s_h, s_2h = _ucv_sums_numpy(xs, ys, float(a), float(b), float(c))
    return float(s_h), float(s_2h)
