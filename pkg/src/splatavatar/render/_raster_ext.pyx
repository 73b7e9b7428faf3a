# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rasterization kernels.

Same contract as ``_raster_py``: front-to-back compositing in ``order``,
inclusive integer pixel ranges per primitive, float64 accumulation. Pixels
are processed tile by tile; each tile keeps the primitives overlapping it in
depth order, so every pixel still sees exactly the global order.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

DEF TILE = 16


def _tile_lists(long[:, ::1] ranges, long[::1] order, int height, int width):
    cdef int tiles_x = (width + TILE - 1) // TILE
    cdef int tiles_y = (height + TILE - 1) // TILE
    cdef int n_tiles = tiles_x * tiles_y
    cdef cnp.ndarray[long, ndim=1] starts = np.zeros(n_tiles + 1, dtype=np.int64)
    cdef long[::1] s = starts
    cdef Py_ssize_t k, n = order.shape[0]
    cdef long i, tx, ty, x0, x1, y0, y1, t, total
    for k in range(n):
        i = order[k]
        x0 = ranges[i, 0]; x1 = ranges[i, 1]; y0 = ranges[i, 2]; y1 = ranges[i, 3]
        if x0 > x1 or y0 > y1:
            continue
        for ty in range(y0 // TILE, y1 // TILE + 1):
            for tx in range(x0 // TILE, x1 // TILE + 1):
                s[ty * tiles_x + tx + 1] += 1
    for t in range(n_tiles):
        s[t + 1] += s[t]
    total = s[n_tiles]
    cdef cnp.ndarray[long, ndim=1] items = np.empty(total, dtype=np.int64)
    cdef long[::1] it = items
    cdef cnp.ndarray[long, ndim=1] cursor = starts[:n_tiles].copy()
    cdef long[::1] cur = cursor
    for k in range(n):
        i = order[k]
        x0 = ranges[i, 0]; x1 = ranges[i, 1]; y0 = ranges[i, 2]; y1 = ranges[i, 3]
        if x0 > x1 or y0 > y1:
            continue
        for ty in range(y0 // TILE, y1 // TILE + 1):
            for tx in range(x0 // TILE, x1 // TILE + 1):
                t = ty * tiles_x + tx
                it[cur[t]] = i
                cur[t] += 1
    return starts, items


def rasterize_forward(double[:, ::1] means, double[:, ::1] conics, double[::1] opacity, double[:, ::1] colors,
                      long[::1] order, long[:, ::1] ranges, double[::1] background, int height, int width):
    starts_arr, items_arr = _tile_lists(ranges, order, height, width)
    cdef long[::1] starts = starts_arr
    cdef long[::1] items = items_arr
    rgb_arr = np.zeros((height, width, 3), dtype=np.float64)
    alpha_arr = np.zeros((height, width), dtype=np.float64)
    cdef double[:, :, ::1] rgb = rgb_arr
    cdef double[:, ::1] alpha = alpha_arr
    cdef int tiles_x = (width + TILE - 1) // TILE
    cdef int tiles_y = (height + TILE - 1) // TILE
    cdef int tx, ty, px, py
    cdef long k, i, t
    cdef double T, a, g, dx, dy, r0, r1, r2
    with nogil:
        for ty in range(tiles_y):
            for tx in range(tiles_x):
                t = ty * tiles_x + tx
                for py in range(ty * TILE, min((ty + 1) * TILE, height)):
                    for px in range(tx * TILE, min((tx + 1) * TILE, width)):
                        T = 1.0
                        r0 = 0.0; r1 = 0.0; r2 = 0.0
                        for k in range(starts[t], starts[t + 1]):
                            i = items[k]
                            if px < ranges[i, 0] or px > ranges[i, 1] or py < ranges[i, 2] or py > ranges[i, 3]:
                                continue
                            dx = px + 0.5 - means[i, 0]
                            dy = py + 0.5 - means[i, 1]
                            g = exp(-0.5 * (conics[i, 0] * dx * dx + 2.0 * conics[i, 1] * dx * dy
                                            + conics[i, 2] * dy * dy))
                            a = opacity[i] * g
                            r0 = r0 + (T * a) * colors[i, 0]
                            r1 = r1 + (T * a) * colors[i, 1]
                            r2 = r2 + (T * a) * colors[i, 2]
                            T = T * (1.0 - a)
                        rgb[py, px, 0] = r0 + T * background[0]
                        rgb[py, px, 1] = r1 + T * background[1]
                        rgb[py, px, 2] = r2 + T * background[2]
                        alpha[py, px] = 1.0 - T
    return rgb_arr, alpha_arr


def rasterize_backward(double[:, ::1] means, double[:, ::1] conics, double[::1] opacity, double[:, ::1] colors,
                       long[::1] order, long[:, ::1] ranges, double[::1] background, int height, int width,
                       double[:, :, ::1] grad_rgb, double[:, ::1] grad_alpha):
    starts_arr, items_arr = _tile_lists(ranges, order, height, width)
    cdef long[::1] starts = starts_arr
    cdef long[::1] items = items_arr
    cdef Py_ssize_t n = means.shape[0]
    g_means_arr = np.zeros((n, 2), dtype=np.float64)
    g_conics_arr = np.zeros((n, 3), dtype=np.float64)
    g_opacity_arr = np.zeros(n, dtype=np.float64)
    g_colors_arr = np.zeros((n, 3), dtype=np.float64)
    cdef double[:, ::1] g_means = g_means_arr
    cdef double[:, ::1] g_conics = g_conics_arr
    cdef double[::1] g_opacity = g_opacity_arr
    cdef double[:, ::1] g_colors = g_colors_arr

    cdef long max_len = 0
    cdef Py_ssize_t t
    for t in range(starts.shape[0] - 1):
        if starts[t + 1] - starts[t] > max_len:
            max_len = starts[t + 1] - starts[t]
    buf_idx_arr = np.empty(max(max_len, 1), dtype=np.int64)
    buf_arr = np.empty((max(max_len, 1), 3), dtype=np.float64)  # g, a, T
    cdef long[::1] buf_idx = buf_idx_arr
    cdef double[:, ::1] buf = buf_arr

    cdef int tiles_x = (width + TILE - 1) // TILE
    cdef int tiles_y = (height + TILE - 1) // TILE
    cdef int tx, ty, px, py
    cdef long k, i, m, cnt, tt
    cdef double T, a, g, dx, dy, d_a, d_q, gc0, gc1, gc2, ga, b0, b1, b2, ba, w
    with nogil:
        for ty in range(tiles_y):
            for tx in range(tiles_x):
                tt = ty * tiles_x + tx
                for py in range(ty * TILE, min((ty + 1) * TILE, height)):
                    for px in range(tx * TILE, min((tx + 1) * TILE, width)):
                        T = 1.0
                        cnt = 0
                        for k in range(starts[tt], starts[tt + 1]):
                            i = items[k]
                            if px < ranges[i, 0] or px > ranges[i, 1] or py < ranges[i, 2] or py > ranges[i, 3]:
                                continue
                            dx = px + 0.5 - means[i, 0]
                            dy = py + 0.5 - means[i, 1]
                            g = exp(-0.5 * (conics[i, 0] * dx * dx + 2.0 * conics[i, 1] * dx * dy
                                            + conics[i, 2] * dy * dy))
                            a = opacity[i] * g
                            buf_idx[cnt] = i
                            buf[cnt, 0] = g
                            buf[cnt, 1] = a
                            buf[cnt, 2] = T
                            cnt = cnt + 1
                            T = T * (1.0 - a)
                        gc0 = grad_rgb[py, px, 0]
                        gc1 = grad_rgb[py, px, 1]
                        gc2 = grad_rgb[py, px, 2]
                        ga = grad_alpha[py, px]
                        b0 = background[0]; b1 = background[1]; b2 = background[2]
                        ba = 0.0
                        m = cnt - 1
                        while m >= 0:
                            i = buf_idx[m]
                            g = buf[m, 0]
                            a = buf[m, 1]
                            T = buf[m, 2]
                            d_a = T * ((colors[i, 0] - b0) * gc0 + (colors[i, 1] - b1) * gc1
                                       + (colors[i, 2] - b2) * gc2 + ga * (1.0 - ba))
                            w = T * a
                            g_colors[i, 0] += w * gc0
                            g_colors[i, 1] += w * gc1
                            g_colors[i, 2] += w * gc2
                            b0 = a * colors[i, 0] + (1.0 - a) * b0
                            b1 = a * colors[i, 1] + (1.0 - a) * b1
                            b2 = a * colors[i, 2] + (1.0 - a) * b2
                            ba = a + (1.0 - a) * ba
                            g_opacity[i] += d_a * g
                            d_q = d_a * opacity[i] * g * -0.5
                            dx = px + 0.5 - means[i, 0]
                            dy = py + 0.5 - means[i, 1]
                            g_conics[i, 0] += d_q * dx * dx
                            g_conics[i, 1] += d_q * 2.0 * dx * dy
                            g_conics[i, 2] += d_q * dy * dy
                            g_means[i, 0] += d_q * -(2.0 * conics[i, 0] * dx + 2.0 * conics[i, 1] * dy)
                            g_means[i, 1] += d_q * -(2.0 * conics[i, 1] * dx + 2.0 * conics[i, 2] * dy)
                            m = m - 1
    return g_means_arr, g_conics_arr, g_opacity_arr, g_colors_arr
