# Compiled im2col / col2im for conv2d. Must stay numerically identical to _pykernels.
import numpy as np


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    cols_arr = np.zeros((B * Ho * Wo, C * kh * kw), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef Py_ssize_t b, c, oy, ox, i, j, iy, ix, row, col
    for b in range(B):
        for oy in range(Ho):
            for ox in range(Wo):
                row = (b * Ho + oy) * Wo + ox
                for c in range(C):
                    for i in range(kh):
                        iy = oy * stride - pad + i
                        if iy < 0 or iy >= H:
                            continue
                        col = (c * kh + i) * kw
                        for j in range(kw):
                            ix = ox * stride - pad + j
                            if 0 <= ix < W:
                                cols[row, col + j] = x[b, c, iy, ix]
    return cols_arr


def col2im(const double[:, ::1] cols, int B, int C, int H, int W,
           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    dx_arr = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, c, oy, ox, i, j, iy, ix, row, col
    for b in range(B):
        for oy in range(Ho):
            for ox in range(Wo):
                row = (b * Ho + oy) * Wo + ox
                for c in range(C):
                    for i in range(kh):
                        iy = oy * stride - pad + i
                        if iy < 0 or iy >= H:
                            continue
                        col = (c * kh + i) * kw
                        for j in range(kw):
                            ix = ox * stride - pad + j
                            if 0 <= ix < W:
                                dx[b, c, iy, ix] += cols[row, col + j]
    return dx_arr
