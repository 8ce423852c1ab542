# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see _fallback.py for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, floor, fabs, INFINITY, M_PI

cnp.import_array()

DEF SENSE_UNKNOWN = -1
DEF SENSE_FREE = 0
DEF SENSE_HIT = 100
DEF CORNER_EPS = 1e-12


def flood_fill_count(free, Py_ssize_t start_row, Py_ssize_t start_col):
    cdef const cnp.uint8_t[:, :] grid = np.ascontiguousarray(free, dtype=np.uint8)
    cdef Py_ssize_t n_rows = grid.shape[0], n_cols = grid.shape[1]
    if not grid[start_row, start_col]:
        return 0
    cdef cnp.uint8_t[:, :] seen = np.zeros((n_rows, n_cols), dtype=np.uint8)
    cdef cnp.intp_t[:] stack = np.empty(n_rows * n_cols, dtype=np.intp)
    cdef Py_ssize_t top = 0, count = 0, idx, r, c, rr, cc, k
    cdef int dr[4]
    cdef int dc[4]
    dr[0] = -1; dr[1] = 1; dr[2] = 0; dr[3] = 0
    dc[0] = 0; dc[1] = 0; dc[2] = -1; dc[3] = 1
    seen[start_row, start_col] = 1
    stack[0] = start_row * n_cols + start_col
    top = 1
    while top > 0:
        top -= 1
        idx = stack[top]
        r = idx // n_cols
        c = idx % n_cols
        count += 1
        for k in range(4):
            rr = r + dr[k]
            cc = c + dc[k]
            if 0 <= rr < n_rows and 0 <= cc < n_cols and grid[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = 1
                stack[top] = rr * n_cols + cc
                top += 1
    return count


def raycast(occupied, double x, double y, double theta, double cell_len,
            double max_range, int n_rays):
    cdef const cnp.uint8_t[:, :] occ = np.ascontiguousarray(occupied, dtype=np.uint8)
    cdef Py_ssize_t n = occ.shape[0]
    out_arr = np.full((n, n), SENSE_UNKNOWN, dtype=np.int8)
    cdef cnp.int8_t[:, :] out = out_arr
    cdef Py_ssize_t col0 = <Py_ssize_t>floor(x / cell_len)
    cdef Py_ssize_t row0 = <Py_ssize_t>floor(y / cell_len)
    if not (0 <= row0 < n and 0 <= col0 < n):
        return out_arr
    if occ[row0, col0]:
        out[row0, col0] = SENSE_HIT
        return out_arr
    out[row0, col0] = SENSE_FREE
    cdef double step = 2.0 * M_PI / n_rays
    cdef double a, dx, dy, t_max_x, t_max_y, t_delta_x, t_delta_y, t_enter
    cdef Py_ssize_t row, col, step_r, step_c
    cdef int k
    for k in range(n_rays):
        a = theta + k * step
        dx = cos(a)
        dy = sin(a)
        col = col0
        row = row0
        if dx > 0.0:
            step_c = 1
            t_max_x = ((col + 1) * cell_len - x) / dx
            t_delta_x = cell_len / dx
        elif dx < 0.0:
            step_c = -1
            t_max_x = (col * cell_len - x) / dx
            t_delta_x = -cell_len / dx
        else:
            step_c = 0
            t_max_x = INFINITY
            t_delta_x = INFINITY
        if dy > 0.0:
            step_r = 1
            t_max_y = ((row + 1) * cell_len - y) / dy
            t_delta_y = cell_len / dy
        elif dy < 0.0:
            step_r = -1
            t_max_y = (row * cell_len - y) / dy
            t_delta_y = -cell_len / dy
        else:
            step_r = 0
            t_max_y = INFINITY
            t_delta_y = INFINITY
        while True:
            if fabs(t_max_x - t_max_y) <= CORNER_EPS:
                # through a corner: the two side cells are only touched at a point
                t_enter = t_max_x
                t_max_x += t_delta_x
                t_max_y += t_delta_y
                col += step_c
                row += step_r
            elif t_max_x < t_max_y:
                t_enter = t_max_x
                t_max_x += t_delta_x
                col += step_c
            else:
                t_enter = t_max_y
                t_max_y += t_delta_y
                row += step_r
            if t_enter > max_range:
                break
            if row < 0 or row >= n or col < 0 or col >= n:
                break
            if occ[row, col]:
                out[row, col] = SENSE_HIT
                break
            out[row, col] = SENSE_FREE
    return out_arr


def gae(rewards, values, next_values, dones, double gamma, double lam):
    cdef const double[:] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const double[:] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:] nv = np.ascontiguousarray(next_values, dtype=np.float64)
    cdef const double[:] d = np.ascontiguousarray(dones, dtype=np.float64)
    cdef Py_ssize_t T = r.shape[0], t
    adv_arr = np.zeros(T, dtype=np.float64)
    cdef double[:] adv = adv_arr
    cdef double running = 0.0, not_done, delta
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - d[t]
        delta = r[t] + gamma * nv[t] * not_done - v[t]
        running = delta + gamma * lam * not_done * running
        adv[t] = running
    return adv_arr, adv_arr + np.asarray(v)
