"""Pure-Python implementations of the hot kernels.

Every function here mirrors one in ``_core.pyx`` operation for operation, so
the two paths return bit-identical results.
"""

import math

import numpy as np

SENSE_UNKNOWN = -1
SENSE_FREE = 0
SENSE_HIT = 100
# rays whose x and y crossings coincide within this distance pass through a corner
CORNER_EPS = 1e-12


def flood_fill_count(free, start_row, start_col):
    """Number of cells 4-connected to (start_row, start_col) through nonzero ``free`` cells."""
    free = np.asarray(free)
    n_rows, n_cols = free.shape
    if not free[start_row, start_col]:
        return 0
    seen = np.zeros((n_rows, n_cols), dtype=bool)
    seen[start_row, start_col] = True
    stack = [(start_row, start_col)]
    count = 0
    while stack:
        r, c = stack.pop()
        count += 1
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < n_rows and 0 <= cc < n_cols and free[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                stack.append((rr, cc))
    return count


def raycast(occupied, x, y, theta, cell_len, max_range, n_rays):
    """Cast ``n_rays`` evenly spaced rays from world point (x, y).

    x runs along columns and y along rows: cell (floor(y/l), floor(x/l)).
    Returns an int8 grid: -1 unseen, 0 traversed free, 100 first obstacle hit.
    """
    occupied = np.asarray(occupied)
    n = occupied.shape[0]
    out = np.full((n, n), SENSE_UNKNOWN, dtype=np.int8)
    col0 = int(math.floor(x / cell_len))
    row0 = int(math.floor(y / cell_len))
    if not (0 <= row0 < n and 0 <= col0 < n):
        return out
    if occupied[row0, col0]:
        out[row0, col0] = SENSE_HIT
        return out
    out[row0, col0] = SENSE_FREE
    step = 2.0 * math.pi / n_rays
    for k in range(n_rays):
        a = theta + k * step
        dx = math.cos(a)
        dy = math.sin(a)
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
            t_max_x = math.inf
            t_delta_x = math.inf
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
            t_max_y = math.inf
            t_delta_y = math.inf
        while True:
            if abs(t_max_x - t_max_y) <= CORNER_EPS:
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
            if occupied[row, col]:
                out[row, col] = SENSE_HIT
                break
            out[row, col] = SENSE_FREE
    return out


def gae(rewards, values, next_values, dones, gamma, lam):
    """Backward GAE recursion; returns (advantages, returns)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros(T, dtype=np.float64)
    running = 0.0
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values[t] * not_done - values[t]
        running = delta + gamma * lam * not_done * running
        adv[t] = running
    return adv, adv + values
