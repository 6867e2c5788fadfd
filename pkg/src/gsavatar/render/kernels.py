"""Numba kernels for tiled forward/backward rasterization.

Tiles own disjoint pixel blocks, so the forward pass is parallel over tiles
with no synchronization.  The backward pass writes per-(tile, gaussian)
gradient slots and reduces them sequentially in slot order, which keeps
results bit-stable for any thread count.
"""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def bin_tiles(tx0, tx1, ty0, ty1, n_tiles_x, n_tiles_y):
    """Counting-sort gaussians into per-tile lists (CSR layout).

    Inputs are per-sorted-gaussian inclusive tile ranges.  Items within a
    tile keep depth order because gaussians are visited in sorted order.
    """
    m = tx0.shape[0]
    n_tiles = n_tiles_x * n_tiles_y
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for i in range(m):
        for ty in range(ty0[i], ty1[i] + 1):
            for tx in range(tx0[i], tx1[i] + 1):
                counts[ty * n_tiles_x + tx + 1] += 1
    for t in range(1, n_tiles + 1):
        counts[t] += counts[t - 1]
    starts = counts.copy()
    items = np.empty(counts[n_tiles], dtype=np.int64)
    fill = starts[:-1].copy()
    for i in range(m):
        for ty in range(ty0[i], ty1[i] + 1):
            for tx in range(tx0[i], tx1[i] + 1):
                t = ty * n_tiles_x + tx
                items[fill[t]] = i
                fill[t] += 1
    return starts, items


@numba.njit(parallel=True, cache=True)
def forward_kernel(means, conic, rgb, opacity, starts, items,
                   width, height, tile_size, background,
                   cutoff_sq, alpha_skip, alpha_clip,
                   out_raw, out_trans, out_wsum):
    n_tiles_x = (width + tile_size - 1) // tile_size
    n_tiles = starts.shape[0] - 1
    for tile in numba.prange(n_tiles):
        ty = tile // n_tiles_x
        tx = tile % n_tiles_x
        x0 = tx * tile_size
        y0 = ty * tile_size
        x1 = min(width, x0 + tile_size)
        y1 = min(height, y0 + tile_size)
        lo = starts[tile]
        hi = starts[tile + 1]
        for i in range(y0, y1):
            py = i + 0.5
            for j in range(x0, x1):
                px = j + 0.5
                trans = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                wsum = 0.0
                for s in range(lo, hi):
                    p = items[s]
                    dx = px - means[p, 0]
                    dy = py - means[p, 1]
                    maha = (conic[p, 0] * dx * dx
                            + 2.0 * conic[p, 1] * dx * dy
                            + conic[p, 2] * dy * dy)
                    if maha > cutoff_sq:
                        continue
                    alpha = opacity[p] * math.exp(-0.5 * maha)
                    if alpha > alpha_clip:
                        alpha = alpha_clip
                    if alpha < alpha_skip:
                        continue
                    w = alpha * trans
                    cr += rgb[p, 0] * w
                    cg += rgb[p, 1] * w
                    cb += rgb[p, 2] * w
                    wsum += w
                    trans *= 1.0 - alpha
                out_raw[i, j, 0] = cr + background[0] * trans
                out_raw[i, j, 1] = cg + background[1] * trans
                out_raw[i, j, 2] = cb + background[2] * trans
                out_trans[i, j] = trans
                out_wsum[i, j] = wsum


@numba.njit(parallel=True, cache=True)
def backward_kernel(means, conic, rgb, opacity, starts, items,
                    width, height, tile_size, background,
                    cutoff_sq, alpha_skip, alpha_clip,
                    grad_image, raw, trans_map, pair_grads):
    """Per-pixel reverse compositing.

    `raw` and `trans_map` come from the forward kernel (unclamped color and
    final transmittance), so only the reverse scan runs here.  pair_grads
    has one 9-wide slot per (tile, gaussian) item:
    [d_mean_x, d_mean_y, d_conic_a, d_conic_b, d_conic_c,
     d_rgb_r, d_rgb_g, d_rgb_b, d_opacity].
    Gradients are zero where the final color was clamped out of [0, 1].
    """
    n_tiles_x = (width + tile_size - 1) // tile_size
    n_tiles = starts.shape[0] - 1
    for tile in numba.prange(n_tiles):
        ty = tile // n_tiles_x
        tx = tile % n_tiles_x
        x0 = tx * tile_size
        y0 = ty * tile_size
        x1 = min(width, x0 + tile_size)
        y1 = min(height, y0 + tile_size)
        lo = starts[tile]
        hi = starts[tile + 1]
        for i in range(y0, y1):
            py = i + 0.5
            for j in range(x0, x1):
                px = j + 0.5
                cr = raw[i, j, 0]
                cg = raw[i, j, 1]
                cb = raw[i, j, 2]
                trans = trans_map[i, j]
                gr = grad_image[i, j, 0]
                gg = grad_image[i, j, 1]
                gb = grad_image[i, j, 2]
                if cr < 0.0 or cr > 1.0:
                    gr = 0.0
                if cg < 0.0 or cg > 1.0:
                    gg = 0.0
                if cb < 0.0 or cb > 1.0:
                    gb = 0.0
                if gr == 0.0 and gg == 0.0 and gb == 0.0:
                    continue
                # reverse pass: suffix composite S starts at the background
                sr = background[0]
                sg = background[1]
                sb = background[2]
                t_cur = trans
                for s in range(hi - 1, lo - 1, -1):
                    p = items[s]
                    dx = px - means[p, 0]
                    dy = py - means[p, 1]
                    maha = (conic[p, 0] * dx * dx
                            + 2.0 * conic[p, 1] * dx * dy
                            + conic[p, 2] * dy * dy)
                    if maha > cutoff_sq:
                        continue
                    g_exp = math.exp(-0.5 * maha)
                    alpha = opacity[p] * g_exp
                    clipped = alpha > alpha_clip
                    if clipped:
                        alpha = alpha_clip
                    if alpha < alpha_skip:
                        continue
                    t_before = t_cur / (1.0 - alpha)
                    w = alpha * t_before
                    pair_grads[s, 5] += gr * w
                    pair_grads[s, 6] += gg * w
                    pair_grads[s, 7] += gb * w
                    g_alpha = t_before * (gr * (rgb[p, 0] - sr)
                                          + gg * (rgb[p, 1] - sg)
                                          + gb * (rgb[p, 2] - sb))
                    if not clipped:
                        pair_grads[s, 8] += g_alpha * g_exp
                        gm = -0.5 * g_alpha * alpha
                        pair_grads[s, 2] += gm * dx * dx
                        pair_grads[s, 3] += gm * dx * dy
                        pair_grads[s, 4] += gm * dy * dy
                        vx = conic[p, 0] * dx + conic[p, 1] * dy
                        vy = conic[p, 1] * dx + conic[p, 2] * dy
                        pair_grads[s, 0] += -2.0 * gm * vx
                        pair_grads[s, 1] += -2.0 * gm * vy
                    sr = alpha * rgb[p, 0] + (1.0 - alpha) * sr
                    sg = alpha * rgb[p, 1] + (1.0 - alpha) * sg
                    sb = alpha * rgb[p, 2] + (1.0 - alpha) * sb
                    t_cur = t_before


@numba.njit(cache=True)
def reduce_pairs(pair_grads, items, m):
    """Deterministic slot-order reduction into per-sorted-gaussian totals."""
    out = np.zeros((m, 9))
    for s in range(pair_grads.shape[0]):
        p = items[s]
        for c in range(9):
            out[p, c] += pair_grads[s, c]
    return out
