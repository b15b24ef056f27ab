"""Numba kernels for the tile rasterizer: per-pixel front-to-back compositing
and its exact reverse-order adjoint.

Layout: splats are duplicated into per-tile instances sorted by
(tile, camera depth, splat index); `tile_offsets` delimits each tile's slice.
The backward kernel writes gradients into per-instance slots (one owner tile
per slot), so tile-parallel execution is race-free; the caller reduces
instances back to splats.

Channel order: r, g, b, depth, mask, dual_mask, constant-one (accumulated
alpha). Channels are unrolled into scalars in the pixel loops; allocating
arrays there would dominate the runtime.
"""

import numpy as np
from numba import njit, prange

N_CHANNELS = 7


@njit(cache=True)
def build_instances(valid_ids, tx0, tx1, ty0, ty1, n_tiles_x, offsets, inst_tile, inst_splat):
    for k in range(len(valid_ids)):
        pos = offsets[k]
        for ty in range(ty0[k], ty1[k]):
            for tx in range(tx0[k], tx1[k]):
                inst_tile[pos] = ty * n_tiles_x + tx
                inst_splat[pos] = valid_ids[k]
                pos += 1


@njit(parallel=True, fastmath=False, cache=True)
def composite_forward(
    tile_offsets,
    inst_splat,
    mean2d,
    conic,
    q_max,
    alpha_base,
    chans,
    bg,
    width,
    height,
    tile_size,
    n_tiles_x,
    alpha_clamp,
    alpha_skip,
    t_min,
    out,
    final_t,
    n_contrib,
):
    n_tiles = len(tile_offsets) - 1
    bg0, bg1, bg2 = bg[0], bg[1], bg[2]
    for tile in prange(n_tiles):
        start = tile_offsets[tile]
        end = tile_offsets[tile + 1]
        ty = tile // n_tiles_x
        tx = tile % n_tiles_x
        y0 = ty * tile_size
        x0 = tx * tile_size
        y1 = min(y0 + tile_size, height)
        x1 = min(x0 + tile_size, width)
        for py in range(y0, y1):
            cy = py + 0.5
            for px in range(x0, x1):
                cx = px + 0.5
                t = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                c3 = 0.0
                c4 = 0.0
                c5 = 0.0
                c6 = 0.0
                last = 0
                for j in range(start, end):
                    g = inst_splat[j]
                    dx = cx - mean2d[g, 0]
                    dy = cy - mean2d[g, 1]
                    q = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy
                    if q < 0.0 or q > q_max[g]:
                        continue
                    alpha = alpha_base[g] * np.exp(-0.5 * q)
                    if alpha > alpha_clamp:
                        alpha = alpha_clamp
                    if alpha < alpha_skip:
                        continue
                    w = alpha * t
                    c0 += w * chans[g, 0]
                    c1 += w * chans[g, 1]
                    c2 += w * chans[g, 2]
                    c3 += w * chans[g, 3]
                    c4 += w * chans[g, 4]
                    c5 += w * chans[g, 5]
                    c6 += w
                    t *= 1.0 - alpha
                    last = j - start + 1
                    if t < t_min:
                        break
                out[py, px, 0] = c0 + t * bg0
                out[py, px, 1] = c1 + t * bg1
                out[py, px, 2] = c2 + t * bg2
                out[py, px, 3] = c3
                out[py, px, 4] = c4
                out[py, px, 5] = c5
                out[py, px, 6] = c6
                final_t[py, px] = t
                n_contrib[py, px] = last


@njit(parallel=True, fastmath=False, cache=True)
def composite_backward(
    tile_offsets,
    inst_splat,
    mean2d,
    conic,
    q_max,
    alpha_base,
    chans,
    bg,
    width,
    height,
    tile_size,
    n_tiles_x,
    alpha_clamp,
    alpha_skip,
    dl_chan,
    final_t,
    n_contrib,
    g_chan,
    g_alpha,
    g_mean2d,
    g_conic,
):
    n_tiles = len(tile_offsets) - 1
    bg0, bg1, bg2 = bg[0], bg[1], bg[2]
    for tile in prange(n_tiles):
        start = tile_offsets[tile]
        ty = tile // n_tiles_x
        tx = tile % n_tiles_x
        y0 = ty * tile_size
        x0 = tx * tile_size
        y1 = min(y0 + tile_size, height)
        x1 = min(x0 + tile_size, width)
        for py in range(y0, y1):
            cy = py + 0.5
            for px in range(x0, x1):
                cx = px + 0.5
                d0 = dl_chan[py, px, 0]
                d1 = dl_chan[py, px, 1]
                d2 = dl_chan[py, px, 2]
                d3 = dl_chan[py, px, 3]
                d4 = dl_chan[py, px, 4]
                d5 = dl_chan[py, px, 5]
                d6 = dl_chan[py, px, 6]
                if d0 == 0.0 and d1 == 0.0 and d2 == 0.0 and d3 == 0.0 and d4 == 0.0 and d5 == 0.0 and d6 == 0.0:
                    continue
                t_end = final_t[py, px]
                t = t_end
                # s_k = suffix sums of w_j * v_jk over splats behind the current one
                s0 = 0.0
                s1 = 0.0
                s2 = 0.0
                s3 = 0.0
                s4 = 0.0
                s5 = 0.0
                s6 = 0.0
                for j in range(start + n_contrib[py, px] - 1, start - 1, -1):
                    g = inst_splat[j]
                    dx = cx - mean2d[g, 0]
                    dy = cy - mean2d[g, 1]
                    a = conic[g, 0]
                    b = conic[g, 1]
                    c = conic[g, 2]
                    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                    if q < 0.0 or q > q_max[g]:
                        continue
                    gauss = np.exp(-0.5 * q)
                    raw = alpha_base[g] * gauss
                    alpha = raw if raw <= alpha_clamp else alpha_clamp
                    if alpha < alpha_skip:
                        continue
                    t = t / (1.0 - alpha)  # transmittance seen by this splat
                    w = alpha * t
                    v0 = chans[g, 0]
                    v1 = chans[g, 1]
                    v2 = chans[g, 2]
                    v3 = chans[g, 3]
                    v4 = chans[g, 4]
                    v5 = chans[g, 5]
                    inv_om = 1.0 / (1.0 - alpha)
                    dl_dalpha = (
                        d0 * (t * v0 - (s0 + t_end * bg0) * inv_om)
                        + d1 * (t * v1 - (s1 + t_end * bg1) * inv_om)
                        + d2 * (t * v2 - (s2 + t_end * bg2) * inv_om)
                        + d3 * (t * v3 - s3 * inv_om)
                        + d4 * (t * v4 - s4 * inv_om)
                        + d5 * (t * v5 - s5 * inv_om)
                        + d6 * (t - s6 * inv_om)
                    )
                    g_chan[j, 0] += w * d0
                    g_chan[j, 1] += w * d1
                    g_chan[j, 2] += w * d2
                    g_chan[j, 3] += w * d3
                    g_chan[j, 4] += w * d4
                    g_chan[j, 5] += w * d5
                    s0 += w * v0
                    s1 += w * v1
                    s2 += w * v2
                    s3 += w * v3
                    s4 += w * v4
                    s5 += w * v5
                    s6 += w
                    if raw <= alpha_clamp:  # clamped alpha has zero local derivative
                        g_alpha[j] += dl_dalpha * gauss
                        dl_dq = -0.5 * alpha * dl_dalpha
                        g_mean2d[j, 0] -= dl_dq * 2.0 * (a * dx + b * dy)
                        g_mean2d[j, 1] -= dl_dq * 2.0 * (b * dx + c * dy)
                        g_conic[j, 0] += dl_dq * dx * dx
                        g_conic[j, 1] += dl_dq * 2.0 * dx * dy
                        g_conic[j, 2] += dl_dq * dy * dy
