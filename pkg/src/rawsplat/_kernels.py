"""Numba kernels for tile-based and brute-force splat compositing.

Determinism contract: every kernel is single-threaded, compiled without
fastmath, and visits splats in the caller-provided depth order with serial
accumulation. The per-pixel arithmetic is written identically in the tiled,
brute-force, and backward kernels (same expressions, same sequencing) so the
paths agree bit for bit whenever they evaluate the same splat set per pixel.

Compositing semantics per pixel, front to back:
  a     = min(opacity * exp(power), 1)     power = -x^T conic x / 2 <= 0
  skip  if power > 0 (numerical guard) or a < alpha_threshold
  out  += contribution * a * T, then T *= (1 - a)
  stop  after the update once T < transmittance_floor
A splat whose weight lands exactly at full coverage therefore still
contributes before termination.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def count_tile_entries(tile_rects, ntx, counts):
    """tile_rects: (M, 4) inclusive tile bounds tx0, tx1, ty0, ty1."""
    for m in range(tile_rects.shape[0]):
        tx0, tx1, ty0, ty1 = tile_rects[m, 0], tile_rects[m, 1], tile_rects[m, 2], tile_rects[m, 3]
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * ntx + tx] += 1


@njit(cache=True)
def fill_tile_entries(tile_rects, ntx, cursors, entries):
    """Scatter splat indices into per-tile lists; iterating splats in depth
    order keeps every tile list depth-ordered."""
    for m in range(tile_rects.shape[0]):
        tx0, tx1, ty0, ty1 = tile_rects[m, 0], tile_rects[m, 1], tile_rects[m, 2], tile_rects[m, 3]
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                t = ty * ntx + tx
                entries[cursors[t]] = m
                cursors[t] += 1


@njit(cache=True)
def render_tiles(
    width,
    height,
    tile_size,
    ntx,
    nty,
    offsets,
    entries,
    means2d,
    conics,
    colors,
    opacities,
    depths,
    alpha_threshold,
    t_floor,
    out_rgb,
    out_alpha,
    out_depth,
):
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            start, end = offsets[t], offsets[t + 1]
            y0 = ty * tile_size
            x0 = tx * tile_size
            y1 = min(y0 + tile_size, height)
            x1 = min(x0 + tile_size, width)
            for py in range(y0, y1):
                for px in range(x0, x1):
                    trans = 1.0
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    aacc = 0.0
                    dacc = 0.0
                    for e in range(start, end):
                        i = entries[e]
                        dx = means2d[i, 0] - px
                        dy = means2d[i, 1] - py
                        power = (
                            -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy)
                            - conics[i, 1] * dx * dy
                        )
                        if power > 0.0:
                            continue
                        a = opacities[i] * np.exp(power)
                        if a > 1.0:
                            a = 1.0
                        if a < alpha_threshold:
                            continue
                        r += colors[i, 0] * a * trans
                        g += colors[i, 1] * a * trans
                        b += colors[i, 2] * a * trans
                        aacc += a * trans
                        dacc += depths[i] * a * trans
                        trans *= 1.0 - a
                        if trans < t_floor:
                            break
                    out_rgb[py, px, 0] = r
                    out_rgb[py, px, 1] = g
                    out_rgb[py, px, 2] = b
                    out_alpha[py, px] = aacc
                    if aacc > 1e-12:
                        out_depth[py, px] = dacc / aacc


@njit(cache=True)
def render_bruteforce(
    width,
    height,
    means2d,
    conics,
    colors,
    opacities,
    depths,
    alpha_threshold,
    t_floor,
    out_rgb,
    out_alpha,
    out_depth,
):
    """Reference path: every pixel walks the full depth-ordered splat list
    with no tiling and no footprint truncation — only the alpha-threshold and
    transmittance-floor rules are kept."""
    n = means2d.shape[0]
    for py in range(height):
        for px in range(width):
            trans = 1.0
            r = 0.0
            g = 0.0
            b = 0.0
            aacc = 0.0
            dacc = 0.0
            for i in range(n):
                dx = means2d[i, 0] - px
                dy = means2d[i, 1] - py
                power = (
                    -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy)
                    - conics[i, 1] * dx * dy
                )
                if power > 0.0:
                    continue
                a = opacities[i] * np.exp(power)
                if a > 1.0:
                    a = 1.0
                if a < alpha_threshold:
                    continue
                r += colors[i, 0] * a * trans
                g += colors[i, 1] * a * trans
                b += colors[i, 2] * a * trans
                aacc += a * trans
                dacc += depths[i] * a * trans
                trans *= 1.0 - a
                if trans < t_floor:
                    break
            out_rgb[py, px, 0] = r
            out_rgb[py, px, 1] = g
            out_rgb[py, px, 2] = b
            out_alpha[py, px] = aacc
            if aacc > 1e-12:
                out_depth[py, px] = dacc / aacc


@njit(cache=True)
def backward_tiles(
    width,
    height,
    tile_size,
    ntx,
    nty,
    offsets,
    entries,
    means2d,
    conics,
    colors,
    opacities,
    alpha_threshold,
    t_floor,
    grad_rgb,
    grad_alpha,
    stack_idx,
    stack_a,
    stack_t,
    d_mean2d,
    d_conic,
    d_color,
    d_opacity,
    touched,
):
    """Replay the forward composite per pixel (same skip and stop rules), then
    sweep the surviving splats back to front.

    The suffix accumulators s* hold the already-composited color behind the
    current splat, normalized by its transmittance, so
      dL/da_i = sum_ch grad_ch * T_i * (color_i - s_ch)
    without ever dividing by (1 - a); the recurrence s <- c*a + (1-a)*s is
    exact even when a reaches 1.
    """
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            start, end = offsets[t], offsets[t + 1]
            if start == end:
                continue
            y0 = ty * tile_size
            x0 = tx * tile_size
            y1 = min(y0 + tile_size, height)
            x1 = min(x0 + tile_size, width)
            for py in range(y0, y1):
                for px in range(x0, x1):
                    gr = grad_rgb[py, px, 0]
                    gg = grad_rgb[py, px, 1]
                    gb = grad_rgb[py, px, 2]
                    ga = grad_alpha[py, px]
                    if gr == 0.0 and gg == 0.0 and gb == 0.0 and ga == 0.0:
                        continue
                    trans = 1.0
                    m = 0
                    for e in range(start, end):
                        i = entries[e]
                        dx = means2d[i, 0] - px
                        dy = means2d[i, 1] - py
                        power = (
                            -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy)
                            - conics[i, 1] * dx * dy
                        )
                        if power > 0.0:
                            continue
                        a = opacities[i] * np.exp(power)
                        if a > 1.0:
                            a = 1.0
                        if a < alpha_threshold:
                            continue
                        stack_idx[m] = i
                        stack_a[m] = a
                        stack_t[m] = trans
                        m += 1
                        trans *= 1.0 - a
                        if trans < t_floor:
                            break
                    s0 = 0.0
                    s1 = 0.0
                    s2 = 0.0
                    sa = 0.0
                    for j in range(m - 1, -1, -1):
                        i = stack_idx[j]
                        a = stack_a[j]
                        tj = stack_t[j]
                        c0 = colors[i, 0]
                        c1 = colors[i, 1]
                        c2 = colors[i, 2]
                        dl_da = (
                            gr * tj * (c0 - s0)
                            + gg * tj * (c1 - s1)
                            + gb * tj * (c2 - s2)
                            + ga * tj * (1.0 - sa)
                        )
                        d_color[i, 0] += gr * a * tj
                        d_color[i, 1] += gg * a * tj
                        d_color[i, 2] += gb * a * tj
                        dx = means2d[i, 0] - px
                        dy = means2d[i, 1] - py
                        power = (
                            -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy)
                            - conics[i, 1] * dx * dy
                        )
                        gauss = np.exp(power)
                        d_opacity[i] += dl_da * gauss
                        dl_dpower = dl_da * opacities[i] * gauss
                        d_conic[i, 0] += -0.5 * dx * dx * dl_dpower
                        d_conic[i, 1] += -dx * dy * dl_dpower
                        d_conic[i, 2] += -0.5 * dy * dy * dl_dpower
                        d_mean2d[i, 0] += -(conics[i, 0] * dx + conics[i, 1] * dy) * dl_dpower
                        d_mean2d[i, 1] += -(conics[i, 1] * dx + conics[i, 2] * dy) * dl_dpower
                        touched[i] += 1
                        s0 = c0 * a + (1.0 - a) * s0
                        s1 = c1 * a + (1.0 - a) * s1
                        s2 = c2 * a + (1.0 - a) * s2
                        sa = a + (1.0 - a) * sa
