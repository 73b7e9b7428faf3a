"""Pure-numpy rasterization kernels (fallback for the compiled extension).

Both backends share the same contract: primitives are composited in the
given ``order`` (front to back); primitive ``i`` touches the pixels whose
integer coordinates lie in ``ranges[i] = (x0, x1, y0, y1)`` inclusive, with
pixel centers at ``(x + 0.5, y + 0.5)``. Accumulation is in float64.
"""

from __future__ import annotations

import numpy as np


def _patch(i, means, conics, ranges):
    x0, x1, y0, y1 = ranges[i]
    if x0 > x1 or y0 > y1:
        return None
    dx = (np.arange(x0, x1 + 1) + 0.5 - means[i, 0])[None, :]
    dy = (np.arange(y0, y1 + 1) + 0.5 - means[i, 1])[:, None]
    a, b, c = conics[i]
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    return (slice(y0, y1 + 1), slice(x0, x1 + 1)), dx, dy, np.exp(-0.5 * q)


def rasterize_forward(means, conics, opacity, colors, order, ranges, background, height, width):
    rgb = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    for i in order:
        hit = _patch(i, means, conics, ranges)
        if hit is None:
            continue
        sl, _, _, g = hit
        a = opacity[i] * g
        t = trans[sl]
        rgb[sl] += (t * a)[..., None] * colors[i]
        trans[sl] = t * (1.0 - a)
    rgb += trans[..., None] * background
    return rgb, 1.0 - trans


def rasterize_backward(means, conics, opacity, colors, order, ranges, background, height, width, grad_rgb, grad_alpha):
    n = len(means)
    g_means = np.zeros((n, 2))
    g_conics = np.zeros((n, 3))
    g_opacity = np.zeros(n)
    g_colors = np.zeros((n, 3))

    # replay the forward pass to record each primitive's incoming transmittance
    trans = np.ones((height, width))
    saved = []
    for i in order:
        hit = _patch(i, means, conics, ranges)
        if hit is None:
            continue
        sl, dx, dy, g = hit
        a = opacity[i] * g
        t = trans[sl]
        saved.append((i, sl, dx, dy, g, a, t.copy()))
        trans[sl] = t * (1.0 - a)

    # back to front: behind[...] is what a pixel shows from just behind the current primitive
    behind = np.broadcast_to(np.asarray(background, dtype=np.float64), (height, width, 3)).copy()
    behind_a = np.zeros((height, width))
    for i, sl, dx, dy, g, a, t in reversed(saved):
        gc = grad_rgb[sl]
        ga = grad_alpha[sl]
        rb = behind[sl]
        rba = behind_a[sl]
        d_a = t * (((colors[i] - rb) * gc).sum(axis=-1) + ga * (1.0 - rba))
        g_colors[i] += ((t * a)[..., None] * gc).reshape(-1, 3).sum(axis=0)
        behind[sl] = a[..., None] * colors[i] + (1.0 - a)[..., None] * rb
        behind_a[sl] = a + (1.0 - a) * rba
        g_opacity[i] += (d_a * g).sum()
        d_q = d_a * opacity[i] * g * -0.5
        ca, cb, cc = conics[i]
        g_conics[i, 0] += (d_q * dx * dx).sum()
        g_conics[i, 1] += (d_q * 2.0 * dx * dy).sum()
        g_conics[i, 2] += (d_q * dy * dy).sum()
        g_means[i, 0] += (d_q * -(2.0 * ca * dx + 2.0 * cb * dy)).sum()
        g_means[i, 1] += (d_q * -(2.0 * cb * dx + 2.0 * cc * dy)).sum()
    return g_means, g_conics, g_opacity, g_colors
