"""Hot inner loops: patch extraction for convolutions and block matching.

Every kernel exists twice, a ``*_nb`` loop version compiled by numba and a
``*_np`` vectorised numpy version. The unsuffixed names dispatch according to
:data:`ifsynth._accel.USE_NUMBA` (im2col excepted). Both versions accumulate
in the same order, so they agree bitwise.

Patch matrices use the row-major layout ``(N*Ho*Wo, C*kh*kw)``: rows are
output positions, columns are (channel, ky, kx) taps.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit


def out_size(n, k, stride):
    return (n - k) // stride + 1


# --------------------------------------------------------------------------
# im2col / col2im


@njit
def _im2col_nb(xp, kh, kw, stride):
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.empty((n * ho * wo, c * kh * kw), dtype=xp.dtype)
    for b in range(n):
        for oy in range(ho):
            y0 = oy * stride
            for ox in range(wo):
                x0 = ox * stride
                row = (b * ho + oy) * wo + ox
                col = 0
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            out[row, col] = xp[b, ch, y0 + i, x0 + j]
                            col += 1
    return out


def _im2col_np(xp, kh, kw, stride):
    n, c, hp, wp = xp.shape
    ho = out_size(hp, kh, stride)
    wo = out_size(wp, kw, stride)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


@njit
def _col2im_nb(cols, n, c, hp, wp, kh, kw, stride):
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    col = (ch * kh + i) * kw + j
                    for oy in range(ho):
                        y = oy * stride + i
                        base = (b * ho + oy) * wo
                        for ox in range(wo):
                            out[b, ch, y, ox * stride + j] += cols[base + ox, col]
    return out


def _col2im_np(cols, n, c, hp, wp, kh, kw, stride):
    ho = out_size(hp, kh, stride)
    wo = out_size(wp, kw, stride)
    c6 = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    ye = stride * (ho - 1) + 1
    xe = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + ye:stride, j:j + xe:stride] += c6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def im2col(xp, kh, kw, stride):
    """Unfold a padded ``(N, C, Hp, Wp)`` array into a patch matrix.

    A pure gather is memory bound; the strided numpy copy beats the loop
    version (see benchmarks/bench_kernels.py), so both backends use it.
    """
    return _im2col_np(xp, kh, kw, stride)


def col2im(cols, shape, kh, kw, stride):
    """Scatter-add a patch matrix back onto an array of ``shape``; adjoint of im2col."""
    n, c, hp, wp = shape
    if USE_NUMBA:
        return _col2im_nb(np.ascontiguousarray(cols), n, c, hp, wp, kh, kw, stride)
    return _col2im_np(cols, n, c, hp, wp, kh, kw, stride)


# --------------------------------------------------------------------------
# block matching


def candidate_offsets(search_range):
    """All displacements in the window, in tie-break order.

    Sorted by L1 norm, then row-major (dy, then dx). Scanning in this order and
    only accepting strictly smaller costs implements the tie rule.
    """
    r = range(-search_range, search_range + 1)
    offs = [(dy, dx) for dy in r for dx in r]
    offs.sort(key=lambda d: (abs(d[0]) + abs(d[1]), d[0], d[1]))
    return np.array(offs, dtype=np.int64).reshape(-1, 2)


@njit
def _block_search_nb(ref, tgt, bs, cand):
    c, h, w = ref.shape
    nby = h // bs
    nbx = w // bs
    out = np.zeros((nby, nbx, 2), dtype=np.int64)
    for by in range(nby):
        for bx in range(nbx):
            best = -1
            bestk = 0
            for k in range(cand.shape[0]):
                dy = cand[k, 0]
                dx = cand[k, 1]
                sad = 0
                for ch in range(c):
                    for yy in range(bs):
                        y = by * bs + yy
                        sy = min(max(y + dy, 0), h - 1)
                        for xx in range(bs):
                            x = bx * bs + xx
                            sx = min(max(x + dx, 0), w - 1)
                            sad += abs(tgt[ch, y, x] - ref[ch, sy, sx])
                    if best >= 0 and sad >= best:
                        break
                if best < 0 or sad < best:
                    best = sad
                    bestk = k
                    if best == 0:
                        break
            out[by, bx, 0] = cand[bestk, 0]
            out[by, bx, 1] = cand[bestk, 1]
    return out


def _block_search_np(ref, tgt, bs, cand):
    c, h, w = ref.shape
    r = int(np.abs(cand).max()) if len(cand) else 0
    refp = np.pad(ref, ((0, 0), (r, r), (r, r)), mode="edge")
    nby, nbx = h // bs, w // bs
    sads = np.empty((len(cand), nby, nbx), dtype=np.int64)
    for k, (dy, dx) in enumerate(cand):
        shifted = refp[:, r + dy:r + dy + h, r + dx:r + dx + w]
        diff = np.abs(tgt - shifted)
        sads[k] = diff.reshape(c, nby, bs, nbx, bs).sum(axis=(0, 2, 4))
    best = np.argmin(sads, axis=0)
    return cand[best]


def block_search(ref, tgt, bs, search_range):
    """Per-block displacement grid ``(H/bs, W/bs, 2)`` minimising SAD."""
    cand = candidate_offsets(search_range)
    ref = np.ascontiguousarray(ref, dtype=np.int32)
    tgt = np.ascontiguousarray(tgt, dtype=np.int32)
    if USE_NUMBA:
        return _block_search_nb(ref, tgt, bs, cand)
    return _block_search_np(ref, tgt, bs, cand)


@njit
def _warp_nb(ref, grid, bs):
    c, h, w = ref.shape
    out = np.empty_like(ref)
    for by in range(grid.shape[0]):
        for bx in range(grid.shape[1]):
            dy = grid[by, bx, 0]
            dx = grid[by, bx, 1]
            for ch in range(c):
                for yy in range(bs):
                    y = by * bs + yy
                    sy = min(max(y + dy, 0), h - 1)
                    for xx in range(bs):
                        x = bx * bs + xx
                        sx = min(max(x + dx, 0), w - 1)
                        out[ch, y, x] = ref[ch, sy, sx]
    return out


def _warp_np(ref, grid, bs):
    c, h, w = ref.shape
    dy = np.repeat(np.repeat(grid[:, :, 0], bs, axis=0), bs, axis=1)
    dx = np.repeat(np.repeat(grid[:, :, 1], bs, axis=0), bs, axis=1)
    yy, xx = np.mgrid[0:h, 0:w]
    sy = np.clip(yy + dy, 0, h - 1)
    sx = np.clip(xx + dx, 0, w - 1)
    return ref[:, sy, sx]


def warp_blocks(ref, grid, bs):
    """Motion-compensated prediction with edge-clamped source coordinates."""
    grid = np.ascontiguousarray(grid, dtype=np.int64)
    if USE_NUMBA:
        return _warp_nb(np.ascontiguousarray(ref), grid, bs)
    return _warp_np(ref, grid, bs)
