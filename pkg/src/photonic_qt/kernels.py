"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``PHOTONIC_QT_NUMBA=0`` in the environment before import to force the
numpy implementations. Both variants are always importable under their
suffixed names (``*_nb`` / ``*_np``) so they can be compared directly; the
unsuffixed names are bound to whichever path is active.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FLAG = os.environ.get("PHOTONIC_QT_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in {"0", "false", "no", "off"}


def _njit(fn):
    if not NUMBA_AVAILABLE:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# Ryser permanent, Gray-code ordering
# --------------------------------------------------------------------------


@_njit
def _permanent_batch_nb(mats):
    n_mat = mats.shape[0]
    n = mats.shape[1]
    out = np.zeros(n_mat, dtype=mats.dtype)
    if n == 0:
        out[:] = 1
        return out
    row_sums = np.zeros(n, dtype=mats.dtype)
    for b in range(n_mat):
        a = mats[b]
        row_sums[:] = 0
        total = out[b]
        sign = -1.0
        gray_prev = 0
        for k in range(1, 1 << n):
            gray = k ^ (k >> 1)
            diff = gray ^ gray_prev
            j = 0
            while (diff >> j) & 1 == 0:
                j += 1
            if gray & diff:
                for i in range(n):
                    row_sums[i] += a[i, j]
            else:
                for i in range(n):
                    row_sums[i] -= a[i, j]
            prod = row_sums[0]
            for i in range(1, n):
                prod *= row_sums[i]
            total += sign * prod
            sign = -sign
            gray_prev = gray
        if n % 2 == 1:
            total = -total
        out[b] = total
    return out


def _permanent_batch_np(mats):
    mats = np.asarray(mats)
    n_mat, n = mats.shape[0], mats.shape[1]
    if n == 0:
        return np.ones(n_mat, dtype=mats.dtype)
    row_sums = np.zeros((n_mat, n), dtype=mats.dtype)
    total = np.zeros(n_mat, dtype=mats.dtype)
    sign = -1.0
    gray_prev = 0
    for k in range(1, 1 << n):
        gray = k ^ (k >> 1)
        diff = gray ^ gray_prev
        j = diff.bit_length() - 1
        if gray & diff:
            row_sums += mats[:, :, j]
        else:
            row_sums -= mats[:, :, j]
        total += sign * np.prod(row_sums, axis=1)
        sign = -sign
        gray_prev = gray
    if n % 2 == 1:
        total = -total
    return total


# --------------------------------------------------------------------------
# MPS chain contraction: h_{k+1} = h_k @ (sum_s f[:, k, s] * cores[k, s])
# --------------------------------------------------------------------------


@_njit
def _mps_chain_forward_nb(cores, feats, h0):
    n_sites, _, chi, _ = cores.shape
    m = feats.shape[0]
    hs = np.empty((m, n_sites + 1, chi))
    mat = np.empty((chi, chi))
    for i in range(m):
        for a in range(chi):
            hs[i, 0, a] = h0[a]
        for k in range(n_sites):
            f0 = feats[i, k, 0]
            f1 = feats[i, k, 1]
            for a in range(chi):
                for c in range(chi):
                    mat[a, c] = f0 * cores[k, 0, a, c] + f1 * cores[k, 1, a, c]
            for c in range(chi):
                acc = 0.0
                for a in range(chi):
                    acc += hs[i, k, a] * mat[a, c]
                hs[i, k + 1, c] = acc
    return hs


def _mps_chain_forward_np(cores, feats, h0):
    n_sites, _, chi, _ = cores.shape
    m = feats.shape[0]
    hs = np.empty((m, n_sites + 1, chi))
    hs[:, 0, :] = h0
    for k in range(n_sites):
        mats = (
            feats[:, k, 0, None, None] * cores[k, 0][None]
            + feats[:, k, 1, None, None] * cores[k, 1][None]
        )
        hs[:, k + 1, :] = np.einsum("ma,mac->mc", hs[:, k, :], mats)
    return hs


@_njit
def _mps_chain_backward_nb(cores, feats, hs, g_out):
    n_sites, _, chi, _ = cores.shape
    m = feats.shape[0]
    g_cores = np.zeros(cores.shape)
    g_feats = np.zeros(feats.shape)
    g = np.empty(chi)
    g_new = np.empty(chi)
    for i in range(m):
        for c in range(chi):
            g[c] = g_out[i, c]
        for k in range(n_sites - 1, -1, -1):
            f0 = feats[i, k, 0]
            f1 = feats[i, k, 1]
            d0 = 0.0
            d1 = 0.0
            for a in range(chi):
                h_a = hs[i, k, a]
                acc = 0.0
                for c in range(chi):
                    g_cores[k, 0, a, c] += f0 * h_a * g[c]
                    g_cores[k, 1, a, c] += f1 * h_a * g[c]
                    d0 += h_a * cores[k, 0, a, c] * g[c]
                    d1 += h_a * cores[k, 1, a, c] * g[c]
                    acc += (f0 * cores[k, 0, a, c] + f1 * cores[k, 1, a, c]) * g[c]
                g_new[a] = acc
            g_feats[i, k, 0] = d0
            g_feats[i, k, 1] = d1
            for a in range(chi):
                g[a] = g_new[a]
    return g_cores, g_feats


def _mps_chain_backward_np(cores, feats, hs, g_out):
    n_sites = cores.shape[0]
    g_cores = np.zeros(cores.shape)
    g_feats = np.zeros(feats.shape)
    g = np.array(g_out, dtype=np.float64, copy=True)
    for k in range(n_sites - 1, -1, -1):
        h = hs[:, k, :]
        for s in range(2):
            g_cores[k, s] = np.einsum("m,ma,mc->ac", feats[:, k, s], h, g)
            g_feats[:, k, s] = np.einsum("ma,ac,mc->m", h, cores[k, s], g)
        mats = (
            feats[:, k, 0, None, None] * cores[k, 0][None]
            + feats[:, k, 1, None, None] * cores[k, 1][None]
        )
        g = np.einsum("mac,mc->ma", mats, g)
    return g_cores, g_feats


# --------------------------------------------------------------------------
# valid 2-D convolution (stride 1) and 2x2 max pooling, NCHW layout
# --------------------------------------------------------------------------


@_njit
def _conv2d_forward_nb(x, w, b):
    n_batch, n_in, height, width = x.shape
    n_out, _, k, _ = w.shape
    ho, wo = height - k + 1, width - k + 1
    out = np.empty((n_batch, n_out, ho, wo))
    for n in range(n_batch):
        for o in range(n_out):
            out[n, o, :, :] = b[o]
            for c in range(n_in):
                for i in range(k):
                    for j in range(k):
                        wt = w[o, c, i, j]
                        for r in range(ho):
                            for q in range(wo):
                                out[n, o, r, q] += wt * x[n, c, r + i, q + j]
    return out


def _conv2d_forward_np(x, w, b):
    k = w.shape[-1]
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # (B, C, H', W', k, k)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, H', W', O)
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None]


@_njit
def _conv2d_backward_nb(dout, x, w, need_dx):
    n_batch, n_in, height, width = x.shape
    n_out, _, k, _ = w.shape
    ho, wo = height - k + 1, width - k + 1
    dw = np.zeros(w.shape)
    db = np.zeros(n_out)
    dx = np.zeros(x.shape if need_dx else (0, 0, 0, 0))
    for n in range(n_batch):
        for o in range(n_out):
            acc = 0.0
            for r in range(ho):
                for q in range(wo):
                    acc += dout[n, o, r, q]
            db[o] += acc
            for c in range(n_in):
                for i in range(k):
                    for j in range(k):
                        acc = 0.0
                        wt = w[o, c, i, j]
                        for r in range(ho):
                            for q in range(wo):
                                g = dout[n, o, r, q]
                                acc += g * x[n, c, r + i, q + j]
                                if need_dx:
                                    dx[n, c, r + i, q + j] += g * wt
                        dw[o, c, i, j] += acc
    return dw, db, dx


def _conv2d_backward_np(dout, x, w, need_dx):
    k = w.shape[-1]
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, k, k)
    db = dout.sum(axis=(0, 2, 3))
    dx = np.zeros((0, 0, 0, 0))
    if need_dx:
        padded = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        dwin = sliding_window_view(padded, (k, k), axis=(2, 3))  # (B, O, H, W, k, k)
        dx = np.tensordot(dwin, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
    return dw, db, dx


@_njit
def _maxpool2_forward_nb(x):
    n_batch, n_ch, height, width = x.shape
    h2, w2 = height // 2, width // 2
    out = np.empty((n_batch, n_ch, h2, w2))
    arg = np.empty((n_batch, n_ch, h2, w2), dtype=np.int64)
    for n in range(n_batch):
        for c in range(n_ch):
            for r in range(h2):
                for q in range(w2):
                    best = x[n, c, 2 * r, 2 * q]
                    idx = 0
                    for t in range(1, 4):
                        val = x[n, c, 2 * r + t // 2, 2 * q + t % 2]
                        if val > best:
                            best = val
                            idx = t
                    out[n, c, r, q] = best
                    arg[n, c, r, q] = idx
    return out, arg


def _maxpool2_forward_np(x):
    n_batch, n_ch, height, width = x.shape
    h2, w2 = height // 2, width // 2
    blocks = x[:, :, : 2 * h2, : 2 * w2].reshape(n_batch, n_ch, h2, 2, w2, 2)
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n_batch, n_ch, h2, w2, 4)
    arg = flat.argmax(axis=-1)
    return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0], arg


@_njit
def _maxpool2_backward_nb(dout, arg, height, width):
    n_batch, n_ch, h2, w2 = dout.shape
    dx = np.zeros((n_batch, n_ch, height, width))
    for n in range(n_batch):
        for c in range(n_ch):
            for r in range(h2):
                for q in range(w2):
                    t = arg[n, c, r, q]
                    dx[n, c, 2 * r + t // 2, 2 * q + t % 2] = dout[n, c, r, q]
    return dx


def _maxpool2_backward_np(dout, arg, height, width):
    n_batch, n_ch, h2, w2 = dout.shape
    flat = np.zeros((n_batch, n_ch, h2, w2, 4))
    np.put_along_axis(flat, arg[..., None], dout[..., None], axis=-1)
    blocks = flat.reshape(n_batch, n_ch, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros((n_batch, n_ch, height, width))
    dx[:, :, : 2 * h2, : 2 * w2] = blocks.reshape(n_batch, n_ch, 2 * h2, 2 * w2)
    return dx


if USE_NUMBA:
    permanent_batch = _permanent_batch_nb
    mps_chain_forward = _mps_chain_forward_nb
    mps_chain_backward = _mps_chain_backward_nb
    conv2d_forward = _conv2d_forward_nb
    conv2d_backward = _conv2d_backward_nb
    maxpool2_forward = _maxpool2_forward_nb
    maxpool2_backward = _maxpool2_backward_nb
else:
    permanent_batch = _permanent_batch_np
    mps_chain_forward = _mps_chain_forward_np
    mps_chain_backward = _mps_chain_backward_np
    conv2d_forward = _conv2d_forward_np
    conv2d_backward = _conv2d_backward_np
    maxpool2_forward = _maxpool2_forward_np
    maxpool2_backward = _maxpool2_backward_np
