"""Pure-numpy reference implementations of the hot kernels.

Each kernel comes as a `*_fwd` returning (output, cache) and a `*_bwd`
consuming the output gradient plus the cache. The compiled extension in
`_ckernels.pyx` implements the same signatures; `trajcast.kernels`
selects one backend at import time. Gradients of both backends are
validated against central finite differences in the test suite.
"""

import math

import numpy as np

BACKEND = "python"

_LOG_2PI = math.log(2.0 * math.pi)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# affine: y = W @ x + b

def affine_fwd(W, x, b):
    return W @ x + b, (W, x)


def affine_bwd(g, cache):
    W, x = cache
    return np.outer(g, x), W.T @ g, g.copy()


# ---------------------------------------------------------------------------
# GRU step: r/z sigmoid gates, candidate n with r-gated recurrent term,
# h' = (1 - z) * n + z * h

def gru_fwd(x, h, Wir, Wiz, Win, Whr, Whz, Whn, bir, biz, bin_, bhr, bhz, bhn):
    r = _sigmoid(Wir @ x + bir + Whr @ h + bhr)
    z = _sigmoid(Wiz @ x + biz + Whz @ h + bhz)
    m = Whn @ h + bhn
    n = np.tanh(Win @ x + bin_ + r * m)
    h_new = (1.0 - z) * n + z * h
    cache = (x, h, r, z, n, m, Wir, Wiz, Win, Whr, Whz, Whn)
    return h_new, cache


def gru_bwd(g, cache):
    x, h, r, z, n, m, Wir, Wiz, Win, Whr, Whz, Whn = cache
    gz = g * (h - n)
    gn = g * (1.0 - z)
    gh = g * z
    gan = gn * (1.0 - n * n)
    gr = gan * m
    gm = gan * r
    gaz = gz * z * (1.0 - z)
    gar = gr * r * (1.0 - r)
    gx = Wir.T @ gar + Wiz.T @ gaz + Win.T @ gan
    gh = gh + Whr.T @ gar + Whz.T @ gaz + Whn.T @ gm
    return (
        gx,
        gh,
        np.outer(gar, x),
        np.outer(gaz, x),
        np.outer(gan, x),
        np.outer(gar, h),
        np.outer(gaz, h),
        np.outer(gm, h),
        gar.copy(),
        gaz.copy(),
        gan.copy(),
        gar.copy(),
        gaz.copy(),
        gm.copy(),
    )


# ---------------------------------------------------------------------------
# mogrifier: alternating mutual-gating rounds; odd rounds rescale the
# input by 1.5*tanh(Q h), even rounds rescale the hidden by 1.5*tanh(R x)

def mogrify_fwd(x, h, q_mats, r_mats):
    x_cur = x
    h_cur = h
    rounds = len(q_mats) + len(r_mats)
    trace = []
    for a in range(1, rounds + 1):
        if a % 2 == 1:
            Q = q_mats[(a - 1) // 2]
            t = np.tanh(Q @ h_cur)
            trace.append((True, t, x_cur, h_cur))
            x_cur = 1.5 * t * x_cur
        else:
            R = r_mats[a // 2 - 1]
            t = np.tanh(R @ x_cur)
            trace.append((False, t, h_cur, x_cur))
            h_cur = 1.5 * t * h_cur
    out = np.concatenate([x_cur, h_cur])
    return out, (x.shape[0], trace, q_mats, r_mats)


def mogrify_bwd(g, cache):
    nx, trace, q_mats, r_mats = cache
    gx = g[:nx].copy()
    gh = g[nx:].copy()
    gq = [np.zeros_like(m) for m in q_mats]
    gr = [np.zeros_like(m) for m in r_mats]
    for a in range(len(trace), 0, -1):
        odd, t, old, partner = trace[a - 1]
        if odd:
            Q = q_mats[(a - 1) // 2]
            gt = gx * 1.5 * old
            gx = gx * 1.5 * t
            gpre = gt * (1.0 - t * t)
            gq[(a - 1) // 2] += np.outer(gpre, partner)
            gh = gh + Q.T @ gpre
        else:
            R = r_mats[a // 2 - 1]
            gt = gh * 1.5 * old
            gh = gh * 1.5 * t
            gpre = gt * (1.0 - t * t)
            gr[a // 2 - 1] += np.outer(gpre, partner)
            gx = gx + R.T @ gpre
    return gx, gh, tuple(gq), tuple(gr)


# ---------------------------------------------------------------------------
# LSTM step; returns concat(h', c') so the tape sees one node

def lstm_fwd(x, h, c, Wii, Wif, Wig, Wio, Whi, Whf, Whg, Who,
             bii, bif, big, bio, bhi, bhf, bhg, bho):
    i = _sigmoid(Wii @ x + bii + Whi @ h + bhi)
    f = _sigmoid(Wif @ x + bif + Whf @ h + bhf)
    gt = np.tanh(Wig @ x + big + Whg @ h + bhg)
    o = _sigmoid(Wio @ x + bio + Who @ h + bho)
    c_new = f * c + i * gt
    tc = np.tanh(c_new)
    h_new = o * tc
    out = np.concatenate([h_new, c_new])
    cache = (x, h, c, i, f, gt, o, tc, Wii, Wif, Wig, Wio, Whi, Whf, Whg, Who)
    return out, cache


def lstm_bwd(g, cache):
    x, h, c, i, f, gt, o, tc, Wii, Wif, Wig, Wio, Whi, Whf, Whg, Who = cache
    nh = h.shape[0]
    gh_new = g[:nh]
    gc_new = g[nh:].copy()
    go = gh_new * tc
    gc_new = gc_new + gh_new * o * (1.0 - tc * tc)
    gf = gc_new * c
    gc = gc_new * f
    gi = gc_new * gt
    ggt = gc_new * i
    gai = gi * i * (1.0 - i)
    gaf = gf * f * (1.0 - f)
    gag = ggt * (1.0 - gt * gt)
    gao = go * o * (1.0 - o)
    gx = Wii.T @ gai + Wif.T @ gaf + Wig.T @ gag + Wio.T @ gao
    gh = Whi.T @ gai + Whf.T @ gaf + Whg.T @ gag + Who.T @ gao
    return (
        gx,
        gh,
        gc,
        np.outer(gai, x),
        np.outer(gaf, x),
        np.outer(gag, x),
        np.outer(gao, x),
        np.outer(gai, h),
        np.outer(gaf, h),
        np.outer(gag, h),
        np.outer(gao, h),
        gai.copy(),
        gaf.copy(),
        gag.copy(),
        gao.copy(),
        gai.copy(),
        gaf.copy(),
        gag.copy(),
        gao.copy(),
    )


# ---------------------------------------------------------------------------
# strided valid convolution on (C, H, W) maps

def conv2d_fwd(img, w, b, stride):
    cout, cin, kh, kw = w.shape
    _, hh, ww = img.shape
    ho = (hh - kh) // stride + 1
    wo = (ww - kw) // stride + 1
    out = np.empty((cout, ho, wo))
    for y in range(ho):
        for xq in range(wo):
            patch = img[:, y * stride:y * stride + kh, xq * stride:xq * stride + kw]
            out[:, y, xq] = np.tensordot(w, patch, axes=([1, 2, 3], [0, 1, 2])) + b
    return out, (img, w, stride)


def conv2d_bwd(g, cache):
    img, w, stride = cache
    cout, cin, kh, kw = w.shape
    _, ho, wo = g.shape
    gimg = np.zeros_like(img)
    gw = np.zeros_like(w)
    gb = g.sum(axis=(1, 2))
    for y in range(ho):
        for xq in range(wo):
            sl = np.s_[:, y * stride:y * stride + kh, xq * stride:xq * stride + kw]
            go = g[:, y, xq]
            gw += go[:, None, None, None] * img[sl][None, :, :, :]
            gimg[sl] += np.tensordot(go, w, axes=(0, 0))
    return gimg, gw, gb


# ---------------------------------------------------------------------------
# bivariate Gaussian negative log-density with lower-triangular factor
# L = [[exp(f0), 0], [f2, exp(f1)]], covariance L L^T

def gaussian_nll_fwd(mean, fac, target):
    f0, f1, f2 = fac
    a = math.exp(-f0)
    b = math.exp(-f1)
    d0 = target[0] - mean[0]
    d1 = target[1] - mean[1]
    u0 = d0 * a
    u1 = (d1 - f2 * u0) * b
    nll = 0.5 * (u0 * u0 + u1 * u1) + f0 + f1 + _LOG_2PI
    return np.asarray(nll), (a, b, u0, u1, f2)


def gaussian_nll_bwd(g, cache):
    a, b, u0, u1, f2 = cache
    g = float(g)
    gd0 = a * (u0 - f2 * b * u1)
    gd1 = u1 * b
    gmean = np.array([-g * gd0, -g * gd1])
    gfac = np.array([
        g * (1.0 - u0 * u0 + u1 * b * f2 * u0),
        g * (1.0 - u1 * u1),
        g * (-u0 * u1 * b),
    ])
    return gmean, gfac
