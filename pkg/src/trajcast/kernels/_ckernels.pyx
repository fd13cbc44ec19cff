# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot kernels (see fallback.py for the
reference numpy implementations and the shared signatures)."""

from libc.math cimport exp as cexp, log as clog, tanh as ctanh

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"

cdef double _LOG_2PI = 1.8378770664093453


cdef inline double _sig(double v) noexcept nogil:
    return 1.0 / (1.0 + cexp(-v))


cdef void _matvec(double[:, ::1] W, double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, m = W.shape[0], n = W.shape[1]
    cdef double acc
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += W[i, j] * x[j]
        out[i] = acc


cdef void _matvec_t_acc(double[:, ::1] W, double[::1] g, double[::1] out) noexcept nogil:
    # out += W^T @ g
    cdef Py_ssize_t i, j, m = W.shape[0], n = W.shape[1]
    for i in range(m):
        for j in range(n):
            out[j] += W[i, j] * g[i]


cdef void _outer(double[::1] a, double[::1] b, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, m = a.shape[0], n = b.shape[0]
    for i in range(m):
        for j in range(n):
            out[i, j] = a[i] * b[j]


# ---------------------------------------------------------------------------

def affine_fwd(double[:, ::1] W, double[::1] x, double[::1] b):
    cdef Py_ssize_t i, m = W.shape[0]
    y_arr = np.empty(m)
    cdef double[::1] y = y_arr
    _matvec(W, x, y)
    for i in range(m):
        y[i] += b[i]
    return y_arr, (W, x)


def affine_bwd(double[::1] g, cache):
    cdef double[:, ::1] W = cache[0]
    cdef double[::1] x = cache[1]
    gW_arr = np.empty((W.shape[0], W.shape[1]))
    gx_arr = np.zeros(W.shape[1])
    cdef double[:, ::1] gW = gW_arr
    cdef double[::1] gx = gx_arr
    _outer(g, x, gW)
    _matvec_t_acc(W, g, gx)
    return gW_arr, gx_arr, np.asarray(g).copy()


# ---------------------------------------------------------------------------

def gru_fwd(double[::1] x, double[::1] h,
            double[:, ::1] Wir, double[:, ::1] Wiz, double[:, ::1] Win,
            double[:, ::1] Whr, double[:, ::1] Whz, double[:, ::1] Whn,
            double[::1] bir, double[::1] biz, double[::1] bin_,
            double[::1] bhr, double[::1] bhz, double[::1] bhn):
    cdef Py_ssize_t i, nh = Whr.shape[0]
    r_arr = np.empty(nh)
    z_arr = np.empty(nh)
    n_arr = np.empty(nh)
    m_arr = np.empty(nh)
    out_arr = np.empty(nh)
    tmp_arr = np.empty(nh)
    cdef double[::1] r = r_arr, z = z_arr, n = n_arr, m = m_arr
    cdef double[::1] out = out_arr, tmp = tmp_arr
    with nogil:
        _matvec(Wir, x, r)
        _matvec(Whr, h, tmp)
        for i in range(nh):
            r[i] = _sig(r[i] + bir[i] + tmp[i] + bhr[i])
        _matvec(Wiz, x, z)
        _matvec(Whz, h, tmp)
        for i in range(nh):
            z[i] = _sig(z[i] + biz[i] + tmp[i] + bhz[i])
        _matvec(Whn, h, m)
        for i in range(nh):
            m[i] += bhn[i]
        _matvec(Win, x, n)
        for i in range(nh):
            n[i] = ctanh(n[i] + bin_[i] + r[i] * m[i])
        for i in range(nh):
            out[i] = (1.0 - z[i]) * n[i] + z[i] * h[i]
    cache = (np.asarray(x), np.asarray(h), r_arr, z_arr, n_arr, m_arr,
             np.asarray(Wir), np.asarray(Wiz), np.asarray(Win),
             np.asarray(Whr), np.asarray(Whz), np.asarray(Whn))
    return out_arr, cache


def gru_bwd(double[::1] g, cache):
    cdef double[::1] x = cache[0], h = cache[1], r = cache[2], z = cache[3]
    cdef double[::1] n = cache[4], m = cache[5]
    cdef double[:, ::1] Wir = cache[6], Wiz = cache[7], Win = cache[8]
    cdef double[:, ::1] Whr = cache[9], Whz = cache[10], Whn = cache[11]
    cdef Py_ssize_t i, nh = h.shape[0], nx = x.shape[0]
    gar_arr = np.empty(nh)
    gaz_arr = np.empty(nh)
    gan_arr = np.empty(nh)
    gm_arr = np.empty(nh)
    gx_arr = np.zeros(nx)
    gh_arr = np.empty(nh)
    cdef double[::1] gar = gar_arr, gaz = gaz_arr, gan = gan_arr
    cdef double[::1] gm = gm_arr, gx = gx_arr, gh = gh_arr
    cdef double gzi, gni, gri
    with nogil:
        for i in range(nh):
            gzi = g[i] * (h[i] - n[i])
            gni = g[i] * (1.0 - z[i])
            gh[i] = g[i] * z[i]
            gan[i] = gni * (1.0 - n[i] * n[i])
            gri = gan[i] * m[i]
            gm[i] = gan[i] * r[i]
            gaz[i] = gzi * z[i] * (1.0 - z[i])
            gar[i] = gri * r[i] * (1.0 - r[i])
        _matvec_t_acc(Wir, gar, gx)
        _matvec_t_acc(Wiz, gaz, gx)
        _matvec_t_acc(Win, gan, gx)
        _matvec_t_acc(Whr, gar, gh)
        _matvec_t_acc(Whz, gaz, gh)
        _matvec_t_acc(Whn, gm, gh)
    gWir = np.empty((nh, nx)); gWiz = np.empty((nh, nx)); gWin = np.empty((nh, nx))
    gWhr = np.empty((nh, nh)); gWhz = np.empty((nh, nh)); gWhn = np.empty((nh, nh))
    _outer(gar, x, gWir)
    _outer(gaz, x, gWiz)
    _outer(gan, x, gWin)
    _outer(gar, h, gWhr)
    _outer(gaz, h, gWhz)
    _outer(gm, h, gWhn)
    return (gx_arr, gh_arr, gWir, gWiz, gWin, gWhr, gWhz, gWhn,
            gar_arr.copy(), gaz_arr.copy(), gan_arr.copy(),
            gar_arr, gaz_arr, gm_arr)


# ---------------------------------------------------------------------------

def mogrify_fwd(double[::1] x, double[::1] h, q_mats, r_mats):
    cdef Py_ssize_t a, i, rounds = len(q_mats) + len(r_mats)
    cdef Py_ssize_t nx = x.shape[0], nh = h.shape[0]
    x_cur = np.asarray(x).copy()
    h_cur = np.asarray(h).copy()
    cdef double[::1] xv, hv, t
    cdef double[:, ::1] M
    trace = []
    for a in range(1, rounds + 1):
        if a % 2 == 1:
            M = q_mats[(a - 1) // 2]
            t_arr = np.empty(nx)
            t = t_arr
            hv = h_cur
            _matvec(M, hv, t)
            for i in range(nx):
                t[i] = ctanh(t[i])
            trace.append((True, t_arr, x_cur, h_cur))
            new_x = np.empty(nx)
            xv = x_cur
            for i in range(nx):
                new_x[i] = 1.5 * t[i] * xv[i]
            x_cur = new_x
        else:
            M = r_mats[a // 2 - 1]
            t_arr = np.empty(nh)
            t = t_arr
            xv = x_cur
            _matvec(M, xv, t)
            for i in range(nh):
                t[i] = ctanh(t[i])
            trace.append((False, t_arr, h_cur, x_cur))
            new_h = np.empty(nh)
            hv = h_cur
            for i in range(nh):
                new_h[i] = 1.5 * t[i] * hv[i]
            h_cur = new_h
    out = np.concatenate([x_cur, h_cur])
    return out, (nx, trace, q_mats, r_mats)


def mogrify_bwd(double[::1] g, cache):
    cdef Py_ssize_t nx = cache[0]
    trace = cache[1]
    q_mats = cache[2]
    r_mats = cache[3]
    cdef Py_ssize_t a, i, n
    gx = np.asarray(g[:nx]).copy()
    gh = np.asarray(g[nx:]).copy()
    gq = [np.zeros((m.shape[0], m.shape[1])) for m in q_mats]
    gr = [np.zeros((m.shape[0], m.shape[1])) for m in r_mats]
    cdef double[::1] gcur, t, old, partner, gpre
    cdef double[:, ::1] M, gM
    for a in range(len(trace), 0, -1):
        odd, t_arr, old_arr, partner_arr = trace[a - 1]
        t = t_arr
        old = old_arr
        partner = partner_arr
        n = t.shape[0]
        gpre_arr = np.empty(n)
        gpre = gpre_arr
        if odd:
            M = q_mats[(a - 1) // 2]
            gM = gq[(a - 1) // 2]
            gcur = gx
            for i in range(n):
                gpre[i] = gcur[i] * 1.5 * old[i] * (1.0 - t[i] * t[i])
                gcur[i] = gcur[i] * 1.5 * t[i]
            for i in range(n):
                for j in range(partner.shape[0]):
                    gM[i, j] += gpre[i] * partner[j]
            _matvec_t_acc(M, gpre, gh)
        else:
            M = r_mats[a // 2 - 1]
            gM = gr[a // 2 - 1]
            gcur = gh
            for i in range(n):
                gpre[i] = gcur[i] * 1.5 * old[i] * (1.0 - t[i] * t[i])
                gcur[i] = gcur[i] * 1.5 * t[i]
            for i in range(n):
                for j in range(partner.shape[0]):
                    gM[i, j] += gpre[i] * partner[j]
            _matvec_t_acc(M, gpre, gx)
    return gx, gh, tuple(gq), tuple(gr)


# ---------------------------------------------------------------------------

def lstm_fwd(double[::1] x, double[::1] h, double[::1] c,
             double[:, ::1] Wii, double[:, ::1] Wif, double[:, ::1] Wig, double[:, ::1] Wio,
             double[:, ::1] Whi, double[:, ::1] Whf, double[:, ::1] Whg, double[:, ::1] Who,
             double[::1] bii, double[::1] bif, double[::1] big, double[::1] bio,
             double[::1] bhi, double[::1] bhf, double[::1] bhg, double[::1] bho):
    cdef Py_ssize_t k, nh = Whi.shape[0]
    i_arr = np.empty(nh); f_arr = np.empty(nh); g_arr = np.empty(nh); o_arr = np.empty(nh)
    tc_arr = np.empty(nh)
    out_arr = np.empty(2 * nh)
    tmp_arr = np.empty(nh)
    cdef double[::1] iv = i_arr, fv = f_arr, gv = g_arr, ov = o_arr
    cdef double[::1] tc = tc_arr, out = out_arr, tmp = tmp_arr
    cdef double cn
    with nogil:
        _matvec(Wii, x, iv)
        _matvec(Whi, h, tmp)
        for k in range(nh):
            iv[k] = _sig(iv[k] + bii[k] + tmp[k] + bhi[k])
        _matvec(Wif, x, fv)
        _matvec(Whf, h, tmp)
        for k in range(nh):
            fv[k] = _sig(fv[k] + bif[k] + tmp[k] + bhf[k])
        _matvec(Wig, x, gv)
        _matvec(Whg, h, tmp)
        for k in range(nh):
            gv[k] = ctanh(gv[k] + big[k] + tmp[k] + bhg[k])
        _matvec(Wio, x, ov)
        _matvec(Who, h, tmp)
        for k in range(nh):
            ov[k] = _sig(ov[k] + bio[k] + tmp[k] + bho[k])
        for k in range(nh):
            cn = fv[k] * c[k] + iv[k] * gv[k]
            out[nh + k] = cn
            tc[k] = ctanh(cn)
            out[k] = ov[k] * tc[k]
    cache = (np.asarray(x), np.asarray(h), np.asarray(c), i_arr, f_arr, g_arr, o_arr,
             tc_arr, np.asarray(Wii), np.asarray(Wif), np.asarray(Wig), np.asarray(Wio),
             np.asarray(Whi), np.asarray(Whf), np.asarray(Whg), np.asarray(Who))
    return out_arr, cache


def lstm_bwd(double[::1] g, cache):
    cdef double[::1] x = cache[0], h = cache[1], c = cache[2]
    cdef double[::1] iv = cache[3], fv = cache[4], gv = cache[5], ov = cache[6]
    cdef double[::1] tc = cache[7]
    cdef double[:, ::1] Wii = cache[8], Wif = cache[9], Wig = cache[10], Wio = cache[11]
    cdef double[:, ::1] Whi = cache[12], Whf = cache[13], Whg = cache[14], Who = cache[15]
    cdef Py_ssize_t k, nh = h.shape[0], nx = x.shape[0]
    gai_arr = np.empty(nh); gaf_arr = np.empty(nh); gag_arr = np.empty(nh); gao_arr = np.empty(nh)
    gc_arr = np.empty(nh)
    gx_arr = np.zeros(nx)
    gh_arr = np.zeros(nh)
    cdef double[::1] gai = gai_arr, gaf = gaf_arr, gag = gag_arr, gao = gao_arr
    cdef double[::1] gc = gc_arr, gx = gx_arr, gh = gh_arr
    cdef double gcn, go_, gf_, gi_, gg_
    with nogil:
        for k in range(nh):
            go_ = g[k] * tc[k]
            gcn = g[nh + k] + g[k] * ov[k] * (1.0 - tc[k] * tc[k])
            gf_ = gcn * c[k]
            gc[k] = gcn * fv[k]
            gi_ = gcn * gv[k]
            gg_ = gcn * iv[k]
            gai[k] = gi_ * iv[k] * (1.0 - iv[k])
            gaf[k] = gf_ * fv[k] * (1.0 - fv[k])
            gag[k] = gg_ * (1.0 - gv[k] * gv[k])
            gao[k] = go_ * ov[k] * (1.0 - ov[k])
        _matvec_t_acc(Wii, gai, gx)
        _matvec_t_acc(Wif, gaf, gx)
        _matvec_t_acc(Wig, gag, gx)
        _matvec_t_acc(Wio, gao, gx)
        _matvec_t_acc(Whi, gai, gh)
        _matvec_t_acc(Whf, gaf, gh)
        _matvec_t_acc(Whg, gag, gh)
        _matvec_t_acc(Who, gao, gh)
    gWii = np.empty((nh, nx)); gWif = np.empty((nh, nx)); gWig = np.empty((nh, nx)); gWio = np.empty((nh, nx))
    gWhi = np.empty((nh, nh)); gWhf = np.empty((nh, nh)); gWhg = np.empty((nh, nh)); gWho = np.empty((nh, nh))
    _outer(gai, x, gWii)
    _outer(gaf, x, gWif)
    _outer(gag, x, gWig)
    _outer(gao, x, gWio)
    _outer(gai, h, gWhi)
    _outer(gaf, h, gWhf)
    _outer(gag, h, gWhg)
    _outer(gao, h, gWho)
    return (gx_arr, gh_arr, gc_arr,
            gWii, gWif, gWig, gWio, gWhi, gWhf, gWhg, gWho,
            gai_arr.copy(), gaf_arr.copy(), gag_arr.copy(), gao_arr.copy(),
            gai_arr, gaf_arr, gag_arr, gao_arr)


# ---------------------------------------------------------------------------

def conv2d_fwd(double[:, :, ::1] img, double[:, :, :, ::1] w, double[::1] b, int stride):
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t hh = img.shape[1], ww = img.shape[2]
    cdef Py_ssize_t ho = (hh - kh) // stride + 1
    cdef Py_ssize_t wo = (ww - kw) // stride + 1
    out_arr = np.empty((cout, ho, wo))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, ci, y, xq, i, j
    cdef double acc
    with nogil:
        for o in range(cout):
            for y in range(ho):
                for xq in range(wo):
                    acc = b[o]
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                acc += w[o, ci, i, j] * img[ci, y * stride + i, xq * stride + j]
                    out[o, y, xq] = acc
    return out_arr, (np.asarray(img), np.asarray(w), stride)


def conv2d_bwd(double[:, :, ::1] g, cache):
    cdef double[:, :, ::1] img = cache[0]
    cdef double[:, :, :, ::1] w = cache[1]
    cdef int stride = cache[2]
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = g.shape[1], wo = g.shape[2]
    gimg_arr = np.zeros((img.shape[0], img.shape[1], img.shape[2]))
    gw_arr = np.zeros((cout, cin, kh, kw))
    gb_arr = np.zeros(cout)
    cdef double[:, :, ::1] gimg = gimg_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t o, ci, y, xq, i, j
    cdef double go
    with nogil:
        for o in range(cout):
            for y in range(ho):
                for xq in range(wo):
                    go = g[o, y, xq]
                    gb[o] += go
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                gw[o, ci, i, j] += go * img[ci, y * stride + i, xq * stride + j]
                                gimg[ci, y * stride + i, xq * stride + j] += go * w[o, ci, i, j]
    return gimg_arr, gw_arr, gb_arr


# ---------------------------------------------------------------------------

def gaussian_nll_fwd(double[::1] mean, double[::1] fac, double[::1] target):
    cdef double f0 = fac[0], f1 = fac[1], f2 = fac[2]
    cdef double a = cexp(-f0), b = cexp(-f1)
    cdef double d0 = target[0] - mean[0]
    cdef double d1 = target[1] - mean[1]
    cdef double u0 = d0 * a
    cdef double u1 = (d1 - f2 * u0) * b
    cdef double nll = 0.5 * (u0 * u0 + u1 * u1) + f0 + f1 + _LOG_2PI
    return np.asarray(nll), (a, b, u0, u1, f2)


def gaussian_nll_bwd(g, cache):
    cdef double a = cache[0], b = cache[1], u0 = cache[2], u1 = cache[3], f2 = cache[4]
    cdef double gs = float(g)
    cdef double gd0 = a * (u0 - f2 * b * u1)
    cdef double gd1 = u1 * b
    gmean = np.array([-gs * gd0, -gs * gd1])
    gfac = np.array([
        gs * (1.0 - u0 * u0 + u1 * b * f2 * u0),
        gs * (1.0 - u1 * u1),
        gs * (-u0 * u1 * b),
    ])
    return gmean, gfac
