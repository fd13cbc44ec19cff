"""Fused tape ops shared by the encoder, latent, and classifier heads:
affine maps, strided 2D convolution, and the bivariate-Gaussian negative
log-density used by the trajectory decoder."""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .autodiff import ShapeError, Value, make_op


def _fused(out_data, parents, bwd):
    def backward(g):
        grads = bwd(g)
        for p, gp in zip(parents, grads):
            if p.requires_grad:
                p.accumulate(gp)

    return make_op(out_data, parents, backward)


def affine(W: Value, x: Value, b: Value) -> Value:
    """W @ x + b as a single node."""
    if W.data.ndim != 2 or x.data.ndim != 1 or W.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"affine: W {W.data.shape} incompatible with x {x.data.shape}")
    if b.data.shape != (W.data.shape[0],):
        raise ShapeError(f"affine: bias {b.data.shape} incompatible with W {W.data.shape}")
    out, cache = K.affine_fwd(W.data, x.data, b.data)
    return _fused(out, (W, x, b), lambda g: K.affine_bwd(g, cache))


def conv2d(img: Value, w: Value, b: Value, stride: int) -> Value:
    """Valid strided convolution of a (Cin, H, W) map with (Cout, Cin, kh, kw)
    filters."""
    if img.data.ndim != 3 or w.data.ndim != 3 + 1:
        raise ShapeError(f"conv2d: image rank {img.data.ndim}, weights rank {w.data.ndim}")
    if img.data.shape[0] != w.data.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch {img.data.shape} vs {w.data.shape}")
    if img.data.shape[1] < w.data.shape[2] or img.data.shape[2] < w.data.shape[3]:
        raise ShapeError(f"conv2d: kernel {w.data.shape} larger than image {img.data.shape}")
    out, cache = K.conv2d_fwd(img.data, w.data, b.data, stride)
    return _fused(out, (img, w, b), lambda g: K.conv2d_bwd(g, cache))


def gaussian_nll(mean: Value, fac: Value, target) -> Value:
    """Negative log-density of `target` under the 2D Gaussian with the
    given mean and lower-triangular factor parameters (log l11, log l22,
    l21); the exp-diagonal keeps the covariance positive definite."""
    target = np.asarray(target, dtype=np.float64)
    if mean.data.shape != (2,) or fac.data.shape != (3,) or target.shape != (2,):
        raise ShapeError(f"gaussian_nll: shapes mean {mean.data.shape}, fac {fac.data.shape}, "
                         f"target {target.shape}")
    out, cache = K.gaussian_nll_fwd(mean.data, fac.data, target)
    return _fused(out, (mean, fac), lambda g: K.gaussian_nll_bwd(g, cache))


def gaussian_cov(fac: np.ndarray) -> np.ndarray:
    """Covariance L L^T from factor parameters."""
    L = gaussian_factor(fac)
    return L @ L.T


def gaussian_factor(fac: np.ndarray) -> np.ndarray:
    return np.array([[np.exp(fac[0]), 0.0], [fac[2], np.exp(fac[1])]])


def gaussian_sample(mean: np.ndarray, fac: np.ndarray, rng) -> np.ndarray:
    eps = rng.standard_normal(2)
    return mean + gaussian_factor(fac) @ eps
