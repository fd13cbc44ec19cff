"""Compiled kernels must agree with the numpy fallback to float64
round-off, forward and backward."""

import numpy as np
import pytest

from trajcast.kernels import fallback

compiled = pytest.importorskip("trajcast.kernels._ckernels")

TOL = 1e-12


def _cmp(a, b):
    for u, v in zip(a, b):
        if isinstance(u, tuple):
            _cmp(u, v)
        else:
            assert np.max(np.abs(np.asarray(u) - np.asarray(v))) < TOL


@pytest.mark.parametrize("seed", range(5))
def test_affine_parity(seed):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((4, 3))
    x = rng.standard_normal(3)
    b = rng.standard_normal(4)
    y1, c1 = compiled.affine_fwd(W, x, b)
    y2, c2 = fallback.affine_fwd(W, x, b)
    assert np.max(np.abs(np.asarray(y1) - y2)) < TOL
    g = rng.standard_normal(4)
    _cmp(compiled.affine_bwd(g, c1), fallback.affine_bwd(g, c2))


@pytest.mark.parametrize("seed", range(5))
def test_gru_parity(seed):
    rng = np.random.default_rng(10 + seed)
    x = rng.standard_normal(3)
    h = rng.standard_normal(4)
    mats = [rng.standard_normal((4, 3)) for _ in range(3)] + \
           [rng.standard_normal((4, 4)) for _ in range(3)]
    biases = [rng.standard_normal(4) for _ in range(6)]
    y1, c1 = compiled.gru_fwd(x, h, *mats, *biases)
    y2, c2 = fallback.gru_fwd(x, h, *mats, *biases)
    assert np.max(np.abs(np.asarray(y1) - y2)) < TOL
    g = rng.standard_normal(4)
    _cmp(compiled.gru_bwd(g, c1), fallback.gru_bwd(g, c2))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("rounds", [1, 2, 5, 6])
def test_mogrify_parity(seed, rounds):
    rng = np.random.default_rng(20 + seed)
    x = rng.standard_normal(3)
    h = rng.standard_normal(4)
    qs = tuple(rng.standard_normal((3, 4)) for _ in range((rounds + 1) // 2))
    rs = tuple(rng.standard_normal((4, 3)) for _ in range(rounds // 2))
    y1, c1 = compiled.mogrify_fwd(x, h, qs, rs)
    y2, c2 = fallback.mogrify_fwd(x, h, qs, rs)
    assert np.max(np.abs(np.asarray(y1) - y2)) < TOL
    g = rng.standard_normal(7)
    _cmp(compiled.mogrify_bwd(g, c1), fallback.mogrify_bwd(g.copy(), c2))


@pytest.mark.parametrize("seed", range(5))
def test_lstm_parity(seed):
    rng = np.random.default_rng(30 + seed)
    x = rng.standard_normal(3)
    h = rng.standard_normal(4)
    c = rng.standard_normal(4)
    mats = [rng.standard_normal((4, 3)) for _ in range(4)] + \
           [rng.standard_normal((4, 4)) for _ in range(4)]
    biases = [rng.standard_normal(4) for _ in range(8)]
    y1, c1 = compiled.lstm_fwd(x, h, c, *mats, *biases)
    y2, c2 = fallback.lstm_fwd(x, h, c, *mats, *biases)
    assert np.max(np.abs(np.asarray(y1) - y2)) < TOL
    g = rng.standard_normal(8)
    _cmp(compiled.lstm_bwd(g, c1), fallback.lstm_bwd(g, c2))


@pytest.mark.parametrize("seed", range(3))
def test_conv2d_parity(seed):
    rng = np.random.default_rng(40 + seed)
    img = rng.standard_normal((2, 8, 8))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    y1, c1 = compiled.conv2d_fwd(img, w, b, 2)
    y2, c2 = fallback.conv2d_fwd(img, w, b, 2)
    assert np.max(np.abs(np.asarray(y1) - y2)) < TOL
    g = rng.standard_normal(y2.shape)
    _cmp(compiled.conv2d_bwd(g, c1), fallback.conv2d_bwd(g, c2))


@pytest.mark.parametrize("seed", range(5))
def test_gaussian_nll_parity(seed):
    rng = np.random.default_rng(50 + seed)
    mean = rng.standard_normal(2)
    fac = rng.standard_normal(3) * 0.5
    target = rng.standard_normal(2)
    y1, c1 = compiled.gaussian_nll_fwd(mean, fac, target)
    y2, c2 = fallback.gaussian_nll_fwd(mean, fac, target)
    assert abs(float(y1) - float(y2)) < TOL
    _cmp(compiled.gaussian_nll_bwd(1.3, c1), fallback.gaussian_nll_bwd(1.3, c2))
