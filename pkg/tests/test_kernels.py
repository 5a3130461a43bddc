import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from photonic_qt import kernels

pytestmark = pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_permanent_paths_agree(n, batch, seed):
    r = np.random.default_rng(seed)
    mats = r.standard_normal((batch, n, n)) + 1j * r.standard_normal((batch, n, n))
    assert np.allclose(kernels._permanent_batch_nb(mats), kernels._permanent_batch_np(mats), rtol=1e-10, atol=1e-12)


@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_mps_chain_paths_agree(chi, n_sites, m, seed):
    r = np.random.default_rng(seed)
    cores = r.standard_normal((n_sites, 2, chi, chi))
    feats = r.random((m, n_sites, 2))
    h0 = np.ones(chi)
    hs_nb = kernels._mps_chain_forward_nb(cores, feats, h0)
    hs_np = kernels._mps_chain_forward_np(cores, feats, h0)
    assert np.allclose(hs_nb, hs_np, rtol=1e-12, atol=1e-12)
    g = r.standard_normal((m, chi))
    for a, b in zip(kernels._mps_chain_backward_nb(cores, feats, hs_np, g),
                    kernels._mps_chain_backward_np(cores, feats, hs_np, g)):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.sampled_from([1, 3]),
       st.integers(5, 9), st.integers(0, 2**32 - 1))
def test_conv_paths_agree(bsz, ci, co, k, size, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((bsz, ci, size, size))
    w = r.standard_normal((co, ci, k, k))
    b = r.standard_normal(co)
    out = kernels._conv2d_forward_np(x, w, b)
    assert np.allclose(kernels._conv2d_forward_nb(x, w, b), out)
    dout = r.standard_normal(out.shape)
    for need_dx in (True, False):
        nb = kernels._conv2d_backward_nb(dout, x, w, need_dx)
        ref = kernels._conv2d_backward_np(dout, x, w, need_dx)
        for a, c in zip(nb, ref):
            assert a.shape == c.shape and np.allclose(a, c)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(2, 9), st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_maxpool_paths_agree(bsz, c, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((bsz, c, h, w))
    out_nb, arg_nb = kernels._maxpool2_forward_nb(x)
    out_np, arg_np = kernels._maxpool2_forward_np(x)
    assert np.array_equal(out_nb, out_np) and np.array_equal(arg_nb, arg_np)
    dout = np.random.default_rng(seed + 1).standard_normal(out_np.shape)
    assert np.allclose(kernels._maxpool2_backward_nb(dout, arg_np, h, w), kernels._maxpool2_backward_np(dout, arg_np, h, w))


def test_maxpool_routes_gradient_to_argmax():
    x = np.array([[[[1.0, 5.0], [2.0, 3.0]]]])
    _, arg = kernels.maxpool2_forward(x)
    dx = kernels.maxpool2_backward(np.array([[[[7.0]]]]), arg, 2, 2)
    assert dx.tolist() == [[[[0.0, 7.0], [0.0, 0.0]]]]


@pytest.mark.parametrize("flag,expected", [("0", "False"), ("1", "True")])
def test_env_flag_selects_path(flag, expected):
    env = {**os.environ, "PHOTONIC_QT_NUMBA": flag}
    code = "from photonic_qt import kernels; print(kernels.USE_NUMBA, kernels.permanent_batch.__name__)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    use, name = out.split()
    assert use == expected
    assert name.endswith("_nb" if expected == "True" else "_np")
