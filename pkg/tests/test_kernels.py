"""The compiled kernels and the numpy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagcn import _kernels
from tagcn._kernels import _reference

compiled = pytest.importorskip("tagcn._kernels._ckernels")


@st.composite
def conv_case(draw):
    k = draw(st.sampled_from([1, 3, 5, 9]))
    pad = draw(st.integers(0, (k - 1) // 2))
    stride = draw(st.integers(1, 3))
    t = draw(st.integers(max(1, k - 2 * pad), 12))
    b, ci, co, n = (draw(st.integers(1, 3)) for _ in range(4))
    seed = draw(st.integers(0, 2**16))
    return b, ci, co, t, n, k, stride, pad, seed


@given(conv_case())
def test_conv_backends_agree(case):
    b, ci, co, t, n, k, stride, pad, seed = case
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(b, ci, t, n))
    w = rng.normal(size=(co, ci, k))
    y = compiled.temporal_conv_forward(x, w, stride, pad)
    np.testing.assert_allclose(y, _reference.temporal_conv_forward(x, w, stride, pad), atol=1e-12)
    g = rng.normal(size=y.shape)
    np.testing.assert_allclose(compiled.temporal_conv_backward_weight(g, x, k, stride, pad),
                               _reference.temporal_conv_backward_weight(g, x, k, stride, pad),
                               atol=1e-12)
    np.testing.assert_allclose(compiled.temporal_conv_backward_input(g, w, t, stride, pad),
                               _reference.temporal_conv_backward_input(g, w, t, stride, pad),
                               atol=1e-12)


def test_conv_backends_agree_float32(rng):
    x = rng.normal(size=(2, 3, 10, 4)).astype(np.float32)
    w = rng.normal(size=(5, 3, 3)).astype(np.float32)
    y = compiled.temporal_conv_forward(x, w, 2, 1)
    assert y.dtype == np.float32
    np.testing.assert_allclose(y, _reference.temporal_conv_forward(x, w, 2, 1), rtol=1e-5,
                               atol=1e-5)


@given(st.integers(1, 20), st.integers(1, 4), st.booleans(), st.integers(0, 2**16),
       st.booleans())
def test_top_indices_backends_agree(t, b, order, seed, coarse):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 3, size=(b, t)).astype(float) if coarse else rng.random((b, t))
    k = int(rng.integers(1, t + 1))
    np.testing.assert_array_equal(compiled.top_indices(scores, k, order),
                                  _reference.top_indices(scores, k, order))


def test_backend_selection_env():
    code = "import tagcn._kernels as k; print(k.BACKEND)"
    env = dict(os.environ, TAGCN_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
    forced = os.environ.get("TAGCN_KERNELS", "").lower() == "python"
    assert _kernels.BACKEND == ("python" if forced else "compiled")
