"""Compiled kernels agree with the numpy reference implementations."""

import numpy as np
import pytest

from mental_perceiver import _kernels_py as ref
from mental_perceiver.kernels import COMPILED_KERNELS, available_backends

TOL = {np.float32: 2e-5, np.float64: 1e-12}


def _rng():
    return np.random.default_rng(11)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_layer_norm(backend, dtype):
    rng = _rng()
    x = rng.standard_normal((7, 13)).astype(dtype)
    g = rng.standard_normal((1, 13)).astype(dtype)
    b = rng.standard_normal((1, 13)).astype(dtype)
    dy = rng.standard_normal((7, 13)).astype(dtype)
    got = backend.layer_norm_fwd(x, g, b, 1e-5)
    want = ref.layer_norm_fwd(x, g, b, 1e-5)
    for a, w in zip(got, want):
        np.testing.assert_allclose(a, w, rtol=TOL[dtype], atol=TOL[dtype])
    for a, w in zip(backend.layer_norm_bwd(dy, got[1], got[2], g),
                    ref.layer_norm_bwd(dy, want[1], want[2], g)):
        np.testing.assert_allclose(a, w, rtol=TOL[dtype] * 10, atol=TOL[dtype] * 10)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_softmax_backward(backend, dtype):
    rng = _rng()
    y = ref.softmax_rows((3 * rng.standard_normal((5, 9))).astype(dtype))
    dy = rng.standard_normal((5, 9)).astype(dtype)
    np.testing.assert_allclose(backend.softmax_rows_bwd(y, dy), ref.softmax_rows_bwd(y, dy),
                               rtol=TOL[dtype], atol=TOL[dtype])


def test_compiled_module_exports(backend):
    for name in COMPILED_KERNELS:
        assert callable(getattr(backend, name))


def test_attention_stays_within_groups():
    q = np.ones((2, 4))
    k = np.zeros((3, 4))
    v = np.vstack([np.full((1, 4), 7.0), np.full((2, 4), -1.0)])
    out, _ = ref.attention_fwd(q, k, v, np.array([0, 1, 2]), np.array([0, 1, 3]), 1, 0.5)
    np.testing.assert_array_equal(out, [[7.0] * 4, [-1.0] * 4])


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_adamw(backend, dtype):
    rng = _rng()
    w0 = rng.standard_normal(1000).astype(dtype)
    args = []
    for impl in (backend, ref):
        w, m, v = w0.copy(), np.zeros_like(w0), np.zeros_like(w0)
        for step in range(1, 4):
            g = np.random.default_rng(step).standard_normal(1000).astype(dtype)
            impl.adamw_update(w, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.01,
                              1 - 0.9 ** step, 1 - 0.999 ** step)
        args.append((w, m, v))
    for a, b in zip(*args):
        np.testing.assert_allclose(a, b, rtol=TOL[dtype] * 10, atol=TOL[dtype])


def test_python_backend_always_available():
    assert "python" in available_backends()


def test_env_forces_fallback():
    import os
    import subprocess
    import sys
    env = dict(os.environ, MP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import mental_perceiver as m; print(m.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
