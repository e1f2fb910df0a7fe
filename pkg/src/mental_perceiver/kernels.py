"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the
numpy implementations take over. Setting ``MP_PURE_PYTHON=1`` forces the
fallback. ``BACKEND`` records which one is live.

The extension only carries the kernels it runs faster than numpy
(layer norm, softmax backward, AdamW); the rest always use numpy.
"""

import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("MP_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"


COMPILED_KERNELS = ("layer_norm_fwd", "layer_norm_bwd", "softmax_rows_bwd", "adamw_update")


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name):
    """Switch the live backend for the whole process (benchmarks, parity tests)."""
    global _impl, BACKEND
    _impl = get_backend(name)
    BACKEND = name


def _c(a):
    return np.ascontiguousarray(a)


def layer_norm_fwd(x, gain, bias, eps):
    return _impl.layer_norm_fwd(_c(x), _c(gain), _c(bias), float(eps))


def layer_norm_bwd(dy, xhat, rstd, gain):
    return _impl.layer_norm_bwd(_c(dy), xhat, rstd, _c(gain))


def gelu_fwd(x):
    return _kernels_py.gelu_fwd(_c(x))


def gelu_bwd(x, dy):
    return _kernels_py.gelu_bwd(_c(x), _c(dy))


def softmax_rows(x):
    return _kernels_py.softmax_rows(_c(x))


def softmax_rows_bwd(y, dy):
    return _impl.softmax_rows_bwd(_c(y), _c(dy))


def attention_fwd(q, k, v, q_off, kv_off, heads, scale):
    return _kernels_py.attention_fwd(_c(q), _c(k), _c(v), q_off, kv_off, int(heads), float(scale))


def attention_bwd(dout, q, k, v, probs, q_off, kv_off, heads, scale):
    return _kernels_py.attention_bwd(_c(dout), _c(q), _c(k), _c(v), probs, q_off, kv_off,
                               int(heads), float(scale))


def adamw_update(w, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    """Update ``w``, ``m`` and ``v`` in place. All four must be contiguous."""
    _impl.adamw_update(w.reshape(-1), _c(g).reshape(-1), m.reshape(-1), v.reshape(-1),
                       float(lr), float(beta1), float(beta2), float(eps), float(wd),
                       float(bc1), float(bc2))
