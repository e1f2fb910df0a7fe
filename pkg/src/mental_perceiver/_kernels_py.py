"""Pure-numpy reference implementations of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_ckernels`` extension. Arrays are C-contiguous 2-D float32 or float64;
offsets are int64 arrays of length ``groups + 1``.
"""

import math

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


def layer_norm_fwd(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gain.reshape(1, -1) + bias.reshape(1, -1)
    return y, xhat, rstd.reshape(-1)


def layer_norm_bwd(dy, xhat, rstd, gain):
    dxhat = dy * gain.reshape(1, -1)
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd.reshape(-1, 1)
    dgain = (dy * xhat).sum(axis=0, keepdims=True)
    dbias = dy.sum(axis=0, keepdims=True)
    return dx, dgain, dbias


def gelu_fwd(x):
    inner = GELU_C * (x + GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_bwd(x, dy):
    inner = GELU_C * (x + GELU_A * x * x * x)
    t = np.tanh(inner)
    d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return dy * d


def softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd(y, dy):
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def prob_offsets(q_off, kv_off, heads):
    """Start of each group's attention-probability block in the flat buffer."""
    sizes = np.diff(q_off) * np.diff(kv_off) * heads
    out = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=out[1:])
    return out


def attention_fwd(q, k, v, q_off, kv_off, heads, scale):
    groups = len(q_off) - 1
    dk = q.shape[1] // heads
    dv = v.shape[1] // heads
    p_off = prob_offsets(q_off, kv_off, heads)
    probs = np.empty(p_off[-1], dtype=q.dtype)
    out = np.empty((q.shape[0], v.shape[1]), dtype=q.dtype)
    for g in range(groups):
        q0, q1 = q_off[g], q_off[g + 1]
        k0, k1 = kv_off[g], kv_off[g + 1]
        n, m = q1 - q0, k1 - k0
        for h in range(heads):
            qs = q[q0:q1, h * dk:(h + 1) * dk]
            ks = k[k0:k1, h * dk:(h + 1) * dk]
            vs = v[k0:k1, h * dv:(h + 1) * dv]
            a = softmax_rows((qs @ ks.T) * scale)
            start = p_off[g] + h * n * m
            probs[start:start + n * m] = a.reshape(-1)
            out[q0:q1, h * dv:(h + 1) * dv] = a @ vs
    return out, probs


def attention_bwd(dout, q, k, v, probs, q_off, kv_off, heads, scale):
    groups = len(q_off) - 1
    dk = q.shape[1] // heads
    dv = v.shape[1] // heads
    p_off = prob_offsets(q_off, kv_off, heads)
    dq = np.zeros_like(q)
    dkk = np.zeros_like(k)
    dvv = np.zeros_like(v)
    for g in range(groups):
        q0, q1 = q_off[g], q_off[g + 1]
        k0, k1 = kv_off[g], kv_off[g + 1]
        n, m = q1 - q0, k1 - k0
        for h in range(heads):
            cq = slice(h * dk, (h + 1) * dk)
            cv = slice(h * dv, (h + 1) * dv)
            start = p_off[g] + h * n * m
            a = probs[start:start + n * m].reshape(n, m)
            do = dout[q0:q1, cv]
            dvv[k0:k1, cv] += a.T @ do
            da = do @ v[k0:k1, cv].T
            ds = softmax_rows_bwd(a, da) * scale
            dq[q0:q1, cq] += ds @ k[k0:k1, cq]
            dkk[k0:k1, cq] += ds.T @ q[q0:q1, cq]
    return dq, dkk, dvv


def adamw_update(w, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    """In-place AdamW step; ``bc1``/``bc2`` are the bias corrections 1 - beta**t."""
    if wd != 0.0:
        w *= 1.0 - lr * wd
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    w -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
