"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Everything the model computes is a composition of the ops in this module.
A :class:`Tensor` only records its parents when at least one input needs a
gradient, so the same model code runs as a cheap inference pass when the
parameters are wrapped as constants.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import kernels
from .errors import ConfigError, NumericalError

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64
INIT_STD = 0.02
LN_EPS = 1e-5
ZSCORE_EPS = 1e-8


class Tensor:
    """Immutable row-major matrix plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "backward_fn", "name", "aux")

    def __init__(self, data, requires_grad=False, op="const", parents=(), backward_fn=None,
                 name=None):
        arr = np.asarray(data)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ConfigError(f"tensors are 2-D, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.aux = None

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, op, parents, backward_fn):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, op, tuple(parents), backward_fn)
    return Tensor(data, False, op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    for ax in (0, 1):
        if a.shape[ax] != b.shape[ax] and 1 not in (a.shape[ax], b.shape[ax]):
            raise ConfigError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- ops

def matmul(a, b):
    if a.cols != b.rows:
        raise ConfigError(f"matmul: {a.shape} @ {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, "matmul", (a, b), back)


def add(a, b):
    _check_broadcast("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, "add", (a, b), back)


def sub(a, b):
    _check_broadcast("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(a.data - b.data, "sub", (a, b), back)


def mul(a, b):
    _check_broadcast("mul", a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, "mul", (a, b), back)


def scale(a, c):
    c = float(c)

    def back(g):
        return (g * c,)

    return _node(a.data * a.dtype.type(c), "scale", (a,), back)


def gelu(a):
    def back(g):
        return (kernels.gelu_bwd(a.data, g),)

    return _node(kernels.gelu_fwd(a.data), "gelu", (a,), back)


def softmax_rows(a):
    """Row-wise softmax with max subtraction."""
    y = kernels.softmax_rows(a.data)

    def back(g):
        return (kernels.softmax_rows_bwd(y, g),)

    return _node(y, "softmax_rows", (a,), back)


def layer_norm(x, gain, bias, eps=LN_EPS):
    if gain.shape != (1, x.cols) or bias.shape != (1, x.cols):
        raise ConfigError(f"layer_norm: gain/bias {gain.shape} do not match width {x.cols}")
    y, xhat, rstd = kernels.layer_norm_fwd(x.data, gain.data, bias.data, eps)

    def back(g):
        return kernels.layer_norm_bwd(g, xhat, rstd, gain.data)

    return _node(y, "layer_norm", (x, gain, bias), back)


def log(a):
    def back(g):
        return (g / a.data,)

    with np.errstate(divide="ignore", invalid="ignore"):  # non-finite output is reported upstream
        out = np.log(a.data)
    return _node(out, "log", (a,), back)


def clamp(a, lo, hi):
    out = np.clip(a.data, lo, hi)

    def back(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _node(out, "clamp", (a,), back)


def concat_rows(parts):
    parts = list(parts)
    widths = {p.cols for p in parts}
    if len(widths) != 1:
        raise ConfigError(f"concat_rows: mismatched widths {sorted(widths)}")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=0), "concat_rows", parts, back)


def take_rows(a, index):
    """Gather rows by integer index; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], "take_rows", (a,), back)


def sum_all(a):
    def back(g):
        return (np.full_like(a.data, g.reshape(-1)[0]),)

    return _node(a.data.sum(dtype=a.dtype).reshape(1, 1), "sum_all", (a,), back)


def mean_all(a):
    return scale(sum_all(a), 1.0 / a.data.size)


def grouped_attention(q, k, v, q_offsets, kv_offsets, heads=1):
    """Scaled dot-product attention over a ragged batch.

    Rows ``q_offsets[g]:q_offsets[g+1]`` of ``q`` attend only to rows
    ``kv_offsets[g]:kv_offsets[g+1]`` of ``k`` and ``v``. Columns are split
    into ``heads`` equal blocks; scores are scaled by 1/sqrt(head width).
    """
    q_off = np.ascontiguousarray(q_offsets, dtype=np.int64)
    kv_off = np.ascontiguousarray(kv_offsets, dtype=np.int64)
    if q.cols != k.cols or k.rows != v.rows:
        raise ConfigError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    if q.cols % heads or v.cols % heads:
        raise ConfigError(f"attention width {q.cols} not divisible by {heads} heads")
    if len(q_off) != len(kv_off) or q_off[-1] != q.rows or kv_off[-1] != k.rows:
        raise ConfigError("attention: offsets do not cover the inputs")
    if np.any(np.diff(kv_off) < 1):
        raise ConfigError("attention: every group needs at least one key")
    sc = 1.0 / math.sqrt(q.cols // heads)
    out, probs = kernels.attention_fwd(q.data, k.data, v.data, q_off, kv_off, heads, sc)

    def back(g):
        return kernels.attention_bwd(g, q.data, k.data, v.data, probs, q_off, kv_off, heads, sc)

    node = _node(out, "attention", (q, k, v), back)
    node.aux = probs
    return node


def attention_weights(node, q_offsets, kv_offsets, heads=1):
    """Recover the per-group attention matrices stored by :func:`grouped_attention`."""
    probs = node.aux
    q_off = np.asarray(q_offsets, dtype=np.int64)
    kv_off = np.asarray(kv_offsets, dtype=np.int64)
    mats = []
    pos = 0
    for g in range(len(q_off) - 1):
        n, m = q_off[g + 1] - q_off[g], kv_off[g + 1] - kv_off[g]
        mats.append(probs[pos:pos + heads * n * m].reshape(heads, n, m))
        pos += heads * n * m
    return mats


# ---------------------------------------------------------------- backprop

def topological_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    order = topological_order(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for p, g in zip(node.parents, grads):
            if not p.requires_grad:
                continue
            p.grad = g if p.grad is None else p.grad + g
        node.grad = None
    return order


def first_nonfinite(order):
    for node in order:
        if not np.all(np.isfinite(node.data)):
            return node.op
    return None


# ---------------------------------------------------------------- parameters

def _name_seed(seed, name):
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def truncated_normal(rng, shape, std=INIT_STD, bound=2.0):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


class ParamStore:
    """Named parameter arrays with per-tensor trainable flags.

    Initial values depend only on ``(seed, name)``, so adding a parameter
    never perturbs the others.
    """

    def __init__(self, seed=0, dtype=TRAIN_DTYPE):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self._arrays: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name, shape=None, init="normal", trainable=True, std=INIT_STD):
        if name in self._arrays:
            raise ConfigError(f"duplicate parameter name {name!r}")
        if isinstance(init, np.ndarray):
            arr = np.array(init, dtype=self.dtype, ndmin=2)
        elif init == "normal":
            arr = truncated_normal(_name_seed(self.seed, name), shape, std)
        elif init == "zeros":
            arr = np.zeros(shape)
        elif init == "ones":
            arr = np.ones(shape)
        else:
            raise ConfigError(f"unknown initializer {init!r}")
        self._arrays[name] = np.ascontiguousarray(arr, dtype=self.dtype)
        self._trainable[name] = bool(trainable)
        return self._arrays[name]

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def is_trainable(self, name):
        return self._trainable[name]

    def trainable_names(self):
        return [n for n, t in self._trainable.items() if t]

    def set(self, name, value):
        arr = self._arrays[name]
        value = np.asarray(value, dtype=self.dtype).reshape(arr.shape)
        arr[...] = value

    def num_parameters(self, trainable_only=False):
        return sum(a.size for n, a in self._arrays.items()
                   if self._trainable[n] or not trainable_only)

    def as_tensors(self, requires_grad=True):
        """Wrap every array as a leaf tensor; frozen ones never require grad."""
        return {n: Tensor(a, requires_grad and self._trainable[n], "param", name=n)
                for n, a in self._arrays.items()}

    def copy(self, dtype=None):
        out = ParamStore(self.seed, dtype or self.dtype)
        for n, a in self._arrays.items():
            out._arrays[n] = np.ascontiguousarray(a, dtype=out.dtype).copy()
            out._trainable[n] = self._trainable[n]
        return out

    def load_state(self, arrays, trainable):
        self._arrays = {n: np.ascontiguousarray(a, dtype=self.dtype) for n, a in arrays.items()}
        self._trainable = dict(trainable)


@dataclass
class GradTape:
    """Result of one reverse sweep: the ops visited and per-parameter gradients."""

    ops: list
    grads: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.grads[name]

    def __contains__(self, name):
        return name in self.grads


def value_and_grad(fn: Callable[[Mapping[str, Tensor]], Tensor], params: ParamStore):
    """Evaluate ``fn`` on the parameters and differentiate it.

    ``fn`` receives the name -> Tensor mapping and must return a 1x1 tensor.
    Every trainable parameter gets a gradient entry (zeros if unused);
    frozen ones get none.
    """
    leaves = params.as_tensors(requires_grad=True)
    out = fn(leaves)
    if out.shape != (1, 1):
        raise ConfigError(f"value_and_grad needs a scalar output, got {out.shape}")
    value = out.item()
    if not math.isfinite(value):
        op = first_nonfinite(topological_order(out)) if out.requires_grad else out.op
        raise NumericalError(f"non-finite loss ({value}) first produced by op {op!r}", op=op)
    if out.requires_grad:
        order = backward(out)
    else:
        order = [out]
    grads = {}
    for name in params.trainable_names():
        g = leaves[name].grad
        grads[name] = np.zeros_like(params[name]) if g is None else np.asarray(g, params.dtype)
    return value, GradTape([n.op for n in order], grads)


@dataclass
class GradCheckReport:
    max_error: float
    per_param: dict

    def passed(self, tol=1e-4):
        return self.max_error < tol


def finite_diff_check(fn, params: ParamStore, h=1e-5, samples=6, seed=0, analytic=None):
    """Compare analytic gradients with central differences.

    Up to ``samples`` entries of every trainable tensor are perturbed by
    ``±h``. The error for an entry is ``|a - fd| / max(|a|, |fd|, 1e-12)``;
    the report carries the maximum overall and per parameter. Pass
    ``analytic`` (name -> array) to check gradients from elsewhere.
    """
    if params.dtype != np.float64:
        raise ConfigError("finite_diff_check requires a float64 ParamStore")
    names = params.trainable_names()
    if not names:
        return GradCheckReport(0.0, {})
    if analytic is None:
        _, tape = value_and_grad(fn, params)
        analytic = tape.grads
    rng = np.random.default_rng(seed)

    def f():
        return fn(params.as_tensors(requires_grad=False)).item()

    per_param = {}
    for name in names:
        arr = params[name]
        flat = arr.reshape(-1)
        idx = np.arange(flat.size) if flat.size <= samples else rng.choice(flat.size, samples,
                                                                           replace=False)
        worst = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            fd = (fp - fm) / (2 * h)
            a = float(np.asarray(analytic[name]).reshape(-1)[i])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-12)
            worst = max(worst, err)
        per_param[name] = worst
    return GradCheckReport(max(per_param.values()), per_param)


# ---------------------------------------------------------------- small helpers

def zscore_normalize(v):
    """Zero-mean, unit population-std copy of ``v``; all zeros when variance < 1e-8."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ConfigError("zscore_normalize needs a non-empty vector")
    mean = v.mean()
    var = ((v - mean) ** 2).mean()
    if var < ZSCORE_EPS:
        return np.zeros_like(v)
    return (v - mean) / math.sqrt(var)


def linear(x, P, prefix):
    w, b = P[f"{prefix}.w"], P[f"{prefix}.b"]
    if x.cols != w.rows:
        raise ConfigError(f"{prefix}.w expects {w.rows} input columns, got {x.cols}")
    return add(matmul(x, w), b)


def add_linear(store, prefix, fan_in, fan_out, zero=False):
    store.add(f"{prefix}.w", (fan_in, fan_out), "zeros" if zero else "normal")
    store.add(f"{prefix}.b", (1, fan_out), "zeros")


def add_mlp(store, prefix, fan_in, width, zero_last=False):
    """Linear -> GELU -> Linear with hidden width equal to the output width."""
    add_linear(store, f"{prefix}.fc1", fan_in, width)
    add_linear(store, f"{prefix}.fc2", width, width, zero=zero_last)


def mlp_forward(x, P, prefix):
    return linear(gelu(linear(x, P, f"{prefix}.fc1")), P, f"{prefix}.fc2")


def iter_chunks(seq: Iterable, size: int):
    buf = []
    for item in seq:
        buf.append(item)
        if len(buf) == size:
            yield buf
            buf = []
    if buf:
        yield buf
