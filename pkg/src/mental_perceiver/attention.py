"""Transformer-style attention block: QKV attention followed by an MLP.

Both sub-layers are pre-normalised and wrapped in residual connections.
With ``zero_init`` the output projection and the MLP's second layer start
at zero, which makes a freshly built block the identity on its query input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import (
    ParamStore,
    Tensor,
    add,
    add_linear,
    add_mlp,
    grouped_attention,
    layer_norm,
    linear,
    matmul,
    mlp_forward,
)


def single_group(rows):
    return np.array([0, rows], dtype=np.int64)


@dataclass(frozen=True)
class AttentionBlock:
    """Shapes and parameter prefix of one attention block.

    The weights themselves live in a :class:`ParamStore` under ``prefix``.
    """

    prefix: str
    q_in: int
    kv_in: int
    out: int
    heads: int = 1
    self_attention: bool = False

    def __post_init__(self):
        if min(self.q_in, self.kv_in, self.out, self.heads) < 1:
            raise ConfigError(f"{self.prefix}: widths and head count must be >= 1")
        if self.out % self.heads:
            raise ConfigError(f"{self.prefix}: width {self.out} not divisible by "
                              f"{self.heads} heads")
        if self.self_attention and self.q_in != self.kv_in:
            raise ConfigError(f"{self.prefix}: self-attention needs q_in == kv_in")

    @property
    def d_k(self):
        return self.out // self.heads

    def init(self, store: ParamStore, zero_init=False):
        p = self.prefix
        store.add(f"{p}.ln_q.g", (1, self.q_in), "ones")
        store.add(f"{p}.ln_q.b", (1, self.q_in), "zeros")
        if not self.self_attention:
            store.add(f"{p}.ln_kv.g", (1, self.kv_in), "ones")
            store.add(f"{p}.ln_kv.b", (1, self.kv_in), "zeros")
        add_linear(store, f"{p}.q", self.q_in, self.out)
        # no key bias: it shifts every score in a row equally, so softmax ignores it
        store.add(f"{p}.k.w", (self.kv_in, self.out))
        add_linear(store, f"{p}.v", self.kv_in, self.out)
        add_linear(store, f"{p}.o", self.out, self.out, zero=zero_init)
        if self.q_in != self.out:
            store.add(f"{p}.res.w", (self.q_in, self.out))
        store.add(f"{p}.ln_mlp.g", (1, self.out), "ones")
        store.add(f"{p}.ln_mlp.b", (1, self.out), "zeros")
        add_mlp(store, f"{p}.mlp", self.out, self.out, zero_last=zero_init)
        return self

    def __call__(self, P, q_input: Tensor, kv_input: Tensor | None = None,
                 q_offsets=None, kv_offsets=None):
        return attention_forward(q_input, q_input if kv_input is None else kv_input, P, self,
                                 q_offsets, kv_offsets)


def attention_forward(q_input, kv_input, P, block: AttentionBlock, q_offsets=None,
                      kv_offsets=None):
    """Run ``block`` with ``q_input`` as queries and ``kv_input`` as keys/values.

    Offsets split the rows into independent samples (see
    :func:`grouped_attention`); by default everything is one sample. The
    result has exactly ``q_input.rows`` rows.
    """
    p = block.prefix
    if q_input.cols != block.q_in:
        raise ConfigError(f"{p}: query input has {q_input.cols} columns, expected {block.q_in}")
    if kv_input.cols != block.kv_in:
        raise ConfigError(f"{p}: key/value input has {kv_input.cols} columns, "
                          f"expected {block.kv_in}")
    if q_input.rows < 1 or kv_input.rows < 1:
        raise ConfigError(f"{p}: empty query or key/value input")
    if q_offsets is None:
        q_offsets = single_group(q_input.rows)
    if kv_offsets is None:
        kv_offsets = q_offsets if block.self_attention else single_group(kv_input.rows)

    qn = layer_norm(q_input, P[f"{p}.ln_q.g"], P[f"{p}.ln_q.b"])
    if block.self_attention:
        kvn = qn
    else:
        kvn = layer_norm(kv_input, P[f"{p}.ln_kv.g"], P[f"{p}.ln_kv.b"])
    q = linear(qn, P, f"{p}.q")
    k = matmul(kvn, P[f"{p}.k.w"])
    v = linear(kvn, P, f"{p}.v")
    attended = grouped_attention(q, k, v, q_offsets, kv_offsets, block.heads)
    residual = q_input if block.q_in == block.out else matmul(q_input, P[f"{p}.res.w"])
    h = add(residual, linear(attended, P, f"{p}.o"))
    return add(h, mlp_forward(layer_norm(h, P[f"{p}.ln_mlp.g"], P[f"{p}.ln_mlp.b"]), P,
                              f"{p}.mlp"))
