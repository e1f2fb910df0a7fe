import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mental_perceiver.attention import AttentionBlock, single_group
from mental_perceiver.errors import ConfigError
from mental_perceiver.numerics import (
    ParamStore, Tensor, attention_weights, finite_diff_check, grouped_attention, mean_all, mul,
)

from conftest import randomize


def make_block(q_in=8, kv_in=6, out=8, heads=1, zero_init=False, self_attention=False,
               seed=0, dtype=np.float64):
    blk = AttentionBlock("blk", q_in, kv_in, out, heads, self_attention=self_attention)
    store = ParamStore(seed, dtype)
    blk.init(store, zero_init)
    return blk, store


def run(blk, store, q, kv=None):
    P = store.as_tensors(False)
    return blk(P, Tensor(q), None if kv is None else Tensor(kv)).data


def test_default_shape():
    blk, store = make_block(512, 768, 512, dtype=np.float32)
    rng = np.random.default_rng(0)
    out = run(blk, store, rng.standard_normal((2, 512)).astype(np.float32),
              rng.standard_normal((64, 768)).astype(np.float32))
    assert out.shape == (2, 512)


def test_singleton_key_has_weight_one():
    rng = np.random.default_rng(1)
    q, k, v = (Tensor(rng.standard_normal(s)) for s in ((3, 4), (1, 4), (1, 4)))
    node = grouped_attention(q, k, v, single_group(3), single_group(1))
    w = attention_weights(node, single_group(3), single_group(1))
    assert all(np.all(m == 1.0) for m in w)


def test_kv_permutation_invariance():
    blk, store = make_block()
    randomize(store, seed=2)
    rng = np.random.default_rng(3)
    q = rng.standard_normal((3, 8))
    kv = rng.standard_normal((11, 6))
    perm = rng.permutation(11)
    np.testing.assert_allclose(run(blk, store, q, kv), run(blk, store, q, kv[perm]), atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 16), st.integers(1, 64))
def test_row_count_equivariance(n, m):
    blk, store = make_block(q_in=4, kv_in=3, out=4)
    rng = np.random.default_rng(n * 100 + m)
    assert run(blk, store, rng.standard_normal((n, 4)), rng.standard_normal((m, 3))).shape == (n, 4)


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_attention_rows_sum_to_one(heads):
    rng = np.random.default_rng(heads)
    q_off, kv_off = np.array([0, 2, 5]), np.array([0, 4, 13])
    q, k, v = (Tensor(rng.standard_normal(s)) for s in ((5, 8), (13, 8), (13, 8)))
    node = grouped_attention(q, k, v, q_off, kv_off, heads)
    for mat in attention_weights(node, q_off, kv_off, heads):
        np.testing.assert_allclose(mat.sum(axis=-1), 1.0, atol=1e-6)


@pytest.mark.parametrize("self_attention", [False, True])
def test_identity_with_zero_init(self_attention):
    kv_in = 8 if self_attention else 6
    blk, store = make_block(kv_in=kv_in, zero_init=True, self_attention=self_attention)
    # non-trivial everything else: only the zeroed projections guarantee the identity
    for name in store.trainable_names():
        if name not in ("blk.o.w", "blk.o.b", "blk.mlp.fc2.w", "blk.mlp.fc2.b"):
            store.set(name, np.random.default_rng(len(name)).standard_normal(store[name].shape))
    rng = np.random.default_rng(5)
    q = rng.standard_normal((3, 8))
    kv = None if self_attention else rng.standard_normal((9, kv_in))
    assert np.array_equal(run(blk, store, q, kv), q)


@pytest.mark.parametrize("heads,self_attention", [(1, False), (2, False), (1, True)])
def test_gradient_check(heads, self_attention):
    q_in, kv_in = (8, 8) if self_attention else (6, 5)
    blk, store = make_block(q_in=q_in, kv_in=kv_in, out=8, heads=heads,
                            self_attention=self_attention)
    randomize(store, seed=7, std=0.5)
    rng = np.random.default_rng(8)
    q = Tensor(rng.standard_normal((3, blk.q_in)))
    kv = None if self_attention else Tensor(rng.standard_normal((5, kv_in)))
    w = Tensor(rng.standard_normal((3, 8)))
    fn = lambda P: mean_all(mul(blk(P, q, kv), w))
    report = finite_diff_check(fn, store, samples=8, seed=1)
    assert report.max_error < 1e-4, report.per_param


def test_bad_heads():
    with pytest.raises(ConfigError):
        AttentionBlock("b", 8, 8, 6, heads=4)


def test_width_mismatch():
    blk, store = make_block()
    with pytest.raises(ConfigError):
        run(blk, store, np.ones((2, 5)), np.ones((3, 6)))
