"""The Mental-Perceiver forward pass.

prior embedding (2xD_z) --cross-attends--> fused input x (MxD_x)
    -> k latent self-attention blocks
    -> learnable query (2xD_q) cross-attends the latents
    -> shared linear head per row -> y_c0, y_c1 (1x2 each), fused y' = mean

Batches are handled as ragged stacks: every sample contributes two latent
rows and its own M input rows, and attention never crosses sample bounds.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .attention import AttentionBlock
from .corpus import add_fusion_params, fuse_modalities
from .errors import ConfigError, DataError
from .numerics import (
    TRAIN_DTYPE,
    ParamStore,
    Tensor,
    add,
    add_linear,
    concat_rows,
    linear,
    scale,
    softmax_rows,
    take_rows,
)
from .priors import CategoryPriorPair, build_prior_embedding


@dataclass(frozen=True)
class ModelConfig:
    d_x: int = 768
    d_z: int = 512
    d_q: int = 512
    d_y: int = 512
    depth: int = 8
    heads: int = 1
    audio_width: int = 80
    zero_init: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"latent depth k must be >= 1, got {self.depth}")
        for name in ("d_x", "d_z", "d_q", "d_y", "heads", "audio_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("d_z", "d_y"):
            if getattr(self, name) % self.heads:
                raise ConfigError(f"{name}={getattr(self, name)} not divisible by "
                                  f"{self.heads} heads")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def softmax2(logits):
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    e = np.exp(logits - logits.max())
    return e / e.sum()


@dataclass
class ClassWiseOutput:
    """Logits for one sample: one 1x2 pair per category prior plus their mean."""

    y_c0: np.ndarray
    y_c1: np.ndarray
    y_prime: np.ndarray | None = None

    def __post_init__(self):
        self.y_c0 = np.asarray(self.y_c0, dtype=np.float64).reshape(2)
        self.y_c1 = np.asarray(self.y_c1, dtype=np.float64).reshape(2)
        if self.y_prime is None:
            self.y_prime = (self.y_c0 + self.y_c1) / 2.0
        self.y_prime = np.asarray(self.y_prime, dtype=np.float64).reshape(2)

    @property
    def probabilities(self):
        return softmax2(self.y_prime)

    @property
    def predicted_class(self):
        return decide(self.probabilities)


def decide(probabilities):
    """Argmax over (normal, disorder); an exact tie goes to disorder."""
    return 1 if probabilities[1] >= probabilities[0] else 0


@dataclass
class BatchOutput:
    """Tensor-valued logits for a batch, one row per sample."""

    y_c0: Tensor
    y_c1: Tensor
    y_prime: Tensor

    def __len__(self):
        return self.y_c0.rows

    def sample(self, i):
        return ClassWiseOutput(self.y_c0.data[i], self.y_c1.data[i], self.y_prime.data[i])

    def probabilities(self):
        return softmax_rows(self.y_prime).data.astype(np.float64)


def _pair_offsets(batch):
    return np.arange(0, 2 * batch + 1, 2, dtype=np.int64)


def _row_offsets(xs):
    return np.concatenate([[0], np.cumsum([x.rows for x in xs])]).astype(np.int64)


class MentalPerceiver:
    """Parameters plus the forward computation.

    ``params`` holds every weight, including the frozen priors. Methods take
    an optional name -> Tensor mapping ``P`` so the same code serves
    inference (constants) and training (leaves recorded for backprop).
    """

    def __init__(self, config: ModelConfig, priors: CategoryPriorPair | None = None,
                 dtype=TRAIN_DTYPE, params: ParamStore | None = None):
        self.config = config
        c = config
        self.encoder = AttentionBlock("encoder", c.d_z, c.d_x, c.d_z, c.heads)
        self.latents = [AttentionBlock(f"latent.{i}", c.d_z, c.d_z, c.d_z, c.heads,
                                       self_attention=True) for i in range(c.depth)]
        self.decoder = AttentionBlock("decoder", c.d_q, c.d_z, c.d_y, c.heads)
        if params is not None:
            self.params = params
            return
        if priors is None:
            raise ConfigError("a new model needs category priors")
        if priors.width != c.d_x:
            raise ConfigError(f"prior width {priors.width} must equal text width d_x={c.d_x}")
        store = ParamStore(c.seed, dtype)
        add_fusion_params(store, c.audio_width, c.d_x)
        priors.install(store, c.d_z)
        self.encoder.init(store, c.zero_init)
        for blk in self.latents:
            blk.init(store, c.zero_init)
        store.add("query", (2, c.d_q))
        self.decoder.init(store, c.zero_init)
        add_linear(store, "head", c.d_y, 2)
        self.params = store

    @property
    def priors(self):
        return CategoryPriorPair.from_store(self.params)

    def constants(self):
        return self.params.as_tensors(requires_grad=False)

    def _cast(self, arr):
        return Tensor(np.ascontiguousarray(arr, dtype=self.params.dtype))

    # -- the four stages -------------------------------------------------

    def fuse(self, P, text=None, audio=None):
        return fuse_modalities(
            None if text is None else self._cast(text),
            None if audio is None else self._cast(audio),
            P, self.config.d_x)

    def encode(self, P, p, x, q_offsets=None, kv_offsets=None):
        if x.rows < 1:
            raise DataError("encode needs at least one input row")
        return self.encoder(P, p, x, q_offsets, kv_offsets)

    def process(self, P, z, offsets=None):
        for blk in self.latents:
            z = blk(P, z, None, offsets)
        return z

    def decode(self, P, q, z, offsets=None):
        """Return the 2B x 2 logit tensor; even rows are y_c0, odd rows y_c1."""
        y = self.decoder(P, q, z, offsets, offsets)
        return linear(y, P, "head")

    # -- batched forward -------------------------------------------------

    def forward(self, P, xs):
        """Run fused inputs ``xs`` (list of M_i x D_x tensors) as one ragged batch."""
        if not xs:
            raise DataError("empty batch")
        for x in xs:
            if x.rows < 1:
                raise DataError("encode needs at least one input row")
        b = len(xs)
        pairs = _pair_offsets(b)
        tile = np.tile(np.array([0, 1]), b)
        x = xs[0] if b == 1 else concat_rows(xs)
        p = take_rows(build_prior_embedding(P), tile)
        z = self.encode(P, p, x, pairs, _row_offsets(xs))
        z = self.process(P, z, pairs)
        logits = self.decode(P, take_rows(P["query"], tile), z, pairs)
        y_c0 = take_rows(logits, np.arange(0, 2 * b, 2))
        y_c1 = take_rows(logits, np.arange(1, 2 * b, 2))
        return BatchOutput(y_c0, y_c1, scale(add(y_c0, y_c1), 0.5))

    def forward_samples(self, P, samples):
        """``samples`` yields (text, audio) pairs of raw arrays (either may be None)."""
        return self.forward(P, [self.fuse(P, t, a) for t, a in samples])

    def output(self, text=None, audio=None):
        return self.forward_samples(self.constants(), [(text, audio)]).sample(0)

    def output_fused(self, x):
        return self.forward(self.constants(), [self._cast(x)]).sample(0)

    def predict(self, text=None, audio=None):
        """Return (class, probabilities) with class 1 = disorder."""
        probs = self.output(text, audio).probabilities
        return decide(probs), probs

    def predict_fused(self, x):
        probs = self.output_fused(x).probabilities
        return decide(probs), probs

    def predict_batch(self, samples, batch_size=32):
        """Disorder probabilities for many (text, audio) samples."""
        P = self.constants()
        out = []
        samples = list(samples)
        for i in range(0, len(samples), batch_size):
            out.append(self.forward_samples(P, samples[i:i + batch_size]).probabilities())
        return np.concatenate(out, axis=0) if out else np.zeros((0, 2))
