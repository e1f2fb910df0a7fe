"""Frozen category semantic priors and their learnable projection.

Each class prior is the average of z-scored text representations of that
class's training samples. The two priors are stacked into a 2xH array and
mapped to the latent width by a small MLP; only the MLP is trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CorpusError
from .numerics import ParamStore, add_mlp, concat_rows, mlp_forward, zscore_normalize

PRIOR_NAMES = ("prior.c0", "prior.c1")


def text_representation(text_features):
    """Mean-pool token embeddings into a single H-vector."""
    text_features = np.asarray(text_features, dtype=np.float64)
    if text_features.ndim != 2 or text_features.shape[0] == 0:
        raise ConfigError(f"text features must be a non-empty T x H matrix, "
                          f"got shape {text_features.shape}")
    return text_features.mean(axis=0)


def compute_category_prior(reps):
    reps = [np.asarray(r, dtype=np.float64).reshape(-1) for r in reps]
    if not reps:
        raise CorpusError("category has no training samples")
    widths = {r.size for r in reps}
    if len(widths) != 1:
        raise ConfigError(f"text representations have mixed widths {sorted(widths)}")
    return np.mean([zscore_normalize(r) for r in reps], axis=0).reshape(1, -1)


@dataclass
class CategoryPriorPair:
    p_c0: np.ndarray
    p_c1: np.ndarray

    def __post_init__(self):
        self.p_c0 = np.asarray(self.p_c0, dtype=np.float64).reshape(1, -1)
        self.p_c1 = np.asarray(self.p_c1, dtype=np.float64).reshape(1, -1)
        if self.p_c0.shape != self.p_c1.shape:
            raise ConfigError(f"prior widths differ: {self.p_c0.shape} vs {self.p_c1.shape}")

    @property
    def width(self):
        return self.p_c0.shape[1]

    @classmethod
    def from_samples(cls, texts, labels):
        """Build both priors from per-sample text matrices and 0/1 labels."""
        reps = {0: [], 1: []}
        for t, y in zip(texts, labels):
            if y not in reps:
                raise CorpusError(f"label {y!r} is not 0 or 1")
            if t is not None and len(t):
                reps[int(y)].append(text_representation(t))
        for c in (0, 1):
            if not reps[c]:
                raise CorpusError(f"category {c} has no training samples")
        return cls(compute_category_prior(reps[0]), compute_category_prior(reps[1]))

    def install(self, store: ParamStore, latent_width, prefix="prior_mlp"):
        """Register the frozen priors and a fresh projection MLP in ``store``."""
        store.add(PRIOR_NAMES[0], init=self.p_c0, trainable=False)
        store.add(PRIOR_NAMES[1], init=self.p_c1, trainable=False)
        add_mlp(store, prefix, self.width, latent_width)

    @classmethod
    def from_store(cls, store):
        return cls(store[PRIOR_NAMES[0]], store[PRIOR_NAMES[1]])


def build_prior_embedding(P, prefix="prior_mlp"):
    """Return the 2xD query seed; row 0 from the normal prior, row 1 from the disorder prior."""
    return mlp_forward(concat_rows([P[PRIOR_NAMES[0]], P[PRIOR_NAMES[1]]]), P, prefix)
