"""AdamW training loop with early stopping on validation UAR, plus checkpoints."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint as ckpt_io
from . import kernels
from .corpus import MIN_TAIL_S, OVERLAP_S, WINDOW_S, segment_all, split_records
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .evaluation import evaluate_records
from .losses import batch_loss, check_convention
from .model import MentalPerceiver, ModelConfig
from .numerics import ParamStore, value_and_grad
from .priors import CategoryPriorPair

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 3e-5
    epochs: int = 200
    patience: int = 15
    batch_size: int = 16
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    final_multiplier: float = 0.1
    schedule_table: list | None = None
    min_delta: float = 1e-6
    selection_level: str = "participant"
    loss_convention: str = "prose_consistent"
    window_s: float = WINDOW_S
    overlap_s: float = OVERLAP_S
    min_tail_s: float = MIN_TAIL_S
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("lr, epochs, patience and batch_size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.selection_level not in ("segment", "participant"):
            raise ConfigError("selection_level must be segment or participant")
        self.loss_convention = check_convention(self.loss_convention)
        if self.schedule_table is not None:
            self.schedule_table = [float(v) for v in self.schedule_table]
            if not self.schedule_table or min(self.schedule_table) <= 0:
                raise ConfigError("schedule_table multipliers must be positive")
        if self.final_multiplier <= 0:
            raise ConfigError("final_multiplier must be positive")

    def segment_kw(self):
        return {"window": self.window_s, "overlap": self.overlap_s, "min_tail": self.min_tail_s}


def lr_schedule(epoch, epochs=200, final_multiplier=0.1, table=None):
    """Learning-rate multiplier for ``epoch`` (0-based).

    Default: linear from 1.0 at epoch 0 to ``final_multiplier`` at the last
    epoch. A ``table`` gives per-epoch factors, its last entry repeating.
    """
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    if table:
        mult = float(table[min(epoch, len(table) - 1)])
    elif epochs <= 1:
        mult = 1.0
    else:
        mult = 1.0 - (1.0 - final_multiplier) * min(epoch, epochs - 1) / (epochs - 1)
    if not mult > 0:
        raise ConfigError(f"learning-rate multiplier must be positive, got {mult}")
    return mult


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self):
        return AdamState(self.step, {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adamw_step(params: ParamStore, grads, state: AdamState, config: TrainConfig, lr=None):
    """One decoupled-weight-decay Adam update, in place on ``params``."""
    lr = config.lr if lr is None else lr
    names = params.trainable_names()
    for name in names:
        if name not in grads:
            raise NumericalError(f"no gradient for trainable parameter {name!r}", op=name)
        if not math.isfinite(float(np.sum(grads[name], dtype=np.float64))):
            raise NumericalError(f"non-finite gradient for parameter {name!r}", op=name)
    state.step += 1
    bc1 = 1.0 - config.beta1 ** state.step
    bc2 = 1.0 - config.beta2 ** state.step
    for name in names:
        w = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        g = np.ascontiguousarray(grads[name], dtype=w.dtype)
        kernels.adamw_update(w, g, state.m[name], state.v[name], lr, config.beta1,
                             config.beta2, config.eps, config.weight_decay, bc1, bc2)
    return state


class EarlyStopping:
    """Tracks the best metric; ``should_stop`` after ``patience`` flat epochs."""

    def __init__(self, patience=15, min_delta=1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = -math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch, metric):
        if metric > self.best + self.min_delta:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ParamStore
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = -1
    best_metric: float = float("nan")
    rng_state: dict | None = None
    train_config: TrainConfig | None = None
    extra: dict = field(default_factory=dict)

    def model(self):
        return MentalPerceiver(self.model_config, params=self.params)

    def save(self, path):
        tensors = dict(self.params.items())
        for name in self.adam.m:
            tensors[f"adam.m/{name}"] = self.adam.m[name]
            tensors[f"adam.v/{name}"] = self.adam.v[name]
        meta = {
            "kind": "checkpoint",
            "model_config": self.model_config.to_dict(),
            "train_config": None if self.train_config is None else asdict(self.train_config),
            "epoch": self.epoch,
            "best_metric": None if math.isnan(self.best_metric) else self.best_metric,
            "adam_step": self.adam.step,
            "rng_state": self.rng_state,
            "param_seed": self.params.seed,
            "trainable": {n: self.params.is_trainable(n) for n in self.params},
            "extra": self.extra,
        }
        ckpt_io.save(path, meta, tensors)

    @classmethod
    def load(cls, path):
        meta, tensors = ckpt_io.load(path)
        if meta.get("kind") != "checkpoint":
            raise CheckpointError(f"{path} is not a model checkpoint")
        trainable = meta["trainable"]
        arrays = {n: tensors[n] for n in trainable}
        dtypes = {a.dtype for a in arrays.values()}
        store = ParamStore(meta.get("param_seed", 0), dtypes.pop() if len(dtypes) == 1 else
                           np.float32)
        store.load_state(arrays, trainable)
        adam = AdamState(meta.get("adam_step", 0),
                         {k[7:]: v for k, v in tensors.items() if k.startswith("adam.m/")},
                         {k[7:]: v for k, v in tensors.items() if k.startswith("adam.v/")})
        tc = meta.get("train_config")
        best = meta.get("best_metric")
        return cls(ModelConfig.from_dict(meta["model_config"]), store, adam, meta["epoch"],
                   float("nan") if best is None else best, meta.get("rng_state"),
                   None if tc is None else TrainConfig(**tc), meta.get("extra", {}))


def save_priors(path, priors: CategoryPriorPair, extra=None):
    ckpt_io.save(path, {"kind": "priors", "extra": extra or {}},
                 {"prior.c0": priors.p_c0, "prior.c1": priors.p_c1})


def load_priors(path):
    meta, tensors = ckpt_io.load(path)
    if meta.get("kind") != "priors":
        raise CheckpointError(f"{path} is not a prior file")
    return CategoryPriorPair(tensors["prior.c0"], tensors["prior.c1"])


def priors_from_records(records, config: TrainConfig | None = None):
    """Category priors from the training split only (one text vector per segment)."""
    kw = (config or TrainConfig()).segment_kw()
    segs = segment_all(split_records(records, "train"), **kw)
    return CategoryPriorPair.from_samples([s.text for s in segs], [s.label for s in segs])


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    match_loss: float
    cls_loss: float
    val_uar: float
    lr_multiplier: float
    seconds: float

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    best: Checkpoint
    log: list


def train(records, model: MentalPerceiver, config: TrainConfig, validate=None,
          on_epoch=None, max_steps=None):
    """Fit ``model`` in place and return the best-validation checkpoint.

    ``validate(model) -> float`` overrides the default validation UAR;
    ``on_epoch(EpochLog)`` is called after each epoch; ``max_steps`` caps
    the number of optimizer steps (testing aid).
    """
    train_recs = split_records(records, "train")
    if len({r.label for r in train_recs}) < 2:
        raise DataError("training split contains a single class")
    segs = segment_all(train_recs, **config.segment_kw())
    if validate is None:
        val_recs = split_records(records, "validation")

        def validate(m):
            res = evaluate_records(m, val_recs, config.selection_level,
                                   **config.segment_kw())
            return res.uar(config.selection_level)

    rng = np.random.default_rng(config.seed)
    state = AdamState()
    stopper = EarlyStopping(config.patience, config.min_delta)
    best = None
    history = []
    steps = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        mult = lr_schedule(epoch, config.epochs, config.final_multiplier,
                           config.schedule_table)
        order = rng.permutation(len(segs))
        tot = match_sum = cls_sum = 0.0
        seen = 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [segs[i] for i in order[start:start + config.batch_size]]
            labels = [s.label for s in batch]
            parts = {}

            def objective(P):
                out = model.forward_samples(P, [(s.text, s.audio) for s in batch])
                parts["match"], parts["cls"], total = batch_loss(out, labels,
                                                                 config.loss_convention)
                return total

            try:
                value, tape = value_and_grad(objective, model.params)
                adamw_step(model.params, tape.grads, state, config, config.lr * mult)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {b}: {exc}", op=exc.op) from None
            tot += value * len(batch)
            match_sum += parts["match"].item() * len(batch)
            cls_sum += parts["cls"].item() * len(batch)
            seen += len(batch)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        metric = float(validate(model))
        entry = EpochLog(epoch, tot / seen, match_sum / seen, cls_sum / seen,
                         metric, mult, time.perf_counter() - t0)
        history.append(entry)
        log.info("epoch %d loss %.5f val_uar %.4f lr_mult %.4f", epoch, entry.train_loss,
                 metric, mult)
        if on_epoch is not None:
            on_epoch(entry)
        if stopper.update(epoch, metric):
            best = Checkpoint(model.config, model.params.copy(), state.copy(), epoch, metric,
                              copy.deepcopy(rng.bit_generator.state), config)
        if stopper.should_stop or (max_steps is not None and steps >= max_steps):
            break
    return TrainResult(best, history)
