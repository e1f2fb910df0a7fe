"""Run configuration: a sectioned TOML file plus command-line overrides.

Recognised keys (every one optional)::

    seed = 0

    [model]   d_x d_z d_q d_y depth heads audio_width zero_init
    [train]   lr epochs patience batch_size weight_decay beta1 beta2 eps
              final_multiplier schedule_table min_delta selection_level
    [loss]    convention            # prose_consistent | literal_paper
    [data]    window_s overlap_s min_tail_s

Unknown sections or keys are rejected. ``seed`` seeds both parameter
initialisation and batch shuffling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

SCHEMA = {
    "model": {"d_x": int, "d_z": int, "d_q": int, "d_y": int, "depth": int, "heads": int,
              "audio_width": int, "zero_init": bool},
    "train": {"lr": float, "epochs": int, "patience": int, "batch_size": int,
              "weight_decay": float, "beta1": float, "beta2": float, "eps": float,
              "final_multiplier": float, "schedule_table": list, "min_delta": float,
              "selection_level": str},
    "loss": {"convention": str},
    "data": {"window_s": float, "overlap_s": float, "min_tail_s": float},
}
TOP_LEVEL = {"seed": int}
# config-file key -> TrainConfig field, for sections other than [train]
_TRAIN_ALIASES = {("loss", "convention"): "loss_convention", ("data", "window_s"): "window_s",
                  ("data", "overlap_s"): "overlap_s", ("data", "min_tail_s"): "min_tail_s"}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0


def _check_type(where, value, kind):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")
    return value


def validate(raw: dict) -> dict:
    """Type-check a parsed config mapping; returns a normalised copy."""
    out: dict = {}
    for key, value in raw.items():
        if key in TOP_LEVEL:
            out[key] = _check_type(key, value, TOP_LEVEL[key])
        elif key in SCHEMA:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a section")
            sec = out.setdefault(key, {})
            for k, v in value.items():
                if k not in SCHEMA[key]:
                    raise ConfigError(f"unknown config key {key}.{k}")
                sec[k] = _check_type(f"{key}.{k}", v, SCHEMA[key][k])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return out


def build(raw: dict) -> RunConfig:
    raw = validate(raw)
    seed = raw.get("seed", 0)
    model = ModelConfig(**raw.get("model", {}), seed=seed)
    train_kw = dict(raw.get("train", {}))
    for (sec, key), name in _TRAIN_ALIASES.items():
        if key in raw.get(sec, {}):
            train_kw[name] = raw[sec][key]
    return RunConfig(model, TrainConfig(**train_kw, seed=seed), seed)


def load(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (may be None for all defaults) and apply dotted-key overrides."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in dotted:
            sec, key = dotted.split(".", 1)
            raw.setdefault(sec, {})[key] = value
        else:
            raw[dotted] = value
    return build(raw)


def dump(cfg: RunConfig) -> str:
    """Render ``cfg`` back to TOML text (round-trips through :func:`load`)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    lines = [f"seed = {cfg.seed}", "", "[model]"]
    lines += [f"{k} = {fmt(getattr(cfg.model, k))}" for k in SCHEMA["model"]]
    lines += ["", "[train]"]
    for k in SCHEMA["train"]:
        v = getattr(cfg.train, k)
        if v is not None:
            lines.append(f"{k} = {fmt(v)}")
    lines += ["", "[loss]", f"convention = {fmt(cfg.train.loss_convention)}", "", "[data]"]
    lines += [f"{k} = {fmt(getattr(cfg.train, k))}" for k in SCHEMA["data"]]
    return "\n".join(lines) + "\n"

