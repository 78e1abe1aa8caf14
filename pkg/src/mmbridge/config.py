"""Run configuration file: JSON with ``data``, ``model``, ``train`` and ``paths``.

Every section is optional; missing keys take the documented defaults and
unknown keys are rejected. Example::

    {
      "data":  {"num_classes": 20, "seq_len": 10, "seed": 0},
      "model": {"slots": 32, "scale_r": 16.0, "detach_target_addressing": true},
      "train": {"optimizer": "adam", "lr": 0.001, "epochs": 30, "seed": 0},
      "paths": {"data_dir": "data", "out_dir": "runs/default"}
    }

``data`` holds :class:`~mmbridge.data.DatasetSpec` fields, ``model`` holds
:class:`~mmbridge.model.ModelConfig` fields and ``train`` the remaining
:class:`~mmbridge.trainer.TrainConfig` fields.
"""
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .data import DatasetSpec
from .errors import ConfigError, SpecError
from .model import ModelConfig
from .trainer import TrainConfig

SECTIONS = ("data", "model", "train", "paths")


@dataclass(frozen=True)
class Paths:
    data_dir: str = "data"
    out_dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    data: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: Paths = field(default_factory=Paths)

    def to_dict(self):
        t = self.train.to_dict()
        model = t.pop("model")
        return {"data": self.data.to_dict(), "model": model, "train": t,
                "paths": asdict(self.paths)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self):
        self.data.validate()
        self.train.validate()
        return self


def _section(cls, values, name):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)} - {"model"}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return values


def config_from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(d) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    try:
        data = DatasetSpec(**_section(DatasetSpec, d.get("data", {}), "data"))
        model = ModelConfig(**_section(ModelConfig, d.get("model", {}), "model"))
        train = TrainConfig(model=model,
                            **_section(TrainConfig, d.get("train", {}), "train"))
        paths = Paths(**_section(Paths, d.get("paths", {}), "paths"))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(data, train, paths)


def load_config(path=None):
    """Defaults overlaid with the file at ``path`` (if given)."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)


def apply_overrides(cfg, *, seed=None, epochs=None, slots=None, scale_r=None,
                    lr=None, optimizer=None, detach_target=None, out_dir=None,
                    data_dir=None):
    """Command-line flags take precedence over file values."""
    model = cfg.train.model
    if slots is not None:
        model = replace(model, slots=slots)
    if scale_r is not None:
        model = replace(model, scale_r=scale_r)
    if detach_target is not None:
        model = replace(model, detach_target_addressing=detach_target)
    train_kw = {"model": model}
    data = cfg.data
    if seed is not None:
        train_kw["seed"] = seed
        data = replace(data, seed=seed)
    if epochs is not None:
        train_kw["epochs"] = epochs
    if lr is not None:
        train_kw["lr"] = lr
    if optimizer is not None:
        train_kw["optimizer"] = optimizer
    paths = cfg.paths
    if out_dir is not None:
        paths = replace(paths, out_dir=out_dir)
    if data_dir is not None:
        paths = replace(paths, data_dir=data_dir)
    return RunConfig(data, replace(cfg.train, **train_kw), paths)


__all__ = ["RunConfig", "Paths", "load_config", "config_from_dict",
           "apply_overrides", "SpecError"]
