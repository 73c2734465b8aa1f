"""YAML experiment configuration with field-path validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .activations import ActivationSpec, Kind
from .errors import ConfigError
from .experiments import DataConfig, TrainConfig
from .presets import CL_BEST, PROPERTY_CANONICAL, STREAM_PRESETS, sweep_grid
from .streams import StreamConfig
from .stress import ShockSchedule

EXPERIMENT_KINDS = ("goldilocks", "shock", "continual", "rl_metrics", "property_grid")
ACTIVATION_SETS = {"property_canonical": PROPERTY_CANONICAL, "cl_best": CL_BEST}


class SchemaError(ConfigError):
    """Config error tied to a dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.detail = message


def _at(where: str, fn, /, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SchemaError:
        raise
    except (ConfigError, TypeError, ValueError, KeyError) as exc:
        raise SchemaError(where, str(exc)) from None


def _expect(data, path: str, kind=dict):
    if not isinstance(data, kind):
        raise SchemaError(path, f"expected {kind.__name__}, got {type(data).__name__}")
    return data


def _only(data: dict, path: str, allowed: set[str]):
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise SchemaError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")


@dataclass(frozen=True)
class ActivationSource:
    """Either explicit specs, a named sweep grid, or a named activation set."""

    specs: tuple[ActivationSpec, ...] = ()
    sweep: str | None = None
    preset: str | None = None

    def resolve(self) -> list[tuple[str, ActivationSpec]]:
        if self.sweep is not None:
            return [(s.label(), s) for s in sweep_grid(self.sweep)]
        if self.preset is not None:
            return list(ACTIVATION_SETS[self.preset].items())
        return [(s.label(), s) for s in self.specs]

    def to_dict(self) -> Any:
        if self.sweep is not None:
            return {"sweep": self.sweep}
        if self.preset is not None:
            return {"preset": self.preset}
        return [s.to_dict() for s in self.specs]

    @classmethod
    def from_dict(cls, data, path: str = "activations") -> ActivationSource:
        if isinstance(data, dict):
            _only(data, path, {"sweep", "preset"})
            if len(data) != 1:
                raise SchemaError(path, "give exactly one of 'sweep' or 'preset'")
            if "sweep" in data:
                kind = _at(f"{path}.sweep", Kind, data["sweep"])
                return cls(sweep=kind.value)
            if data["preset"] not in ACTIVATION_SETS:
                raise SchemaError(f"{path}.preset", f"unknown preset {data['preset']!r}; "
                                  f"expected one of {sorted(ACTIVATION_SETS)}")
            return cls(preset=data["preset"])
        _expect(data, path, list)
        specs = []
        for i, block in enumerate(data):
            _expect(block, f"{path}[{i}]")
            specs.append(_at(f"{path}[{i}]", ActivationSpec.from_dict, block))
        return cls(specs=tuple(specs))


def _stream_from_dict(data, path: str = "stream") -> StreamConfig:
    _expect(data, path)
    data = dict(data)
    if "preset" in data:
        name = data.pop("preset")
        if name not in STREAM_PRESETS:
            raise SchemaError(f"{path}.preset", f"unknown stream preset {name!r}; expected one of {sorted(STREAM_PRESETS)}")
        data = {**STREAM_PRESETS[name], **data}
    allowed = set(StreamConfig.__dataclass_fields__)
    _only(data, path, allowed)
    return _at(path, StreamConfig, **data)


def _data_from_dict(data, path: str = "data") -> DataConfig:
    _expect(data, path)
    _only(data, path, set(DataConfig.__dataclass_fields__))
    return _at(path, DataConfig, **data)


def _train_from_dict(data, path: str = "train") -> TrainConfig:
    _expect(data, path)
    _only(data, path, set(TrainConfig.__dataclass_fields__))
    return _at(path, TrainConfig, **data)


def _schedule_from_dict(data, path: str = "schedule") -> ShockSchedule:
    _expect(data, path)
    _only(data, path, {"gammas", "cycle"})
    return _at(path, ShockSchedule, **data)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    name: str
    seeds: tuple[int, ...]
    output_dir: str
    activations: ActivationSource = field(default_factory=ActivationSource)
    stream: StreamConfig | None = None
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: ShockSchedule = field(default_factory=ShockSchedule)
    epochs: int = 50
    power_iters: int = 20
    replay: dict | None = None
    return_log: str | None = None
    p: float = 0.15

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_KINDS:
            raise SchemaError("experiment", f"unknown kind {self.experiment!r}; expected one of {EXPERIMENT_KINDS}")
        if not self.seeds:
            raise SchemaError("seeds", "at least one seed is required")
        if self.experiment in ("goldilocks", "shock", "continual") and self.stream is None:
            raise SchemaError("stream", f"required for {self.experiment} experiments")
        if self.experiment == "rl_metrics" and not self.return_log:
            raise SchemaError("return_log", "required for rl_metrics experiments")
        if self.epochs < 1:
            raise SchemaError("epochs", "must be >= 1")
        if self.power_iters < 0:
            raise SchemaError("power_iters", "must be >= 0")
        if not 0 < self.p <= 1:
            raise SchemaError("p", "must be in (0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        _expect(data, "<root>")
        _only(data, "", set(cls.__dataclass_fields__) | {"scale"})
        for key in ("experiment", "name", "seeds", "output_dir"):
            if key not in data:
                raise SchemaError(key, "required field missing")
        seeds = _expect(data["seeds"], "seeds", list)
        for i, s in enumerate(seeds):
            if not isinstance(s, int) or isinstance(s, bool):
                raise SchemaError(f"seeds[{i}]", f"expected integer, got {s!r}")
        kw: dict[str, Any] = {
            "experiment": data["experiment"],
            "name": str(data["name"]),
            "seeds": tuple(seeds),
            "output_dir": str(data["output_dir"]),
        }
        if "activations" in data:
            kw["activations"] = ActivationSource.from_dict(data["activations"])
        if "stream" in data:
            stream = dict(_expect(data["stream"], "stream"))
            if "scale" in data:
                stream.setdefault("scale", data["scale"])
            kw["stream"] = _stream_from_dict(stream)
        if "data" in data:
            kw["data"] = _data_from_dict(data["data"])
        if "train" in data:
            kw["train"] = _train_from_dict(data["train"])
        if "schedule" in data:
            kw["schedule"] = _schedule_from_dict(data["schedule"])
        for key, typ in (("epochs", int), ("power_iters", int), ("p", (int, float))):
            if key in data:
                if not isinstance(data[key], typ) or isinstance(data[key], bool):
                    raise SchemaError(key, f"expected a number, got {data[key]!r}")
                kw[key] = data[key]
        if "replay" in data:
            replay = _expect(data["replay"], "replay")
            _only(replay, "replay", {"capacity", "per_task_cap", "batch_size"})
            kw["replay"] = dict(replay)
        if "return_log" in data:
            kw["return_log"] = str(data["return_log"])
        return cls(**kw)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "experiment": self.experiment,
            "name": self.name,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "activations": self.activations.to_dict(),
        }
        if self.stream is not None:
            out["stream"] = self.stream.to_dict()
        out["data"] = self.data.to_dict()
        out["train"] = self.train.to_dict()
        out["schedule"] = self.schedule.to_dict()
        out["epochs"] = self.epochs
        out["power_iters"] = self.power_iters
        if self.replay is not None:
            out["replay"] = dict(self.replay)
        if self.return_log is not None:
            out["return_log"] = self.return_log
        out["p"] = self.p
        return out

    def cell_hash(self, activation: ActivationSpec | None) -> str:
        """Digest of everything that determines a cell except its seed."""
        body = self.to_dict()
        for key in ("name", "seeds", "output_dir", "activations"):
            body.pop(key)
        body["activation"] = activation.to_dict() if activation is not None else None
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except yaml.YAMLError as exc:
        raise SchemaError("<root>", f"YAML parse error: {exc}") from None
    if data is None:
        raise SchemaError("<root>", "empty config")
    return ExperimentConfig.from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
