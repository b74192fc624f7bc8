"""Experiment configuration and its flat ``section.key = value`` text format.

Example::

    rounds = 50
    strategy = fedaghn

    [aghn]
    p_init = 0.03
    q_init = 1

    model.hidden_dims = 32, 32, 32

``[section]`` headers prefix the keys that follow them; dotted keys work
anywhere.  Unknown keys are errors.  ``model.input_dim``, ``model.num_classes``
and the partition's client count are derived from the task and ``num_clients``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field, fields, replace

from .client import LocalTrainConfig
from .data import PartitionSpec, SyntheticTaskSpec
from .errors import ConfigurationError
from .model import DenseNetSpec

STRATEGIES = ("fedaghn", "fedavg", "fedavg_ft", "local")
FIRST_ROUND_DELTA = ("same_as_theta", "zeros")

# documented sensitivity grid for the initial hypernetwork parameters
P_GRID = (0.02, 0.03, 0.06)
Q_GRID = (0.1, 0.2, 0.5, 1.0, 3.0, 10.0)


@dataclass(frozen=True)
class AghnConfig:
    p_init: float = 0.03
    q_init: float = 1.0
    eta_hn: float = 0.005
    p_trainable: bool = True
    q_trainable: bool = True
    share_across_layers: bool = False
    first_round_delta: str = "same_as_theta"


@dataclass(frozen=True)
class ExperimentConfig:
    num_clients: int = 20
    rounds: int = 50
    strategy: str = "fedaghn"
    master_seed: int = 0
    workers: int = 1
    ft_epochs: int = 5
    snapshot_every_round: bool = False
    model: DenseNetSpec = field(default_factory=DenseNetSpec)
    local: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    aghn: AghnConfig = field(default_factory=AghnConfig)

    def __post_init__(self):
        # keep derived fields in sync with their sources
        object.__setattr__(self, "partition", replace(self.partition, num_clients=self.num_clients))
        object.__setattr__(
            self,
            "model",
            replace(self.model, input_dim=self.task.feature_dim, num_classes=self.task.num_classes),
        )

    def validate(self) -> None:
        if self.num_clients < 2:
            raise ConfigurationError("num_clients must be >= 2", "num_clients")
        if self.rounds < 0:
            raise ConfigurationError("rounds must be >= 0", "rounds")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(
                f"strategy must be one of {', '.join(STRATEGIES)}, got {self.strategy!r}", "strategy"
            )
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1", "workers")
        if self.ft_epochs < 0:
            raise ConfigurationError("ft_epochs must be >= 0", "ft_epochs")
        if self.aghn.p_init < 0:
            raise ConfigurationError("p_init must be >= 0", "aghn.p_init")
        if self.aghn.eta_hn <= 0:
            raise ConfigurationError("eta_hn must be > 0", "aghn.eta_hn")
        if self.aghn.first_round_delta not in FIRST_ROUND_DELTA:
            raise ConfigurationError(
                f"first_round_delta must be one of {', '.join(FIRST_ROUND_DELTA)}",
                "aghn.first_round_delta",
            )
        self.local.validate()
        self.task.validate()
        self.partition.validate(self.task.num_classes)

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        return apply_overrides(self, overrides)


# keys that exist on the section types but are derived, never set directly
_DERIVED = {"partition.num_clients", "model.input_dim", "model.num_classes", "local.shuffle_seed"}


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def known_keys(cfg: ExperimentConfig | None = None) -> dict:
    """Flat key -> python type for every settable field."""
    out = {}
    top = _field_types(ExperimentConfig)
    for f in fields(ExperimentConfig):
        t = top[f.name]
        if dataclasses.is_dataclass(t):
            sub = _field_types(t)
            for g in fields(t):
                key = f"{f.name}.{g.name}"
                if key not in _DERIVED:
                    out[key] = sub[g.name]
        else:
            out[f.name] = t
    return out


def _coerce(key: str, raw, typ):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is tuple:
            body = text.strip("[]() ")
            return tuple(int(v) for v in body.replace(",", " ").split()) if body else ()
        if text[:1] == text[-1:] and text[:1] in ("'", '"') and len(text) >= 2:
            return text[1:-1]
        return text
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {typ.__name__}", key) from None


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    keys = known_keys()
    top, sections = {}, {}
    for key, raw in overrides.items():
        if key not in keys:
            raise ConfigurationError(f"unknown config key {key!r}", key)
        value = _coerce(key, raw, keys[key])
        if "." in key:
            sec, name = key.split(".", 1)
            sections.setdefault(sec, {})[name] = value
        else:
            top[key] = value
    for sec, values in sections.items():
        try:
            top[sec] = replace(getattr(cfg, sec), **values)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{sec}: {exc}", f"{sec}.{next(iter(values))}") from None
    return replace(cfg, **top)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse the flat text format into an ordered ``{key: raw string}`` dict."""
    out = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        out[key] = value
    return out


def parse_override(item: str) -> tuple:
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not of the form key=value", item)
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values.update(parse_config_text(fh.read(), str(path)))
        except OSError as exc:
            raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})", str(path)) from exc
    for item in overrides:
        k, v = parse_override(item)
        values[k] = v
    cfg = apply_overrides(ExperimentConfig(), values)
    cfg.validate()
    return cfg


# the grouped desk-scale case study: defaults everywhere except a larger client
# step size, which the noisy synthetic task needs to train within 50 rounds
CASE_STUDY_OVERRIDES = {"local.learning_rate": "0.05"}


def case_study_config(**overrides) -> ExperimentConfig:
    """The case-study experiment; ``overrides`` are extra ``key=value`` settings."""
    values = dict(CASE_STUDY_OVERRIDES)
    values.update({k: str(v) for k, v in overrides.items()})
    cfg = apply_overrides(ExperimentConfig(), values)
    cfg.validate()
    return cfg


def flatten(cfg: ExperimentConfig) -> dict:
    out = {}
    for key in known_keys():
        if "." in key:
            sec, name = key.split(".", 1)
            out[key] = getattr(getattr(cfg, sec), name)
        else:
            out[key] = getattr(cfg, key)
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def to_text(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in flatten(cfg).items())


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(flatten(cfg), sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
