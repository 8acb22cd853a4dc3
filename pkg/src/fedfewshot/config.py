"""Experiment configuration: nested dataclasses read from flat ``section.key = value`` text."""

import dataclasses
import typing
from dataclasses import dataclass, field
from typing import Optional

from .dsp import MfccConfig
from .errors import ConfigError
from .fewshot import DISTANCES, EpisodeSpec
from .nn.models import ARCHITECTURES

DTYPES = ("float32", "float64")


@dataclass
class DataSection:
    source: str = "synthetic"  # "synthetic" or a manifest path
    root: Optional[str] = None  # directory manifest paths are relative to
    n_classes: int = 8
    per_class: int = 60
    duration_s: float = 1.0
    sample_rate: int = 16000
    fold: str = "fold1"  # preset name or "label A,label B"
    cache_dir: Optional[str] = None
    noise_manifest: Optional[str] = None
    noise_ratio: float = 0.0
    dirichlet_alpha: Optional[float] = None


@dataclass
class ModelSection:
    architecture: str = "proto_conv_small"
    embed_dim: int = 64
    channels: int = 16
    attention: bool = True


@dataclass
class EpisodeSection:
    n_way: int = 2
    k_shot: int = 2
    v_query: int = 5


@dataclass
class TrainSection:
    lr: float = 1e-3
    optimizer: str = "adam"
    distance: str = "squared_euclidean"
    episodes_per_round: int = 100
    local_episodes: Optional[int] = None  # None -> num_clients * rounds * episodes_per_round
    local_client: int = 0


@dataclass
class FedSection:
    num_clients: int = 5
    rounds: int = 40
    transport: str = "inprocess"
    host: str = "127.0.0.1"
    port: int = 0
    timeout_s: float = 300.0


@dataclass
class EvalSection:
    episodes: int = 200


@dataclass
class ExperimentConfig:
    seed: int = 0
    dtype: str = "float32"
    output_dir: str = "runs/default"
    features: MfccConfig = field(default_factory=MfccConfig)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    episode: EpisodeSection = field(default_factory=EpisodeSection)
    train: TrainSection = field(default_factory=TrainSection)
    fed: FedSection = field(default_factory=FedSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # ------------------------------------------------------------ derived
    @property
    def spec(self):
        return EpisodeSpec(self.episode.n_way, self.episode.k_shot, self.episode.v_query)

    @property
    def local_episode_budget(self):
        if self.train.local_episodes is not None:
            return self.train.local_episodes
        return self.fed.num_clients * self.fed.rounds * self.train.episodes_per_round

    def validate(self):
        try:
            spec = self.spec
        except ConfigError as exc:
            raise ConfigError(f"episode: {exc}") from None
        checks = [
            (self.dtype in DTYPES, f"dtype must be one of {DTYPES}"),
            (self.model.architecture in ARCHITECTURES,
             f"model.architecture must be one of {ARCHITECTURES}"),
            (self.model.embed_dim >= 1, "model.embed_dim must be >= 1"),
            (self.model.channels >= 1, "model.channels must be >= 1"),
            (self.train.lr > 0, "train.lr must be positive"),
            (self.train.optimizer in ("adam", "sgd"), "train.optimizer must be adam or sgd"),
            (self.train.distance in DISTANCES, f"train.distance must be one of {DISTANCES}"),
            (self.train.episodes_per_round >= 0, "train.episodes_per_round must be >= 0"),
            (self.train.local_episodes is None or self.train.local_episodes >= 0,
             "train.local_episodes must be >= 0"),
            (0 <= self.train.local_client < self.fed.num_clients,
             "train.local_client must name one of the fed.num_clients partitions"),
            (self.fed.num_clients >= 1, "fed.num_clients must be >= 1"),
            (self.fed.rounds >= 1, "fed.rounds must be >= 1"),
            (self.fed.transport in ("inprocess", "socket"), "fed.transport must be inprocess or socket"),
            (self.fed.timeout_s > 0, "fed.timeout_s must be positive"),
            (self.eval.episodes >= 1, "eval.episodes must be >= 1"),
            (self.data.n_classes >= 2, "data.n_classes must be >= 2"),
            (self.data.per_class >= 1, "data.per_class must be >= 1"),
            (self.data.duration_s > 0, "data.duration_s must be positive"),
            (self.data.sample_rate > 0, "data.sample_rate must be positive"),
            (0 <= self.data.noise_ratio <= 1, "data.noise_ratio must lie in [0, 1]"),
            (self.data.noise_ratio == 0 or self.data.noise_manifest,
             "data.noise_ratio > 0 needs data.noise_manifest"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self


def _sections(cfg):
    yield "", cfg
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            yield f.name, value


def _field_type(obj, name):
    hints = typing.get_type_hints(type(obj))
    return hints[name]


def _coerce(raw, tp, key):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        inner = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("none", "null", ""):
            return None
        return _coerce(raw, inner[0], key)
    try:
        if tp is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {tp.__name__}") from None


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply_overrides(cfg, pairs, origin="override"):
    """Apply ``section.key=value`` strings (or ``(key, value)`` tuples) in order."""
    sections = dict(_sections(cfg))
    pending = {}
    for item in pairs:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"{origin}: expected key=value, got {item!r}")
            key, raw = item.split("=", 1)
        else:
            key, raw = item
        key = key.strip()
        section, _, name = key.rpartition(".")
        target = sections.get(section)
        if target is None or name not in {f.name for f in dataclasses.fields(target)} or (
            section == "" and dataclasses.is_dataclass(getattr(target, name))
        ):
            raise ConfigError(f"{origin}: unknown config key {key!r}")
        value = _coerce(str(raw), _field_type(target, name), key)
        if section == "features":
            pending[name] = value
        else:
            setattr(target, name, value)
    if pending:
        # MfccConfig is frozen and validates itself on construction
        try:
            cfg.features = dataclasses.replace(cfg.features, **pending)
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"features: {exc}") from None
    return cfg


def parse_config_text(text, origin="<config>"):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return apply_overrides(ExperimentConfig(), pairs, origin)


def load_config(path=None, overrides=()):
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = parse_config_text(text, origin=str(path))
    apply_overrides(cfg, overrides)
    return cfg.validate()


def config_to_text(cfg):
    """Every key with its resolved value; parsing the output reproduces ``cfg``."""
    lines = []
    for section, obj in _sections(cfg):
        if section:
            lines.append("")
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                continue
            key = f"{section}.{f.name}" if section else f.name
            lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"
