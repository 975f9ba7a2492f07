"""Flat ``key = value`` experiment configuration.

Keys are dotted ``section.name`` pairs, one per line; ``#`` starts a comment.
Unknown keys, duplicate keys, unparseable values and out-of-range values are
rejected with the offending key and line number.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .losses import RANK_KINDS, Hyperparams
from .data import OVERLAP_MODES
from .trainer import OBJECTIVES

DATASETS = ("two_moons", "shapes", "idx")


@dataclass(frozen=True)
class DatasetSpec:
    name: str = "two_moons"
    n: int = 1000
    noise: float = 0.1
    size: int = 12
    classes: int = 4
    seed: int = 0
    images: str = ""
    labels: str = ""
    cache_dir: str = ""

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ConfigError(f"unknown dataset {self.name!r}; expected one of {DATASETS}", key="name")
        if self.n < 2:
            raise ConfigError("must be >= 2", key="n")
        if self.noise < 0:
            raise ConfigError("must be >= 0", key="noise")
        if self.name == "idx" and not (self.images and self.labels):
            raise ConfigError("idx datasets need dataset.images and dataset.labels", key="images")


@dataclass(frozen=True)
class SplitSpec:
    n_labeled: int = 20
    overlap_mode: str = "overlapping"
    seed: int = 0
    val_frac: float = 0.1
    test_frac: float = 0.2

    def __post_init__(self):
        if self.n_labeled < 1:
            raise ConfigError("must be >= 1", key="n_labeled")
        if self.overlap_mode not in OVERLAP_MODES:
            raise ConfigError(f"expected one of {OVERLAP_MODES}", key="overlap_mode")
        for name in ("val_frac", "test_frac"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError("must lie in [0, 1)", key=name)
        if self.val_frac + self.test_frac >= 1.0:
            raise ConfigError("val_frac + test_frac must be < 1", key="test_frac")


@dataclass(frozen=True)
class OptimSpec:
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("must be > 0", key="lr")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("must lie in [0, 1)", key="momentum")
        if self.weight_decay < 0:
            raise ConfigError("must be >= 0", key="weight_decay")


@dataclass(frozen=True)
class ModelSpec:
    hidden: tuple = (32, 32)
    rep_dim: int = 16

    def __post_init__(self):
        if any(h < 1 for h in self.hidden):
            raise ConfigError("layer sizes must be >= 1", key="hidden")
        if self.rep_dim < 1:
            raise ConfigError("must be >= 1", key="rep_dim")


@dataclass(frozen=True)
class AugmentSpec:
    shift_max: int = 2
    flip_prob: float = 0.5
    noise_scale: float = 0.05
    jitter_scale: float = 0.3
    cutout_frac: float = 0.25

    def __post_init__(self):
        for name in ("flip_prob", "cutout_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("must lie in [0, 1]", key=name)
        for name in ("shift_max", "noise_scale", "jitter_scale"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", key=name)


@dataclass(frozen=True)
class TrainSpec:
    rank_loss: str = "CT"
    objective: str = "rerankmatch"
    epochs: int = 256
    steps: int = 0  # > 0 overrides epochs
    seed: int = 0

    def __post_init__(self):
        if self.rank_loss not in RANK_KINDS:
            raise ConfigError(f"expected one of {RANK_KINDS}", key="rank_loss")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"expected one of {OBJECTIVES}", key="objective")
        if self.epochs < 1:
            raise ConfigError("must be >= 1", key="epochs")
        if self.steps < 0:
            raise ConfigError("must be >= 0", key="steps")


@dataclass(frozen=True)
class RunSpec:
    out: str = "runs/default"
    seeds: tuple = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    hp: Hyperparams = field(default_factory=Hyperparams)
    optim: OptimSpec = field(default_factory=OptimSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    run: RunSpec = field(default_factory=RunSpec)

    @property
    def is_supervised_baseline(self):
        hp = self.hp
        return (self.train.objective == "supervised"
                or hp.lambda_u == hp.lambda_r == hp.lambda_s == 0)

    @property
    def label(self):
        if self.is_supervised_baseline:
            return "supervised baseline"
        return f"{self.train.objective}-{self.train.rank_loss}"


SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)}


def _field_types():
    out = {}
    for section, factory in SECTIONS.items():
        for f in fields(factory):
            out[f"{section}.{f.name}"] = type(getattr(factory(), f.name))
    return out


FIELD_TYPES = _field_types()


def _parse_value(key, raw, line):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind is tuple:
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {kind.__name__}", key=key, line=line) from None


def _format_value(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def build_config(entries):
    """Assemble a config from ``{key: (value, line)}``; defaults fill the rest."""
    grouped = {s: {} for s in SECTIONS}
    origin = {}
    for key, (raw, line) in entries.items():
        if key not in FIELD_TYPES:
            raise ConfigError("unknown key", key=key, line=line)
        section, name = key.split(".", 1)
        grouped[section][name] = _parse_value(key, raw, line)
        origin[key] = line
    parts = {}
    for section, factory in SECTIONS.items():
        try:
            parts[section] = replace(factory(), **grouped[section])
        except ConfigError as exc:
            full = f"{section}.{exc.key}" if exc.key else None
            msg = str(exc).split("] ", 1)[-1]
            raise ConfigError(msg, key=full, line=origin.get(full)) from None
    return ExperimentConfig(**parts)


def read_entries(text, source="<config>"):
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value' in {source}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ConfigError("duplicate key", key=key, line=lineno)
        entries[key] = (value, lineno)
    return entries


def parse_config(path=None, overrides=()):
    """Read a config file (or start from defaults) and apply ``key=value`` overrides.

    Override errors report ``line`` as ``"--set"``.
    """
    entries = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        entries = read_entries(path.read_text(), str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", line="--set")
        key, value = (part.strip() for part in item.split("=", 1))
        entries[key] = (value, "--set")
    return build_config(entries)


def to_text(cfg):
    lines = []
    for section in SECTIONS:
        part = getattr(cfg, section)
        for f in fields(part):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(part, f.name))}")
    return "\n".join(lines) + "\n"
