"""Training configuration, flat config-file parsing and ablation vocabulary."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields

from .errors import ConfigError

FUSIONS = ("mean", "attention", "mlp")
SAMPLERS = ("random", "dbs")
MODES = ("base", "attr")
ABLATION_FLAGS = ("no_pe", "no_dam", "no_gpt", "no_hpt", "no_hec")

# Variant names from the ablation study mapped to config overrides.
VARIANTS: dict[str, dict[str, object]] = {
    "w/o PE": {"no_pe": True},
    "w/o DAM": {"no_dam": True},
    "DAM-ATT": {"fusion": "attention"},
    "DAM-MLP": {"fusion": "mlp"},
    "w/o GPT": {"no_gpt": True},
    "w/o HPT": {"no_hpt": True},
    "w/o HEC": {"no_hec": True},
    "DBS": {"sampler": "dbs"},
}
_ALIASES = {
    "no_pe": "w/o PE", "no_dam": "w/o DAM", "dam_att": "DAM-ATT", "dam_mlp": "DAM-MLP",
    "no_gpt": "w/o GPT", "no_hpt": "w/o HPT", "no_hec": "w/o HEC", "dbs": "DBS",
}


def variant_overrides(name: str) -> dict[str, object]:
    """Config overrides for an ablation given as ``no_hec`` or ``w/o HEC``."""
    key = name.strip()
    canonical = key if key in VARIANTS else _ALIASES.get(key.lower().replace("-", "_"))
    if canonical is None:
        raise ConfigError(f"unknown ablation {name!r}; expected one of {sorted(VARIANTS)}")
    return dict(VARIANTS[canonical])


@dataclass
class TrainConfig:
    K: int | None = None
    d: int = 64
    L: int = 2
    alpha: float = 0.1
    lr: float = 0.001
    batch_size: int = 1024
    epochs: int = 50
    max_steps: int | None = None
    N_G: int = 5
    N_H: int = 2
    phi: float = 10.0
    lam: float = 1000.0
    seed: int = 0
    fusion: str = "mean"
    sampler: str = "random"
    mode: str = "base"
    no_pe: bool = False
    no_dam: bool = False
    no_gpt: bool = False
    no_hpt: bool = False
    no_hec: bool = False
    directed_neighbors: bool = False
    logsigmoid: bool = False
    cluster_features: str = "geometric"
    attr_weight: float = 1.0
    patience: int = 0
    dbs_node_cap: int = 50_000
    ablations: tuple[str, ...] = field(default=())

    def validate(self) -> "TrainConfig":
        if self.K is None:
            raise ConfigError("K (number of hyperedge clusters) is required")
        if self.d <= 0 or self.d % 4:
            raise ConfigError(f"d must be divisible by 4 (got d={self.d})")
        for name in ("K", "L", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("epochs", "N_G", "N_H", "patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.phi <= 0:
            raise ConfigError("phi must be > 0")
        if self.lam <= 1:
            raise ConfigError("lambda must be > 1")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.cluster_features not in ("geometric", "size_only"):
            raise ConfigError("cluster_features must be geometric or size_only")
        return self

    def with_ablations(self, names) -> "TrainConfig":
        cfg = dataclasses.replace(self)
        for name in names:
            for k, v in variant_overrides(name).items():
                setattr(cfg, k, v)
        cfg.ablations = tuple(self.ablations) + tuple(names)
        return cfg

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["ablations"] = list(self.ablations)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "ablations" in doc:
            doc["ablations"] = tuple(doc["ablations"])
        return cls(**doc)


_KEY_ALIASES = {"lambda": "lam", "fusion_variant": "fusion", "sampler_variant": "sampler"}


def coerce(name: str, raw: str):
    """Convert a string config value to the type of TrainConfig field ``name``."""
    name = _KEY_ALIASES.get(name, name)
    types = {f.name: f.type for f in fields(TrainConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    kind = str(types[name])
    raw = raw.strip().strip('"').strip("'")
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return name, True
            if low in ("0", "false", "no", "off"):
                return name, False
            raise ValueError(raw)
        if kind.startswith("int"):
            if raw.lower() in ("", "none", "null"):
                return name, None
            return name, int(raw)
        if kind == "float":
            return name, float(raw)
        if kind.startswith("tuple"):
            return name, tuple(s.strip() for s in raw.split(",") if s.strip())
        return name, raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def read_config_file(path) -> dict:
    """Parse flat ``key = value`` lines (TOML/INI subset, ``#`` comments)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        from .errors import InputError
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            name, value = coerce(key, raw)
            out[name] = value
    return out
