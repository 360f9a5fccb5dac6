"""Model configuration: typed keys, validation, key=value (de)serialization.

Config files are UTF-8 "key=value" lines with '#' comments. Every key has a
documented default; unknown keys are rejected; command-line overrides win
over file values.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError

ATTENTION_MODES = ("learned", "uniform")
# Extension point: only the elementwise product is implemented today.
FUSION_OPS = ("hadamard",)
PRECISIONS = ("float32", "float64")
MAX_DEPTH = 3


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    layer_dims: tuple = (32, 16)
    neighbor_cap: int = 20
    lr: float = 1e-3
    l2: float = 1e-5
    dropout: float = 0.1
    batch_size: int = 1024
    epochs: int = 40
    patience: int = 5
    leaky_slope: float = 0.2
    attention_mode: str = "learned"
    fusion: bool = True
    fusion_op: str = "hadamard"
    pretrain_kg: bool = True
    kg_pretrain_epochs: int = 5
    kg_loss: bool = True
    kg_margin: float = 0.0
    inverse_relations: bool = True
    precision: str = "float32"
    seed: int = 42

    @property
    def depth(self):
        return len(self.layer_dims)

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def validate(self):
        _require(self.dim >= 1, "dim", "integer >= 1")
        _require(0 <= len(self.layer_dims) <= MAX_DEPTH,
                 "layer_dims", f"0 to {MAX_DEPTH} comma-separated dims")
        _require(all(d >= 1 for d in self.layer_dims),
                 "layer_dims", "every dim >= 1")
        _require(self.neighbor_cap >= 1, "neighbor_cap", "integer >= 1")
        _require(self.lr > 0, "lr", "positive real")
        _require(self.l2 >= 0, "l2", "nonnegative real")
        _require(0.0 <= self.dropout < 1.0, "dropout", "real in [0, 1)")
        _require(self.batch_size >= 1, "batch_size", "integer >= 1")
        _require(self.epochs >= 1, "epochs", "integer >= 1")
        _require(self.patience >= 1, "patience", "integer >= 1")
        _require(0.0 < self.leaky_slope < 1.0, "leaky_slope", "real in (0, 1)")
        _require(self.attention_mode in ATTENTION_MODES,
                 "attention_mode", "|".join(ATTENTION_MODES))
        _require(self.fusion_op in FUSION_OPS, "fusion_op", "|".join(FUSION_OPS))
        _require(self.kg_pretrain_epochs >= 0, "kg_pretrain_epochs", "integer >= 0")
        _require(self.kg_margin >= 0, "kg_margin", "nonnegative real")
        _require(self.precision in PRECISIONS, "precision", "|".join(PRECISIONS))
        _require(self.seed >= 0, "seed", "integer >= 0")
        return self

    def to_text(self):
        """Serialize as key=value lines; floats use repr so parsing is exact."""
        return "".join(
            f"{f.name}={_format_value(getattr(self, f.name))}\n"
            for f in fields(self)
        )

    def echo_dict(self):
        """The resolved config as {key: formatted value}, for artifact echoes."""
        return {f.name: _format_value(getattr(self, f.name)) for f in fields(self)}


def _require(cond, key, legal):
    if not cond:
        raise ConfigError(f"config key {key!r}: expected {legal}")


def _format_value(value):
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bool(key, raw):
    lowered = raw.strip().lower()
    if lowered in ("on", "true", "1", "yes"):
        return True
    if lowered in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"config key {key!r}: expected on|off, got {raw!r}")


def _parse_int(key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected integer, got {raw!r}") from None


def _parse_float(key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected real number, got {raw!r}") from None


def _parse_dims(key, raw):
    raw = raw.strip()
    if raw == "":
        return ()
    try:
        return tuple(int(p) for p in raw.split(","))
    except ValueError:
        raise ConfigError(
            f"config key {key!r}: expected comma-separated integers, got {raw!r}"
        ) from None


_PARSERS = {
    "dim": _parse_int,
    "layer_dims": _parse_dims,
    "neighbor_cap": _parse_int,
    "lr": _parse_float,
    "l2": _parse_float,
    "dropout": _parse_float,
    "batch_size": _parse_int,
    "epochs": _parse_int,
    "patience": _parse_int,
    "leaky_slope": _parse_float,
    "attention_mode": lambda key, raw: raw.strip(),
    "fusion": _parse_bool,
    "fusion_op": lambda key, raw: raw.strip(),
    "pretrain_kg": _parse_bool,
    "kg_pretrain_epochs": _parse_int,
    "kg_loss": _parse_bool,
    "kg_margin": _parse_float,
    "inverse_relations": _parse_bool,
    "precision": lambda key, raw: raw.strip(),
    "seed": _parse_int,
}


def parse_config_lines(text, allow_extra=()):
    """Parse key=value text into a raw dict, rejecting unknown keys.

    Keys listed in allow_extra (exact names or 'prefix*' patterns) are
    collected verbatim into the second return value.
    """
    known = {}
    extra = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key in _PARSERS:
            known[key] = raw
        elif _matches_extra(key, allow_extra):
            extra[key] = raw
        else:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
    return known, extra


def _matches_extra(key, allow_extra):
    for pattern in allow_extra:
        if pattern.endswith("*"):
            if key.startswith(pattern[:-1]):
                return True
        elif key == pattern:
            return True
    return False


def build_config(raw, base=None):
    """Typed ModelConfig from a raw key->string dict applied over base."""
    config = base if base is not None else ModelConfig()
    updates = {}
    for key, value in raw.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _PARSERS[key](key, value)
    config = replace(config, **updates)
    config.validate()
    return config


def config_from_text(text, base=None):
    known, _ = parse_config_lines(text)
    return build_config(known, base=base)
