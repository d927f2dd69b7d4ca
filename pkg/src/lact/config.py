"""Plain-text ``key = value`` experiment configs.

Blank lines and ``#`` comments are ignored. Values are coerced to the type of
the field they override; tuples are comma separated.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .attention import WindowSpec
from .errors import ConfigError
from .layer import LayerConfig
from .numcore import inverse_softplus

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def load_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


def _coerce(value: str, current, key: str):
    try:
        if isinstance(current, bool):
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(value)
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None
    return value


def apply_overrides(obj, overrides: dict[str, str], ignore=()):
    """Return a copy of dataclass ``obj`` with string overrides coerced onto its fields."""
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in overrides.items():
        if key in ignore:
            continue
        if key not in names:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(names))}")
        changes[key] = _coerce(value, getattr(obj, key), key)
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def layer_config(overrides: dict[str, str]) -> LayerConfig:
    """Build a LayerConfig; ``window = kind:size`` and ``lr_init`` (softplus of the bias) are accepted."""
    overrides = dict(overrides)
    extra = {}
    if "window" in overrides:
        kind, _, size = overrides.pop("window").partition(":")
        try:
            extra["window"] = WindowSpec(kind.strip(), int(size))
        except ValueError:
            raise ConfigError("window must look like 'sliding_causal:64' or 'block_bidirectional:64'") from None
    if "lr_init" in overrides:
        if "const_lr_bias" in overrides:
            raise ConfigError("give either lr_init or const_lr_bias, not both")
        try:
            extra["const_lr_bias"] = inverse_softplus(float(overrides.pop("lr_init")))
        except ValueError as exc:
            raise ConfigError(f"bad lr_init: {exc}") from None
    cfg = apply_overrides(LayerConfig(), overrides)
    return dataclasses.replace(cfg, **extra) if extra else cfg
