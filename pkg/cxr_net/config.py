"""Runtime configuration: environment settings and key=value overrides."""

import dataclasses
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from dotenv import load_dotenv

from .errors import ConfigError

load_dotenv(Path(__file__).resolve().parent.parent / ".env", override=False)


class Config:
    """Process-wide settings read from the environment."""

    THREADS = os.getenv("CXRNET_THREADS", "1")
    LOG_LEVEL = os.getenv("CXRNET_LOG_LEVEL", "INFO")

    @classmethod
    def threads(cls) -> int:
        """Worker cap for FFTs and parallel folds."""
        cls.validate()
        return int(cls.THREADS)

    @classmethod
    def validate(cls):
        """Validate that the environment settings are usable."""
        try:
            threads = int(cls.THREADS)
        except ValueError:
            raise ConfigError(f"CXRNET_THREADS must be an integer, got {cls.THREADS!r}")
        if threads < 1:
            raise ConfigError("CXRNET_THREADS must be at least 1")
        if cls.LOG_LEVEL.upper() not in logging._nameToLevel:
            raise ConfigError(f"Unknown CXRNET_LOG_LEVEL {cls.LOG_LEVEL!r}")
        return True


def _coerce(value: str, current: Any) -> Any:
    """Parse an override string into the type of the field's current value."""
    if isinstance(current, bool):
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"Expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, (list, tuple)):
        parsed = json.loads(value) if value.startswith("[") else value.split(",")
        kind = type(current[0]) if current else str
        return type(current)(kind(v) for v in parsed)
    return value


def resolve_overrides(
    cfg: Any,
    file_values: Optional[Dict[str, Any]] = None,
    overrides: Iterable[str] = (),
) -> Any:
    """
    Apply config-file values and then key=value overrides to a dataclass.

    Precedence is built-in defaults < config file < flags. Nested dataclass
    fields are addressed with dots (``scatter.J=3``).

    Args:
        cfg: Dataclass instance holding the defaults
        file_values: Mapping loaded from a JSON config file
        overrides: Strings of the form ``key=value``

    Returns:
        A new dataclass instance with every value applied

    Raises:
        ConfigError: On unknown keys or unparsable values
    """
    values = dataclasses.asdict(cfg)

    def assign(key: str, raw: Any, from_text: bool):
        target = values
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(target.get(part), dict):
                raise ConfigError(f"Unknown config key: {key}")
            target = target[part]
        leaf = parts[-1]
        if leaf not in target:
            raise ConfigError(f"Unknown config key: {key}")
        try:
            target[leaf] = _coerce(raw, target[leaf]) if from_text else raw
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Bad value for {key}: {e}")

    for key, raw in (file_values or {}).items():
        if isinstance(raw, dict):
            for sub, sub_raw in raw.items():
                assign(f"{key}.{sub}", sub_raw, False)
        else:
            assign(key, raw, False)

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        assign(key.strip(), raw.strip(), True)

    return from_dict(type(cfg), values)


def from_dict(cls: type, values: Dict[str, Any]) -> Any:
    """Rebuild a (possibly nested) config dataclass from plain values."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in values:
            continue
        value = values[f.name]
        if dataclasses.is_dataclass(f.type) and isinstance(value, dict):
            value = from_dict(f.type, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    cfg = cls(**kwargs)
    if hasattr(cfg, "validate"):
        cfg.validate()
    return cfg


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Read a JSON config file, or return an empty mapping."""
    if not path:
        return {}
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return data
