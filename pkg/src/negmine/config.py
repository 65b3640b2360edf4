"""One declarative TOML config file with [generation], [filter], [train], and
optional [backends] sections. Validation errors name the offending field as
[section].field so CLI failures are actionable."""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import FilterConfig, GenerationConfig, TrainConfig, ValidationError


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


@dataclass(frozen=True)
class AppConfig:
    generation: GenerationConfig
    filter: FilterConfig
    train: TrainConfig
    backends: Dict[str, Any]

    def snapshot(self) -> dict:
        """Plain-dict view of every effective setting, for run manifests."""
        return {
            "generation": {f.name: getattr(self.generation, f.name)
                           for f in fields(GenerationConfig)},
            "filter": {f.name: getattr(self.filter, f.name)
                       for f in fields(FilterConfig)},
            "train": {f.name: getattr(self.train, f.name)
                      for f in fields(TrainConfig)},
            "backends": self.backends,
        }


_SECTIONS = {
    "generation": GenerationConfig,
    "filter": FilterConfig,
    "train": TrainConfig,
}


def _build_section(name: str, cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"[{name}].{sorted(unknown)[0]}", "unknown config key")
    try:
        return cls(**data)
    except ValidationError as exc:
        raise ConfigError(f"[{name}].{exc.field_path}", exc.message) from exc
    except TypeError as exc:
        raise ConfigError(f"[{name}]", str(exc)) from exc


def default_config() -> AppConfig:
    return AppConfig(generation=GenerationConfig(), filter=FilterConfig(),
                     train=TrainConfig(), backends={})


def load_config(path, overrides: Dict[str, Dict[str, Any]] = None) -> AppConfig:
    """Load the config file; `overrides` (section -> {field: value}) wins over
    file values, which win over defaults."""
    data: Dict[str, Any] = {}
    if path is not None:
        raw = Path(path).read_bytes()
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"not valid TOML: {exc}") from exc
    unknown_sections = set(data) - set(_SECTIONS) - {"backends"}
    if unknown_sections:
        raise ConfigError(f"[{sorted(unknown_sections)[0]}]", "unknown config section")
    merged = {}
    for name, cls in _SECTIONS.items():
        section = dict(data.get(name, {}))
        for key, value in (overrides or {}).get(name, {}).items():
            if value is not None:
                section[key] = value
        merged[name] = _build_section(name, cls, section)
    return AppConfig(generation=merged["generation"], filter=merged["filter"],
                     train=merged["train"], backends=dict(data.get("backends", {})))
