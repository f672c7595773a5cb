"""Flat key/value experiment config files.

Format: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines are ignored. Section structure is spelled with dotted prefixes
(``attack.source_class = 3``), which keeps sweep overrides diff-friendly.
Unknown keys are rejected. See ``FIELDS`` (or the README) for the full
reference; every key is optional and falls back to the package default.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

from .data import AttackSpec
from .model import TrainConfig
from .simulator import AGGREGATORS, ConfigError, DataSpec, DpConfig, FederationConfig


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_label_column(raw: str) -> str | int:
    try:
        return int(raw)
    except ValueError:
        return raw


def _parse_optional_int(raw: str) -> int | None:
    if raw.lower() in ("auto", "none", ""):
        return None
    return int(raw)


def _parse_aggregator(raw: str) -> str:
    name = raw.lower()
    if name not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {raw!r}; choose from {', '.join(AGGREGATORS)}")
    return name


# config key -> (parser, path into FederationConfig)
FIELDS: dict[str, tuple[Callable[[str], Any], tuple[str, ...]]] = {
    "num_clients": (int, ("num_clients",)),
    "participation_fraction": (float, ("participation_fraction",)),
    "rounds": (int, ("rounds",)),
    "t_safe": (int, ("t_safe",)),
    "pmr": (float, ("pmr",)),
    "aggregator": (_parse_aggregator, ("aggregator",)),
    "master_seed": (int, ("master_seed",)),
    "z_alpha": (float, ("z_alpha",)),
    "dirichlet_alpha": (float, ("dirichlet_alpha",)),
    "eta_server": (float, ("eta_server",)),
    "test_fraction": (float, ("test_fraction",)),
    "trim_fraction": (float, ("trim_fraction",)),
    "flame_noise_scale": (float, ("flame_noise_scale",)),
    "krum_num_malicious": (_parse_optional_int, ("krum_num_malicious",)),
    "attack.source_class": (int, ("attack", "source_class")),
    "attack.target_class": (int, ("attack", "target_class")),
    "attack.flip_fraction": (float, ("attack", "flip_fraction")),
    "attack.during_safe_phase": (_parse_bool, ("attack_during_safe_phase",)),
    "train.epochs": (int, ("train", "epochs")),
    "train.batch_size": (int, ("train", "batch_size")),
    "train.learning_rate": (float, ("train", "learning_rate")),
    "model.hidden_dim": (int, ("hidden_dim",)),
    "data.source": (str, ("data", "source")),
    "data.num_classes": (int, ("data", "num_classes")),
    "data.samples_per_class": (int, ("data", "samples_per_class")),
    "data.dim": (int, ("data", "dim")),
    "data.class_separation": (float, ("data", "class_separation")),
    "data.csv_path": (str, ("data", "csv_path")),
    "data.label_column": (_parse_label_column, ("data", "label_column")),
    "dp.enabled": (_parse_bool, ("dp", "enabled")),
    "dp.clip_norm": (float, ("dp", "clip_norm")),
    "dp.noise_multiplier": (float, ("dp", "noise_multiplier")),
}


def parse_config_text(text: str, origin: str = "<config>") -> FederationConfig:
    """Parse config text into a FederationConfig, applying defaults for
    absent keys. Raises ConfigError naming the offending key."""
    overrides: dict[tuple[str, ...], Any] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}", f"expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in FIELDS:
            raise ConfigError(key, f"unknown config key ({origin}:{lineno})")
        parser, path = FIELDS[key]
        try:
            overrides[path] = parser(raw_value)
        except ValueError as exc:
            raise ConfigError(key, f"{exc} ({origin}:{lineno})") from exc
    return apply_overrides(FederationConfig(), overrides)


def apply_overrides(cfg: FederationConfig, overrides: dict[tuple[str, ...], Any]) -> FederationConfig:
    """Return a config with the given (path -> value) overrides applied."""
    groups: dict[str, dict[str, Any]] = {}
    flat: dict[str, Any] = {}
    for path, value in overrides.items():
        if len(path) == 1:
            flat[path[0]] = value
        else:
            groups.setdefault(path[0], {})[path[1]] = value
    for group, values in groups.items():
        flat[group] = replace(getattr(cfg, group), **values)
    return replace(cfg, **flat)


def load_config(path: str | Path) -> FederationConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, origin=str(path))


def config_to_dict(cfg: FederationConfig) -> dict[str, Any]:
    """Flatten a config back to its file keys (for manifests)."""
    out: dict[str, Any] = {}
    for key, (_, path) in FIELDS.items():
        node: Any = cfg
        if len(path) == 1:
            value = getattr(cfg, path[0])
        else:
            value = getattr(getattr(node, path[0]), path[1])
        out[key] = value
    return out


def dict_to_config_text(snapshot: dict[str, Any]) -> str:
    """Render a manifest snapshot back into parseable config text."""
    lines = []
    for key in FIELDS:
        if key not in snapshot:
            continue
        value = snapshot[key]
        if value is None:
            value = "auto"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
