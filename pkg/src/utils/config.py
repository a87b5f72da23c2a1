"""Experiment configuration files: YAML mappings or ``key = value`` lines."""

import re
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from src.utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_CONFIG_PATH = "config.yaml"
NESTED_SECTIONS = ("convex", "random")
KEY_ALIASES = {
    "map": "map_path",
    "budget": "budgets",
    "iters": "lagr_iters",
}

_KEY_VALUE_LINE = re.compile(r"^\s*([A-Za-z_][\w.\-]*)\s*=\s*(.*?)\s*$")


class ConfigFileError(Exception):
    """A configuration file could not be parsed."""

    def __init__(self, message: str, path: Optional[Union[str, Path]] = None):
        self.path = str(path) if path is not None else None
        super().__init__(f"{self.path}: {message}" if self.path else message)


def normalize_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    return KEY_ALIASES.get(key, key)


def _scalar(text: str) -> Any:
    """Type a raw value the way YAML would (numbers, booleans, null, lists)."""
    if text == "":
        return None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def parse_key_value_lines(text: str, path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    Parse ``key = value`` lines; ``#`` starts a comment.

    Dotted keys (``convex.objective = log``) fill nested sections.
    """
    settings: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _KEY_VALUE_LINE.match(line)
        if not match:
            raise ConfigFileError(f"line {number}: expected 'key = value', got {raw.strip()!r}", path)
        key, value = match.group(1), _scalar(match.group(2))
        if "." in key:
            section, name = key.split(".", 1)
            settings.setdefault(normalize_key(section), {})[normalize_key(name)] = value
        else:
            settings[normalize_key(key)] = value
    return settings


def _looks_like_key_value(text: str) -> bool:
    lines = [line.split("#", 1)[0].strip() for line in text.splitlines()]
    lines = [line for line in lines if line]
    return bool(lines) and all(_KEY_VALUE_LINE.match(line) for line in lines)


def parse_config_text(text: str, path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Parse configuration text in either accepted format into a flat settings dict."""
    if _looks_like_key_value(text):
        return parse_key_value_lines(text, path)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigFileError(f"invalid YAML: {e}", path) from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigFileError("configuration must be a mapping", path)
    settings: Dict[str, Any] = {}
    for key, value in data.items():
        key = normalize_key(str(key))
        if key in NESTED_SECTIONS and isinstance(value, dict):
            value = {normalize_key(str(k)): v for k, v in value.items()}
        settings[key] = value
    return settings


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a configuration file.

    Raises:
        FileNotFoundError: if the file does not exist
        ConfigFileError: if the contents cannot be parsed
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    settings = parse_config_text(text, path)
    logger.debug(f"Loaded {len(settings)} settings from {path}")
    return settings


def merge_settings(*layers: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """
    Merge settings layers, later layers winning.

    ``None`` values never override; nested sections merge key by key.
    """
    merged: Dict[str, Any] = {}
    for layer in layers:
        for key, value in (layer or {}).items():
            if value is None:
                continue
            if key in NESTED_SECTIONS and isinstance(value, dict):
                section = dict(merged.get(key) or {})
                section.update({k: v for k, v in value.items() if v is not None})
                merged[key] = section
            else:
                merged[key] = value
    return merged


def parse_budgets(value: Any) -> Optional[Tuple[float, ...]]:
    """
    Budgets from ``"0.2,0.3"``, a number or a list.

    Raises:
        ValueError: if an entry is not a number
    """
    if value is None:
        return None
    if isinstance(value, str):
        parts = [part.strip() for part in value.split(",") if part.strip()]
        return tuple(float(part) for part in parts)
    if isinstance(value, (int, float)):
        return (float(value),)
    return tuple(float(v) for v in value)
