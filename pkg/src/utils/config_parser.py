"""Experiment configuration text: ``[section]`` headers with ``key = value`` lines.

Keys may also be written fully qualified (``train.batch_size = 4``) anywhere
in the file. ``#`` starts a comment. Comma-separated values fill list and
pair fields. Values are typed and bounds-checked by the pydantic sections.
"""
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, Tuple, Union, get_origin

from pydantic import BaseModel, ValidationError

from src.models.config_models import ExperimentConfig
from src.utils.errors import ConfigError, FPSDIOError

logger = logging.getLogger(__name__)

# Merged in from other sections by ExperimentConfig.train_config()
RESERVED_KEYS = {"train.perturbation", "train.scales"}


def section_fields() -> Dict[str, type]:
    """Section name -> section model class."""
    return {name: field.annotation for name, field in ExperimentConfig.model_fields.items()}


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _split_value(value: str, annotation) -> Union[str, list]:
    if get_origin(annotation) in (list, tuple):
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse experiment configuration text.

    Args:
        text: Configuration text (an empty text yields every default)

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: syntax error, unknown or duplicate key, or a value that
            fails its type or bounds, naming the key and line
    """
    sections = section_fields()
    values: Dict[str, Dict[str, Union[str, list]]] = {name: {} for name in sections}
    lines: Dict[Tuple[str, str], int] = {}
    current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("Unterminated section header", line=lineno)
            current = line[1:-1].strip()
            if current not in sections:
                raise ConfigError(f"Unknown section [{current}]", key=current, line=lineno)
            continue

        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"Expected 'key = value', got {line!r}", line=lineno)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError("Missing key before '='", line=lineno)

        if "." in key:
            section, _, name = key.partition(".")
        elif current is not None:
            section, name = current, key
        else:
            raise ConfigError(f"Key '{key}' outside any section", key=key, line=lineno)

        dotted = f"{section}.{name}"
        if section not in sections or name not in sections[section].model_fields or dotted in RESERVED_KEYS:
            raise ConfigError("Unknown key", key=dotted, line=lineno)
        if (section, name) in lines:
            raise ConfigError("Duplicate key", key=dotted, line=lineno)
        values[section][name] = _split_value(value, sections[section].model_fields[name].annotation)
        lines[(section, name)] = lineno

    built = {}
    for section, model in sections.items():
        try:
            built[section] = model.model_validate(values[section])
        except ValidationError as e:
            error = e.errors()[0]
            name = str(error["loc"][0]) if error["loc"] else None
            key = f"{section}.{name}" if name else section
            raise ConfigError(error["msg"], key=key, line=lines.get((section, name))) from e

    config = ExperimentConfig(**built)
    logger.debug(f"Parsed configuration with {len(lines)} explicit keys")
    return config


def load_config(path: Union[str, Path, None]) -> ExperimentConfig:
    """Parse a configuration file; ``None`` yields the defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FPSDIOError(f"Cannot read config {path}: {e}") from e
    return parse_config(text)


def _format_value(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    """Config text that parses back to an equal ExperimentConfig."""
    out = []
    for section in section_fields():
        model: BaseModel = getattr(config, section)
        out.append(f"[{section}]")
        for name in type(model).model_fields:
            if f"{section}.{name}" in RESERVED_KEYS:
                continue
            out.append(f"{name} = {_format_value(getattr(model, name))}")
        out.append("")
    return "\n".join(out)
