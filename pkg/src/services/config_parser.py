"""
etrl — Run-configuration parser.

File format
───────────
    # comment
    env = integrator
    algorithm = atppo
    clip_eps = 0.2            # any AtppoHyper field
    env.d_max = 0.05          # environment override
    eval_episodes = 100

Flags override file values. Every rejected value is reported as a
``ParseError`` naming the source (file path or flag) and the line.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Tuple, Union

from pydantic import ValidationError

from src.core.errors import ParseError
from src.models.schemas import HYPER_KEYS, Algorithm, Command, EnvName, RunConfig, build_env_config

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = frozenset({"command", "env", "algorithm", "out", "eval_episodes", "checkpoint", "checkpoint_b"})
ENV_PREFIX = "env."


@dataclass(frozen=True)
class _Entry:
    value: str
    source: str
    line_no: Optional[int]


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def read_config_lines(text: str, source: str = "<config>") -> Dict[str, _Entry]:
    """Split ``key = value`` lines; duplicate keys and malformed lines are errors."""
    entries: Dict[str, _Entry] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", source, line_no)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("missing key", source, line_no)
        if key in entries:
            raise ParseError(f"duplicate key '{key}' (first on line {entries[key].line_no})", source, line_no)
        entries[key] = _Entry(value, source, line_no)
    return entries


def parse_set_flags(items: Iterable[str]) -> Dict[str, str]:
    """``["a=1", "env.d_max=0"]`` → ``{"a": "1", "env.d_max": "0"}``."""
    out: Dict[str, str] = {}
    for item in items:
        if "=" not in item:
            raise ParseError(f"expected key=value, got {item!r}", "<flag --set>")
        key, value = (part.strip() for part in item.split("=", 1))
        out[key] = value
    return out


def _enum_value(enum_cls, entry: _Entry, key: str):
    try:
        return enum_cls(entry.value)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise ParseError(f"{key}: '{entry.value}' is not one of {allowed}", entry.source, entry.line_no) from None


def _raise_validation(exc: ValidationError, keyed: Mapping[Tuple[str, ...], str],
                      entries: Mapping[str, _Entry], default_source: str) -> None:
    err = exc.errors()[0]
    loc = tuple(str(p) for p in err["loc"])
    key = keyed.get(loc[:2]) or keyed.get(loc[:1]) or ".".join(loc)
    entry = entries.get(key)
    raise ParseError(
        f"{key}: {err['msg']}",
        entry.source if entry else default_source,
        entry.line_no if entry else None,
    ) from exc


def parse_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, object]] = None,
    command: Optional[Union[str, Command]] = None,
) -> RunConfig:
    """
    Build a validated RunConfig.

    Parameters
    ----------
    path      : key = value file, or None for defaults only
    overrides : flag values (``seed``, ``out``, ``--set`` pairs); they win over the file
    command   : CLI verb recorded in the config
    """
    source = str(path) if path is not None else "<defaults>"
    entries: Dict[str, _Entry] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ParseError("config file not found", source) from None
        entries = read_config_lines(text, source)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        entries[key] = _Entry(str(value), f"<flag {key}>", None)
    if command is not None:
        entries["command"] = _Entry(Command(command).value, "<cli>", None)

    top: Dict[str, object] = {}
    hyper: Dict[str, object] = {}
    env_overrides: Dict[str, object] = {}
    keyed: Dict[Tuple[str, ...], str] = {}

    for key, entry in entries.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):]
            env_overrides[name] = entry.value
            keyed[(name,)] = key
            keyed[("env_overrides", name)] = key
        elif key in HYPER_KEYS:
            hyper[key] = entry.value
            keyed[("hyper", key)] = key
        elif key in TOP_LEVEL_KEYS:
            top[key] = entry.value
            keyed[(key,)] = key
        else:
            raise ParseError(f"unknown key '{key}'", entry.source, entry.line_no)

    if "env" in entries:
        top["env"] = _enum_value(EnvName, entries["env"], "env")
    if "algorithm" in entries:
        top["algorithm"] = _enum_value(Algorithm, entries["algorithm"], "algorithm")
    if "command" in entries:
        top["command"] = _enum_value(Command, entries["command"], "command")

    env_name = top.get("env", EnvName.INTEGRATOR)
    try:
        build_env_config(env_name, env_overrides)
    except ValidationError as exc:
        _raise_validation(exc, keyed, entries, source)

    try:
        config = RunConfig(**top, hyper=hyper, env_overrides=env_overrides)
    except ValidationError as exc:
        _raise_validation(exc, keyed, entries, source)

    logger.info("Config %s: env=%s algorithm=%s seed=%d", source, config.env.value, config.algorithm.value, config.seed)
    return config
