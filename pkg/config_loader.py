"""
Configuration Loader

Experiment configs are JSON objects with three optional sections:

- env: EnvSpec overrides (beam_count, lidar_max_range, r_arrive, dt, ...)
- td3: Td3Config fields (eta, gamma, tau, batch_size, ...)
- run: experiment settings (mode, scenarios, episode counts, seed, ...)

Bundled presets live in configs/ and are loaded by name ('aerial',
'terrestrial'); any other value is treated as a path. Unknown sections or keys
are rejected.
"""

import copy
import json
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict

from layer0_nncore import ConfigError
from layer2_agent import Td3Config
from layer3_envs import EnvSpec

CONFIGS_DIR = Path(__file__).parent / "configs"
SECTIONS = ("env", "td3", "run")

RUN_KEYS = (
    "mode",
    "train_scenario",
    "eval_scenario",
    "train_episodes",
    "eval_episodes",
    "seed",
    "ma_window",
    "ma_short_window",
    "buffer_capacity",
    "workers",
    "out_dir",
)

# Cache for bundled presets
_config_cache: Dict[str, Dict[str, Any]] = {}


def env_keys() -> set:
    return {f.name for f in fields(EnvSpec)} - {"mode"}


def td3_keys() -> set:
    return {f.name for f in fields(Td3Config)}


def available_presets() -> list:
    return sorted(p.stem for p in CONFIGS_DIR.glob("*.json"))


def validate_sections(data: Any, source: str = "<config>") -> Dict[str, Dict[str, Any]]:
    """
    Check section and key names and fill in missing sections.

    Args:
        data: parsed JSON content
        source: name used in error messages

    Returns:
        dict: {"env": {...}, "td3": {...}, "run": {...}}

    Raises:
        ConfigError: not an object, unknown section or unknown key
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    unknown_sections = set(data) - set(SECTIONS)
    if unknown_sections:
        raise ConfigError(f"{source}: unknown sections {sorted(unknown_sections)} (allowed: {list(SECTIONS)})")

    allowed = {"env": env_keys(), "td3": td3_keys(), "run": set(RUN_KEYS)}
    sections = {}
    for name in SECTIONS:
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{source}: section [{name}] must be an object")
        unknown = set(section) - allowed[name]
        if unknown:
            raise ConfigError(f"{source}: unknown keys in [{name}]: {sorted(unknown)}")
        sections[name] = dict(section)
    return sections


def load_config(name_or_path) -> Dict[str, Dict[str, Any]]:
    """
    Load a bundled preset by name or a config file by path.

    Returns a deep copy, so callers may mutate the sections freely.
    """
    key = str(name_or_path)
    if key in _config_cache:
        return copy.deepcopy(_config_cache[key])

    preset = CONFIGS_DIR / f"{key}.json"
    path = preset if preset.exists() else Path(key)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config '{key}' is neither a preset ({available_presets()}) nor an existing file")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")

    sections = validate_sections(data, source=str(path))
    if path == preset:
        _config_cache[key] = copy.deepcopy(sections)
    return sections

