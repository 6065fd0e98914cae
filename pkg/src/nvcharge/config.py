"""Configuration loading: one YAML file, deep-merged over shipped defaults.

The shipped defaults file (src/nvcharge/data/defaults.yaml) is the schema:
a user config may override any key present there and nothing else.  Missing
keys silently keep their defaults; unknown keys are hard errors so typos
cannot masquerade as successful overrides.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .charge import VoltageProfile
from .engine import ChargeRelaxation, EngineModel, RelaxationTable
from .physics import Isotope, PhysicalParams
from .readout import ReadoutModel

__all__ = [
    "Config",
    "ConfigError",
    "RunDefaults",
    "default_config_text",
    "load_config",
]


class ConfigError(ValueError):
    """Unreadable, malformed, or out-of-bounds configuration."""


@dataclass(frozen=True)
class RunDefaults:
    """Execution knobs the CLI reads when no flag overrides them."""

    seed: int = 0
    shots: int | None = None
    output_dir: str | None = None
    format: str = "csv"

    def __post_init__(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("run.seed must be a nonnegative integer")
        if self.shots is not None and (
            isinstance(self.shots, bool) or not isinstance(self.shots, int) or self.shots <= 0
        ):
            raise ValueError("run.shots must be a positive integer or null")
        if self.format not in ("csv", "json"):
            raise ValueError("run.format must be csv or json")


@dataclass(frozen=True)
class Config:
    """Full model plus run defaults, ready to hand to the harness."""

    model: EngineModel
    run: RunDefaults


def default_config_text() -> str:
    return resources.files("nvcharge.data").joinpath("defaults.yaml").read_text()


def _merge(base: dict, override: dict, path: str) -> dict:
    out = dict(base)
    for key, value in override.items():
        dotted = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted} must be a table of keys")
            out[key] = _merge(base[key], value, dotted)
        else:
            if isinstance(value, dict):
                raise ConfigError(f"{dotted} takes a single value, not a table")
            out[key] = value
    return out


def _number(tree: dict, section: str, key: str) -> float:
    value = tree[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    return float(value)


def _numbers(tree: dict, section: str) -> dict[str, float]:
    return {key: _number(tree, section, key) for key in tree}


def _build(tree: dict) -> Config:
    phys = dict(tree["physics"])
    isotope_name = phys.pop("isotope")
    try:
        isotope = Isotope(isotope_name)
    except ValueError:
        names = ", ".join(i.value for i in Isotope)
        raise ConfigError(
            f"physics.isotope must be one of {names}, got {isotope_name!r}"
        ) from None

    try:
        params = PhysicalParams(isotope=isotope, **_numbers(phys, "physics"))
        profile = VoltageProfile(**_numbers(tree["voltage"], "voltage"))
        readout = ReadoutModel(**_numbers(tree["readout"], "readout"))
        rel = tree["relaxation"]
        relaxation = RelaxationTable(
            minus=ChargeRelaxation(**_numbers(rel["minus"], "relaxation.minus")),
            zero=ChargeRelaxation(**_numbers(rel["zero"], "relaxation.zero")),
            plus=ChargeRelaxation(**_numbers(rel["plus"], "relaxation.plus")),
            t1_electron_us=_number(rel, "relaxation", "t1_electron_us"),
        )
        model = EngineModel(
            params=params,
            profile=profile,
            readout=readout,
            relaxation=relaxation,
            initial_voltage_v=_number(tree["engine"], "engine", "initial_voltage_v"),
        )
        run_tree = tree["run"]
        run = RunDefaults(
            seed=run_tree["seed"],
            shots=run_tree["shots"],
            output_dir=run_tree["output_dir"],
            format=run_tree["format"],
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return Config(model=model, run=run)


def load_config(path: str | Path | None = None) -> Config:
    """Parse the defaults, overlay the user file when given, and validate."""
    base = yaml.safe_load(default_config_text())
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc.strerror}") from exc
        try:
            user = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file {p}: {exc}") from exc
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError(f"config file {p} must be a key-value mapping")
        base = _merge(base, user, "")
    return _build(base)
