"""INI-style configuration files for parameters, filter, controller and scenario.

Flat ``key = value`` pairs under section headers, SI units throughout
(angles in rad unless the key ends in ``_deg``). Vectors are comma
separated. Unknown sections or keys are rejected.

Sections: ``[model]`` (ModelParameters), ``[plant]`` (PlantOptions),
``[ukf]`` (UkfConfig), ``[controller]`` (ControllerConfig),
``[noise]`` (simulation noise) and ``[scenario]``.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from pathlib import Path

import numpy as np

from pamtwin import plant
from pamtwin.controller import ControllerConfig
from pamtwin.estimator import UkfConfig
from pamtwin.harness import AngleSignal, ScenarioConfig, StepSignal
from pamtwin.statics import ModelParameters, PlantState

SECTIONS = ("model", "plant", "ukf", "controller", "noise", "scenario")

SCENARIO_KEYS = (
    "duration", "substep", "period", "seed", "estimator", "model_mismatch",
    "angle_amplitude_deg", "angle_period", "angle_phase", "angle_offset_deg",
    "stiffness_values", "stiffness_times",
    "initial_psi", "initial_psi_dot", "initial_P1", "initial_P2",
)


class ConfigError(ValueError):
    """Malformed, unreadable or inconsistent configuration."""


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (P_tank, A_11, ...)
    return cp


def _read(source) -> configparser.ConfigParser:
    cp = _parser()
    try:
        if isinstance(source, (str, Path)) and Path(source).exists():
            with open(source, encoding="utf-8") as fh:
                cp.read_file(fh)
        elif isinstance(source, (str, Path)):
            raise ConfigError(f"cannot read config file {str(source)!r}")
        else:
            cp.read_file(source)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"malformed config: {exc}".replace("\n", " ")) from exc
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    return cp


def _check_keys(section: str, items: dict, allowed) -> None:
    unknown = set(items) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _float(section, key, text) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected a number, got {text!r}") from exc


def _vector(section, key, text) -> list[float]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    return [_float(section, key, p) for p in parts]


def _bool(section, key, text) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {text!r}")


def _typed_fields(section: str, items: dict, cls) -> dict:
    """Convert strings to the field types of dataclass ``cls``."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(section, items, fields)
    defaults = cls()
    out = {}
    for key, text in items.items():
        current = getattr(defaults, key)
        if isinstance(current, bool):
            out[key] = _bool(section, key, text)
        elif isinstance(current, str):
            out[key] = text.strip()
        elif isinstance(current, np.ndarray):
            out[key] = _vector(section, key, text)
        elif isinstance(current, int) and not isinstance(current, bool):
            out[key] = int(_float(section, key, text))
        elif current is None and text.strip().lower() in ("", "none"):
            out[key] = None
        else:
            out[key] = _float(section, key, text)
    return out


def _build(cls, section, items):
    try:
        return cls(**_typed_fields(section, items, cls))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def params_from(cp: configparser.ConfigParser) -> ModelParameters:
    return _build(ModelParameters, "model", dict(cp["model"]) if cp.has_section("model") else {})


def load_params(source) -> ModelParameters:
    """ModelParameters from the ``[model]`` section; other sections are validated but ignored."""
    return params_from(_read(source))


def load_ukf(source) -> UkfConfig:
    cp = _read(source)
    return _build(UkfConfig, "ukf", dict(cp["ukf"]) if cp.has_section("ukf") else {})


def _scenario_from(cp: configparser.ConfigParser) -> ScenarioConfig:
    def sec(name):
        return dict(cp[name]) if cp.has_section(name) else {}

    items = sec("scenario")
    _check_keys("scenario", items, SCENARIO_KEYS)
    base = ScenarioConfig()
    num = {k: _float("scenario", k, v) for k, v in items.items()
           if k not in ("estimator", "stiffness_values", "stiffness_times", "seed")}

    angle = AngleSignal(
        amplitude_deg=num.get("angle_amplitude_deg", base.angle.amplitude_deg),
        period=num.get("angle_period", base.angle.period),
        phase=num.get("angle_phase", base.angle.phase),
        offset_deg=num.get("angle_offset_deg", base.angle.offset_deg),
    )
    values = _vector("scenario", "stiffness_values", items["stiffness_values"]) \
        if "stiffness_values" in items else list(base.stiffness.values)
    times = _vector("scenario", "stiffness_times", items["stiffness_times"]) \
        if "stiffness_times" in items else list(base.stiffness.times)
    initial = PlantState(
        psi=num.get("initial_psi", base.initial.psi),
        psi_dot=num.get("initial_psi_dot", base.initial.psi_dot),
        P1=num.get("initial_P1", base.initial.P1),
        P2=num.get("initial_P2", base.initial.P2),
    )
    noise_items = sec("noise")
    _check_keys("noise", noise_items, ("Q_sim", "R_sim"))
    noise = plant.NoiseSpec(
        Q_sim=_vector("noise", "Q_sim", noise_items["Q_sim"]) if "Q_sim" in noise_items else np.zeros(4),
        R_sim=_vector("noise", "R_sim", noise_items["R_sim"]) if "R_sim" in noise_items else np.zeros(2),
    )
    try:
        return ScenarioConfig(
            duration=num.get("duration", base.duration),
            substep=num.get("substep", base.substep),
            period=num.get("period", base.period),
            angle=angle,
            stiffness=StepSignal(values=tuple(values), times=tuple(times)),
            noise=noise,
            initial=initial,
            estimator=_bool("scenario", "estimator", items["estimator"]) if "estimator" in items else base.estimator,
            seed=int(_float("scenario", "seed", items["seed"])) if "seed" in items else base.seed,
            params=params_from(cp),
            plant_options=_build(plant.PlantOptions, "plant", sec("plant")),
            ukf=_build(UkfConfig, "ukf", sec("ukf")),
            controller=_build(ControllerConfig, "controller", sec("controller")),
            model_mismatch=num.get("model_mismatch", base.model_mismatch),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[scenario] {exc}") from exc


def load_scenario(source) -> ScenarioConfig:
    """Full ScenarioConfig; absent sections and keys keep their defaults."""
    return _scenario_from(_read(source))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (np.ndarray, list, tuple)):
        return ", ".join(repr(float(v)) for v in value)
    return repr(float(value))


def _section_of(obj) -> dict:
    return {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def dump_scenario(cfg: ScenarioConfig) -> str:
    """Text form that :func:`load_scenario` reads back to an equal config."""
    cp = _parser()
    cp["model"] = _section_of(cfg.params)
    cp["plant"] = _section_of(cfg.plant_options)
    cp["ukf"] = _section_of(cfg.ukf)
    cp["controller"] = _section_of(cfg.controller)
    cp["noise"] = {"Q_sim": _fmt(cfg.noise.Q_sim), "R_sim": _fmt(cfg.noise.R_sim)}
    a = cfg.angle
    if a.step_times:
        raise ConfigError("angle step sequences cannot be written to a config file")
    cp["scenario"] = {
        "duration": _fmt(cfg.duration), "substep": _fmt(cfg.substep), "period": _fmt(cfg.period),
        "seed": _fmt(cfg.seed), "estimator": _fmt(cfg.estimator), "model_mismatch": _fmt(cfg.model_mismatch),
        "angle_amplitude_deg": _fmt(a.amplitude_deg), "angle_period": _fmt(a.period),
        "angle_phase": _fmt(a.phase), "angle_offset_deg": _fmt(a.offset_deg),
        "stiffness_values": _fmt(list(cfg.stiffness.values)),
        "stiffness_times": _fmt(list(cfg.stiffness.times)) if cfg.stiffness.times else "",
        "initial_psi": _fmt(cfg.initial.psi), "initial_psi_dot": _fmt(cfg.initial.psi_dot),
        "initial_P1": _fmt(cfg.initial.P1), "initial_P2": _fmt(cfg.initial.P2),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def dump_params(params: ModelParameters) -> str:
    cp = _parser()
    cp["model"] = _section_of(params)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save_scenario(path, cfg: ScenarioConfig) -> None:
    Path(path).write_text(dump_scenario(cfg), encoding="utf-8")


def save_params(path, params: ModelParameters) -> None:
    Path(path).write_text(dump_params(params), encoding="utf-8")

