"""Run configuration: an INI file with one section per module.

Keys carry their unit in the name (``_hz``, ``_s``, ``_t``); frequencies are
ordinary Hz in the file and converted to rad/s on load. Every key is checked
before any computation and errors name the offending ``section.key``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .comms import ModulationKind, ModulationSpec
from .ensemble import DEFAULT_SAMPLES, EnsembleParams
from .errors import ConfigError, DomainError
from .noise import NoiseConfig
from .protocol import Protocol
from .sequence import SequenceParams
from .spin import HyperfineModel

ENV_CONFIG = "RABIMAG_CONFIG"
TWO_PI = 2.0 * math.pi

@dataclass(frozen=True)
class SweepConfig:
    omega_min: float = TWO_PI * 10e3
    omega_max: float = TWO_PI * 200e3
    omega_points: int = 20
    tau_max: float = 100e-6
    tau_points: int = 801
    tau_search_min: float = 1e-6
    tau_search_max: float = 200e-6
    tau_resolution: float = 1e-6
    slope_center: float = TWO_PI * 42.8e3
    slope_window: float = 0.5
    slope_step: float = TWO_PI * 50.0
    cutoff: float = 100.0
    duration: float = 1.0


@dataclass(frozen=True)
class CalibrationTargets:
    """Sensitivities the default photon budget and laser residual are tuned to reach."""

    target_eta: float = 3.4e-12
    target_shot_eta: float = 1.34e-12


@dataclass(frozen=True)
class RunConfig:
    ensemble: EnsembleParams = field(default_factory=EnsembleParams)
    sequence: SequenceParams = field(default_factory=SequenceParams)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    hyperfine: HyperfineModel = field(default_factory=lambda: HyperfineModel.from_bias_field(2.23e-4))
    modulation: Optional[ModulationSpec] = field(default_factory=ModulationSpec)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    calibration: CalibrationTargets = field(default_factory=CalibrationTargets)
    output_dir: str = "out"
    seed: int = 1
    workers: int = 1
    n_samples: int = DEFAULT_SAMPLES


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


def _optional_float(s: str):
    return None if s.strip().lower() == "auto" else float(s)


@dataclass(frozen=True)
class Key:
    name: str
    attr: str
    kind: Callable = float
    scale: float = 1.0
    check: Optional[Callable] = None
    rule: str = ""


SCHEMA = {
    "ensemble": [
        Key("gamma_hz_per_t", "gamma", float, TWO_PI, _positive, "> 0"),
        Key("t2_star_s", "t2_star", float, 1.0, _positive, "> 0"),
        Key("mw_inhomogeneity", "mw_inhomogeneity", float, 1.0, lambda v: 0 <= v < 1, "in [0, 1)"),
        Key("nv_count", "nv_count", float, 1.0, lambda v: v >= 1, ">= 1"),
        Key("photons_per_nv", "photons_per_nv", float, 1.0, _positive, "> 0"),
        Key("contrast_ceiling", "contrast_ceiling", float, 1.0, lambda v: 0 < v < 1, "in (0, 1)"),
        Key("stretch", "stretch", float, 1.0, lambda v: v >= 1, ">= 1"),
        Key("projection", "projection", float, 1.0, lambda v: 0 < v <= 1, "in (0, 1]"),
        Key("bias_field_t", "bias_field", float, 1.0, _nonneg, ">= 0"),
    ],
    "hyperfine": [
        Key("modulation_depth", "modulation_depth", float, 1.0, _unit, "in [0, 1]"),
        Key("hf_detuning_hz", "hf_detuning", float, TWO_PI, None),
        Key("nuclear_gamma_hz_per_t", "nuclear_gamma", float, 1.0, _nonneg, ">= 0"),
        Key("beat_frequency_hz", "beat_frequency", float, 1.0, _nonneg, ">= 0"),
    ],
    "sequence": [
        Key("mw_duration_s", "mw_duration", float, 1.0, _positive, "> 0"),
        Key("overhead_s", "overhead", float, 1.0, _nonneg, ">= 0"),
        Key("protocol", "protocol", Protocol.parse, 1.0,
            lambda v: v is not Protocol.SINGLE, "ON_OFF or PI_PULSE"),
        Key("sequence_rate_hz", "sequence_rate", float, 1.0, _positive, "> 0"),
        Key("pi_fidelity", "pi_fidelity", float, 1.0, _unit, "in [0, 1]"),
    ],
    "noise": [
        Key("shot_noise", "shot_noise_enabled", bool),
        Key("laser_white_asd", "laser_white_asd", float, 1.0, _nonneg, ">= 0"),
        Key("laser_flicker_corner_hz", "laser_flicker_corner", float, 1.0, _nonneg, ">= 0"),
        Key("cancellation_residual", "cancellation_residual", float, 1.0, _unit, "in [0, 1]"),
        Key("seed", "seed", int, 1.0, _nonneg, ">= 0"),
    ],
    "modulation": [
        Key("enabled", "enabled", bool),
        Key("kind", "kind", lambda s: ModulationKind(s.strip().upper()), 1.0, None),
        Key("signal_amplitude_t", "signal_amplitude", float, 1.0, _nonneg, ">= 0"),
        Key("mod_frequency_hz", "mod_frequency", float, 1.0, _nonneg, ">= 0"),
        Key("depth", "depth", float, 1.0, _unit, "in [0, 1]"),
        Key("phase_deviation_rad", "phase_deviation", _optional_float, 1.0,
            lambda v: v is None or abs(v) <= math.pi, "auto or |x| <= pi"),
        Key("bit_rate_hz", "bit_rate", float, 1.0, _positive, "> 0"),
        Key("bits", "bits", lambda s: tuple(int(c) for c in s.strip()), 1.0,
            lambda v: all(b in (0, 1) for b in v), "string of 0/1"),
        Key("random_bits", "random_bits", int, 1.0, _nonneg, ">= 0"),
    ],
    "sweep": [
        Key("omega_min_hz", "omega_min", float, TWO_PI, _positive, "> 0"),
        Key("omega_max_hz", "omega_max", float, TWO_PI, _positive, "> 0"),
        Key("omega_points", "omega_points", int, 1.0, lambda v: v >= 1, ">= 1"),
        Key("tau_max_s", "tau_max", float, 1.0, _positive, "> 0"),
        Key("tau_points", "tau_points", int, 1.0, lambda v: v >= 3, ">= 3"),
        Key("tau_search_min_s", "tau_search_min", float, 1.0, _positive, "> 0"),
        Key("tau_search_max_s", "tau_search_max", float, 1.0, _positive, "> 0"),
        Key("tau_resolution_s", "tau_resolution", float, 1.0, _positive, "> 0"),
        Key("slope_center_hz", "slope_center", float, TWO_PI, _positive, "> 0"),
        Key("slope_window", "slope_window", float, 1.0, lambda v: 0 < v < 1, "in (0, 1)"),
        Key("slope_step_hz", "slope_step", float, TWO_PI, _positive, "> 0"),
        Key("cutoff_hz", "cutoff", float, 1.0, _nonneg, ">= 0"),
        Key("duration_s", "duration", float, 1.0, _positive, "> 0"),
    ],
    "calibration": [
        Key("target_eta_t_per_rthz", "target_eta", float, 1.0, _positive, "> 0"),
        Key("target_shot_eta_t_per_rthz", "target_shot_eta", float, 1.0, _positive, "> 0"),
    ],
    "run": [
        Key("output_dir", "output_dir", str),
        Key("seed", "seed", int, 1.0, _nonneg, ">= 0"),
        Key("workers", "workers", int, 1.0, lambda v: v >= 1, ">= 1"),
        Key("n_samples", "n_samples", int, 1.0, lambda v: v >= 1, ">= 1"),
    ],
}

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _parse_value(section: str, key: Key, raw: str):
    path = f"{section}.{key.name}"
    try:
        if key.kind is bool:
            value = _BOOL[raw.strip().lower()]
        else:
            value = key.kind(raw.strip() if isinstance(raw, str) else raw)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(path, f"cannot parse {raw!r}: {exc}") from None
    if key.check is not None and not key.check(value):
        raise ConfigError(path, f"must be {key.rule}, got {raw!r}")
    if key.scale != 1.0:
        value = value * key.scale
    return value


def _format_value(key: Key, value) -> str:
    if key.kind is bool:
        return "true" if value else "false"
    if value is None:
        return "auto"
    if key.name == "bits":
        return "".join(str(b) for b in value)
    if isinstance(value, Protocol) or isinstance(value, ModulationKind):
        return value.value
    if key.scale != 1.0:
        value = value / key.scale
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _section_values(cfg: RunConfig) -> dict:
    hf = cfg.hyperfine
    mod = cfg.modulation or ModulationSpec()
    return {
        "ensemble": dataclasses.asdict(cfg.ensemble),
        "hyperfine": {"modulation_depth": hf.modulation_depth, "hf_detuning": hf.hf_detuning,
                      "beat_frequency": hf.beat_frequency,
                      "nuclear_gamma": hf.beat_frequency / cfg.ensemble.bias_field if cfg.ensemble.bias_field else 0.0},
        "sequence": {f.name: getattr(cfg.sequence, f.name) for f in dataclasses.fields(cfg.sequence)},
        "noise": dataclasses.asdict(cfg.noise),
        "modulation": {**{f.name: getattr(mod, f.name) for f in dataclasses.fields(mod)},
                       "enabled": cfg.modulation is not None, "random_bits": 0},
        "sweep": dataclasses.asdict(cfg.sweep),
        "calibration": dataclasses.asdict(cfg.calibration),
        "run": {"output_dir": cfg.output_dir, "seed": cfg.seed, "workers": cfg.workers,
                "n_samples": cfg.n_samples},
    }


def dump_config(cfg: RunConfig) -> str:
    """Canonical INI text for ``cfg``; loading it back yields an equal config."""
    values = _section_values(cfg)
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            if section == "hyperfine" and key.name == "nuclear_gamma_hz_per_t":
                continue
            lines.append(f"{key.name} = {_format_value(key, values[section][key.attr])}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> str:
    """Digest of the settings that affect results; output location and worker count are excluded."""
    neutral = dataclasses.replace(cfg, output_dir="", workers=1)
    return hashlib.sha256(dump_config(neutral).encode()).hexdigest()[:16]


def build_config(sections: dict) -> RunConfig:
    """Assemble a :class:`RunConfig` from ``{section: {key: raw string}}``."""
    parsed = {}
    for section, raw in sections.items():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        keys = {k.name: k for k in SCHEMA[section]}
        out = {}
        for name, value in raw.items():
            if name not in keys:
                raise ConfigError(f"{section}.{name}", "unknown key")
            out[keys[name].attr] = _parse_value(section, keys[name], value)
        parsed[section] = out

    def make(section, factory, **extra):
        try:
            return factory(**extra)
        except (DomainError, TypeError, ValueError) as exc:
            raise ConfigError(section, str(exc)) from None

    defaults = RunConfig()
    ens = make("ensemble", lambda **kw: dataclasses.replace(defaults.ensemble, **kw), **parsed.get("ensemble", {}))

    hf_raw = dict(parsed.get("hyperfine", {}))
    nuclear_gamma = hf_raw.pop("nuclear_gamma", None)
    if "beat_frequency" not in hf_raw:
        gamma_n = 7.5e7 if nuclear_gamma is None else nuclear_gamma
        hf_raw["beat_frequency"] = gamma_n * ens.bias_field
    hf = make("hyperfine", lambda **kw: dataclasses.replace(defaults.hyperfine, **kw), **hf_raw)
    seq = make("sequence", lambda **kw: dataclasses.replace(defaults.sequence, **kw), **parsed.get("sequence", {}))
    noise = make("noise", lambda **kw: dataclasses.replace(defaults.noise, **kw), **parsed.get("noise", {}))

    mod_raw = dict(parsed.get("modulation", {}))
    enabled = mod_raw.pop("enabled", True)
    n_random = mod_raw.pop("random_bits", 0)
    run_raw = parsed.get("run", {})
    if n_random:
        import numpy as np
        rng = np.random.default_rng([run_raw.get("seed", defaults.seed), 7])
        mod_raw["bits"] = tuple(int(b) for b in rng.integers(0, 2, n_random))
    modulation = make("modulation", lambda **kw: dataclasses.replace(defaults.modulation, **kw), **mod_raw) \
        if enabled else None

    sweep = make("sweep", lambda **kw: dataclasses.replace(defaults.sweep, **kw), **parsed.get("sweep", {}))
    if sweep.omega_min > sweep.omega_max:
        raise ConfigError("sweep.omega_max_hz", "must be >= omega_min_hz")
    if sweep.tau_search_min >= sweep.tau_search_max:
        raise ConfigError("sweep.tau_search_max_s", "must exceed tau_search_min_s")
    if sweep.duration < 2.0 / seq.data_rate:
        raise ConfigError("sweep.duration_s", f"must be >= 2/data_rate = {2.0 / seq.data_rate:g} s")
    targets = make("calibration", CalibrationTargets, **parsed.get("calibration", {}))
    return RunConfig(ens, seq, noise, hf, modulation, sweep, targets, **run_raw)


def read_sections(path: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(path, f"cannot read config: {exc}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Load ``path`` (or ``$RABIMAG_CONFIG``, or built-in defaults) and apply overrides.

    ``overrides`` maps ``"section.key"`` to raw strings and wins over the file.
    """
    path = path or os.environ.get(ENV_CONFIG)
    sections = read_sections(path) if path else {}
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(dotted, "override must look like section.key=value")
        section, key = dotted.split(".", 1)
        sections.setdefault(section, {})[key] = value
    return build_config(sections)
