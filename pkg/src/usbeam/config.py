"""Experiment configuration: presets, JSON config files, strict validation.

A config resolves to probe geometry, a scan plan, a phantom recipe,
simulation settings, and per-method parameter dictionaries.  Unknown keys
anywhere in the document are rejected so typos fail loudly instead of
silently running with defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .acquisition import ScanPlan
from .errors import ConfigError
from .geometry import ProbeGeometry
from .metrics import RegionSpec
from .phantom import ExcitationPulse, Phantom, cyst_phantom, point_reflector_phantom

__all__ = [
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "preset_names",
    "METHOD_NAMES",
]

METHOD_NAMES = ("das", "mv", "bs_capon", "multibeam_capon", "iaa", "bp", "ls")

# Per-method parameter schemas: name -> default.  None means "derived later"
# (e.g. subaperture defaults to M//8 once the probe is known).
_METHOD_SCHEMAS: dict[str, dict] = {
    "das": {"apodization": "hanning"},
    "mv": {
        "subaperture": None,
        "temporal_window": 10,
        "loading_delta": None,
    },
    "bs_capon": {
        "temporal_window": 10,
        "loading_delta": 0.01,
        "beamspace_dim": None,
    },
    "multibeam_capon": {
        "loading_delta": 0.01,
        "beamspace_dim": None,
        "reference_depth": None,
    },
    "iaa": {
        "iterations": 15,
        "beamspace_dim": None,
        "reference_depth": None,
    },
    "bp": {
        "reg_lambda": 0.5,
        "decimation": 5,
        "max_iters": 2000,
        "tol": 1e-4,
        "observation_apodization": "none",
        "reference_depth": None,
    },
    "ls": {
        "reg_lambda": 1.0,
        "decimation": 5,
        "observation_apodization": "none",
        "reference_depth": None,
    },
}

_DESK_PROBE = {
    "num_elements": 32,
    "pitch": 256e-6,
    "center_frequency": 3e6,
    "sampling_frequency": 40e6,
    "sound_speed": 1540.0,
}

_PRESETS: dict[str, dict] = {
    # Five isolated reflectors in a sector scan; resolution-oriented scene.
    "point_scatterers": {
        "probe": dict(_DESK_PROBE),
        "scan": {
            "kind": "sector",
            "num_emissions": 60,
            "span_deg": 16.0,
            "depth_start": 0.050,
            "depth_end": 0.078,
            "focus_depth": 0.065,
        },
        "phantom": {"type": "point_reflectors"},
        "simulate": {
            "noise_snr_db": 35.0,
            "tx_beam_sigma_deg": 2.0,
            "pulse_cycles": 2,
        },
        "method_defaults": {
            "bp": {"reg_lambda": 0.5},
            "ls": {"reg_lambda": 0.7},
        },
    },
    # Anechoic cyst in speckle; contrast-oriented scene with scoring regions.
    "cyst": {
        "probe": dict(_DESK_PROBE),
        "scan": {
            "kind": "sector",
            "num_emissions": 60,
            "span_deg": 24.0,
            "depth_start": 0.065,
            "depth_end": 0.095,
            "focus_depth": 0.080,
        },
        "phantom": {
            "type": "cyst",
            "radius": 5e-3,
            "depth": 0.080,
            "n_scatterers": 8000,
        },
        "simulate": {
            "noise_snr_db": 30.0,
            "tx_beam_sigma_deg": 2.0,
            "pulse_cycles": 2,
        },
        "regions": {
            "target": {"shape": "disc", "center": [0.0, 0.080], "radius": 3e-3},
            "background": {"shape": "disc", "center": [0.010, 0.080], "radius": 3e-3},
        },
        "method_defaults": {
            "bp": {"reg_lambda": 0.5},
            "ls": {"reg_lambda": 1.0},
        },
    },
    # Shallow small cyst at higher frequency; vessel-like cross-section.
    "carotid_like": {
        "probe": dict(_DESK_PROBE, center_frequency=5e6),
        "scan": {
            "kind": "sector",
            "num_emissions": 60,
            "span_deg": 20.0,
            "depth_start": 0.020,
            "depth_end": 0.049,
            "focus_depth": 0.035,
        },
        "phantom": {
            "type": "cyst",
            "radius": 3e-3,
            "depth": 0.035,
            "n_scatterers": 3000,
            "lateral_halfwidth": 12e-3,
            "axial_halfwidth": 12e-3,
        },
        "simulate": {
            "noise_snr_db": 30.0,
            "tx_beam_sigma_deg": 2.0,
            "pulse_cycles": 2,
        },
        "regions": {
            "target": {"shape": "disc", "center": [0.0, 0.035], "radius": 1.8e-3},
            "background": {"shape": "disc", "center": [0.007, 0.035], "radius": 1.8e-3},
        },
        "method_defaults": {
            "bp": {"reg_lambda": 0.5},
            "ls": {"reg_lambda": 1.0},
        },
    },
}

_TOP_KEYS = {
    "preset", "probe", "scan", "phantom", "simulate", "method",
    "method_defaults", "method_params", "regions", "seed", "dynamic_range",
}
_PROBE_KEYS = set(_DESK_PROBE)
_SCAN_KEYS = {
    "kind", "num_emissions", "span_deg", "lateral_span", "positions",
    "depth_start", "depth_end", "focus_depth",
}
_PHANTOM_KEYS = {
    "type", "radius", "depth", "n_scatterers", "seed", "path",
    "lateral_halfwidth", "axial_halfwidth", "center_lateral",
    "pair_separation", "pair_depths", "center_depth",
}
_SIMULATE_KEYS = {"noise_snr_db", "tx_beam_sigma_deg", "pulse_cycles"}
_REGION_KEYS = {"shape", "center", "radius", "half_extents"}


def preset_names() -> tuple[str, ...]:
    return tuple(_PRESETS)


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description."""

    geometry: ProbeGeometry
    scan: ScanPlan
    phantom_spec: dict
    simulate: dict
    method: str | None
    method_params: dict[str, dict]
    regions: dict[str, RegionSpec]
    seed: int = 1
    dynamic_range: float = 60.0
    preset: str | None = None

    def pulse(self) -> ExcitationPulse:
        return ExcitationPulse.create(
            self.geometry.center_frequency,
            self.geometry.sampling_frequency,
            cycles=self.simulate.get("pulse_cycles", 2),
        )

    def build_phantom(self) -> Phantom:
        spec = self.phantom_spec
        kind = spec["type"]
        if kind == "point_reflectors":
            kwargs = {
                k: spec[k]
                for k in ("pair_separation", "pair_depths", "center_depth")
                if k in spec
            }
            if "pair_depths" in kwargs:
                kwargs["pair_depths"] = tuple(kwargs["pair_depths"])
            return point_reflector_phantom(**kwargs)
        if kind == "cyst":
            kwargs = {
                k: spec[k]
                for k in ("lateral_halfwidth", "axial_halfwidth", "center_lateral")
                if k in spec
            }
            return cyst_phantom(
                radius=spec["radius"],
                depth=spec["depth"],
                n_scatterers=spec["n_scatterers"],
                seed=spec.get("seed", self.seed),
                **kwargs,
            )
        if kind == "file":
            from .io import load_phantom

            return load_phantom(spec["path"])
        raise ConfigError(f"unknown phantom type {kind!r}")

    def params_for(self, method: str) -> dict:
        if method not in METHOD_NAMES:
            raise ConfigError(f"unknown method {method!r}")
        return dict(self.method_params[method])

    def tx_beam_sigma(self) -> float | None:
        deg = self.simulate.get("tx_beam_sigma_deg")
        return None if deg is None else math.radians(deg)


def _build_scan(section: dict) -> ScanPlan:
    _check_keys(section, _SCAN_KEYS, "scan")
    try:
        kind = section["kind"]
        depth_start = float(section["depth_start"])
        depth_end = float(section["depth_end"])
        focus_depth = float(section["focus_depth"])
    except KeyError as exc:
        raise ConfigError(f"scan is missing required key {exc.args[0]!r}") from None
    if kind not in ("sector", "linear"):
        raise ConfigError(f"scan kind must be 'sector' or 'linear', got {kind!r}")
    if "positions" in section:
        positions = np.asarray(section["positions"], dtype=float)
    else:
        try:
            count = int(section["num_emissions"])
        except KeyError:
            raise ConfigError("scan needs either positions or num_emissions") from None
        if count < 1:
            raise ConfigError("num_emissions must be positive")
        if kind == "sector":
            if "span_deg" not in section:
                raise ConfigError("sector scan needs span_deg")
            half = math.radians(float(section["span_deg"])) / 2.0
            positions = np.linspace(-half, half, count)
        else:
            if "lateral_span" not in section:
                raise ConfigError("linear scan needs lateral_span")
            half = float(section["lateral_span"]) / 2.0
            positions = np.linspace(-half, half, count)
    try:
        return ScanPlan(
            kind=kind,
            positions=positions,
            depth_start=depth_start,
            depth_end=depth_end,
            focus_depth=focus_depth,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _build_method_params(probe_cfg: dict, doc: dict, preset_cfg: dict) -> dict[str, dict]:
    defaults_override = doc.get("method_defaults", preset_cfg.get("method_defaults", {}))
    _check_keys(defaults_override, set(METHOD_NAMES), "method_defaults")
    user_params = doc.get("method_params", {})
    _check_keys(user_params, set(METHOD_NAMES), "method_params")
    resolved = {}
    for method in METHOD_NAMES:
        params = dict(_METHOD_SCHEMAS[method])
        for layer_name, layer in (
            ("method_defaults", defaults_override.get(method, {})),
            ("method_params", user_params.get(method, {})),
        ):
            _check_keys(layer, set(params), f"{layer_name}.{method}")
            params = _merge(params, layer)
        resolved[method] = params
    return resolved


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Resolve a config document (preset plus overrides) to a full config."""
    _check_keys(doc, _TOP_KEYS, "config")
    preset_name = doc.get("preset")
    if preset_name is not None:
        if preset_name not in _PRESETS:
            raise ConfigError(
                f"unknown preset {preset_name!r}; available: {', '.join(_PRESETS)}"
            )
        preset_cfg = _PRESETS[preset_name]
    else:
        preset_cfg = {}
        for key in ("probe", "scan", "phantom"):
            if key not in doc:
                raise ConfigError(f"config without preset must define {key!r}")

    probe_cfg = _merge(preset_cfg.get("probe", {}), doc.get("probe", {}))
    _check_keys(probe_cfg, _PROBE_KEYS, "probe")
    try:
        geometry = ProbeGeometry(
            num_elements=int(probe_cfg["num_elements"]),
            pitch=float(probe_cfg["pitch"]),
            center_frequency=float(probe_cfg["center_frequency"]),
            sampling_frequency=float(probe_cfg["sampling_frequency"]),
            sound_speed=float(probe_cfg.get("sound_speed", 1540.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"probe is missing required key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    scan_cfg = _merge(preset_cfg.get("scan", {}), doc.get("scan", {}))
    scan = _build_scan(scan_cfg)

    phantom_cfg = _merge(preset_cfg.get("phantom", {}), doc.get("phantom", {}))
    _check_keys(phantom_cfg, _PHANTOM_KEYS, "phantom")
    if "type" not in phantom_cfg:
        raise ConfigError("phantom needs a type")

    simulate_cfg = _merge(preset_cfg.get("simulate", {}), doc.get("simulate", {}))
    _check_keys(simulate_cfg, _SIMULATE_KEYS, "simulate")

    regions_cfg = _merge(preset_cfg.get("regions", {}), doc.get("regions", {}))
    regions = {}
    for name, entry in regions_cfg.items():
        _check_keys(entry, _REGION_KEYS, f"regions.{name}")
        from .io import region_from_dict

        try:
            regions[name] = region_from_dict(entry)
        except Exception as exc:
            raise ConfigError(f"bad region {name!r}: {exc}") from None

    method = doc.get("method")
    if method is not None and method not in METHOD_NAMES:
        raise ConfigError(
            f"unknown method {method!r}; available: {', '.join(METHOD_NAMES)}"
        )

    seed = doc.get("seed", 1)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    dynamic_range = float(doc.get("dynamic_range", 60.0))
    if dynamic_range <= 0:
        raise ConfigError("dynamic_range must be positive")

    return ExperimentConfig(
        geometry=geometry,
        scan=scan,
        phantom_spec=phantom_cfg,
        simulate=simulate_cfg,
        method=method,
        method_params=_build_method_params(probe_cfg, doc, preset_cfg),
        regions=regions,
        seed=seed,
        dynamic_range=dynamic_range,
        preset=preset_name,
    )


def load_config(path) -> ExperimentConfig:
    """Load a JSON config file; bare preset names are also accepted."""
    text = str(path)
    if text in _PRESETS:
        return config_from_dict({"preset": text})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must contain a JSON object")
    return config_from_dict(doc)
