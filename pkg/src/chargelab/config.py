"""Run configuration files.

A configuration is a YAML mapping with four blocks (``battery``, ``mpc``,
``ekf``, ``scenarios``) plus ``output_dir`` and ``workers``.  Units are part
of the key names wherever a quantity has one; temperatures may be written
in Celsius (``*_degC``) or Kelvin (``*_K``) and are stored in Kelvin.

Example::

    output_dir: results
    mpc: {N: 40, delta_p_s: 5}
    scenarios:
      - label: mild-P
        ambient_degC: 25
        initial: {V_b_V: 0.1, V_s_V: 0.1, T_core_degC: 25, T_surf_degC: 25}
        strategy: P
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .harness import AMBIENT_PRESETS, EkfDefaults, Scenario, strategy
from .model import DEFAULT_PARAMS, BatteryParams, celsius


class ConfigError(ValueError):
    """The configuration does not satisfy the schema."""


@dataclass(frozen=True)
class MpcBlock:
    N: Optional[int] = None            # None keeps the strategy's own horizon
    delta_p_s: float = 5.0
    delta_s_s: float = 1.0
    w1: float = 40.0
    w2: float = 0.1
    w3: float = 0.1
    w4: Optional[float] = None         # None keeps the strategy's own weight
    soc_target: float = 0.9
    soc_tolerance: float = 0.005
    max_sim_time_s: float = 4000.0


@dataclass(frozen=True)
class ScenarioSpec:
    label: str
    ambient_K: float
    initial: tuple[float, ...]         # V_b, V_s, T_core [K], T_surf [K] (, I [A])
    strategy: str = "P"
    seed: int = 0
    trials: int = 1
    output_feedback: bool = False
    pact_bounds_W: tuple[float, float] = (-8.0, 8.0)
    record_timing: bool = False


@dataclass(frozen=True)
class RunConfig:
    scenarios: tuple[ScenarioSpec, ...]
    battery: BatteryParams = DEFAULT_PARAMS
    mpc: MpcBlock = MpcBlock()
    ekf: EkfDefaults = EkfDefaults()
    output_dir: str = "results"
    workers: int = 1

    def scenario(self, spec: ScenarioSpec) -> Scenario:
        """Simulation scenario for one entry of the scenario list."""
        overrides = {"w1": self.mpc.w1, "w2": self.mpc.w2, "w3": self.mpc.w3}
        if self.mpc.N is not None:
            overrides["N"] = self.mpc.N
        if self.mpc.w4 is not None:
            if strategy(spec.strategy).T_core_ref is None:
                raise ConfigError(f"scenario {spec.label!r}: mpc.w4 needs a temperature-tracking strategy")
            overrides["w4"] = self.mpc.w4
        return Scenario(label=spec.label, T_amb=spec.ambient_K, x0=spec.initial,
                        strategy=spec.strategy, mpc_overrides=tuple(sorted(overrides.items())),
                        pact_bounds=spec.pact_bounds_W, soc_target=self.mpc.soc_target,
                        soc_tolerance=self.mpc.soc_tolerance,
                        max_sim_time=self.mpc.max_sim_time_s, seed=spec.seed,
                        delta_s=self.mpc.delta_s_s, delta_p=self.mpc.delta_p_s,
                        output_feedback=spec.output_feedback, record_timing=spec.record_timing)


_TOP_KEYS = {"battery", "mpc", "ekf", "scenarios", "output_dir", "workers"}
_SCENARIO_KEYS = {"label", "preset", "ambient_degC", "ambient_K", "initial", "strategy", "seed",
                  "trials", "output_feedback", "pact_bounds_W", "record_timing"}
_INITIAL_KEYS = ("V_b_V", "V_s_V", "T_core", "T_surf", "I_A")
_BATTERY_TEMPS = {"T_ref"}
_EKF_KEYS = {"Q": 5, "R": 3, "P0": 5}


def _reject_unknown(section: str, got: dict, allowed) -> None:
    extra = sorted(set(got) - set(allowed))
    if extra:
        raise ConfigError(f"{section}: unknown key {extra[0]!r}")


def _mapping(section: str, value) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{section}: expected a mapping")
    return value


def _number(section: str, key: str, value, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _flag(section: str, key: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected true or false, got {value!r}")
    return value


def _temperature(section: str, data: dict, stem: str, default: Optional[float] = None) -> float:
    """Read ``<stem>_degC`` or ``<stem>_K`` (exactly one); returns Kelvin."""
    c, k = f"{stem}_degC", f"{stem}_K"
    if c in data and k in data:
        raise ConfigError(f"{section}: give only one of {c!r} and {k!r}")
    if c in data:
        return celsius(_number(section, c, data[c]))
    if k in data:
        return _number(section, k, data[k])
    if default is None:
        raise ConfigError(f"{section}: missing {c!r}")
    return default


def _pair(section: str, key: str, value) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{section}.{key}: expected [lower, upper]")
    lo, hi = (_number(section, key, v) for v in value)
    if lo > hi:
        raise ConfigError(f"{section}.{key}: lower bound {lo} exceeds upper bound {hi}")
    return lo, hi


def _parse_battery(data: dict) -> BatteryParams:
    allowed = {f.name for f in fields(BatteryParams) if f.name not in _BATTERY_TEMPS}
    allowed |= {f"{t}_{u}" for t in _BATTERY_TEMPS for u in ("degC", "K")}
    _reject_unknown("battery", data, allowed)
    kw: dict[str, Any] = {}
    for key, value in data.items():
        if key.rsplit("_", 1)[0] in _BATTERY_TEMPS:
            continue
        if key == "alpha":
            if not isinstance(value, (list, tuple)):
                raise ConfigError("battery.alpha: expected a list of six coefficients")
            kw["alpha"] = tuple(_number("battery", key, v) for v in value)
        else:
            kw[key] = _number("battery", key, value)
    for stem in _BATTERY_TEMPS:
        kw[stem] = _temperature("battery", data, stem, getattr(DEFAULT_PARAMS, stem))
    try:
        return DEFAULT_PARAMS.with_overrides(**kw)
    except ValueError as exc:
        raise ConfigError(f"battery: {exc}") from None


def _parse_mpc(data: dict) -> MpcBlock:
    _reject_unknown("mpc", data, {f.name for f in fields(MpcBlock)})
    kw = {}
    for key, value in data.items():
        if value is None and key in ("N", "w4"):
            kw[key] = None
        else:
            kw[key] = _number("mpc", key, value, integer=(key == "N"))
    block = MpcBlock(**kw)
    if block.N is not None and block.N < 2:
        raise ConfigError("mpc.N: horizon must be at least 2")
    for key in ("delta_p_s", "delta_s_s", "max_sim_time_s", "w1", "w2", "w3"):
        if not getattr(block, key) > 0:
            raise ConfigError(f"mpc.{key}: must be positive")
    if block.w4 is not None and not block.w4 > 0:
        raise ConfigError("mpc.w4: must be positive")
    if not 0 < block.soc_target <= 1:
        raise ConfigError("mpc.soc_target: must lie in (0, 1]")
    if not 0 <= block.soc_tolerance < block.soc_target:
        raise ConfigError("mpc.soc_tolerance: must lie in [0, soc_target)")
    ratio = block.delta_p_s / block.delta_s_s
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("mpc.delta_p_s: must be an integer multiple of delta_s_s")
    return block


def _parse_ekf(data: dict) -> EkfDefaults:
    allowed = set(_EKF_KEYS) | {"vb_spread_V", "tcore_spread_K", "output_at_prior"}
    _reject_unknown("ekf", data, allowed)
    kw: dict[str, Any] = {}
    for key, size in _EKF_KEYS.items():
        if key not in data:
            continue
        diag = data[key]
        if not isinstance(diag, (list, tuple)) or len(diag) != size:
            raise ConfigError(f"ekf.{key}: expected a diagonal of {size} values")
        diag = tuple(_number("ekf", key, v) for v in diag)
        if min(diag) < 0:
            raise ConfigError(f"ekf.{key}: diagonal entries must be non-negative")
        kw[key] = diag
    if "vb_spread_V" in data:
        kw["vb_spread"] = _number("ekf", "vb_spread_V", data["vb_spread_V"])
    if "tcore_spread_K" in data:
        kw["tcore_spread"] = _number("ekf", "tcore_spread_K", data["tcore_spread_K"])
    if "output_at_prior" in data:
        kw["output_at_prior"] = _flag("ekf", "output_at_prior", data["output_at_prior"])
    return EkfDefaults(**kw)


def _parse_initial(section: str, data) -> tuple[float, ...]:
    data = _mapping(section, data)
    allowed = {"V_b_V", "V_s_V", "I_A"} | {f"{s}_{u}" for s in ("T_core", "T_surf") for u in ("degC", "K")}
    _reject_unknown(section, data, allowed)
    for key in ("V_b_V", "V_s_V"):
        if key not in data:
            raise ConfigError(f"{section}: missing {key!r}")
    x0 = [_number(section, "V_b_V", data["V_b_V"]), _number(section, "V_s_V", data["V_s_V"]),
          _temperature(section, data, "T_core"), _temperature(section, data, "T_surf")]
    if "I_A" in data:
        x0.append(_number(section, "I_A", data["I_A"]))
    return tuple(x0)


def _parse_scenario(k: int, data) -> ScenarioSpec:
    section = f"scenarios[{k}]"
    data = _mapping(section, data)
    _reject_unknown(section, data, _SCENARIO_KEYS)
    if "label" not in data or not isinstance(data["label"], str) or not data["label"]:
        raise ConfigError(f"{section}: missing 'label'")
    label = data["label"]
    if any(c in label for c in "/\\") or label.startswith("."):
        raise ConfigError(f"{section}.label: must be usable as a file name")
    name = data.get("strategy", "P")
    try:
        strategy(str(name))
    except ValueError as exc:
        raise ConfigError(f"{section}.strategy: {exc}") from None
    of = _flag(section, "output_feedback", data.get("output_feedback", False))
    if "preset" in data:
        if data["preset"] not in AMBIENT_PRESETS:
            raise ConfigError(f"{section}.preset: choose from {sorted(AMBIENT_PRESETS)}")
        if {"ambient_degC", "ambient_K", "initial"} & set(data):
            raise ConfigError(f"{section}: 'preset' excludes explicit ambient and initial state")
        T_amb, x0 = AMBIENT_PRESETS[data["preset"]]
        x0 = tuple(x0) + ((0.0,) if of else ())
    else:
        T_amb = _temperature(section, data, "ambient")
        if "initial" not in data:
            raise ConfigError(f"{section}: missing 'initial'")
        x0 = _parse_initial(f"{section}.initial", data["initial"])
        if of and len(x0) == 4:
            x0 = x0 + (0.0,)
        if not of and len(x0) == 5:
            raise ConfigError(f"{section}.initial: I_A is only used with output_feedback")
    trials = _number(section, "trials", data.get("trials", 1), integer=True)
    if trials < 1:
        raise ConfigError(f"{section}.trials: must be at least 1")
    if trials > 1 and not of:
        raise ConfigError(f"{section}.trials: repeated trials need output_feedback")
    return ScenarioSpec(
        label=label, ambient_K=T_amb, initial=x0, strategy=str(name),
        seed=_number(section, "seed", data.get("seed", 0), integer=True), trials=trials,
        output_feedback=of,
        pact_bounds_W=_pair(section, "pact_bounds_W", data.get("pact_bounds_W", (-8.0, 8.0))),
        record_timing=_flag(section, "record_timing", data.get("record_timing", False)))


def load_config(data) -> RunConfig:
    """Validate a decoded configuration mapping."""
    data = _mapping("config", data)
    _reject_unknown("config", data, _TOP_KEYS)
    raw = data.get("scenarios") or []
    if not isinstance(raw, list):
        raise ConfigError("scenarios: expected a list")
    if not raw:
        raise ConfigError("scenarios: at least one scenario is required")
    scenarios = tuple(_parse_scenario(k, s) for k, s in enumerate(raw))
    labels = [s.label for s in scenarios]
    dup = sorted({x for x in labels if labels.count(x) > 1})
    if dup:
        raise ConfigError(f"scenarios: duplicate label {dup[0]!r}")
    out_dir = data.get("output_dir", "results")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output_dir: expected a path")
    cfg = RunConfig(
        scenarios=scenarios,
        battery=_parse_battery(_mapping("battery", data.get("battery"))),
        mpc=_parse_mpc(_mapping("mpc", data.get("mpc"))),
        ekf=_parse_ekf(_mapping("ekf", data.get("ekf"))),
        output_dir=out_dir,
        workers=_number("config", "workers", data.get("workers", 1), integer=True))
    if cfg.workers < 1:
        raise ConfigError("workers: must be at least 1")
    for spec in cfg.scenarios:
        try:
            cfg.scenario(spec)
        except ValueError as exc:
            raise ConfigError(f"scenario {spec.label!r}: {exc}") from None
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return load_config(data)


def to_mapping(cfg: RunConfig) -> dict:
    """Plain mapping that :func:`load_config` turns back into ``cfg``.

    Temperatures are written in Kelvin so the round trip is exact.
    """
    battery = {}
    for f in fields(BatteryParams):
        v = getattr(cfg.battery, f.name)
        key = f"{f.name}_K" if f.name in _BATTERY_TEMPS else f.name
        battery[key] = list(v) if isinstance(v, tuple) else v
    scenarios = []
    for s in cfg.scenarios:
        initial = {"V_b_V": s.initial[0], "V_s_V": s.initial[1],
                   "T_core_K": s.initial[2], "T_surf_K": s.initial[3]}
        if len(s.initial) == 5:
            initial["I_A"] = s.initial[4]
        scenarios.append({
            "label": s.label, "ambient_K": s.ambient_K, "initial": initial,
            "strategy": s.strategy, "seed": s.seed, "trials": s.trials,
            "output_feedback": s.output_feedback, "pact_bounds_W": list(s.pact_bounds_W),
            "record_timing": s.record_timing})
    return {
        "output_dir": cfg.output_dir,
        "workers": cfg.workers,
        "battery": battery,
        "mpc": {f.name: getattr(cfg.mpc, f.name) for f in fields(MpcBlock)},
        "ekf": {"Q": list(cfg.ekf.Q), "R": list(cfg.ekf.R), "P0": list(cfg.ekf.P0),
                "vb_spread_V": cfg.ekf.vb_spread, "tcore_spread_K": cfg.ekf.tcore_spread,
                "output_at_prior": cfg.ekf.output_at_prior},
        "scenarios": scenarios,
    }


def render_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_mapping(cfg), sort_keys=False)
