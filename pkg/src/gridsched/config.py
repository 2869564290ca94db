"""TOML run configuration with strict key checking.

Sections: ``[scenario]``, ``[tariff]``, ``[ess]``, ``[ev]``, ``[agent]`` and
``[forecast]``. Any key not listed below is rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .agent import AgentConfig
from .core import BatterySpec, EvSessionWindow
from .degradation import ChemistryParams
from .env import EnvConfig
from .harness import ForecastConfig
from .scenario import ScenarioConfig


class ConfigError(ValueError):
    """Schema violation in a configuration document."""


class ConfigNotFound(ConfigError):
    pass


SECTIONS = ("scenario", "tariff", "ess", "ev", "agent", "forecast")
_BATTERY_KEYS = {f.name for f in fields(BatterySpec)}
_WINDOW_KEYS = {f.name for f in fields(EvSessionWindow)}
_CHEM_KEYS = {f.name for f in fields(ChemistryParams)} - {"name"}
_SCENARIO_KEYS = {"season", "n_days", "n_eval_days", "seed", "load_base", "load_peak", "load_noise",
                  "weekend_factor", "midnight_spike_prob", "midnight_spike_kw", "pv_peak",
                  "cloud_range", "load_csv", "pv_csv", "temperature"}
_TARIFF_KEYS = {"valley", "flat", "peak", "buy_price", "price_coefficient"}
_ENV_AGENT_KEYS = {"degradation_aware", "mask_offline_ev", "w_pen", "theta_scale"}
_AGENT_KEYS = {f.name for f in fields(AgentConfig)} | _ENV_AGENT_KEYS
_FORECAST_KEYS = {f.name for f in fields(ForecastConfig)} | {"mode"}


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)

    def to_dict(self) -> dict:
        return {"scenario": dataclasses.asdict(self.scenario), "agent": dataclasses.asdict(self.agent),
                "env": dataclasses.asdict(self.env), "forecast": dataclasses.asdict(self.forecast)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        """Inverse of :meth:`to_dict` (used to replay a config snapshot)."""
        sc = dict(d["scenario"])
        sc["ess"] = BatterySpec(**sc["ess"])
        sc["ev"] = BatterySpec(**sc["ev"])
        sc["ev_window"] = EvSessionWindow(**sc["ev_window"])
        for k in ("tariff", "buy_price", "midnight_spike_kw", "cloud_range"):
            if sc.get(k) is not None:
                sc[k] = tuple(sc[k])
        return cls(ScenarioConfig(**sc), AgentConfig(**d["agent"]), EnvConfig(**d["env"]),
                   ForecastConfig(**d["forecast"]))

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, agent=replace(self.agent, seed=seed),
                       forecast=replace(self.forecast, seed=seed))


def _check(section: str, data: dict, allowed: set[str]):
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")


def _battery(section: str, data: dict, default: BatterySpec, extra: set[str]):
    _check(section, data, _BATTERY_KEYS | extra | {"initial_soc", "initial_alpha", "chemistry_params"})
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items() if k in _BATTERY_KEYS}
    return replace(default, **kw)


def parse_config(doc: dict, base_dir: Path | None = None) -> RunConfig:
    _check("top level", doc, set(SECTIONS))
    for name in SECTIONS:
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError(f"[{name}] must be a table")
    sc_d = dict(doc.get("scenario", {}))
    tar_d = dict(doc.get("tariff", {}))
    ess_d = dict(doc.get("ess", {}))
    ev_d = dict(doc.get("ev", {}))
    ag_d = dict(doc.get("agent", {}))
    fc_d = dict(doc.get("forecast", {}))
    _check("scenario", sc_d, _SCENARIO_KEYS)
    _check("tariff", tar_d, _TARIFF_KEYS)
    _check("agent", ag_d, _AGENT_KEYS)
    _check("forecast", fc_d, _FORECAST_KEYS)
    try:
        defaults = ScenarioConfig()
        ess = _battery("ess", ess_d, defaults.ess, set())
        ev_default = defaults.ev
        window = replace(defaults.ev_window, **{k: v for k, v in ev_d.items() if k in _WINDOW_KEYS})
        if "capacity" not in ev_d:
            ev_default = replace(ev_default, capacity=window.fleet_size * window.vehicle_capacity)
        ev = _battery("ev", ev_d, ev_default, _WINDOW_KEYS)

        chem_over = {}
        for spec, d in ((ess, ess_d), (ev, ev_d)):
            over = d.get("chemistry_params", {})
            _check(f"{'ess' if spec is ess else 'ev'}.chemistry_params", over, _CHEM_KEYS)
            if over:
                chem_over[spec.chemistry] = over

        for key in ("load_csv", "pv_csv"):
            if sc_d.get(key) and base_dir is not None and not Path(sc_d[key]).is_absolute():
                sc_d[key] = str((base_dir / sc_d[key]).resolve())
        for key in ("midnight_spike_kw", "cloud_range"):
            if key in sc_d:
                sc_d[key] = tuple(sc_d[key])
        tiers = None
        if any(k in tar_d for k in ("valley", "flat", "peak")):
            missing = [k for k in ("valley", "flat", "peak") if k not in tar_d]
            if missing:
                raise ConfigError(f"[tariff] tier prices need valley, flat and peak (missing {missing})")
            tiers = (tar_d["valley"], tar_d["flat"], tar_d["peak"])
        scenario = ScenarioConfig(
            **sc_d, ess=ess, ev=ev, ev_window=window, chemistry_overrides=chem_over, tariff=tiers,
            buy_price=tuple(tar_d["buy_price"]) if "buy_price" in tar_d else None,
            price_coefficient=tar_d.get("price_coefficient", 0.9))

        env_kw = {k: ag_d.pop(k) for k in list(ag_d) if k in _ENV_AGENT_KEYS}
        if "mode" in fc_d:
            env_kw["forecast_mode"] = fc_d.pop("mode")
        for key, target in (("initial_soc", "initial_soc_ess"), ("initial_alpha", "initial_alpha_ess")):
            if key in ess_d:
                env_kw[target] = ess_d[key]
        if "initial_alpha" in ev_d:
            env_kw["initial_alpha_ev"] = ev_d["initial_alpha"]
        if "hidden" in ag_d:
            ag_d["hidden"] = tuple(ag_d["hidden"])
        return RunConfig(scenario, AgentConfig(**ag_d), EnvConfig(**env_kw), ForecastConfig(**fc_d))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigNotFound(f"config file not found: {p}")
    try:
        doc = tomllib.loads(p.read_text())
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigNotFound(f"cannot read config {p}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: invalid TOML: {exc}") from exc
    return parse_config(doc, p.parent)
