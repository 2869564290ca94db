"""Battery and EV fleet scheduling for a PV building under time-of-use tariffs."""

from .agent import Agent, AgentConfig
from .config import ConfigError, RunConfig, load_config
from .core import BatterySpec, EnergyProfile, EvSessionWindow, TariffSchedule, allocate
from .degradation import LFP, NMC, AgingLedger, rainflow_count
from .env import BuildingEnv, EnvConfig
from .forecast import EdRvflForecaster
from .oracle import DPOracle, dp_oracle
from .scenario import Scenario, ScenarioConfig, generate_scenario

__version__ = "0.1.0"

__all__ = [
    "Agent", "AgentConfig", "AgingLedger", "BatterySpec", "BuildingEnv", "ConfigError",
    "DPOracle", "EdRvflForecaster", "EnergyProfile", "EnvConfig", "EvSessionWindow", "LFP",
    "NMC", "RunConfig", "Scenario", "ScenarioConfig", "TariffSchedule", "allocate",
    "dp_oracle", "generate_scenario", "load_config", "rainflow_count",
]
