"""Physical model of the building microgrid.

Power flows, SoC dynamics, action feasibility, the priority-based energy
allocation of storage discharge, tariff coupling and per-step cashflow.

Sign conventions used throughout the package:

* power requests for a storage device are *signed*: positive discharges,
  negative charges;
* net load is ``load - pv`` and is negative when PV exceeds the load;
* all allocation fields are nonnegative magnitudes in kW.

Discharge efficiency is applied multiplicatively, i.e. discharging ``P`` kW
for one hour lowers the SoC by ``eta_dis * P / E``.  This is deliberate and
differs from the common ``P / (eta_dis * E)`` convention.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

BALANCE_TOL = 1e-9


class MutualExclusionError(ValueError):
    """Raised when a device is asked to charge and discharge in the same step."""


@dataclass(frozen=True)
class TariffSchedule:
    """24 hourly buy prices and the sell-back price coefficient."""

    buy_price: tuple[float, ...]
    price_coefficient: float = 0.9

    def __post_init__(self):
        prices = tuple(float(p) for p in self.buy_price)
        object.__setattr__(self, "buy_price", prices)
        if len(prices) != 24:
            raise ValueError(f"tariff needs 24 hourly prices, got {len(prices)}")
        if min(prices) <= 0:
            raise ValueError("buy prices must be strictly positive")
        if not 0.0 < self.price_coefficient < 1.0:
            raise ValueError("price_coefficient must lie in (0, 1)")

    def buy(self, hour: int) -> float:
        return self.buy_price[hour % 24]

    def sell(self, hour: int) -> float:
        return self.price_coefficient * self.buy_price[hour % 24]

    @property
    def buy_array(self) -> np.ndarray:
        return np.asarray(self.buy_price)

    @property
    def sell_array(self) -> np.ndarray:
        return self.price_coefficient * np.asarray(self.buy_price)

    def daily_average(self) -> float:
        return float(np.mean(self.buy_price))


@dataclass(frozen=True)
class EnergyProfile:
    """Hourly building load and PV output in kW."""

    load: np.ndarray
    pv: np.ndarray
    pv_bounds: tuple[float, float] = (0.0, np.inf)

    def __post_init__(self):
        load = np.asarray(self.load, dtype=float)
        pv = np.asarray(self.pv, dtype=float)
        object.__setattr__(self, "load", load)
        object.__setattr__(self, "pv", pv)
        if load.shape != pv.shape or load.ndim != 1:
            raise ValueError("load and pv must be 1-D series of equal length")
        if len(load) % 24:
            raise ValueError("profile length must be a multiple of 24 hours")
        if (load < 0).any() or (pv < 0).any():
            raise ValueError("load and pv must be nonnegative")
        lo, hi = self.pv_bounds
        if (pv < lo).any() or (pv > hi).any():
            raise ValueError(f"pv outside bounds [{lo}, {hi}]")

    @property
    def horizon(self) -> int:
        return len(self.load)

    @property
    def net_load(self) -> np.ndarray:
        return compute_net_load(self.load, self.pv)


@dataclass(frozen=True)
class BatterySpec:
    capacity: float
    charge_power_bounds: tuple[float, float] = (0.0, 100.0)
    discharge_power_bounds: tuple[float, float] = (0.0, 100.0)
    charge_eff: float = 0.95
    discharge_eff: float = 0.95
    soc_bounds: tuple[float, float] = (0.1, 0.9)
    cost_per_kwh: float = 910.0
    chemistry: str = "LFP"

    def __post_init__(self):
        object.__setattr__(self, "charge_power_bounds", tuple(map(float, self.charge_power_bounds)))
        object.__setattr__(self, "discharge_power_bounds", tuple(map(float, self.discharge_power_bounds)))
        object.__setattr__(self, "soc_bounds", tuple(map(float, self.soc_bounds)))
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        lo, hi = self.soc_bounds
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"invalid soc_bounds {self.soc_bounds}")
        for name in ("charge_power_bounds", "discharge_power_bounds"):
            pmin, pmax = getattr(self, name)
            if pmin < 0 or pmin > pmax:
                raise ValueError(f"invalid {name} {(pmin, pmax)}")
        for name in ("charge_eff", "discharge_eff"):
            eta = getattr(self, name)
            if not 0.0 < eta <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.chemistry not in ("LFP", "NMC"):
            raise ValueError(f"unknown chemistry {self.chemistry!r}")

    @property
    def max_charge(self) -> float:
        return self.charge_power_bounds[1]

    @property
    def max_discharge(self) -> float:
        return self.discharge_power_bounds[1]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EvSessionWindow:
    """Daily parking window of the aggregated EV fleet.

    ``arrival_hour`` and ``departure_hour`` are hours of the day; the fleet is
    online for ``arrival_hour <= h < departure_hour``.
    """

    arrival_hour: int = 8
    departure_hour: int = 18
    fleet_size: int = 10
    arrival_soc_mean: float = 0.35
    arrival_soc_std: float = 0.1
    vehicle_capacity: float = 100.0

    def __post_init__(self):
        if not 0 <= self.arrival_hour < self.departure_hour <= 24:
            raise ValueError("need 0 <= arrival_hour < departure_hour <= 24")
        if self.fleet_size < 1:
            raise ValueError("fleet_size must be >= 1")

    @property
    def hours_online(self) -> int:
        return self.departure_hour - self.arrival_hour

    def online(self, hour: int) -> bool:
        return self.arrival_hour <= hour % 24 < self.departure_hour

    def draw_arrival_soc(self, rng: np.random.Generator, soc_bounds: tuple[float, float]) -> float:
        """Fleet SoC at arrival: mean of per-vehicle draws, clipped into bounds."""
        per_vehicle = rng.normal(self.arrival_soc_mean, self.arrival_soc_std, self.fleet_size)
        per_vehicle = np.clip(per_vehicle, *soc_bounds)
        return float(np.clip(per_vehicle.mean(), *soc_bounds))


@dataclass
class AllocationResult:
    ess_to_build: float = 0.0
    ess_to_grid: float = 0.0
    ev_to_build: float = 0.0
    ev_to_grid: float = 0.0
    grid_to_ess: float = 0.0
    grid_to_ev: float = 0.0
    pv_surplus_sold: float = 0.0
    grid_purchase: float = 0.0
    branch: str = field(default="idle", compare=False)

    @property
    def grid_exchange(self) -> float:
        """Signed grid power; positive means import."""
        return (self.grid_purchase + self.grid_to_ess + self.grid_to_ev
                - self.pv_surplus_sold - self.ess_to_grid - self.ev_to_grid)

    def as_dict(self) -> dict:
        return asdict(self)


def compute_net_load(load, pv):
    """Building load minus PV output. Negative values mean PV surplus."""
    return np.subtract(load, pv)


def step_soc(soc: float, charge_power: float, discharge_power: float,
             spec: BatterySpec, dt: float = 1.0) -> float:
    """Advance the SoC by one step.

    Both efficiencies multiply the power term, so a standby step keeps the
    SoC unchanged (no self-discharge).
    """
    if charge_power < 0 or discharge_power < 0:
        raise ValueError("charge/discharge powers are magnitudes and must be >= 0")
    if charge_power > 0 and discharge_power > 0:
        raise MutualExclusionError(
            f"simultaneous charge ({charge_power} kW) and discharge ({discharge_power} kW)")
    return (soc + spec.charge_eff * charge_power * dt / spec.capacity
            - spec.discharge_eff * discharge_power * dt / spec.capacity)


def feasible_power_range(soc: float, spec: BatterySpec, dt: float = 1.0) -> tuple[float, float]:
    """Largest charge and discharge magnitudes keeping the SoC within bounds."""
    soc_min, soc_max = spec.soc_bounds
    max_ch = max(0.0, (soc_max - soc) * spec.capacity / (spec.charge_eff * dt))
    max_dis = max(0.0, (soc - soc_min) * spec.capacity / (spec.discharge_eff * dt))
    return min(max_ch, spec.max_charge), min(max_dis, spec.max_discharge)


def clip_action_to_feasible(soc: float, requested_power: float, spec: BatterySpec,
                            dt: float = 1.0) -> tuple[float, float]:
    """Clamp a signed power request so the next SoC stays within bounds.

    Returns
    -------
    executed : float
        Signed executed power (same sign as the request, smaller or equal
        magnitude).
    violation : float
        Magnitude of the request that had to be dropped.
    """
    max_ch, max_dis = feasible_power_range(soc, spec, dt)
    if requested_power > 0:
        executed = min(requested_power, max_dis)
    elif requested_power < 0:
        executed = -min(-requested_power, max_ch)
    else:
        executed = 0.0
    return executed, abs(requested_power) - abs(executed)


def split_power(power: float) -> tuple[float, float]:
    """Signed power -> (charge magnitude, discharge magnitude)."""
    return (-power, 0.0) if power < 0 else (0.0, power)


def allocate(net_load: float, ess_discharge: float, ev_discharge: float,
             ess_charge: float = 0.0, ev_charge: float = 0.0) -> AllocationResult:
    """Route storage discharge to the building first, the surplus to the grid.

    Three discharge branches:

    * ``net > 0`` and total discharge ``<= net``: everything feeds the building;
    * ``net > 0`` and total discharge ``> net``: the surplus over the net load
      is sold, split between devices in proportion to their discharge;
    * ``net <= 0``: PV already covers the load, all discharge goes to the grid
      and the PV surplus is sold as well.

    Charging energy is always bought from the grid.
    """
    for v in (ess_discharge, ev_discharge, ess_charge, ev_charge):
        if v < 0:
            raise ValueError("allocation inputs must be nonnegative magnitudes")
    cbs_dis = ess_discharge + ev_discharge
    out = AllocationResult(grid_to_ess=ess_charge, grid_to_ev=ev_charge)
    if net_load > 0 and cbs_dis <= net_load:
        out.ess_to_build, out.ev_to_build = ess_discharge, ev_discharge
        out.branch = "to_building"
    elif net_load > 0:
        surplus = cbs_dis - net_load
        out.ess_to_grid = ess_discharge / cbs_dis * surplus
        out.ev_to_grid = ev_discharge / cbs_dis * surplus
        out.ess_to_build = ess_discharge - out.ess_to_grid
        out.ev_to_build = ev_discharge - out.ev_to_grid
        out.branch = "split"
    else:
        out.ess_to_grid, out.ev_to_grid = ess_discharge, ev_discharge
        out.branch = "to_grid"
    out.pv_surplus_sold = max(-net_load, 0.0)
    out.grid_purchase = max(net_load - out.ess_to_build - out.ev_to_build, 0.0)
    return out


def step_cashflow(alloc: AllocationResult, buy_price: float, sell_price: float,
                  cbs_charge_total: float, dt: float = 1.0) -> tuple[float, float]:
    """Revenue from selling to the grid and cost of buying from it."""
    revenue = sell_price * (alloc.pv_surplus_sold + alloc.ess_to_grid + alloc.ev_to_grid) * dt
    energy_cost = buy_price * (alloc.grid_purchase + cbs_charge_total) * dt
    return revenue, energy_cost


def check_power_balance(step, tol: float = BALANCE_TOL) -> bool:
    """Grid exchange plus storage discharge must equal net load plus charging.

    ``step`` is any mapping (or object with attributes) carrying ``net_load``
    and the allocation fields.
    """
    get = step.get if hasattr(step, "get") else (lambda k: getattr(step, k))
    dis = get("ess_to_build") + get("ess_to_grid") + get("ev_to_build") + get("ev_to_grid")
    ch = get("grid_to_ess") + get("grid_to_ev")
    grid = (get("grid_purchase") + ch - get("pv_surplus_sold")
            - get("ess_to_grid") - get("ev_to_grid"))
    return abs(grid + dis - (get("net_load") + ch)) <= tol


def rotate_prices(tariff: TariffSchedule, hour: int, n: int = 24) -> np.ndarray:
    """The next ``n`` buy prices starting at ``hour`` (wrapping daily)."""
    return np.asarray([tariff.buy(hour + k) for k in range(n)])


def as_profile(load: Sequence[float], pv: Sequence[float]) -> EnergyProfile:
    return EnergyProfile(np.asarray(load, float), np.asarray(pv, float))
