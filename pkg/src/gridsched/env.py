"""Daily scheduling MDP for the combined ESS + EV battery system.

One episode is one day of 24 hourly decisions. The observation is a
51-vector (24 prices from the current hour, current and 23 forecast net
loads, EV presence flag, both SoCs); the action is one of 25 joint
(ESS, EV) power levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (BatterySpec, EvSessionWindow, TariffSchedule, allocate,
                   check_power_balance, clip_action_to_feasible, split_power,
                   step_cashflow, step_soc)
from .degradation import (AgingLedger, DegradationCoefficients, apply_episode_aging,
                          calendar_cost, degradation_coefficient, step_cycle_cost)

LEVELS = (-100.0, -50.0, 0.0, 50.0, 100.0)
N_LEVELS = len(LEVELS)
N_ACTIONS = N_LEVELS * N_LEVELS
STATE_DIM = 51
HORIZON = 24
PRICE_RATIO_BOUNDS = (0.4, 2.2)
NET_RATIO_BOUNDS = (0.2, 2.4)
THETA_SCALE = 0.916
IDLE_ACTION = 2 * N_LEVELS + 2


def decode_action(index: int, levels: Sequence[float] = LEVELS) -> tuple[float, float]:
    """Action index -> (ess_power, ev_power), positive = discharge."""
    n = len(levels)
    if not 0 <= index < n * n:
        raise ValueError(f"action index {index} outside 0..{n * n - 1}")
    return float(levels[index // n]), float(levels[index % n])


def encode_action(ess_power: float, ev_power: float, levels: Sequence[float] = LEVELS) -> int:
    levels = list(levels)
    return levels.index(ess_power) * len(levels) + levels.index(ev_power)


@dataclass
class EnvState:
    prices: np.ndarray
    net: np.ndarray
    ev_online: int
    soc_ess: float
    soc_ev: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.prices, self.net,
                               [self.ev_online, self.soc_ess, self.soc_ev]])

    def __len__(self):
        return STATE_DIM


def build_state(t: int, tariff: TariffSchedule, actual_net_now: float,
                forecast_net_next23: Sequence[float], ev_window: EvSessionWindow,
                soc_ess: float, soc_ev: float) -> EnvState:
    fc = np.asarray(forecast_net_next23, dtype=float)
    if fc.size < 23:
        raise ValueError(f"need 23 forecast values, got {fc.size}")
    online = int(ev_window.online(t))
    prices = np.array([tariff.buy(t + k) for k in range(24)])
    net = np.concatenate([[actual_net_now], fc[:23]])
    return EnvState(prices, net, online, float(soc_ess), float(soc_ev) if online else 0.0)


def compute_price_ratios(buy_price_now: float, daily_avg_price: float, net_now: float,
                         rolling_48h_avg_net: float) -> tuple[float, float]:
    if daily_avg_price <= 0 or rolling_48h_avg_net <= 0:
        raise ValueError("averages must be positive")
    phi_pri = min(max(buy_price_now / daily_avg_price, PRICE_RATIO_BOUNDS[0]), PRICE_RATIO_BOUNDS[1])
    phi_net = min(max(net_now / rolling_48h_avg_net, NET_RATIO_BOUNDS[0]), NET_RATIO_BOUNDS[1])
    return phi_pri, phi_net


def scaling_coefficients(phi_pri: float, phi_net: float) -> tuple[float, float]:
    """Discharge and charge reward multipliers.

    Discharging is rewarded when prices are high and penalised (negative
    weight) when they are low; charging mirrors this. Both jump at
    ``phi_pri == 1``.
    """
    mean_ratio = 0.5 * (phi_pri + phi_net)
    if phi_pri > 1:
        w_dis, w_ch = math.exp(mean_ratio - 1.0), phi_pri
    elif phi_pri < 1:
        w_dis, w_ch = phi_pri - 2.0, -math.exp(1.0 - mean_ratio)
    else:
        w_dis, w_ch = 1.0, 1.0
    return w_dis, w_ch


def degradation_weights(phi_pri: float, theta_scale: float = THETA_SCALE,
                        theta_ess: float = 1.0, theta_base: float = 1.0) -> tuple[float, float]:
    """EV aging is weighted up at cheap hours to discourage low-value EV cycling."""
    theta_ev = theta_ess * (1.0 + 0.5 * math.exp(-theta_scale * phi_pri)) if phi_pri <= 1 else 1.0
    return theta_ess / theta_base, theta_ev / theta_base


@dataclass
class RewardBreakdown:
    discharge_term: float
    charge_term: float
    ess_deg_term: float
    ev_deg_term: float
    soc_penalty_term: float
    total: float


def compute_reward(discharge_power: float, charge_power: float, c_ess: float, c_ev: float,
                   violation_power: float, w_dis: float, w_ch: float, w_ess: float = 1.0,
                   w_ev: float = 1.0, w_pen: float = 1.0) -> RewardBreakdown:
    dis = w_dis * discharge_power
    ch = w_ch * charge_power
    ess = w_ess * c_ess
    ev = w_ev * c_ev
    pen = w_pen * violation_power
    return RewardBreakdown(dis, ch, ess, ev, pen, dis - ch - ess - ev - pen)


def departure_guard(soc_ev: float, arrival_soc: float, hours_to_departure: int,
                    spec: BatterySpec, levels: Sequence[float] = LEVELS,
                    dt: float = 1.0) -> np.ndarray:
    """Allowed EV levels that still let max-power charging restore the arrival SoC.

    ``hours_to_departure`` counts the current step. If no level can make it,
    only the strongest charge level stays allowed.
    """
    target = min(arrival_soc, spec.soc_bounds[1])
    remaining = hours_to_departure - 1
    recover = remaining * spec.charge_eff * spec.max_charge * dt / spec.capacity
    allowed = np.zeros(len(levels), bool)
    for k, p in enumerate(levels):
        executed, _ = clip_action_to_feasible(soc_ev, p, spec, dt)
        ch, dis = split_power(executed)
        post = step_soc(soc_ev, ch, dis, spec, dt)
        allowed[k] = post + recover >= target - 1e-12
    if not allowed.any():
        allowed[int(np.argmin(levels))] = True
    return allowed


def rolling_average(series: np.ndarray, window: int = 48) -> np.ndarray:
    """Mean of the ``window`` values before each index, seeded with the first day's mean."""
    s = np.asarray(series, dtype=float)
    seed = np.full(window, s[:24].mean())
    padded = np.concatenate([seed, s])
    c = np.concatenate([[0.0], np.cumsum(padded)])
    idx = np.arange(s.size) + window
    return (c[idx] - c[idx - window]) / window


@dataclass
class EnvConfig:
    forecast_mode: str = "deployment"  # or "oracle"
    degradation_aware: bool = True
    mask_offline_ev: bool = True
    w_pen: float = 1.0
    theta_scale: float = THETA_SCALE
    net_avg_floor: float = 1.0
    freeze_coefficients: bool = False
    initial_soc_ess: float = 0.5
    initial_alpha_ess: float = 0.35
    initial_alpha_ev: float = 0.45

    def __post_init__(self):
        if self.forecast_mode not in ("deployment", "oracle"):
            raise ValueError(f"unknown forecast_mode {self.forecast_mode!r}")


TRACE_FIELDS = (
    "hour_index", "day", "hour", "buy_price", "sell_price", "load", "pv", "net_load",
    "action", "req_ess", "req_ev", "exec_ess", "exec_ev", "viol_ess", "viol_ev",
    "ess_to_build", "ess_to_grid", "ev_to_build", "ev_to_grid", "grid_to_ess", "grid_to_ev",
    "pv_surplus_sold", "grid_purchase", "revenue", "energy_cost",
    "c_ess_cycle", "c_ev_cycle", "ess_cal_cost", "ev_cal_cost",
    "r_discharge", "r_charge", "r_ess_deg", "r_ev_deg", "r_penalty", "reward",
    "soc_ess", "soc_ev", "ev_online", "ev_departure_ok",
)


class BuildingEnv:
    """Hourly environment over a :class:`~gridsched.scenario.Scenario`.

    Owns the aging ledgers and degradation coefficients, which persist across
    episodes until :meth:`reset_aging` is called.
    """

    def __init__(self, scenario, config: EnvConfig | None = None,
                 net_forecast: np.ndarray | None = None):
        self.scenario = scenario
        self.config = config or EnvConfig()
        self.tariff: TariffSchedule = scenario.tariff
        self.ess: BatterySpec = scenario.ess
        self.ev: BatterySpec = scenario.ev
        self.window: EvSessionWindow = scenario.ev_window
        prof = scenario.profile
        self.load, self.pv = prof.load, prof.pv
        self.net = prof.net_load
        self.T = self.net.size
        self.net_avg = np.maximum(rolling_average(self.net), self.config.net_avg_floor)
        self.daily_avg_price = self.tariff.daily_average()
        if self.config.forecast_mode == "oracle" or net_forecast is None:
            if self.config.forecast_mode == "deployment":
                raise ValueError("deployment mode needs a net-load forecast matrix")
            ext = np.concatenate([self.net, self.net[-24:]])
            net_forecast = np.lib.stride_tricks.sliding_window_view(ext[1:], 23)[: self.T]
        net_forecast = np.asarray(net_forecast, dtype=float)
        if net_forecast.shape != (self.T, 23):
            raise ValueError(f"forecast matrix must be ({self.T}, 23)")
        self.net_forecast = net_forecast
        self.ess_params = scenario.chemistry("ess")
        self.ev_params = scenario.chemistry("ev")
        self.reset_aging()
        self.day = 0
        self.k = 0
        self.soc_ess = self.config.initial_soc_ess
        self.soc_ev = 0.0
        self.done = True

    # ----------------------------------------------------------- lifecycle
    def reset_aging(self):
        self.ess_ledger = AgingLedger(self.ess_params)
        self.ev_ledger = AgingLedger(self.ev_params)
        self.coeffs = DegradationCoefficients(self.config.initial_alpha_ess,
                                              self.config.initial_alpha_ev)

    def reset(self, day: int, soc_ess: float | None = None) -> np.ndarray:
        if not 0 <= day < self.T // 24:
            raise ValueError(f"day {day} outside scenario")
        self.day = day
        self.k = 0
        if soc_ess is not None:
            self.soc_ess = float(soc_ess)
        self.arrival_soc = float(self.scenario.ev_arrival_soc[day])
        self.soc_ev = self.arrival_soc if self.window.online(0) else 0.0
        self.ess_profile = [self.soc_ess]
        self.ev_profile = [self.soc_ev] if self.window.online(0) else []
        self.ess_throughput = 0.0
        self.ev_throughput = 0.0
        self.departure_ok = None
        self.done = False
        return self.observe()

    def _online(self, k: int) -> bool:
        return k < HORIZON and self.window.online(k)

    @property
    def t(self) -> int:
        return self.day * 24 + self.k

    def observe(self) -> np.ndarray:
        t = min(self.t, self.T - 1)
        return build_state(self.k, self.tariff, self.net[t], self.net_forecast[t],
                           self.window, self.soc_ess, self.soc_ev).as_array()

    def hours_to_departure(self) -> int:
        return self.window.departure_hour - self.k

    def ev_level_mask(self) -> np.ndarray:
        if not self.window.online(self.k):
            m = np.zeros(N_LEVELS, bool)
            m[LEVELS.index(0.0)] = True
            return m if self.config.mask_offline_ev else np.ones(N_LEVELS, bool)
        return departure_guard(self.soc_ev, self.arrival_soc, self.hours_to_departure(), self.ev)

    def action_mask(self) -> np.ndarray:
        """Joint mask over the 25 actions (ESS levels are never masked)."""
        return np.tile(self.ev_level_mask(), N_LEVELS)

    # ----------------------------------------------------------------- step
    def step(self, action: int):
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        cfg = self.config
        t, h = self.t, self.k
        req_ess, req_ev = decode_action(action)
        online = self._online(h)
        if online:
            allowed = departure_guard(self.soc_ev, self.arrival_soc, self.hours_to_departure(), self.ev)
            lvl = LEVELS.index(req_ev)
            if not allowed[lvl]:
                # most discharging level still allowed (allowed set is a prefix)
                lvl = int(np.flatnonzero(allowed).max())
            guarded_ev = LEVELS[lvl]
        else:
            guarded_ev = 0.0

        exec_ess, viol_ess = clip_action_to_feasible(self.soc_ess, req_ess, self.ess)
        if online:
            exec_ev, viol_ev = clip_action_to_feasible(self.soc_ev, guarded_ev, self.ev)
        else:
            exec_ev, viol_ev = 0.0, 0.0
        ch_ess, dis_ess = split_power(exec_ess)
        ch_ev, dis_ev = split_power(exec_ev)

        net = float(self.net[t])
        alloc = allocate(net, dis_ess, dis_ev, ch_ess, ch_ev)
        buy, sell = self.tariff.buy(h), self.tariff.sell(h)
        revenue, energy_cost = step_cashflow(alloc, buy, sell, ch_ess + ch_ev)
        c_ess, c_ev = step_cycle_cost(self.coeffs, exec_ess, exec_ev)

        phi_pri, phi_net = compute_price_ratios(buy, self.daily_avg_price, net, self.net_avg[t])
        w_dis, w_ch = scaling_coefficients(phi_pri, phi_net)
        w_ess, w_ev = degradation_weights(phi_pri, cfg.theta_scale)
        if not cfg.degradation_aware:
            w_ess = w_ev = 0.0
        rb = compute_reward(dis_ess + dis_ev, ch_ess + ch_ev, c_ess, c_ev,
                            viol_ess + viol_ev, w_dis, w_ch, w_ess, w_ev, cfg.w_pen)

        self.soc_ess = step_soc(self.soc_ess, ch_ess, dis_ess, self.ess)
        self.ess_profile.append(self.soc_ess)
        self.ess_throughput += abs(exec_ess)
        if online:
            self.soc_ev = step_soc(self.soc_ev, ch_ev, dis_ev, self.ev)
            self.ev_profile.append(self.soc_ev)
            self.ev_throughput += abs(exec_ev)

        soc_ev_after = self.soc_ev if online else 0.0
        self.k += 1
        departed = online and not self._online(self.k)
        # vehicle arrivals/departures take effect at the start of the next hour
        if departed:
            self.departure_ok = self.soc_ev >= self.arrival_soc - 1e-9
            self.soc_ev = 0.0
        elif not online and self._online(self.k):
            self.soc_ev = self.arrival_soc
            self.ev_profile = [self.soc_ev]
        self.done = self.k >= HORIZON

        row = {
            "hour_index": t, "day": self.day, "hour": h, "buy_price": buy, "sell_price": sell,
            "load": float(self.load[t]), "pv": float(self.pv[t]), "net_load": net,
            "action": int(action), "req_ess": req_ess, "req_ev": req_ev,
            "exec_ess": exec_ess, "exec_ev": exec_ev, "viol_ess": viol_ess, "viol_ev": viol_ev,
            **{k: v for k, v in alloc.as_dict().items() if k != "branch"},
            "revenue": revenue, "energy_cost": energy_cost,
            "c_ess_cycle": c_ess, "c_ev_cycle": c_ev, "ess_cal_cost": 0.0, "ev_cal_cost": 0.0,
            "r_discharge": rb.discharge_term, "r_charge": rb.charge_term,
            "r_ess_deg": rb.ess_deg_term, "r_ev_deg": rb.ev_deg_term,
            "r_penalty": rb.soc_penalty_term, "reward": rb.total,
            "soc_ess": self.soc_ess, "soc_ev": soc_ev_after,
            "ev_online": int(online), "ev_departure_ok": int(self.departure_ok) if departed else "",
        }
        if self.done:
            row.update(self._finish_episode())
        next_state = self.observe() if not self.done else self._terminal_observation()
        return next_state, rb, row, self.done

    def _terminal_observation(self) -> np.ndarray:
        t = min(self.t, self.T - 1)
        return build_state(0, self.tariff, self.net[t], self.net_forecast[t], self.window,
                           self.soc_ess, 0.0).as_array()

    def _finish_episode(self) -> dict:
        temp = self.scenario.temperature
        dq_cyc_ess, dq_cal_ess = apply_episode_aging(self.ess_ledger, self.ess_profile, temp,
                                                     episode_days=1.0)
        online_hours = max(len(self.ev_profile) - 1, 0)
        if online_hours:
            dq_cyc_ev, dq_cal_ev = apply_episode_aging(self.ev_ledger, self.ev_profile, temp,
                                                       episode_days=online_hours / 24.0)
        else:
            dq_cyc_ev = dq_cal_ev = 0.0
        if not self.config.freeze_coefficients:
            self.coeffs = DegradationCoefficients(
                degradation_coefficient(self.coeffs.alpha_ess, dq_cyc_ess, self.ess.capacity,
                                        self.ess.cost_per_kwh, self.ess_throughput),
                degradation_coefficient(self.coeffs.alpha_ev, dq_cyc_ev, self.ev.capacity,
                                        self.ev.cost_per_kwh, self.ev_throughput))
        self.last_episode_aging = {
            "dq_cycle_ess": dq_cyc_ess, "dq_cal_ess": dq_cal_ess,
            "dq_cycle_ev": dq_cyc_ev, "dq_cal_ev": dq_cal_ev,
            "soh_ess": self.ess_ledger.soh, "soh_ev": self.ev_ledger.soh,
            "alpha_ess": self.coeffs.alpha_ess, "alpha_ev": self.coeffs.alpha_ev,
            "replacements_ess": self.ess_ledger.replacements,
            "replacements_ev": self.ev_ledger.replacements,
        }
        return {"ess_cal_cost": calendar_cost(dq_cal_ess, self.ess.cost_per_kwh, self.ess.capacity),
                "ev_cal_cost": calendar_cost(dq_cal_ev, self.ev.cost_per_kwh, self.ev.capacity)}


@dataclass
class StateScaler:
    """Maps raw observations to network inputs.

    Prices are divided by the largest of the 24 published prices, net loads by
    a fixed scale (largest absolute net load seen in training data); the flag
    and SoCs pass through.
    """

    net_scale: float

    def __call__(self, state: np.ndarray) -> np.ndarray:
        s = np.asarray(state, dtype=float)
        out = s.copy()
        out[..., :24] = s[..., :24] / s[..., :24].max(axis=-1, keepdims=True)
        out[..., 24:48] = s[..., 24:48] / self.net_scale
        return out


def row_balances(row: dict) -> bool:
    return check_power_balance(row)
