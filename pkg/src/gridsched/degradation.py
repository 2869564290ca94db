"""Battery aging engine.

Rainflow cycle extraction, semi-empirical calendar and cycle fade for LFP
and NMC cells, a per-device SoH ledger and the conversion of fade into
money (degradation coefficients and cost attribution).

Units: SoC and fade are fractions, temperatures are Kelvin, calendar time
is tracked in seconds and converted to days inside the calendar model.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np

SECONDS_PER_DAY = 86400.0
EOL_SOH = 0.80
DEFAULT_TEMP_K = 308.15


@dataclass(frozen=True)
class ChemistryParams:
    name: str
    k_alpha: float
    k_beta: float
    k_gamma: float
    k_delta1: float
    k_delta2: float
    k_delta3: float
    k_z: float = 0.5
    alpha_sei: float = 0.0575
    beta_sei: float = 121.0
    k_sigma: float = 1.04
    sigma_ref: float = 0.5
    k_T: float = 0.0693
    T_ref: float = 298.0
    k_t: float = 4.14e-10
    dod_form: str = "exponential"  # "exponential" (LFP) or "power" (NMC)

    def __post_init__(self):
        if self.k_gamma >= 0:
            raise ValueError("k_gamma must be negative")
        if not 0.0 < self.k_z <= 1.0:
            raise ValueError("k_z must lie in (0, 1]")
        if self.dod_form not in ("exponential", "power"):
            raise ValueError(f"unknown dod_form {self.dod_form!r}")

    def with_overrides(self, **kw) -> "ChemistryParams":
        return replace(self, **kw)


LFP = ChemistryParams("LFP", k_alpha=5.98e6, k_beta=0.69, k_gamma=-6460.0,
                      k_delta1=9.05e-6, k_delta2=1.40, k_delta3=0.0)
NMC = ChemistryParams("NMC", k_alpha=1.14e12, k_beta=4.70, k_gamma=-10800.0,
                      k_delta1=1.47e4, k_delta2=-1.65, k_delta3=361.0, dod_form="power")
CHEMISTRIES = {"LFP": LFP, "NMC": NMC}


@dataclass(frozen=True)
class CycleRecord:
    dod: float
    mean_soc: float
    duration: float  # seconds
    weight: float  # 1.0 full, 0.5 half


# ---------------------------------------------------------------- rainflow

def turning_points(profile: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Reversal points of a series (endpoints included) and their indices."""
    x = np.asarray(profile, dtype=float)
    if x.size == 0:
        raise ValueError("empty profile")
    # drop repeated values, keeping the first index of each plateau
    keep = np.ones(x.size, bool)
    keep[1:] = x[1:] != x[:-1]
    idx = np.flatnonzero(keep)
    v = x[idx]
    if v.size < 3:
        return v, idx
    d = np.diff(v)
    rev = np.flatnonzero(d[1:] * d[:-1] < 0) + 1
    sel = np.concatenate(([0], rev, [v.size - 1]))
    return v[sel], idx[sel]


def rainflow_count(soc_profile: Sequence[float], dt_per_step: float = 3600.0) -> list[CycleRecord]:
    """Three-point (ASTM E1049) rainflow count of a SoC trajectory.

    Returns one record per extracted range. Half cycles carry weight 0.5 and
    the duration between the two turning points that define them.
    """
    values, index = turning_points(soc_profile)
    out: list[CycleRecord] = []

    def record(a: int, b: int, weight: float):
        va, vb = stack_v[a], stack_v[b]
        out.append(CycleRecord(abs(vb - va), 0.5 * (va + vb),
                               abs(stack_i[b] - stack_i[a]) * dt_per_step, weight))

    stack_v: list[float] = []
    stack_i: list[int] = []
    for v, i in zip(values, index):
        stack_v.append(float(v))
        stack_i.append(int(i))
        while len(stack_v) >= 3:
            x = abs(stack_v[-1] - stack_v[-2])
            y = abs(stack_v[-2] - stack_v[-3])
            if x < y:
                break
            if len(stack_v) == 3:
                record(0, 1, 0.5)
                del stack_v[0], stack_i[0]
            else:
                record(-3, -2, 1.0)
                del stack_v[-3:-1], stack_i[-3:-1]
    for k in range(len(stack_v) - 1):
        record(k, k + 1, 0.5)
    return out


# ----------------------------------------------------------- fade models

def calendar_fade(params: ChemistryParams, sigma: float, temp: float, days: float) -> float:
    """Cumulative calendar fade after ``days`` at mean SoC ``sigma``.

    Power-law in time with Arrhenius temperature dependence; the exponential
    wrapper some formulations put around this product is not applied (it
    yields fade above 1 at the tabulated constants).
    """
    if temp <= 0:
        raise ValueError("temperature must be positive Kelvin")
    if days <= 0:
        return 0.0
    return (params.k_alpha * math.exp(params.k_beta * sigma)
            * math.exp(params.k_gamma / temp) * days ** params.k_z)


def calendar_fade_increment(params: ChemistryParams, sigma: float, temp: float,
                            t_start: float, t_end: float) -> float:
    """Calendar fade accrued between two ages given in days, clamped to [0, 1]."""
    if t_end < t_start or t_start < 0:
        raise ValueError("need 0 <= t_start <= t_end")
    inc = calendar_fade(params, sigma, temp, t_end) - calendar_fade(params, sigma, temp, t_start)
    return min(max(inc, 0.0), 1.0)


def dod_stress(params: ChemistryParams, dod: float) -> float:
    if params.dod_form == "power":
        if dod <= 0.0:
            return 1.0 / params.k_delta3
        return 1.0 / (params.k_delta1 * dod ** params.k_delta2 + params.k_delta3)
    return params.k_delta1 * dod * math.exp(params.k_delta2 * dod)


def soc_stress(params: ChemistryParams, sigma: float) -> float:
    return math.exp(params.k_sigma * (sigma - params.sigma_ref))


def temperature_stress(params: ChemistryParams, temp: float) -> float:
    return math.exp(params.k_T * (temp - params.T_ref) * params.T_ref / temp)


def cycle_stress(params: ChemistryParams, cycle: CycleRecord, temp: float = DEFAULT_TEMP_K) -> float:
    """Weighted stress contribution of one rainflow record."""
    time_term = params.k_t * cycle.duration
    return (cycle.weight * (dod_stress(params, cycle.dod) + time_term)
            * soc_stress(params, cycle.mean_soc) * temperature_stress(params, temp))


def capacity_fade(params: ChemistryParams, stress: float) -> float:
    """Cycle fade at cumulative stress: fast SEI-formation term plus a slow term."""
    if stress < 0:
        raise ValueError("cumulative stress must be nonnegative")
    a = params.alpha_sei
    q = 1.0 - a * math.exp(-params.beta_sei * stress) - (1.0 - a) * math.exp(-stress)
    return min(max(q, 0.0), 1.0)


# ----------------------------------------------------------------- ledger

@dataclass
class AgingLedger:
    """Aging memory of one device across episodes."""

    params: ChemistryParams
    cumulative_cycle_stress: float = 0.0
    cumulative_calendar_seconds: float = 0.0
    cycle_fade: float = 0.0
    calendar_fade: float = 0.0
    replacements: int = 0

    @property
    def soh(self) -> float:
        return 1.0 - self.cycle_fade - self.calendar_fade

    @property
    def calendar_days(self) -> float:
        return self.cumulative_calendar_seconds / SECONDS_PER_DAY

    def copy(self) -> "AgingLedger":
        return replace(self)

    def reset(self):
        self.cumulative_cycle_stress = 0.0
        self.cumulative_calendar_seconds = 0.0
        self.cycle_fade = 0.0
        self.calendar_fade = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.name
        d["soh"] = self.soh
        return d


def apply_episode_aging(ledger: AgingLedger, soc_profile: Sequence[float],
                        temp: float = DEFAULT_TEMP_K, episode_days: float | None = None,
                        dt_seconds: float = 3600.0,
                        calendar_sigma: float | None = None) -> tuple[float, float]:
    """Advance the ledger by one episode and return the fade increments.

    ``soc_profile`` should include the SoC at the start of the episode and
    after each step.  ``episode_days`` defaults to the profile duration;
    ``calendar_sigma`` defaults to the profile mean.
    """
    profile = np.asarray(soc_profile, dtype=float)
    params = ledger.params
    cycles = rainflow_count(profile, dt_seconds) if profile.size > 1 else []
    added = sum(cycle_stress(params, c, temp) for c in cycles)
    old_cycle = ledger.cycle_fade
    ledger.cumulative_cycle_stress += added
    ledger.cycle_fade = capacity_fade(params, ledger.cumulative_cycle_stress)
    d_cycle = ledger.cycle_fade - old_cycle

    if episode_days is None:
        episode_days = max(profile.size - 1, 0) * dt_seconds / SECONDS_PER_DAY
    sigma = float(profile.mean()) if calendar_sigma is None else calendar_sigma
    t0 = ledger.calendar_days
    d_cal = calendar_fade_increment(params, sigma, temp, t0, t0 + episode_days) if episode_days > 0 else 0.0
    ledger.cumulative_calendar_seconds += episode_days * SECONDS_PER_DAY
    ledger.calendar_fade += d_cal

    if ledger.soh <= EOL_SOH:
        ledger.reset()
        ledger.replacements += 1
    return d_cycle, d_cal


# ------------------------------------------------------------------ money

@dataclass(frozen=True)
class DegradationCoefficients:
    alpha_ess: float = 0.35
    alpha_ev: float = 0.45

    def __post_init__(self):
        if not (self.alpha_ess > 0 and self.alpha_ev > 0):
            raise ValueError("degradation coefficients must be positive")


def degradation_coefficient(previous: float, delta_q_cycle: float, capacity: float,
                            cost_per_kwh: float, throughput_kwh: float) -> float:
    """Cycle-aging cost per kWh of throughput observed over one episode."""
    if throughput_kwh <= 0:
        return previous
    alpha = cost_per_kwh * delta_q_cycle * capacity / throughput_kwh
    # a zero-fade episode (e.g. right after replacement) keeps the last price
    return alpha if alpha > 0 and math.isfinite(alpha) else previous


def update_degradation_coefficients(coeffs: DegradationCoefficients,
                                    ess: tuple[float, float, float, float] | None = None,
                                    ev: tuple[float, float, float, float] | None = None
                                    ) -> DegradationCoefficients:
    """Refresh both coefficients.

    ``ess`` and ``ev`` are ``(delta_q_cycle, capacity, cost_per_kwh,
    throughput_kwh)`` tuples; ``None`` keeps the current value.
    """
    a_ess = coeffs.alpha_ess if ess is None else degradation_coefficient(coeffs.alpha_ess, *ess)
    a_ev = coeffs.alpha_ev if ev is None else degradation_coefficient(coeffs.alpha_ev, *ev)
    return DegradationCoefficients(a_ess, a_ev)


def step_cycle_cost(coeffs: DegradationCoefficients, ess_power: float, ev_power: float,
                    dt: float = 1.0) -> tuple[float, float]:
    return coeffs.alpha_ess * abs(ess_power) * dt, coeffs.alpha_ev * abs(ev_power) * dt


def calendar_cost(delta_q_cal: float, cost_per_kwh: float, capacity: float) -> float:
    return delta_q_cal * cost_per_kwh * capacity


def episode_cost_attribution(ess_cycle_costs: Iterable[float] | float,
                             ev_cycle_costs: Iterable[float] | float,
                             ess_cal_cost: float, ev_cal_cost: float) -> tuple[float, float, float]:
    """Split aging cost between the building operator and EV users.

    The building carries all cycling (it dispatches both devices) and the
    ESS calendar aging; EV owners carry their own calendar aging.
    """
    ess_cyc = float(np.sum(ess_cycle_costs))
    ev_cyc = float(np.sum(ev_cycle_costs))
    c_build = ess_cyc + ev_cyc + ess_cal_cost
    c_ev_user = ev_cal_cost
    return c_build, c_ev_user, c_build + c_ev_user
