"""Synthetic building scenarios.

Stands in for metered building data: a commercial-building load with
business-hour demand, weekday modulation, autocorrelated noise and
occasional midnight batch loads, a clear-sky PV bell modulated by daily
cloudiness, and a three-tier time-of-use tariff.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import BatterySpec, EnergyProfile, EvSessionWindow, TariffSchedule
from .degradation import CHEMISTRIES, DEFAULT_TEMP_K, ChemistryParams

VALLEY_HOURS = (0, 1, 2, 3, 4, 5, 6, 7, 23)
PEAK_HOURS = (10, 11, 12, 13, 14, 18, 19, 20)

SEASONS = {
    "summer": dict(tariff=(0.32, 0.86, 1.66), load_base=25.0, load_peak=255.0,
                   pv_peak=115.0, sunrise=5.5, sunset=19.0),
    "winter": dict(tariff=(0.30, 0.80, 1.45), load_base=20.0, load_peak=145.0,
                   pv_peak=80.0, sunrise=7.0, sunset=17.5),
}


def tou_prices(valley: float, flat: float, peak: float) -> tuple[float, ...]:
    return tuple(valley if h in VALLEY_HOURS else peak if h in PEAK_HOURS else flat
                 for h in range(24))


@dataclass
class ScenarioConfig:
    season: str = "summer"
    n_days: int = 60
    n_eval_days: int = 12
    seed: int = 0
    tariff: tuple[float, float, float] | None = None  # (valley, flat, peak)
    buy_price: tuple[float, ...] | None = None  # explicit 24 hourly prices, overrides tiers
    price_coefficient: float = 0.9
    load_base: float | None = None
    load_peak: float | None = None
    load_noise: float = 8.0
    weekend_factor: float = 0.6
    midnight_spike_prob: float = 0.5
    midnight_spike_kw: tuple[float, float] = (40.0, 100.0)
    pv_peak: float | None = None
    cloud_range: tuple[float, float] = (0.45, 1.0)
    load_csv: str | None = None
    pv_csv: str | None = None
    ess: BatterySpec = field(default_factory=lambda: BatterySpec(1000.0, cost_per_kwh=910.0, chemistry="LFP"))
    ev: BatterySpec = field(default_factory=lambda: BatterySpec(1000.0, cost_per_kwh=1092.0, chemistry="NMC"))
    ev_window: EvSessionWindow = field(default_factory=EvSessionWindow)
    temperature: float = DEFAULT_TEMP_K
    chemistry_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.season not in SEASONS:
            raise ValueError(f"unknown season {self.season!r}")
        if self.n_days < 2 or self.n_eval_days < 1 or self.n_eval_days >= self.n_days:
            raise ValueError("need n_days >= 2 and 1 <= n_eval_days < n_days")
        for name in ("load_base", "load_peak", "pv_peak", "load_noise"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def n_train_days(self) -> int:
        return self.n_days - self.n_eval_days

    def resolved(self, key: str):
        v = getattr(self, key)
        return SEASONS[self.season][key] if v is None else v

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scenario:
    config: ScenarioConfig
    tariff: TariffSchedule
    profile: EnergyProfile
    ev_arrival_soc: np.ndarray  # one aggregate arrival SoC per day

    @property
    def ess(self) -> BatterySpec:
        return self.config.ess

    @property
    def ev(self) -> BatterySpec:
        return self.config.ev

    @property
    def ev_window(self) -> EvSessionWindow:
        return self.config.ev_window

    @property
    def temperature(self) -> float:
        return self.config.temperature

    @property
    def n_days(self) -> int:
        return self.profile.horizon // 24

    @property
    def train_days(self) -> range:
        return range(self.config.n_train_days)

    @property
    def eval_days(self) -> range:
        return range(self.config.n_train_days, self.n_days)

    def chemistry(self, device: str) -> ChemistryParams:
        spec = self.ess if device == "ess" else self.ev
        base = CHEMISTRIES[spec.chemistry]
        over = self.config.chemistry_overrides.get(spec.chemistry, {})
        return base.with_overrides(**over) if over else base

    def with_config(self, **kw) -> "Scenario":
        return generate_scenario(replace(self.config, **kw))


def read_profile_csv(path: str | Path) -> np.ndarray:
    """Two-column CSV (hour_index, kW), header optional, rows sorted by hour."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or not rec[0].strip():
                continue
            try:
                rows.append((int(float(rec[0])), float(rec[1])))
            except ValueError:
                if rows:
                    raise ValueError(f"{path}: malformed row {rec!r}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    rows.sort()
    idx = [r[0] for r in rows]
    if idx != list(range(idx[0], idx[0] + len(idx))):
        raise ValueError(f"{path}: hour_index must be contiguous")
    return np.array([r[1] for r in rows])


def write_profile_csv(path: str | Path, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour_index", "kW"])
        for i, v in enumerate(values):
            w.writerow([i, f"{v:.6f}"])


def _synth_load(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    hours = np.arange(24)
    base, peak = cfg.resolved("load_base"), cfg.resolved("load_peak")
    # business-hours plateau: smooth rise from 7h, fall after 19h
    shape = 1.0 / (1.0 + np.exp(-(hours - 8.0) * 1.4)) / (1.0 + np.exp((hours - 19.0) * 1.2))
    out = np.empty(cfg.n_days * 24)
    ar = 0.0
    for d in range(cfg.n_days):
        weekday = (d % 7) < 5
        day_scale = (1.0 if weekday else cfg.weekend_factor) * rng.uniform(0.9, 1.05)
        day = base + peak * day_scale * shape
        if rng.random() < cfg.midnight_spike_prob:
            lo, hi = cfg.midnight_spike_kw
            start = int(rng.integers(0, 2))
            day[start:start + 2] += rng.uniform(lo, hi)
        for h in range(24):
            ar = 0.7 * ar + rng.normal(0.0, cfg.load_noise)
            out[d * 24 + h] = day[h] + ar
    return np.maximum(out, 0.5)


def _synth_pv(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    sunrise, sunset = SEASONS[cfg.season]["sunrise"], SEASONS[cfg.season]["sunset"]
    hours = np.arange(24) + 0.5
    bell = np.clip(np.sin(np.pi * (hours - sunrise) / (sunset - sunrise)), 0.0, None)
    bell[(hours < sunrise) | (hours > sunset)] = 0.0
    out = np.empty(cfg.n_days * 24)
    lo, hi = cfg.cloud_range
    for d in range(cfg.n_days):
        cloud = rng.uniform(lo, hi)
        jitter = np.clip(1.0 + rng.normal(0.0, 0.08, 24), 0.6, 1.2)
        out[d * 24:(d + 1) * 24] = cfg.resolved("pv_peak") * bell ** 1.3 * cloud * jitter
    out[np.tile(bell == 0.0, cfg.n_days)] = 0.0
    return np.minimum(out, cfg.resolved("pv_peak"))


def generate_scenario(config: ScenarioConfig | None = None, seed: int | None = None) -> Scenario:
    """Build a deterministic scenario from a config (seed overrides config.seed)."""
    cfg = config or ScenarioConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    rng = np.random.default_rng(cfg.seed)
    load_rng, pv_rng, ev_rng = (np.random.default_rng(s) for s in rng.integers(0, 2**32, 3))
    if cfg.load_csv:
        load = read_profile_csv(cfg.load_csv)[: cfg.n_days * 24]
    else:
        load = _synth_load(cfg, load_rng)
    if cfg.pv_csv:
        pv = read_profile_csv(cfg.pv_csv)[: cfg.n_days * 24]
    else:
        pv = _synth_pv(cfg, pv_rng)
    if len(load) != cfg.n_days * 24 or len(pv) != cfg.n_days * 24:
        raise ValueError("profile CSVs shorter than n_days * 24 hours")
    if cfg.buy_price is not None:
        prices = tuple(cfg.buy_price)
    else:
        prices = tou_prices(*(cfg.tariff or SEASONS[cfg.season]["tariff"]))
    tariff = TariffSchedule(prices, cfg.price_coefficient)
    arrivals = np.array([cfg.ev_window.draw_arrival_soc(ev_rng, cfg.ev.soc_bounds)
                         for _ in range(cfg.n_days)])
    return Scenario(cfg, tariff, EnergyProfile(load, pv), arrivals)
