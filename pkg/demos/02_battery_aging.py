"""
Battery aging: rainflow cycles, calendar and cycle fade
=======================================================

How a daily SoC trajectory turns into capacity loss for an LFP stationary
battery and an NMC vehicle pack, and how that loss becomes a per-kWh price.
"""

import numpy as np

from gridsched.degradation import (LFP, NMC, AgingLedger, CycleRecord, DegradationCoefficients,
                                   apply_episode_aging, calendar_fade, capacity_fade, cycle_stress,
                                   rainflow_count, update_degradation_coefficients)

# A day with one deep cycle and a small nested one.
profile = [0.5, 0.3, 0.2, 0.6, 0.8, 0.7, 0.75, 0.4, 0.5]
for c in rainflow_count(profile, dt_per_step=3600.0):
    print(f"weight {c.weight:.1f}  depth {c.dod:.2f}  mean SoC {c.mean_soc:.3f}  {c.duration / 3600:.0f} h")

# %%
# Chemistry contrast
# ------------------
# Same cycle, two chemistries: NMC accumulates stress much faster.
cycle = CycleRecord(dod=0.4, mean_soc=0.5, duration=8 * 3600.0, weight=1.0)
for name, params in [("LFP", LFP), ("NMC", NMC)]:
    for n_cycles in (500, 2000, 6000):
        fade = capacity_fade(params, n_cycles * cycle_stress(params, cycle, 308.15))
        print(f"{name} after {n_cycles:5d} cycles at 35 C: {fade:.2%} capacity lost")

print("calendar fade of LFP stored one year at SoC 0.5:")
for temp in (288.0, 298.0, 308.0):
    print(f"  {temp - 273.15:4.0f} C  {calendar_fade(LFP, 0.5, temp, 365.0):.2%}")

# %%
# A month of operation
# --------------------
# The ledger tracks cumulative stress and calendar time; each day's loss of
# capacity, divided by the energy cycled, becomes tomorrow's aging price.
rng = np.random.default_rng(0)
ledger = AgingLedger(LFP)
coeffs = DegradationCoefficients()
for day in range(30):
    soc = np.clip(0.5 + np.cumsum(rng.normal(0, 0.08, 25)), 0.1, 0.9)
    throughput = float(np.abs(np.diff(soc)).sum() * 1000.0 / 0.95)
    d_cycle, d_cal = apply_episode_aging(ledger, soc)
    coeffs = update_degradation_coefficients(coeffs, ess=(d_cycle, 1000.0, 910.0, throughput))
    if day % 10 == 9:
        print(f"day {day + 1:2d}: SoH {ledger.soh:.5f}  aging price {coeffs.alpha_ess:.3f} per kWh")
