"""
Battery physics and power routing
=================================

One hour of operation for a 1 MWh stationary battery and an EV fleet parked
at the building: state-of-charge updates, clipping of infeasible requests,
routing of discharged power and the resulting cash flow.
"""

import numpy as np

from gridsched.core import (BatterySpec, TariffSchedule, allocate, check_power_balance,
                            clip_action_to_feasible, split_power, step_cashflow, step_soc)

ess = BatterySpec(1000.0)
print("max charge / discharge:", ess.max_charge, ess.max_discharge, "kW")

# Charging at 100 kW for an hour stores 95 kWh, discharging for an hour removes 95 kWh.
soc = step_soc(0.5, 100.0, 0.0, ess)
print(f"0.50 -> charge 100 kW -> {soc:.3f}")
print(f"{soc:.3f} -> discharge 100 kW -> {step_soc(soc, 0.0, 100.0, ess):.3f}")

# Requests beyond the SoC window are clipped; the shortfall becomes a penalty later.
for start, request in [(0.9, -100.0), (0.12, 100.0), (0.5, 50.0)]:
    executed, violation = clip_action_to_feasible(start, request, ess)
    print(f"soc {start:.2f} request {request:+6.1f} -> executed {executed:+7.2f}, violation {violation:6.2f}")

# %%
# Routing discharged power
# ------------------------
# Discharged power first serves the building; only the surplus goes to the grid.
tariff = TariffSchedule(tuple([0.32] * 8 + [0.86] * 2 + [1.66] * 5 + [0.86] * 3 + [1.66] * 3 + [0.86] * 2 + [0.32]))
hour = 12
for net_load, ess_dis, ev_dis in [(120.0, 50.0, 30.0), (50.0, 40.0, 30.0), (-20.0, 50.0, 0.0)]:
    a = allocate(net_load, ess_dis, ev_dis)
    revenue, cost = step_cashflow(a, tariff.buy(hour), tariff.sell(hour), 0.0)
    ok = check_power_balance({"net_load": net_load, **a.as_dict()})
    print(f"net {net_load:+6.1f} kW  branch {a.branch:11s}  to grid {a.ess_to_grid + a.ev_to_grid:5.1f}  "
          f"bought {a.grid_purchase:5.1f}  revenue {revenue:7.2f}  cost {cost:7.2f}  balanced={ok}")

# %%
# A day of naive arbitrage
# ------------------------
# Charge in the valley, discharge at the peak, and watch the SoC trajectory.
plan = np.zeros(24)
plan[0:4] = -100.0
plan[10:14] = 100.0
soc, trajectory = 0.3, []
for h, request in enumerate(plan):
    executed, _ = clip_action_to_feasible(soc, request, ess)
    soc = step_soc(soc, *split_power(executed), ess)
    trajectory.append(soc)
print("SoC by hour:", np.round(trajectory, 3))
