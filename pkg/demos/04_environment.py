"""
The scheduling environment
==========================

Walk one day of the building environment by hand: the 51-value state, the
action mask with the EV departure guard, and the reward breakdown.
"""

import numpy as np

from gridsched.env import (IDLE_ACTION, BuildingEnv, EnvConfig, decode_action, encode_action,
                           scaling_coefficients)
from gridsched.scenario import generate_scenario

sc = generate_scenario()
env = BuildingEnv(sc, EnvConfig(forecast_mode="oracle"))
obs = env.reset(0)
print("state length", obs.size, "| prices", obs[:3], "... | net load", round(obs[24], 1))

# How the reward scales discharge and charge with price and net load
for phi_pri, phi_net in [(1.5, 1.5), (1.5, 0.5), (0.5, 0.5), (0.5, 1.5)]:
    w_dis, w_ch = scaling_coefficients(phi_pri, phi_net)
    print(f"price ratio {phi_pri}, net ratio {phi_net}: w_dis {w_dis:+.3f}  w_ch {w_ch:+.3f}")

# %%
# A hand-written policy
# ---------------------
# Charge in the valley, discharge at the peak, let the fleet give some energy back
# while the guard keeps enough time to refill it before departure.
def policy(env):
    price = env.scenario.tariff.buy(env.k)
    if price < 0.5:
        want = encode_action(-100.0, 0.0)
    elif price > 1.5:
        want = encode_action(100.0, 50.0)
    else:
        want = IDLE_ACTION
    mask = env.action_mask()
    if mask[want]:
        return want
    # keep the ESS request, move the EV to the nearest level the mask allows
    ess, ev = decode_action(want)
    options = [a for a in np.flatnonzero(mask) if decode_action(a)[0] == ess]
    return int(min(options, key=lambda a: abs(decode_action(a)[1] - ev)))


done = False
while not done:
    a = policy(env)
    obs, rb, row, done = env.step(a)
    ess, ev = decode_action(a)
    print(f"{row['hour']:2d}h  req ({ess:+5.0f},{ev:+5.0f})  exec ({row['exec_ess']:+7.1f},{row['exec_ev']:+6.1f})  "
          f"soc ({row['soc_ess']:.2f},{row['soc_ev']:.2f})  reward {rb.total:+8.1f}")

print("EV back to its arrival SoC at departure:", env.departure_ok)
print("aging this day:", {k: round(v, 6) for k, v in env.last_episode_aging.items()})
