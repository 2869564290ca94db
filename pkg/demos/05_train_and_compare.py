"""
Train a scheduler and compare it with the baselines
===================================================

Train the dueling double Q-network with prioritized replay on the synthetic
summer building, then score it on the held-out days next to the
uncontrolled policy and the perfect-foresight dynamic program.

    python demos/05_train_and_compare.py [episodes] [variant]

The full budget is 2000 episodes (about two minutes on one core).
"""

import sys

from gridsched.agent import AgentConfig
from gridsched.env import EnvConfig
from gridsched.harness import (compare, dp_oracle_run, evaluate_policy, net_forecast_matrix,
                               run_training, uncontrolled_baseline)
from gridsched.scenario import generate_scenario

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 400
variant = sys.argv[2] if len(sys.argv) > 2 else "d3qnper"

sc = generate_scenario()
forecast = net_forecast_matrix(sc)

tr = run_training(sc, AgentConfig(variant=variant, episodes=episodes, seed=0), EnvConfig(), forecast,
                  progress=lambda r: print(f"episode {r['episode']:5d}  reward {r['reward']:9.1f}  "
                                           f"eps {r['epsilon']:.3f}")
                  if r["episode"] % 100 == 0 else None)
print(f"trained in {tr.wall_clock:.0f} s")

policy = evaluate_policy(tr.agent, sc, EnvConfig(), forecast)
baseline = uncontrolled_baseline(sc)
oracle = dp_oracle_run(sc, policy.window_start)

rows = compare({variant: policy.summary, "uncontrolled": baseline.summary, "dp_oracle": oracle.summary},
               variant)
for r in rows:
    print(f"{r['run']:12s} cost {r['cost']:10.1f}  {r['pct_vs_proposed']:+7.2f}%  "
          f"CSP ess {r['csp_ess']:7.0f}  ev {r['csp_ev']:6.0f}  "
          f"SoH {r['soh_window_ess']:.4f}/{r['soh_window_ev']:.4f}")

# costs the oracle optimizes (aging prices frozen at their initial values)
print(f"frozen-price cost: policy {policy.summary.frozen_cost:.1f}, oracle {oracle.summary.frozen_cost:.1f}")
print("EV departures met:", policy.summary.departures - policy.summary.departure_violations,
      "of", policy.summary.departures)
