"""
Load and PV forecasting with a deep random-vector ensemble
==========================================================

Fit the layered random-feature forecaster on the synthetic summer building,
look at the per-layer predictions, and compare against persistence.
"""

import numpy as np

from gridsched.forecast import EdRvflForecaster, compute_metrics, fusion_weights, grid_sweep
from gridsched.scenario import generate_scenario

sc = generate_scenario()
split = sc.config.n_train_days * 24
load, pv = sc.profile.load, sc.profile.pv

fc = EdRvflForecaster(window=48, n_hidden=150, n_layers=10, seed=0).fit(load[:split])
print("load:", fc.evaluate(load, start=split))

pv_fc = EdRvflForecaster(window=48, n_hidden=150, n_layers=10, seed=0, nonnegative=True).fit(pv[:split])
print("pv:  ", pv_fc.evaluate(pv, start=split))

# persistence for reference
print("persistence load:", compute_metrics(load[split:], load[split - 1:-1], previous=load[split - 1]))

# %%
# Inside the ensemble
# -------------------
# Each layer makes its own prediction; the fusion weights favour layers that
# were accurate on the previous step and disagree with the rest.
fused, layers = fc.one_step(load)
t = split + 14
errors = layers[t - 1] - load[t - 1]
w = fusion_weights(layers[t], errors, fc.alpha_trade)
print("layer predictions:", np.round(layers[t], 1))
print("weights:          ", np.round(w, 3), "sum", w.sum())
print(f"fused {fused[t]:.1f}  actual {load[t]:.1f}")

# 23-hour recursive forecast from the start of the evaluation window
print("next 23 h:", np.round(fc.forecast_all(load, 23)[split], 0))

# %%
# Small hyperparameter sweep
# --------------------------
for row in grid_sweep(load[: split + 24 * 6], split, {"n_layers": [3, 10], "reg": [0.1, 1.0]},
                      window=48, n_hidden=100)[:4]:
    print(row)
