"""Perfect-foresight dynamic program over a discretized SoC grid."""

from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .core import BatterySpec
from .env import HORIZON, LEVELS, N_LEVELS, departure_guard


def soc_grid(spec: BatterySpec, h: float) -> np.ndarray:
    lo, hi = spec.soc_bounds
    n = (hi - lo) / h
    if n < 1 or abs(n - round(n)) > 1e-9:
        raise ValueError(f"grid step {h} does not tile SoC bounds {spec.soc_bounds}")
    return np.linspace(lo, hi, int(round(n)) + 1)


def _clip(soc, request, spec: BatterySpec):
    """Vectorized feasibility clamp; returns (charge, discharge, next_soc)."""
    lo, hi = spec.soc_bounds
    max_ch = np.minimum(np.maximum((hi - soc) * spec.capacity / spec.charge_eff, 0.0), spec.max_charge)
    max_dis = np.minimum(np.maximum((soc - lo) * spec.capacity / spec.discharge_eff, 0.0), spec.max_discharge)
    ch = np.where(request < 0, np.minimum(-request, max_ch), 0.0)
    dis = np.where(request > 0, np.minimum(request, max_dis), 0.0)
    nxt = soc + (spec.charge_eff * ch - spec.discharge_eff * dis) / spec.capacity
    return ch, dis, np.clip(nxt, lo, hi)


def step_cost(net, buy, sell, ch_e, dis_e, ch_v, dis_v, alpha_ess, alpha_ev):
    """Energy cost minus revenue plus cycle cost, broadcasting over arrays."""
    dis = dis_e + dis_v
    to_build = np.minimum(dis, max(net, 0.0))
    to_grid = dis - to_build
    purchase = np.maximum(net - to_build, 0.0)
    pv_sold = max(-net, 0.0)
    return (buy * (purchase + ch_e + ch_v) - sell * (pv_sold + to_grid)
            + alpha_ess * (ch_e + dis_e) + alpha_ev * (ch_v + dis_v))


class DPOracle:
    """Backward induction over (hour, soc_ess, soc_ev) for a block of days.

    Aging coefficients are frozen; calendar aging is ignored by the
    optimization (it is nearly action-independent) but reported by the replay.
    """

    def __init__(self, scenario, days, h: float = 0.05, alpha_ess: float = 0.35,
                 alpha_ev: float = 0.45):
        self.sc = scenario
        self.days = list(days)
        self.h = h
        self.alpha_ess, self.alpha_ev = alpha_ess, alpha_ev
        self.ge = soc_grid(scenario.ess, h)
        self.gv = soc_grid(scenario.ev, h)
        self.levels = np.asarray(LEVELS)
        self.values: list[np.ndarray] = []
        self._solve()

    def _online(self, k: int) -> bool:
        return k < HORIZON and self.sc.ev_window.online(k)

    def _value_fn(self, V: np.ndarray):
        return RegularGridInterpolator((self.ge, self.gv), V, bounds_error=False, fill_value=None)

    def _q_values(self, t_rel: int, se, sv, V_next_fn, guard_cache=None):
        """Cost-to-go of all 25 actions at states (se, sv) arrays of equal shape."""
        sc = self.sc
        day = self.days[t_rel // HORIZON]
        k = t_rel % HORIZON
        t = day * HORIZON + k
        net = float(sc.profile.net_load[t])
        buy, sell = sc.tariff.buy(k), sc.tariff.sell(k)
        se = np.asarray(se, float)[..., None, None]
        sv = np.asarray(sv, float)[..., None, None]
        ess_req = self.levels[:, None]
        ev_req = self.levels[None, :]
        ch_e, dis_e, ne = _clip(se, ess_req, sc.ess)
        online = self._online(k)
        arrival = float(sc.ev_arrival_soc[day])
        if online:
            ch_v, dis_v, nv = _clip(sv, ev_req, sc.ev)
            hours_left = sc.ev_window.departure_hour - k
            allowed = np.array([departure_guard(float(s), arrival, hours_left, sc.ev)
                                for s in np.ravel(sv)]).reshape(sv.shape[:-2] + (1, N_LEVELS))
        else:
            ch_v = dis_v = np.zeros_like(ev_req, dtype=float)
            nv = np.zeros_like(sv + ev_req)
            allowed = np.broadcast_to(self.levels[None, :] == 0.0, sv.shape[:-2] + (1, N_LEVELS))
        cost = step_cost(net, buy, sell, ch_e, dis_e, ch_v, dis_v, self.alpha_ess, self.alpha_ev)
        if not online and self._online(k + 1):
            nv = np.full_like(nv, arrival)
        elif k + 1 >= HORIZON and self._online(0):
            nxt_day = self.days[t_rel // HORIZON + 1] if t_rel // HORIZON + 1 < len(self.days) else day
            nv = np.full_like(nv, float(sc.ev_arrival_soc[nxt_day]))
        ne_b, nv_b = np.broadcast_arrays(ne, nv)
        cont = V_next_fn(np.stack([ne_b, np.clip(nv_b, self.gv[0], self.gv[-1])], axis=-1))
        q = cost + cont
        return np.where(allowed, q, np.inf)

    def _solve(self):
        n = len(self.days) * HORIZON
        V = np.zeros((self.ge.size, self.gv.size))
        self.values = [None] * (n + 1)
        self.values[n] = V
        SE, SV = np.meshgrid(self.ge, self.gv, indexing="ij")
        for t_rel in range(n - 1, -1, -1):
            q = self._q_values(t_rel, SE, SV, self._value_fn(self.values[t_rel + 1]))
            self.values[t_rel] = q.reshape(q.shape[:2] + (-1,)).min(axis=-1)

    def value(self, t_rel: int, soc_ess: float, soc_ev: float) -> float:
        return float(self._value_fn(self.values[t_rel])([[soc_ess, min(max(soc_ev, self.gv[0]), self.gv[-1])]])[0])

    def action(self, t_rel: int, soc_ess: float, soc_ev: float) -> int:
        """Greedy one-step lookahead on the value function at the exact state."""
        q = self._q_values(t_rel, soc_ess, soc_ev, self._value_fn(self.values[t_rel + 1])).ravel()
        # ties (e.g. a charge request at full SoC clips to idle) go to the smallest request
        best = np.flatnonzero(q <= q.min() + 1e-9)
        effort = (np.abs(self.levels)[:, None] + np.abs(self.levels)[None, :]).ravel()
        return int(best[np.argmin(effort[best])])


def dp_oracle(scenario, days=None, h: float = 0.05, alpha_ess: float = 0.35, alpha_ev: float = 0.45):
    """Solve the DP for ``days`` (default: the evaluation days)."""
    return DPOracle(scenario, scenario.eval_days if days is None else days, h, alpha_ess, alpha_ev)
