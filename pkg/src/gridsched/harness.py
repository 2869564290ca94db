"""Experiment orchestration: forecasts, training, evaluation, baselines, export."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .agent import Agent, AgentConfig, NonFiniteLossError
from .degradation import AgingLedger, DegradationCoefficients
from .env import (HORIZON, IDLE_ACTION, LEVELS, N_LEVELS, TRACE_FIELDS, BuildingEnv,
                  EnvConfig, StateScaler, encode_action)
from .forecast import EdRvflForecaster
from .oracle import DPOracle
from .scenario import Scenario

log = logging.getLogger(__name__)

Policy = Callable[[BuildingEnv, np.ndarray], int]


@dataclass
class ForecastConfig:
    window: int = 48
    n_hidden: int = 150
    n_layers: int = 10
    reg: float = 0.5
    activation: str = "sigmoid"
    input_scaling: float = 0.5
    alpha_trade: float = 0.6
    horizon: int = 23
    seed: int = 0

    def forecaster(self, nonnegative: bool = False) -> EdRvflForecaster:
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "horizon"}
        return EdRvflForecaster(nonnegative=nonnegative, **kw)


def fit_forecasters(scenario: Scenario, cfg: ForecastConfig | None = None):
    """Load and PV forecasters fitted on the training days only."""
    cfg = cfg or ForecastConfig()
    n_train = scenario.config.n_train_days * HORIZON
    load_fc = cfg.forecaster().fit(scenario.profile.load[:n_train])
    pv_fc = cfg.forecaster(nonnegative=True).fit(scenario.profile.pv[:n_train])
    return load_fc, pv_fc


def net_forecast_matrix(scenario: Scenario, cfg: ForecastConfig | None = None,
                        forecasters=None) -> np.ndarray:
    """23-hour-ahead net-load forecasts from every hour of the scenario.

    Forecasts do not depend on the dispatch, so they are computed once per
    scenario instead of inside the control loop.
    """
    cfg = cfg or ForecastConfig()
    load_fc, pv_fc = forecasters or fit_forecasters(scenario, cfg)
    return (load_fc.forecast_all(scenario.profile.load, cfg.horizon)
            - pv_fc.forecast_all(scenario.profile.pv, cfg.horizon))


def make_env(scenario: Scenario, env_cfg: EnvConfig | None = None,
             net_forecast: np.ndarray | None = None,
             forecast_cfg: ForecastConfig | None = None) -> BuildingEnv:
    env_cfg = env_cfg or EnvConfig()
    if env_cfg.forecast_mode == "deployment" and net_forecast is None:
        net_forecast = net_forecast_matrix(scenario, forecast_cfg)
    return BuildingEnv(scenario, env_cfg, net_forecast)


def state_scaler(scenario: Scenario) -> StateScaler:
    n_train = scenario.config.n_train_days * HORIZON
    return StateScaler(float(np.abs(scenario.profile.net_load[:n_train]).max()) or 1.0)


# ------------------------------------------------------------------ rollouts

@dataclass
class WindowStart:
    """Battery state at the start of an evaluation window."""

    soc_ess: float
    ess_ledger: AgingLedger
    ev_ledger: AgingLedger
    coeffs: DegradationCoefficients

    @classmethod
    def capture(cls, env: BuildingEnv) -> "WindowStart":
        return cls(env.soc_ess, env.ess_ledger.copy(), env.ev_ledger.copy(), env.coeffs)

    def apply(self, env: BuildingEnv):
        env.soc_ess = self.soc_ess
        env.ess_ledger = self.ess_ledger.copy()
        env.ev_ledger = self.ev_ledger.copy()
        env.coeffs = self.coeffs


@dataclass
class Rollout:
    trace: list[dict] = field(default_factory=list)
    aging: list[dict] = field(default_factory=list)
    latencies: list[float] = field(default_factory=list)
    departures: list[bool] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)


def rollout(env: BuildingEnv, policy: Policy, days: Iterable[int], record: bool = True) -> Rollout:
    out = Rollout()
    for ep, day in enumerate(days):
        obs = env.reset(day)
        done = False
        total = 0.0
        while not done:
            t0 = time.perf_counter()
            a = policy(env, obs)
            out.latencies.append(time.perf_counter() - t0)
            obs, rb, row, done = env.step(a)
            total += rb.total
            if row["ev_departure_ok"] != "":
                out.departures.append(bool(row["ev_departure_ok"]))
            if record:
                out.trace.append(row)
        out.rewards.append(total)
        out.aging.append({"episode": ep + 1, "day": day, **env.last_episode_aging})
    return out


def greedy_agent_policy(agent: Agent, scaler: StateScaler) -> Policy:
    def policy(env: BuildingEnv, obs: np.ndarray) -> int:
        return agent.act(scaler(obs), env.action_mask(), epsilon=0.0)
    return policy


def uncontrolled_policy(env: BuildingEnv, obs: np.ndarray) -> int:
    """Charge each device at full power until it reaches its upper SoC bound."""
    tol = 1e-9
    ess = LEVELS[0] if env.soc_ess < env.ess.soc_bounds[1] - tol else 0.0
    ev = 0.0
    if env.window.online(env.k) and env.soc_ev < env.ev.soc_bounds[1] - tol:
        ev = LEVELS[0]
    return encode_action(ess, ev)


def idle_policy(env: BuildingEnv, obs: np.ndarray) -> int:
    return IDLE_ACTION


# ------------------------------------------------------------------ summaries

COST_COLUMNS = ("energy_cost", "revenue", "c_ess_cycle", "c_ev_cycle", "ess_cal_cost", "ev_cal_cost")


@dataclass
class RunSummary:
    policy: str
    cost: float
    revenue: float
    energy_cost: float
    c_build: float
    c_ev_user: float
    c_total: float
    csp_ess: float
    csp_ev: float
    csc_ess: float
    csc_ev: float
    frozen_cost: float
    soh_ess: float
    soh_ev: float
    soh_window_ess: float
    soh_window_ev: float
    departure_violations: int
    departures: int
    steps: int
    # wall-clock measurements; the only fields that differ between identical runs
    timing: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        return cls(**d)


def summarize(policy: str, ro: Rollout, env: BuildingEnv, alpha0=(0.35, 0.45),
              wall_clock: float = 0.0) -> RunSummary:
    """Aggregate a window rollout. Every money figure is a sum of trace columns."""
    tr = ro.trace
    col = lambda k: float(sum(r[k] for r in tr))
    energy, revenue = col("energy_cost"), col("revenue")
    cyc_ess, cyc_ev = col("c_ess_cycle"), col("c_ev_cycle")
    cal_ess, cal_ev = col("ess_cal_cost"), col("ev_cal_cost")
    c_build = cyc_ess + cyc_ev + cal_ess
    c_ev_user = cal_ev
    csp_ess = float(sum(abs(r["exec_ess"]) for r in tr))
    csp_ev = float(sum(abs(r["exec_ev"]) for r in tr))
    fade_ess = sum(a["dq_cycle_ess"] + a["dq_cal_ess"] for a in ro.aging)
    fade_ev = sum(a["dq_cycle_ev"] + a["dq_cal_ev"] for a in ro.aging)
    lat = np.asarray(ro.latencies) * 1e3 if ro.latencies else np.zeros(1)
    return RunSummary(
        policy=policy,
        cost=energy - revenue + c_build + c_ev_user,
        revenue=revenue, energy_cost=energy,
        c_build=c_build, c_ev_user=c_ev_user, c_total=c_build + c_ev_user,
        csp_ess=csp_ess, csp_ev=csp_ev,
        csc_ess=cyc_ess + cal_ess, csc_ev=cyc_ev + cal_ev,
        frozen_cost=energy - revenue + alpha0[0] * csp_ess + alpha0[1] * csp_ev + cal_ess + cal_ev,
        soh_ess=env.ess_ledger.soh, soh_ev=env.ev_ledger.soh,
        soh_window_ess=1.0 - fade_ess, soh_window_ev=1.0 - fade_ev,
        departure_violations=sum(1 for ok in ro.departures if not ok),
        departures=len(ro.departures), steps=len(tr),
        timing={"wall_clock_s": wall_clock, "latency_ms_mean": float(lat.mean()),
                "latency_ms_max": float(lat.max())})


def cost_from_trace(trace: Sequence[dict]) -> float:
    return float(sum(r["energy_cost"] - r["revenue"] + r["c_ess_cycle"] + r["c_ev_cycle"]
                     + r["ess_cal_cost"] + r["ev_cal_cost"] for r in trace))


@dataclass
class EvalResult:
    summary: RunSummary
    trace: list[dict]
    aging: list[dict]
    window_start: WindowStart


def evaluate(scenario: Scenario, policy: Policy, name: str, env_cfg: EnvConfig | None = None,
             net_forecast: np.ndarray | None = None, warmup: bool = True,
             window_start: WindowStart | None = None) -> EvalResult:
    """Run ``policy`` over the evaluation days.

    With ``warmup`` the policy first operates the batteries over the training
    days from new, so the window starts from aged batteries and a settled
    ESS SoC. Only the window enters the summary.
    """
    t0 = time.perf_counter()
    env = make_env(scenario, env_cfg, net_forecast)
    if window_start is not None:
        window_start.apply(env)
    elif warmup:
        rollout(env, policy, scenario.train_days, record=False)
    start = WindowStart.capture(env)
    ro = rollout(env, policy, scenario.eval_days)
    alpha0 = (env.config.initial_alpha_ess, env.config.initial_alpha_ev)
    summary = summarize(name, ro, env, alpha0, time.perf_counter() - t0)
    return EvalResult(summary, ro.trace, ro.aging, start)


def evaluate_policy(agent: Agent, scenario: Scenario, env_cfg: EnvConfig | None = None,
                    net_forecast: np.ndarray | None = None, warmup: bool = True) -> EvalResult:
    policy = greedy_agent_policy(agent, state_scaler(scenario))
    return evaluate(scenario, policy, agent.config.variant, env_cfg, net_forecast, warmup)


def uncontrolled_baseline(scenario: Scenario, env_cfg: EnvConfig | None = None,
                          net_forecast: np.ndarray | None = None, warmup: bool = True) -> EvalResult:
    env_cfg = env_cfg or EnvConfig(forecast_mode="oracle")
    return evaluate(scenario, uncontrolled_policy, "uncontrolled", env_cfg, net_forecast, warmup)


def dp_oracle_run(scenario: Scenario, window_start: WindowStart | None = None, h: float = 0.05,
                  env_cfg: EnvConfig | None = None) -> EvalResult:
    """Replay the DP policy over the evaluation days with frozen coefficients."""
    env_cfg = replace(env_cfg or EnvConfig(), forecast_mode="oracle", freeze_coefficients=True)
    oracle = DPOracle(scenario, scenario.eval_days, h, env_cfg.initial_alpha_ess, env_cfg.initial_alpha_ev)
    if window_start is None:
        env = make_env(scenario, env_cfg)
        window_start = WindowStart.capture(env)
    window_start = replace(window_start, coeffs=DegradationCoefficients(
        env_cfg.initial_alpha_ess, env_cfg.initial_alpha_ev))
    first_day = scenario.eval_days[0]

    def policy(env: BuildingEnv, obs: np.ndarray) -> int:
        t_rel = (env.day - first_day) * HORIZON + env.k
        return oracle.action(t_rel, env.soc_ess, env.soc_ev)

    res = evaluate(scenario, policy, "dp_oracle", env_cfg, window_start=window_start)
    res.summary.extra["grid_step"] = h
    res.summary.extra["slack"] = h * scenario.ess.capacity * max(scenario.tariff.buy_price)
    return res


# ------------------------------------------------------------------- training

@dataclass
class TrainingResult:
    agent: Agent
    curve: list[dict]
    aging: list[dict]
    wall_clock: float


def run_training(scenario: Scenario, agent_cfg: AgentConfig | None = None,
                 env_cfg: EnvConfig | None = None, net_forecast: np.ndarray | None = None,
                 checkpoint_on_error: str | Path | None = None,
                 progress: Callable[[dict], None] | None = None) -> TrainingResult:
    """Train an agent by cycling through the training days, one day per episode."""
    agent_cfg = agent_cfg or AgentConfig()
    t0 = time.perf_counter()
    env = make_env(scenario, env_cfg, net_forecast)
    scaler = state_scaler(scenario)
    agent = Agent(agent_cfg)
    days = list(scenario.train_days)
    curve, aging = [], []
    for ep in range(agent_cfg.episodes):
        day = days[ep % len(days)]
        obs = scaler(env.reset(day))
        mask = env.action_mask()
        eps = agent.epsilon
        done = False
        total_reward, cost, losses = 0.0, 0.0, []
        while not done:
            a = agent.act(obs, mask, eps)
            raw_next, rb, row, done = env.step(a)
            nxt = scaler(raw_next)
            next_mask = env.action_mask() if not done else np.ones_like(mask)
            agent.remember(obs, a, rb.total, nxt, done, next_mask)
            try:
                loss = agent.learn()
            except NonFiniteLossError:
                if checkpoint_on_error:
                    agent.save(checkpoint_on_error, {"aborted_episode": ep + 1})
                raise
            if loss is not None:
                losses.append(loss)
            total_reward += rb.total
            cost += (row["energy_cost"] - row["revenue"] + row["c_ess_cycle"] + row["c_ev_cycle"]
                     + row["ess_cal_cost"] + row["ev_cal_cost"])
            obs, mask = nxt, next_mask
        synced = agent.end_episode()
        rec = {"episode": ep + 1, "day": day, "reward": total_reward, "cost": cost,
               "epsilon": eps, "loss": float(np.mean(losses)) if losses else float("nan"),
               "target_synced": int(synced),
               "soh_ess": env.ess_ledger.soh, "soh_ev": env.ev_ledger.soh,
               "alpha_ess": env.coeffs.alpha_ess, "alpha_ev": env.coeffs.alpha_ev}
        curve.append(rec)
        aging.append({"episode": ep + 1, "day": day, **env.last_episode_aging})
        if progress:
            progress(rec)
    return TrainingResult(agent, curve, aging, time.perf_counter() - t0)


# -------------------------------------------------------------------- export

def write_csv(path: str | Path, rows: Sequence[dict], columns: Sequence[str] | None = None):
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            cols = list(columns or (rows[0].keys() if rows else []))
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def degradation_rows(aging: Sequence[dict]) -> list[dict]:
    """Long-format degradation report: one row per episode and device."""
    rows = []
    for a in aging:
        for dev in ("ess", "ev"):
            rows.append({"episode": a["episode"], "day": a["day"], "device": dev,
                         "dq_cycle": a[f"dq_cycle_{dev}"], "dq_cal": a[f"dq_cal_{dev}"],
                         "soh": a[f"soh_{dev}"], "alpha": a[f"alpha_{dev}"],
                         "replacements": a[f"replacements_{dev}"]})
    return rows


def export_results(out_dir: str | Path, summary: RunSummary | None = None,
                   trace: Sequence[dict] | None = None, curve: Sequence[dict] | None = None,
                   aging: Sequence[dict] | None = None, config: dict | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    if summary is not None:
        p = out / "summary.json"
        p.write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
        written["summary"] = p
    if trace is not None:
        write_csv(out / "trace.csv", trace, TRACE_FIELDS)
        written["trace"] = out / "trace.csv"
    if curve is not None:
        write_csv(out / "learning_curve.csv", curve)
        written["learning_curve"] = out / "learning_curve.csv"
    if aging is not None:
        write_csv(out / "degradation.csv", degradation_rows(aging))
        written["degradation"] = out / "degradation.csv"
    if config is not None:
        p = out / "config.json"
        p.write_text(json.dumps(config, indent=2, sort_keys=True, default=str))
        written["config"] = p
    return written


def load_summary(path: str | Path) -> RunSummary:
    return RunSummary.from_dict(json.loads(Path(path).read_text()))


def compare(summaries: dict[str, RunSummary], proposed: str) -> list[dict]:
    """Cost of every run relative to ``proposed``: (other - proposed) / proposed."""
    base = summaries[proposed]
    rows = []
    for name, s in summaries.items():
        rows.append({"run": name, "cost": s.cost, "delta": s.cost - base.cost,
                     "pct_vs_proposed": (s.cost - base.cost) / abs(base.cost) * 100.0 if base.cost else math.nan,
                     "revenue": s.revenue, "energy_cost": s.energy_cost, "c_build": s.c_build,
                     "c_ev_user": s.c_ev_user, "csp_ess": s.csp_ess, "csp_ev": s.csp_ev,
                     "soh_window_ess": s.soh_window_ess, "soh_window_ev": s.soh_window_ev})
    return rows


# ----------------------------------------------------------------- parallel

def worker_count() -> int:
    try:
        n = int(os.environ.get("GRIDSCHED_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def _train_and_evaluate(args):
    scenario, agent_cfg, env_cfg, net_forecast = args
    with threadpool_limits(1):
        tr = run_training(scenario, agent_cfg, env_cfg, net_forecast)
        ev = evaluate_policy(tr.agent, scenario, env_cfg, net_forecast)
    return tr, ev


def train_many(scenario: Scenario, agent_cfgs: Sequence[AgentConfig], env_cfg: EnvConfig | None = None,
               net_forecast: np.ndarray | None = None, workers: int | None = None):
    """Train and evaluate several independent configurations (e.g. seeds).

    Runs are distributed over worker processes (``GRIDSCHED_THREADS``); each
    run is single-threaded, so results do not depend on the worker count.
    """
    env_cfg = env_cfg or EnvConfig()
    if env_cfg.forecast_mode == "deployment" and net_forecast is None:
        net_forecast = net_forecast_matrix(scenario)
    jobs = [(scenario, c, env_cfg, net_forecast) for c in agent_cfgs]
    workers = workers or worker_count()
    if workers <= 1 or len(jobs) <= 1:
        return [_train_and_evaluate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_train_and_evaluate, jobs))
