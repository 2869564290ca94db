"""Full-length training runs shared by the end-to-end acceptance checks.

Each (variant, seed) run is stored as one JSON file under ``CACHE_DIR`` keyed
by a hash of its settings and the package source, so a second test session
reuses finished runs. Run this file directly to fill the cache ahead of time:

    python tests/acceptance_runs.py
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from threadpoolctl import threadpool_limits

import gridsched
from gridsched.agent import AgentConfig
from gridsched.env import EnvConfig
from gridsched.harness import (dp_oracle_run, evaluate_policy, net_forecast_matrix, run_training,
                               uncontrolled_baseline)
from gridsched.scenario import ScenarioConfig, generate_scenario

SEEDS = (0, 1, 2, 3, 4)
VARIANTS = ("d3qnper", "d3qn", "dqn")
EPISODES = 2000
CACHE_DIR = Path(os.environ.get("GRIDSCHED_ACCEPTANCE_CACHE",
                                Path(__file__).resolve().parent.parent / ".acceptance_cache"))


def _source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(gridsched.__file__).parent.glob("*.py")):
        h.update(path.read_bytes())
    return h.hexdigest()


def _key(kind: str, **parts) -> str:
    blob = json.dumps({"kind": kind, "source": _source_digest(), **parts},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _cached(path: Path, compute):
    if path.exists():
        return json.loads(path.read_text())
    result = compute()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(result, indent=1, sort_keys=True))
    tmp.replace(path)
    return result


class Pipeline:
    """Default summer scenario with its fitted forecasts, built once per process."""

    def __init__(self):
        self.scenario_cfg = ScenarioConfig()
        self.env_cfg = EnvConfig()
        self._scenario = self._forecast = None

    @property
    def scenario(self):
        if self._scenario is None:
            self._scenario = generate_scenario(self.scenario_cfg)
        return self._scenario

    @property
    def forecast(self):
        if self._forecast is None:
            self._forecast = net_forecast_matrix(self.scenario)
        return self._forecast

    def baseline(self) -> dict:
        path = CACHE_DIR / f"uncontrolled-{_key('unc', sc=self.scenario_cfg.to_dict())}.json"
        return _cached(path, lambda: uncontrolled_baseline(self.scenario).summary.to_dict())

    def run(self, variant: str, seed: int, episodes: int = EPISODES) -> dict:
        cfg = AgentConfig(variant=variant, seed=seed, episodes=episodes)
        key = _key("run", sc=self.scenario_cfg.to_dict(), agent=asdict(cfg), env=asdict(self.env_cfg))
        return _cached(CACHE_DIR / f"{variant}-s{seed}-{key}.json", lambda: self._train(cfg))

    def _train(self, cfg: AgentConfig) -> dict:
        with threadpool_limits(1):
            t0 = time.perf_counter()
            forecast = self.forecast
            tr = run_training(self.scenario, cfg, self.env_cfg, forecast)
            ev = evaluate_policy(tr.agent, self.scenario, self.env_cfg, forecast)
            train_seconds = time.perf_counter() - t0
            dp = dp_oracle_run(self.scenario, ev.window_start)
        return {"variant": cfg.variant, "seed": cfg.seed, "episodes": cfg.episodes,
                "train_seconds": train_seconds, "summary": ev.summary.to_dict(),
                "dp": dp.summary.to_dict(),
                "rewards": [r["reward"] for r in tr.curve],
                "final_curve": tr.curve[-1]}


def all_runs(pipeline: Pipeline | None = None, variants=VARIANTS, seeds=SEEDS, log=None) -> list[dict]:
    pipeline = pipeline or Pipeline()
    out = []
    for variant in variants:
        for seed in seeds:
            r = pipeline.run(variant, seed)
            if log:
                log(f"{variant} seed={seed} cost={r['summary']['cost']:.1f} "
                    f"frozen={r['summary']['frozen_cost']:.1f} dp={r['dp']['frozen_cost']:.1f} "
                    f"t={r['train_seconds']:.0f}s")
            out.append(r)
    return out


if __name__ == "__main__":
    p = Pipeline()
    print("uncontrolled", p.baseline()["cost"], flush=True)
    all_runs(p, log=lambda m: print(m, flush=True))
    sys.exit(0)
