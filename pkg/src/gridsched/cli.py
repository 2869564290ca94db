"""``gridsched`` command-line interface.

Exit codes: 0 success, 2 usage error, 3 unreadable config, 4 config schema
violation, 5 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .agent import Agent
from .config import ConfigError, ConfigNotFound, RunConfig, load_config
from .forecast import EdRvflForecaster
from .scenario import generate_scenario, read_profile_csv, write_profile_csv

EXIT_OK, EXIT_USAGE, EXIT_CONFIG_UNREADABLE, EXIT_SCHEMA, EXIT_RUNTIME = 0, 2, 3, 4, 5

log = logging.getLogger("gridsched")


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "variant", None):
        cfg = replace(cfg, agent=replace(cfg.agent, variant=args.variant))
    if getattr(args, "episodes", None) is not None:
        cfg = replace(cfg, agent=replace(cfg.agent, episodes=args.episodes))
    return cfg


def _snapshot(out: Path, cfg: RunConfig, verb: str, **extra):
    doc = {"verb": verb, **cfg.to_dict(), **extra}
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _progress(args):
    if args.quiet:
        return None

    def report(rec):
        if rec["episode"] % 100 == 0:
            log.info("episode %d reward %.1f cost %.1f eps %.3f", rec["episode"], rec["reward"],
                     rec["cost"], rec["epsilon"])
    return report


# ------------------------------------------------------------------ verbs

def cmd_generate_data(args, cfg: RunConfig):
    out = _out_dir(args)
    sc = generate_scenario(cfg.scenario)
    write_profile_csv(out / "load.csv", sc.profile.load)
    write_profile_csv(out / "pv.csv", sc.profile.pv)
    harness.write_csv(out / "tariff.csv", [{"hour": h, "buy": sc.tariff.buy(h), "sell": sc.tariff.sell(h)}
                                           for h in range(24)])
    harness.write_csv(out / "ev_arrivals.csv", [{"day": d, "arrival_soc": float(s)}
                                                for d, s in enumerate(sc.ev_arrival_soc)])
    _snapshot(out, cfg, "generate-data")
    log.info("wrote %d hours of data to %s", sc.profile.horizon, out)


def cmd_forecast_train(args, cfg: RunConfig):
    out = _out_dir(args)
    sc = generate_scenario(cfg.scenario)
    n_train = sc.config.n_train_days * 24
    if args.series:
        series = {"series": (read_profile_csv(args.series), False)}
    else:
        series = {"load": (sc.profile.load, False), "pv": (sc.profile.pv, True)}
    metrics = {}
    for name, (values, nonneg) in series.items():
        cut = min(n_train, int(len(values) * 0.8))
        fc = cfg.forecast.forecaster(nonnegative=nonneg).fit(values[:cut])
        fc.save(out / f"{name}_model.json")
        metrics[name] = fc.evaluate(values, start=cut).to_dict()
    (out / "forecast_metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    _snapshot(out, cfg, "forecast-train", series=args.series)
    for name, m in metrics.items():
        log.info("%s: MASE %.3f RMSE %.3f", name, m["mase"], m["rmse"])


def cmd_forecast_eval(args, cfg: RunConfig):
    if not args.model or not args.series:
        raise UsageError("forecast-eval needs --model and --series")
    out = _out_dir(args)
    fc = EdRvflForecaster.load(args.model)
    values = read_profile_csv(args.series)
    start = min(args.start, len(values) - 1)
    metrics = fc.evaluate(values, start=start).to_dict()
    (out / "forecast_metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    _snapshot(out, cfg, "forecast-eval", model=str(args.model), series=str(args.series))
    log.info("MASE %.3f RMSE %.3f R2 %.3f", metrics["mase"], metrics["rmse"], metrics["r_squared"])


def _net_forecast(cfg: RunConfig, sc):
    if cfg.env.forecast_mode == "deployment":
        return harness.net_forecast_matrix(sc, cfg.forecast)
    return None


def cmd_train(args, cfg: RunConfig):
    out = _out_dir(args)
    sc = generate_scenario(cfg.scenario)
    nf = _net_forecast(cfg, sc)
    ckpt = out / "checkpoint.npz"
    tr = harness.run_training(sc, cfg.agent, cfg.env, nf, checkpoint_on_error=ckpt,
                              progress=_progress(args))
    tr.agent.save(ckpt, {"run_config": cfg.to_dict()})
    ev = harness.evaluate_policy(tr.agent, sc, cfg.env, nf)
    ev.summary.timing["train_s"] = tr.wall_clock
    harness.export_results(out, ev.summary, ev.trace, tr.curve, ev.aging)
    harness.write_csv(out / "training_degradation.csv", harness.degradation_rows(tr.aging))
    _snapshot(out, cfg, "train")
    log.info("%s evaluation cost %.2f", cfg.agent.variant, ev.summary.cost)


def cmd_evaluate(args, cfg: RunConfig):
    if not args.checkpoint:
        raise UsageError("evaluate needs --checkpoint")
    out = _out_dir(args)
    agent = Agent.load(args.checkpoint)
    if args.config is None and "run_config" in agent.meta.get("extra", {}):
        cfg = RunConfig.from_dict(agent.meta["extra"]["run_config"])
    sc = generate_scenario(cfg.scenario)
    ev = harness.evaluate_policy(agent, sc, cfg.env, _net_forecast(cfg, sc))
    harness.export_results(out, ev.summary, ev.trace, aging=ev.aging)
    _snapshot(out, cfg, "evaluate", checkpoint=str(args.checkpoint))
    log.info("evaluation cost %.2f", ev.summary.cost)


def cmd_baseline(args, cfg: RunConfig):
    out = _out_dir(args)
    sc = generate_scenario(cfg.scenario)
    ev = harness.uncontrolled_baseline(sc, replace(cfg.env, forecast_mode="oracle"))
    harness.export_results(out, ev.summary, ev.trace, aging=ev.aging)
    _snapshot(out, cfg, "baseline")
    log.info("uncontrolled cost %.2f", ev.summary.cost)


def cmd_oracle(args, cfg: RunConfig):
    out = _out_dir(args)
    sc = generate_scenario(cfg.scenario)
    start = None
    if args.checkpoint:
        # start the oracle from the battery state the policy reached
        agent = Agent.load(args.checkpoint)
        start = harness.evaluate_policy(agent, sc, cfg.env, _net_forecast(cfg, sc)).window_start
    ev = harness.dp_oracle_run(sc, start, args.grid_step, cfg.env)
    harness.export_results(out, ev.summary, ev.trace, aging=ev.aging)
    _snapshot(out, cfg, "oracle", checkpoint=args.checkpoint, grid_step=args.grid_step)
    log.info("DP oracle cost %.2f (frozen coefficients)", ev.summary.cost)


def cmd_compare(args, cfg: RunConfig):
    if not args.runs or len(args.runs) < 2:
        raise UsageError("compare needs --runs with at least two run directories (first is the reference)")
    out = _out_dir(args)
    summaries = {}
    for run in args.runs:
        name = Path(run).name
        if name in summaries:
            name = str(run)
        summaries[name] = harness.load_summary(Path(run) / "summary.json")
    proposed = next(iter(summaries))
    rows = harness.compare(summaries, proposed)
    harness.write_csv(out / "comparison.csv", rows)
    (out / "comparison.json").write_text(json.dumps(rows, indent=2))
    _snapshot(out, cfg, "compare", runs=[str(r) for r in args.runs])
    for r in rows:
        log.info("%-20s cost %12.2f  %+8.2f%%", r["run"], r["cost"], r["pct_vs_proposed"])


def cmd_degradation_report(args, cfg: RunConfig):
    if not args.runs:
        raise UsageError("degradation-report needs --runs")
    out = _out_dir(args)
    report = {}
    for run in args.runs:
        rows = harness.read_csv(Path(run) / "degradation.csv")
        s = harness.load_summary(Path(run) / "summary.json")
        per_dev = {}
        for dev in ("ess", "ev"):
            mine = [r for r in rows if r["device"] == dev]
            per_dev[dev] = {
                "cycle_fade": float(sum(float(r["dq_cycle"]) for r in mine)),
                "calendar_fade": float(sum(float(r["dq_cal"]) for r in mine)),
                "final_soh": float(mine[-1]["soh"]) if mine else float("nan"),
                "window_soh": getattr(s, f"soh_window_{dev}"),
                "final_alpha": float(mine[-1]["alpha"]) if mine else float("nan"),
                "replacements": int(float(mine[-1]["replacements"])) if mine else 0,
                "csp_kw": getattr(s, f"csp_{dev}"),
                "csc": getattr(s, f"csc_{dev}"),
            }
        report[str(run)] = {"policy": s.policy, "c_build": s.c_build, "c_ev_user": s.c_ev_user,
                            "c_total": s.c_total, **per_dev}
    (out / "degradation_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    _snapshot(out, cfg, "degradation-report", runs=[str(r) for r in args.runs])
    for run, r in report.items():
        log.info("%s: SoH ess %.4f ev %.4f", run, r["ess"]["window_soh"], r["ev"]["window_soh"])


VERBS = {
    "generate-data": (cmd_generate_data, "write the synthetic load, PV, tariff and EV data"),
    "forecast-train": (cmd_forecast_train, "fit load/PV forecasters and save them as JSON"),
    "forecast-eval": (cmd_forecast_eval, "score a saved forecaster on a CSV series"),
    "train": (cmd_train, "train a scheduling agent and evaluate it"),
    "evaluate": (cmd_evaluate, "evaluate a saved agent checkpoint"),
    "baseline": (cmd_baseline, "run the uncontrolled baseline"),
    "oracle": (cmd_oracle, "run the perfect-foresight DP oracle"),
    "compare": (cmd_compare, "compare summary.json files of several runs"),
    "degradation-report": (cmd_degradation_report, "summarize battery aging of runs"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridsched", description="Building battery and EV scheduling.")
    sub = p.add_subparsers(dest="verb", metavar="VERB", required=True)
    for name, (_, help_text) in VERBS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", help="TOML configuration file")
        s.add_argument("--seed", type=int, help="seed for the agent and forecaster")
        s.add_argument("--out", default=f"runs/{name}", help="output directory")
        s.add_argument("--variant", choices=("dqn", "d2qn", "d3qn", "d3qnper"))
        s.add_argument("--episodes", type=int)
        s.add_argument("--quiet", action="store_true")
        s.add_argument("--checkpoint", help="agent checkpoint (.npz)")
        s.add_argument("--model", help="forecaster model (.json)")
        s.add_argument("--series", help="two-column CSV series (hour_index, kW)")
        s.add_argument("--start", type=int, default=0, help="first scored index for forecast-eval")
        s.add_argument("--grid-step", type=float, default=0.05, help="DP SoC grid step")
        s.add_argument("--runs", nargs="+", help="run directories")
    return p


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    if args.episodes is not None and args.episodes < 1:
        print("gridsched: error: --episodes must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _resolve_config(args)
    except ConfigNotFound as exc:
        print(f"gridsched: unreadable config: {exc}", file=sys.stderr)
        return EXIT_CONFIG_UNREADABLE
    except ConfigError as exc:
        print(f"gridsched: config schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    handler = VERBS[args.verb][0]
    try:
        handler(args, cfg)
    except UsageError as exc:
        print(f"gridsched {args.verb}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"gridsched {args.verb}: config schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (OSError, ValueError, ArithmeticError, RuntimeError, KeyError) as exc:
        print(f"gridsched {args.verb}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
