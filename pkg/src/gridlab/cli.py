"""Command-line entry point: `gridlab <subcommand> [flags]`."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .baselines import das
from .baselines.evaluate import RandomSafeAgent, compare_table, evaluate, write_csv
from .env.env import GridSimEnv
from .env.profiles import load_series, make_profiles, save_series
from .grid.case import CaseError, load_case
from .grid.powerflow import solve_power_flow
from .model import checkpoint
from .model.network import ModelConfig
from .training.selfplay import GridZeroAgent
from .training.trainer import Trainer, config_digest

log = logging.getLogger("gridlab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    p = _Parser(prog="gridlab", description="Real-time grid scheduling with learned-model tree search.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--case", help="grid case JSON (bundled: six_bus, nine_bus)")
        sp.add_argument("--series", help="time-series CSV (default: synthesized profiles)")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", help="output directory (GRIDLAB_OUT overrides)")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("powerflow", help="solve one power flow and print the solution")
    common(sp, out=False)
    sp.add_argument("--json", action="store_true", help="print JSON instead of a table")

    sp = sub.add_parser("make-profiles", help="write synthetic load/renewable profiles as CSV")
    common(sp)
    sp.add_argument("--days", type=int, default=1)

    sp = sub.add_parser("train", help="train a model by self-play")
    common(sp)
    sp.add_argument("--steps", type=int, help="learner steps")
    sp.add_argument("--workers", type=int, help="self-play worker processes")

    sp = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--workers", type=int)

    sp = sub.add_parser("baseline", help="evaluate the day-ahead scheduling or random baseline")
    common(sp)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--agent", choices=("das", "random"), default="das")
    sp.add_argument("--renewable-error", type=float, help="day-ahead renewable forecast error std")

    sp = sub.add_parser("compare", help="joint report of checkpoint, DAS and random agents")
    common(sp)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--checkpoint")

    sp = sub.add_parser("selfcheck", help="run the invariant suite")
    common(sp, out=False)
    sp.add_argument("--quick", action="store_true", help="shorter safety fuzz")
    return p


# --------------------------------------------------------------- helpers
def _load_run_config(args):
    cfg = cfgmod.load_config(args.config) if getattr(args, "config", None) else cfgmod.RunConfig()
    return cfgmod.override(
        cfg, seed=args.seed, steps=getattr(args, "steps", None), workers=getattr(args, "workers", None),
        case=args.case, series=args.series, out=getattr(args, "out", None),
    )


def _out_dir(cfg):
    return Path(os.environ.get("GRIDLAB_OUT") or cfg.paths.out)


def _series(cfg, case, evaluation=False):
    if cfg.paths.series:
        return load_series(cfg.paths.series)
    p = cfg.profiles
    if evaluation:
        return make_profiles(case, seed=p.eval_seed, days=p.eval_days)
    return make_profiles(case, seed=p.seed, days=p.days)


def _eval_plan(cfg, env):
    day = env.config.steps_per_day
    days = max(1, min(cfg.evaluation.days, (len(env.series) - env.config.episode_len - 1) // day + 1))
    seeds = list(range(cfg.seed, cfg.seed + cfg.evaluation.seeds))
    return seeds, [day * d for d in range(days)]


def _write_report(report, out, digest):
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / f"{report.agent}_episodes.csv")
    report.to_json(out / f"{report.agent}_report.json")
    agg = report.aggregate()
    print(f"{report.agent}: reward {agg['cumulative_reward']['mean']:.2f} ± {agg['cumulative_reward']['std']:.2f}, "
          f"renewable consumption {agg['renewable_consumption_pct']['mean']:.1f}%, "
          f"balance violations {agg['balance_violation_pct']['mean']:.2f}%  [{digest}]")


def _echo_config(cfg, out):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True, default=str))


# ------------------------------------------------------------ subcommands
def cmd_powerflow(args, cfg):
    case = load_case(cfg.paths.case)
    gen_p = np.where([g.kind == "thermal" for g in case.generators],
                     0.5 * (case.gen_array("p_min") + case.gen_array("p_max")),
                     0.4 * case.gen_array("p_max"))
    load_p, load_q = case.load_array("base_p"), case.load_array("base_q")
    sol = solve_power_flow(case, gen_p, case.gen_array("v_set"), load_p, load_q,
                           tol=cfg.env.pf_tol, max_iter=cfg.env.pf_max_iter)
    if args.json:
        doc = {"converged": sol.converged, "iterations": sol.iterations, "v_mag": sol.v_mag.tolist(),
               "v_ang": sol.v_ang.tolist(), "gen_p": sol.gen_p.tolist(), "gen_q": sol.gen_q.tolist(),
               "rho": sol.rho.tolist(), "slack_p": sol.slack_p, "grid_loss": sol.grid_loss}
        print(json.dumps(doc, indent=2))
    else:
        print(f"case {case.name}: converged={sol.converged} in {sol.iterations} iterations "
              f"(max mismatch {sol.max_mismatch:.2e} p.u.)")
        print(f"{'bus':>4} {'V [pu]':>9} {'angle [rad]':>12}")
        for b, bus in enumerate(case.buses):
            print(f"{bus.id:>4} {sol.v_mag[b]:9.5f} {sol.v_ang[b]:12.6f}")
        print(f"{'gen':>4} {'P [MW]':>9} {'Q [MVAr]':>9}")
        for g, gen in enumerate(case.generators):
            print(f"{g:>4} {sol.gen_p[g]:9.3f} {sol.gen_q[g]:9.3f}  {gen.name or gen.kind}")
        print(f"slack P {sol.slack_p:.4f} MW, losses {sol.grid_loss:.4f} MW, max rho {sol.rho.max():.3f}")
    return 0 if sol.converged else 1


def cmd_make_profiles(args, cfg):
    case = load_case(cfg.paths.case)
    series = make_profiles(case, seed=cfg.seed, days=args.days)
    out = _out_dir(cfg)
    path = out if out.suffix == ".csv" else out / f"{case.name}_seed{cfg.seed}_{args.days}d.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_series(series, path)
    print(f"wrote {len(series)} steps to {path}")
    return 0


def cmd_train(args, cfg):
    case = load_case(cfg.paths.case)
    series = _series(cfg, case)
    env = GridSimEnv(case, series, cfg.env)
    obs_dim = len(env.reset(0, 0))
    mcfg = ModelConfig(obs_dim=obs_dim, n_units=env.n_actions, seed=cfg.seed, **dataclasses.asdict(cfg.model))
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    days = max(1, (len(series) - env.config.episode_len - 1) // env.config.steps_per_day + 1)
    trainer = Trainer(env, cfg.training, cfg.planner, mcfg, cfg.loss, out, cfg.to_dict(), profile_days=days)
    res = trainer.run()
    print(f"trained {res.model.step} steps over {res.env_steps} environment steps "
          f"({res.episodes} episodes); model at {out / 'model.gzck'}")
    return 0


def cmd_eval(args, cfg):
    case = load_case(cfg.paths.case)
    model, _ = checkpoint.load_checkpoint(args.checkpoint)
    env = GridSimEnv(case, _series(cfg, case, evaluation=True), cfg.env)
    seeds, starts = _eval_plan(cfg, env)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    agent = GridZeroAgent(model, cfg.planner, cfg.seed)
    report = evaluate(agent, env, seeds, starts, out / "traces", cfg.training.workers)
    _write_report(report, out, config_digest(cfg.to_dict()))
    return 0


def _baseline_agent(name, cfg, case, series):
    if name == "random":
        return RandomSafeAgent(cfg.seed)
    return das.DASAgent(case, series, cfg.baseline, forecast_seed=cfg.seed)


def cmd_baseline(args, cfg):
    if args.renewable_error is not None:
        cfg.baseline.renewable_error = args.renewable_error
    case = load_case(cfg.paths.case)
    series = _series(cfg, case, evaluation=True)
    env = GridSimEnv(case, series, cfg.env)
    seeds, starts = _eval_plan(cfg, env)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    agent = _baseline_agent(args.agent, cfg, case, series)
    report = evaluate(agent, env, seeds, starts, out / "traces", cfg.training.workers)
    _write_report(report, out, config_digest(cfg.to_dict()))
    return 0


def cmd_compare(args, cfg):
    case = load_case(cfg.paths.case)
    series = _series(cfg, case, evaluation=True)
    env = GridSimEnv(case, series, cfg.env)
    seeds, starts = _eval_plan(cfg, env)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    digest = config_digest(cfg.to_dict())
    agents = []
    if args.checkpoint:
        model, _ = checkpoint.load_checkpoint(args.checkpoint)
        agents.append(GridZeroAgent(model, cfg.planner, cfg.seed))
    das_agent = das.DASAgent(case, series, cfg.baseline, forecast_seed=cfg.seed)
    agents += [das_agent, RandomSafeAgent(cfg.seed)]
    reports = []
    for agent in agents:
        rep = evaluate(agent, env, seeds, starts, out / "traces", cfg.training.workers)
        _write_report(rep, out, digest)
        reports.append(rep)
    rows = compare_table(reports)
    write_csv(rows, ["metric"] + [r.agent for r in reports], out / "compare.csv")
    # adjust-capacity curves for the first evaluation day
    env.reset(starts[0], seeds[0])
    das_agent.reset(env, seeds[0])
    curves = das.adjust_capacity_curves(case, das_agent.schedule, series, starts[0], cfg.env.balance_redundancy)
    names = list(curves)
    write_csv([{k: curves[k][t].item() for k in names} for t in range(len(curves["step"]))], names,
              out / "das_capacity_curves.csv")
    print(f"wrote {out / 'compare.csv'}")
    return 0


def cmd_selfcheck(args, cfg):
    from .selfcheck import run_all

    failed = 0
    for r in run_all(quick=args.quick):
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.detail}")
        failed += not r.ok
    return 1 if failed else 0


COMMANDS = {
    "powerflow": cmd_powerflow,
    "make-profiles": cmd_make_profiles,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "compare": cmd_compare,
    "selfcheck": cmd_selfcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = _load_run_config(args)
        return COMMANDS[args.command](args, cfg)
    except (cfgmod.ConfigError, CaseError, ValueError) as exc:
        print(f"gridlab: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"gridlab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
