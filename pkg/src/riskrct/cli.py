"""Command-line front end: simulate -> train -> trial -> analyze -> report.

Stages talk to each other only through files in the output directory.
Every artifact starts with ``# key=value`` header lines carrying the config
hash and seeds, and each stage refuses inputs written under another config.
Outputs are written to temporary names and renamed once the stage succeeds.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import analysis, selftest
from .config import ConfigError, RunConfig, load_config
from .domain import EventLog, Gender, Population, read_event_log, read_header, write_event_log
from .pipeline import TrialLedger
from .riskmodel import evaluate_risk_model, load_model, save_model, train_risk_model
from .simulator import generate_population, step_day
from .study import DailyScores, run_trial

log = logging.getLogger("riskrct")

EXIT_OK, EXIT_FAIL, EXIT_MISSING, EXIT_CONFIG, EXIT_MISMATCH = 0, 1, 2, 3, 4

FILES = {
    "population": "population.csv",
    "warmup_events": "events_warmup.csv",
    "model": "model.json",
    "train_summary": "train_summary.tsv",
    "ledger": "ledger.csv",
    "events": "events.csv",
    "final_population": "population_final.csv",
    "daily_scores": "daily_scores.tsv",
    "effects": "effects.tsv",
    "night": "night_usage.tsv",
    "balance": "balance.tsv",
    "calibration": "calibration.tsv",
    "report": "report.txt",
}


class StageError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --- file helpers --------------------------------------------------------------

@contextmanager
def staged_outputs(out_dir: Path):
    """Yield a function mapping a final path to a temporary one; rename all on success."""
    out_dir.mkdir(parents=True, exist_ok=True)
    pending: list[tuple[Path, Path]] = []

    def tmp(name: str) -> Path:
        final = out_dir / name
        t = out_dir / f".{name}.tmp-{os.getpid()}"
        pending.append((t, final))
        return t

    try:
        yield tmp
    except BaseException:
        for t, _ in pending:
            t.unlink(missing_ok=True)
        raise
    for t, final in pending:
        os.replace(t, final)


def _need(path: Path) -> Path:
    if not path.exists():
        raise StageError(EXIT_MISSING, f"missing input file: {path}")
    return path


def _check_header(path: Path, header: dict, cfg: RunConfig) -> None:
    want = cfg.config_hash()
    got = header.get("config_hash")
    if got != want:
        raise StageError(EXIT_MISMATCH,
                         f"{path} was written with config_hash={got}, current config has {want}; "
                         "rerun the earlier stages with this config")


def _header_lines(header: dict) -> str:
    return "".join(f"# {k}={v}\n" for k, v in header.items())


def write_tsv(path: Path, header: dict, columns: list[str], rows) -> None:
    lines = [_header_lines(header) + "\t".join(columns)]
    lines += ["\t".join(analysis.fmt_value(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_scores(path: Path, header: dict, scores) -> None:
    """Daily sparse risk scores: one line per (day, kind, player) plus a day summary."""
    out = [_header_lines(header) + "day\tkind\tplayer_id\tvalue"]
    for s in scores:
        out.append(f"{s.day}\tedges\t-1\t{s.n_edges}")
        out.append(f"{s.day}\tabove_threshold\t-1\t{s.above_threshold}")
        for q, v in zip((50, 95, 99, 99.9), s.prob_quantiles):
            out.append(f"{s.day}\tq{q}\t-1\t{v!r}")
        out += [f"{s.day}\tviolator\t{i}\t{v!r}" for i, v in zip(s.violator_ids.tolist(), s.violator_scores.tolist())]
        out += [f"{s.day}\tvictim\t{i}\t{v!r}" for i, v in zip(s.victim_ids.tolist(), s.victim_scores.tolist())]
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


def read_scores(path: Path) -> list[DailyScores]:
    import pandas as pd

    frame = pd.read_csv(path, sep="\t", comment="#", float_precision="round_trip")
    out = []
    for day, g in frame.groupby("day", sort=True):
        val = dict(zip(g["kind"], g["value"]))
        v = g[g["kind"] == "violator"]
        w = g[g["kind"] == "victim"]
        out.append(DailyScores(
            int(day), v["player_id"].to_numpy(np.int64), v["value"].to_numpy(np.float64),
            w["player_id"].to_numpy(np.int64), w["value"].to_numpy(np.float64),
            int(val["edges"]), np.array([val[f"q{q}"] for q in ("50", "95", "99", "99.9")]),
            int(val["above_threshold"])))
    return out


# --- stages ---------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path) -> None:
    """Free-running warm-up up to the trial start day."""
    state = generate_population(cfg.simulation)
    for _ in range(cfg.trial.start_day):
        step_day(state)
    header = cfg.header(stage="simulate", days=cfg.trial.start_day)
    with staged_outputs(out) as tmp:
        state.population.write_csv(tmp(FILES["population"]), header)
        write_event_log(tmp(FILES["warmup_events"]), state.event_log(), header)
    log.info("simulated %d players for %d days (%d events)", len(state.population),
             cfg.trial.start_day, len(state.event_log()))


def _load_warmup(cfg: RunConfig, out: Path):
    pp = _need(out / FILES["population"])
    ep = _need(out / FILES["warmup_events"])
    pop, h1 = Population.read_csv(pp)
    _check_header(pp, h1, cfg)
    events, h2 = read_event_log(ep)
    _check_header(ep, h2, cfg)
    return pop, events


def cmd_train(cfg: RunConfig, out: Path) -> None:
    """Train the risk model on the warm-up event log."""
    pop, events = _load_warmup(cfg, out)
    ts = cfg.train_settings()
    t = time.perf_counter()
    model = train_risk_model(pop, events, ts)
    ev = evaluate_risk_model(model, pop, events, ts.eval_day)
    log.info("trained in %.1fs; held-out edge AUC %.4f (best weak %.4f), player AUC %.4f",
             time.perf_counter() - t, ev["edge_auc"], ev["best_weak_auc"], ev["player_auc"])
    header = cfg.header(stage="train")
    with staged_outputs(out) as tmp:
        save_model(model, tmp(FILES["model"]), header)
        write_tsv(tmp(FILES["train_summary"]), header, ["metric", "value"], sorted(ev.items()))


def _resume_world(cfg: RunConfig, pop: Population, events: EventLog):
    """Rebuild the simulator state from the warm-up files."""
    state = generate_population(cfg.simulation)
    fresh = state.population
    for name in ("gender", "age", "install_day", "predator_propensity",
                 "victim_susceptibility", "responsiveness"):
        if not np.array_equal(getattr(fresh, name), getattr(pop, name)):
            raise StageError(EXIT_MISMATCH, f"population file does not match the config ({name})")
    state.population = pop
    days = cfg.trial.start_day
    if events.last_day != days - 1:
        raise StageError(EXIT_MISMATCH, f"warm-up log ends on day {events.last_day}, expected {days - 1}")
    for d in range(days):
        state.logs.append(events.window(d, d))
    state.day = days
    return state


def cmd_trial(cfg: RunConfig, out: Path) -> None:
    """Run the randomized messaging trial and its follow-up."""
    pop, events = _load_warmup(cfg, out)
    mp = _need(out / FILES["model"])
    _check_header(mp, read_header(mp), cfg)
    model = load_model(mp)
    state = _resume_world(cfg, pop, events)
    settings = cfg.trial_settings()
    t = time.perf_counter()
    result = run_trial(state, model, settings)
    log.info("trial ran in %.1fs: %d listings, %d messages", time.perf_counter() - t,
             len(result.ledger), int(np.sum(result.ledger.dispatched)))
    header = cfg.header(stage="trial")
    with staged_outputs(out) as tmp:
        result.ledger.write(tmp(FILES["ledger"]), header)
        write_event_log(tmp(FILES["events"]), result.events, header)
        result.population.write_csv(tmp(FILES["final_population"]), header)
        write_scores(tmp(FILES["daily_scores"]), header, result.scores)


def _load_trial(cfg: RunConfig, out: Path):
    lp = _need(out / FILES["ledger"])
    ep = _need(out / FILES["events"])
    pp = _need(out / FILES["final_population"])
    ledger, h = TrialLedger.read(lp)
    _check_header(lp, h, cfg)
    events, h = read_event_log(ep)
    _check_header(ep, h, cfg)
    pop, h = Population.read_csv(pp)
    _check_header(pp, h, cfg)
    return ledger, events, pop


NIGHT_COLUMNS = ["gender", "arm", "n", "mean", "q2.5", "q25", "q50", "q75", "q97.5", "rank_sum", "p_value"]
BALANCE_COLUMNS = ["gender", "cumulative_i", "cumulative_c", "unique_i", "unique_c", "age_mean_i",
                   "age_sd_i", "age_mean_c", "age_sd_c", "age_p", "usage_mean_i", "usage_sd_i",
                   "usage_mean_c", "usage_sd_c", "usage_p", "once_i", "once_c", "once_p",
                   "five_i", "five_c", "five_p"]


def cmd_analyze(cfg: RunConfig, out: Path) -> None:
    """Estimate windowed effects, night usage, balance and calibration."""
    ledger, events, pop = _load_trial(cfg, out)
    windows = cfg.windows()
    rows = analysis.full_effect_report(ledger, events, pop, windows)
    night = [analysis.night_usage_metric(events, ledger, pop, g) for g in Gender]
    balance = [analysis.covariate_balance(ledger, events, pop, g) for g in Gender]
    calib = analysis.ledger_calibration(ledger, events)
    header = cfg.header(stage="analyze", windows=cfg.analysis.windows, metric=cfg.analysis.metric)
    night_rows = []
    for nu in night:
        for arm in (0, 1):
            v = nu.values_i if arm == 0 else nu.values_c
            night_rows.append([nu.gender, ["intervention", "control"][arm], len(v),
                               float(v.mean()) if len(v) else float("nan"),
                               *map(float, nu.quantiles(arm)), float(nu.statistic), float(nu.p_value)])
    bal_rows = [[b.gender, b.cumulative_i, b.cumulative_c, b.unique_i, b.unique_c, *b.age_i, *b.age_c,
                 b.age_p, *b.usage_i, *b.usage_c, b.usage_p, b.once_i, b.once_c, b.once_p,
                 b.five_i, b.five_c, b.five_p] for b in balance]
    cal_rows = []
    for outcome, c in calib.items():
        for i, (rate, count) in enumerate(zip(c.bin_rates, c.bin_counts)):
            cal_rows.append([outcome, i, float(c.bin_edges[i]), float(c.bin_edges[i + 1]), int(count),
                             float(rate), c.spearman])
    with staged_outputs(out) as tmp:
        p = tmp(FILES["effects"])
        p.write_text(_header_lines(header) + analysis.effects_to_tsv(rows), encoding="utf-8")
        write_tsv(tmp(FILES["night"]), header, NIGHT_COLUMNS, night_rows)
        write_tsv(tmp(FILES["balance"]), header, BALANCE_COLUMNS, bal_rows)
        write_tsv(tmp(FILES["calibration"]), header,
                  ["outcome", "bin", "score_lo", "score_hi", "n", "outcome_rate", "spearman"], cal_rows)
    log.info("analyzed %d effect cells", len(rows))


def _read_tsv(path: Path):
    import pandas as pd

    return pd.read_csv(path, sep="\t", comment="#", keep_default_na=False, na_values=["NA"])


def cmd_report(cfg: RunConfig, out: Path) -> None:
    """Render the analysis tables as plain text."""
    paths = {k: _need(out / FILES[k]) for k in ("effects", "night", "balance")}
    headers = {k: read_header(p) for k, p in paths.items()}
    for k, p in paths.items():
        _check_header(p, headers[k], cfg)
    rows = analysis.effects_from_tsv(paths["effects"].read_text(encoding="utf-8"))
    nf = _read_tsv(paths["night"])
    qcols = ["q2.5", "q25", "q50", "q75", "q97.5"]
    night = []
    for gender in ("Women", "Men"):
        g = nf[nf["gender"] == gender]
        if len(g) == 2:
            night.append(analysis.NightSummary(gender, g.iloc[0][qcols].to_numpy(float),
                                               g.iloc[1][qcols].to_numpy(float),
                                               float(g["p_value"].iloc[0])))
    bf = _read_tsv(paths["balance"])
    balance = []
    for _, r in bf.iterrows():
        balance.append(analysis.BalanceRow(
            r["gender"], int(r["cumulative_i"]), int(r["cumulative_c"]), int(r["unique_i"]),
            int(r["unique_c"]), (r["age_mean_i"], r["age_sd_i"]), (r["age_mean_c"], r["age_sd_c"]),
            r["age_p"], (r["usage_mean_i"], r["usage_sd_i"]), (r["usage_mean_c"], r["usage_sd_c"]),
            r["usage_p"], r["once_i"], r["once_c"], r["once_p"], r["five_i"], r["five_c"], r["five_p"]))
    header = cfg.header(stage="report", windows=headers["effects"].get("windows", ""))
    text = analysis.render_report(rows, night, balance, cfg.analysis.metric, header)
    with staged_outputs(out) as tmp:
        tmp(FILES["report"]).write_text(text, encoding="utf-8")
    print(text)


def cmd_selftest(cfg: RunConfig, out: Path) -> None:
    """Run the bundled oracle checks."""
    if not selftest.run():
        raise StageError(EXIT_FAIL, "selftest failed")


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "trial": cmd_trial,
    "analyze": cmd_analyze,
    "report": cmd_report,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskrct", description="Risk-model, intervention-trial and analysis pipeline on a simulated platform.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (unset fields use the defaults)")
    common.add_argument("--seed", type=int, help="simulation and trial seed")
    common.add_argument("--out", help="output directory (default: [output] directory)")
    common.add_argument("--threshold", type=float, help="edge probability gate for risk scores")
    common.add_argument("--top-k", type=int, help="players listed per risk kind and arm each day")
    common.add_argument("--cooldown-days", type=int, help="days a listed player stays ineligible")
    common.add_argument("--population", type=int, help="number of simulated players")
    common.add_argument("--days", type=int, help="trial duration in days")
    common.add_argument("--windows", help="analysis windows, e.g. 1-14,15-28,29-56")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip().splitlines()[0])
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {
        "simulation.seed": args.seed, "trial.trial_seed": args.seed,
        "pipeline.threshold": args.threshold, "pipeline.top_k": args.top_k,
        "pipeline.cooldown_days": args.cooldown_days, "simulation.population": args.population,
        "trial.duration_days": args.days, "analysis.windows": args.windows,
        "output.directory": args.out,
    }
    if args.days is not None:
        need = cfg.trial.start_day + args.days + cfg.trial.follow_up_days
        over["simulation.horizon_days"] = max(cfg.simulation.horizon_days, need)
    return cfg.with_overrides(**over)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.config and not Path(args.config).exists():
            raise StageError(EXIT_MISSING, f"missing config file: {args.config}")
        cfg = resolve_config(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, Path(cfg.output.directory))
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
