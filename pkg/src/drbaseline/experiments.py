"""Experiment runners: each returns its rows and writes CSV plus a manifest."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .caiso import compare_methods, make_horizon, simulate_caiso_horizon
from .consumer import (consumption_nonparticipant, inflation_bound_deadband,
                       optimal_report_closed_form, solve_optimal_report)
from .errors import ContractError
from .mechanism import Population, build_groups, simulate_events, sweep_probability
from .scenario import Scenario, needed_count, require

TABLE2_COLUMNS = ("d", "delta_f_theory", "delta_f_numeric", "delta_f_montecarlo", "abs_error",
                  "mc_stderr", "units")
FIG3_COLUMNS = ("d", "pi_rec", "p", "J_SO", "J_SO_no_recruit", "recruitment_term", "pi_star",
                "units")
FIG3_MIN_COLUMNS = ("d", "pi_rec", "minimizer_p", "J_SO_min", "interior", "units")
COMPARE_COLUMNS = ("method", "mean_inflation", "stderr", "lemma5_bound", "dominance_flag")
COMPARE_EVENT_COLUMNS = ("event_day", "f_c", "f_minus", "c_f", "f_bar_c", "q_minus", "q_event",
                         "q_a", "inflation")
EVENT_COLUMNS = ("event_index", "selected_group", "delta_q_tilde", "delta_q_true", "rewards",
                 "penalties", "units")


@dataclass
class RunOutput:
    experiment: str
    tables: dict[str, list[dict]] = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)


def fmt(value) -> str:
    """Fixed 12-significant-digit text so equal runs give equal bytes."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        out = format(float(value), ".12g")
        return "0" if out == "-0" else out
    return str(value)


def write_csv(path: Path, columns, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row[c]) for c in columns])
    return path


def _report(sc: Scenario, d: float, p: float | None = None) -> float:
    """Optimal report for one consumer: closed form when it applies, else the solver."""
    params, mech = sc.consumer(d), sc.mechanism(p)
    if sc.eps == 0:
        return optimal_report_closed_form(params, mech).f_star
    return solve_optimal_report(params, mech, sc.plan).f_star


# -- table2 --------------------------------------------------------------------

def table2_rows(sc: Scenario, workers: int = 1) -> list[dict]:
    require(sc, "table2")
    rows = []
    for d in sc.d_values:
        params, mech = sc.consumer(d), sc.mechanism()
        if sc.eps == 0:
            closed = optimal_report_closed_form(params, mech)
            theory, f_star = closed.delta_f, closed.f_star
        else:
            theory = inflation_bound_deadband(params, mech)
            f_star = None
        if sc.lam > 0:
            sol = solve_optimal_report(params, mech, sc.plan)
            numeric, f_star = sol.expected_inflation, sol.f_star
        else:
            numeric = theory
        if sc.p == 0:
            mc, se = 0.0, 0.0
        else:
            count = sc.count if sc.count is not None else needed_count(sc, d)
            pop = Population.homogeneous(params, count, f_star, sc.unit_label)
            plan = build_groups(pop, sc.p, sc.market.delta_q_star, sc.pi2)
            per_event = min(len(g) for g in plan.groups)
            n_events = math.ceil(sc.samples / per_event)
            batch = simulate_events(pop, plan, mech, sc.seed, n_events, workers=workers)
            mc, se, _ = batch.consumer_inflation()
        rows.append(dict(d=d, delta_f_theory=theory, delta_f_numeric=numeric,
                         delta_f_montecarlo=mc, abs_error=abs(mc - theory), mc_stderr=se,
                         units=sc.unit_label))
    return rows


def run_table2(sc: Scenario, out_dir=None, workers: int = 1) -> RunOutput:
    start = time.perf_counter()
    rows = table2_rows(sc, workers)
    return _finish(sc, "table2", out_dir, {"table2.csv": (TABLE2_COLUMNS, rows)}, start)


# -- fig3 ----------------------------------------------------------------------

def fig3_rows(sc: Scenario) -> tuple[list[dict], list[dict]]:
    require(sc, "fig3")
    market, dq = sc.market.curve, sc.market.delta_q_star
    pi_star = market.a * (market.q0 - dq) + market.b * (market.q0 - dq) ** 2
    rows, minima = [], []
    for d in sc.d_values:
        n_bar = dq / (d * sc.pi2)
        for pi_rec in sc.pi_rec:
            curve = sweep_probability(market, n_bar, d, sc.mechanism(sc.p_grid[0]), dq, pi_rec,
                                      sc.p_grid)
            for p, total, base, rec in curve.points:
                rows.append(dict(d=d, pi_rec=pi_rec, p=p, J_SO=total, J_SO_no_recruit=base,
                                 recruitment_term=rec, pi_star=pi_star, units=sc.unit_label))
            best = min(curve.points, key=lambda r: r[1])
            interior = curve.points[0][0] < best[0] < curve.points[-1][0]
            minima.append(dict(d=d, pi_rec=pi_rec, minimizer_p=best[0], J_SO_min=best[1],
                               interior=interior, units=sc.unit_label))
    return rows, minima


def run_fig3(sc: Scenario, out_dir=None, workers: int = 1) -> RunOutput:
    start = time.perf_counter()
    rows, minima = fig3_rows(sc)
    return _finish(sc, "fig3", out_dir, {"fig3.csv": (FIG3_COLUMNS, rows),
                                         "fig3_minimizers.csv": (FIG3_MIN_COLUMNS, minima)}, start)


# -- comparison ----------------------------------------------------------------

def comparison_rows(sc: Scenario) -> tuple[list[dict], list[dict]]:
    require(sc, "compare")
    h = sc.horizon
    params, mech = sc.consumer(sc.d_values[0]), sc.mechanism()
    plan = make_horizon(h.n_days, h.n_events, h.m, sc.theta, sc.seed, h.event_days,
                        h.inflate_numerator, h.deflate_denominator)
    rep = compare_methods(params, mech, plan, sc.plan)
    rows = [
        dict(method="self-report", mean_inflation=rep.selfreport_inflation, stderr=0.0,
             lemma5_bound=rep.lemma5_bound, dominance_flag=rep.dominance),
        dict(method="caiso-mm-adjusted", mean_inflation=rep.caiso_inflation,
             stderr=rep.caiso_stderr, lemma5_bound=rep.lemma5_bound,
             dominance_flag=rep.dominance),
    ]
    horizon = simulate_caiso_horizon(params, mech.pi0, mech.pi2, plan)
    events = [dict(event_day=e.event_day, f_c=e.baseline.f_c, f_minus=e.baseline.f_minus,
                   c_f=e.baseline.c_f, f_bar_c=e.baseline.f_bar_c, q_minus=e.q_minus,
                   q_event=e.q_event, q_a=e.q_a, inflation=e.inflation)
              for e in horizon.events]
    return rows, events


def run_comparison(sc: Scenario, out_dir=None, workers: int = 1) -> RunOutput:
    start = time.perf_counter()
    rows, events = comparison_rows(sc)
    return _finish(sc, "compare", out_dir, {"compare.csv": (COMPARE_COLUMNS, rows),
                                            "compare_events.csv": (COMPARE_EVENT_COLUMNS, events)},
                   start)


# -- event ---------------------------------------------------------------------

def event_population(sc: Scenario) -> Population:
    """``count`` consumers cycling through the ``d`` list, reporting per ``consumer.report``."""
    count = sc.count if sc.count is not None else max(needed_count(sc, d) for d in sc.d_values)
    d_cycle = [sc.d_values[i % len(sc.d_values)] for i in range(count)]
    reports = {}
    for d in sc.d_values:
        if sc.report == "truthful":
            reports[d] = consumption_nonparticipant(sc.consumer(d), sc.pi0, sc.theta.mean)
        else:
            reports[d] = _report(sc, d)
    return Population(tuple(sc.consumer(d) for d in d_cycle), tuple(reports[d] for d in d_cycle),
                      sc.unit_label)


def event_rows(sc: Scenario, event_count: int | None = None, workers: int = 1) -> list[dict]:
    require(sc, "event")
    n = sc.events if event_count is None else event_count
    if n < 0:
        raise ContractError("event count must be non-negative")
    pop = event_population(sc)
    plan = build_groups(pop, sc.p, sc.market.delta_q_star, sc.pi2)
    batch = simulate_events(pop, plan, sc.mechanism(), sc.seed, n, workers=workers)
    return [dict(event_index=int(batch.event_index[k]), selected_group=int(batch.selected[k]),
                 delta_q_tilde=batch.delta_q_tilde[k], delta_q_true=batch.delta_q_true[k],
                 rewards=batch.rewards[k], penalties=batch.penalties[k], units=sc.unit_label)
            for k in range(len(batch))]


def run_event(sc: Scenario, event_count: int | None = None, out_dir=None,
              workers: int = 1) -> RunOutput:
    start = time.perf_counter()
    rows = event_rows(sc, event_count, workers)
    return _finish(sc, "event", out_dir, {"event.csv": (EVENT_COLUMNS, rows)}, start)


# -- output --------------------------------------------------------------------

def _finish(sc: Scenario, experiment: str, out_dir, tables: dict, start: float) -> RunOutput:
    out = RunOutput(experiment, {name: rows for name, (_, rows) in tables.items()})
    if out_dir is not None:
        out_dir = Path(out_dir)
        for name, (columns, rows) in tables.items():
            out.files.append(write_csv(out_dir / name, columns, rows))
        write_manifest(sc, experiment, out_dir, out.files, time.perf_counter() - start)
    return out


def write_manifest(sc: Scenario, experiment: str, out_dir: Path, files, wall_clock: float) -> Path:
    path = Path(out_dir) / f"manifest_{experiment}.json"
    data = {
        "experiment": experiment,
        "scenario": sc.name,
        "scenario_hash": sc.scenario_hash(),
        "seed": sc.seed,
        "version": __version__,
        "outputs": [Path(f).name for f in files],
        "wall_clock_s": wall_clock,
        "effective_p": sc.p,
        "warnings": list(sc.warnings),
        "resolved": sc.resolved(),
    }
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


RUNNERS = {"table2": run_table2, "fig3": run_fig3, "compare": run_comparison, "event": run_event}
