"""CAISO m/m averaging baseline with a day-ahead adjustment factor.

The consumer is told of an event one day ahead and knows the averaging rule,
so it can raise its day-ahead consumption ``q⁻`` to inflate the adjustment
factor ``C_f = q⁻ / f⁻``. History days can also be tilted: a day that only
enters the numerator average ``f^c`` of an upcoming event is worth consuming
more on, a day that only enters the denominator average ``f⁻`` is worth
consuming less on.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng
from .consumer import consumption_nonparticipant, optimal_report_closed_form, solve_optimal_report
from .errors import ContractError, DomainError
from .model import ConsumerParams, MechanismParams, ThetaDist, ThetaSamplePlan, inverse_marginal_utility


@dataclass(frozen=True)
class HorizonPlan:
    """Days ``0 .. n_days-1``; ``thetas[τ]`` is the shock realised on day τ.

    ``inflate_numerator`` / ``deflate_denominator`` switch on the history-day
    incentives. Every non-event day counts as "similar".
    """

    n_days: int
    event_days: tuple[int, ...]
    m: int
    thetas: tuple[float, ...]
    inflate_numerator: bool = True
    deflate_denominator: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise DomainError("averaging window m must be at least 1")
        if len(self.thetas) != self.n_days:
            raise DomainError(f"need one theta per day ({self.n_days}), got {len(self.thetas)}")
        days = self.event_days
        if list(days) != sorted(set(days)):
            raise DomainError("event days must be strictly increasing")
        if days and (days[0] < 0 or days[-1] >= self.n_days):
            raise DomainError("event day outside the horizon")
        if any(b - a < 2 for a, b in zip(days, days[1:])):
            raise DomainError("events must be separated by at least one non-event day")
        self.windows()

    def windows(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """``(T_N, T_E)`` for every event.

        ``T_N`` holds the ``m`` most recent non-event days before the day-ahead
        day, ``T_E`` the day before each of them.
        """
        events = set(self.event_days)
        out = []
        for e in self.event_days:
            recent = list(itertools.islice((t for t in range(e - 2, -1, -1) if t not in events),
                                           self.m))
            if len(recent) < self.m or min(recent) < 1:
                raise DomainError(f"event on day {e} lacks {self.m} non-event history days "
                                  "with a preceding day")
            t_n = tuple(sorted(recent))
            out.append((t_n, tuple(t - 1 for t in t_n)))
        return out


@dataclass(frozen=True)
class CaisoBaseline:
    f_c: float
    f_minus: float
    c_f: float
    f_bar_c: float


@dataclass(frozen=True)
class CaisoEvent:
    event_day: int
    baseline: CaisoBaseline
    q_minus: float
    q_event: float
    q_a: float

    @property
    def inflation(self) -> float:
        return self.baseline.f_bar_c - self.q_a


@dataclass(frozen=True)
class HorizonResult:
    events: tuple[CaisoEvent, ...]
    consumption: np.ndarray
    mean_inflation: float
    stderr: float
    lower95: float


@dataclass(frozen=True)
class ComparisonReport:
    caiso_inflation: float
    caiso_stderr: float
    caiso_lower95: float
    selfreport_inflation: float
    lemma5_bound: float
    dominance: bool


def caiso_unadjusted_baseline(consumptions, m: int | None = None) -> float:
    """Mean consumption over the averaging window."""
    values = np.asarray(consumptions, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise DomainError("need a non-empty 1-D sequence of consumptions")
    if m is not None and values.size != m:
        raise DomainError(f"expected exactly m={m} values, got {values.size}")
    return float(values.mean())


def adjustment_factor(q_minus: float, f_minus: float) -> float:
    if not f_minus > 0:
        raise DomainError("f_minus must be positive")
    return q_minus / f_minus


def adjusted_baseline(history, prior_history, q_minus: float) -> CaisoBaseline:
    f_c = caiso_unadjusted_baseline(history)
    f_minus = caiso_unadjusted_baseline(prior_history, len(history))
    c_f = adjustment_factor(q_minus, f_minus)
    return CaisoBaseline(f_c, f_minus, c_f, f_c * c_f)


def strategic_dayahead_consumption(params: ConsumerParams, pi0, pi2, f_c, f_minus, theta=0.0):
    """Day-ahead consumption when each unit also raises tomorrow's baseline by ``f^c/f⁻``."""
    if not np.all(np.asarray(f_minus) > 0):
        raise DomainError("f_minus must be positive")
    return inverse_marginal_utility(params, pi0 - pi2 * np.asarray(f_c) / np.asarray(f_minus), theta)


def history_weights(plan: HorizonPlan) -> np.ndarray:
    """Marginal effect of each day's consumption on future adjusted baselines.

    A day in ``T_N`` of an event moves that event's ``f̄^c`` by ``C_f/m`` per
    unit and a day in ``T_E`` by ``-C_f (f^c/f⁻)/m``. Both are taken at their
    no-manipulation value ``C_f = f^c/f⁻ = 1``, giving ``±1/m``; a day in both
    windows of the same event nets to zero.
    """
    w = np.zeros(plan.n_days)
    for t_n, t_e in plan.windows():
        if plan.inflate_numerator:
            w[list(t_n)] += 1.0 / plan.m
        if plan.deflate_denominator:
            w[list(t_e)] -= 1.0 / plan.m
    return w


def simulate_caiso_horizon(params: ConsumerParams, pi0: float, pi2: float,
                           plan: HorizonPlan) -> HorizonResult:
    """Day-by-day simulation of a strategic consumer under the m/m rule.

    Day τ's consumption is ``μ⁻¹(π0 - π2 w_τ + π2·[event] - π2 f^c/f⁻·[day-ahead], θ_τ)``,
    where ``w_τ`` are the history weights. Returns per-event adjusted baselines
    against the realised true baseline ``q^a(θ_e)``.
    """
    thetas = np.asarray(plan.thetas, dtype=float)
    weights = history_weights(plan)
    windows = dict(zip(plan.event_days, plan.windows()))
    day_ahead = {e - 1: e for e in plan.event_days}
    q = np.empty(plan.n_days)
    events = []
    pending = {}
    for day in range(plan.n_days):
        price = pi0 - pi2 * weights[day]
        if day in windows:
            price += pi2
        if day in day_ahead:
            t_n, t_e = windows[day_ahead[day]]
            f_c = caiso_unadjusted_baseline(q[list(t_n)])
            f_minus = caiso_unadjusted_baseline(q[list(t_e)])
            price -= pi2 * f_c / f_minus
            pending[day_ahead[day]] = (t_n, t_e)
        q[day] = inverse_marginal_utility(params, price, thetas[day])
        if day in windows:
            t_n, t_e = pending.pop(day)
            base = adjusted_baseline(q[list(t_n)], q[list(t_e)], q[day - 1])
            events.append(CaisoEvent(day, base, float(q[day - 1]), float(q[day]),
                                     consumption_nonparticipant(params, pi0, thetas[day])))
    inflation = np.array([e.inflation for e in events])
    mean, se, lower = _summary(inflation)
    return HorizonResult(tuple(events), q, mean, se, lower)


def _summary(x: np.ndarray) -> tuple[float, float, float]:
    if x.size == 0:
        return math.nan, math.nan, math.nan
    mean = float(x.mean())
    if x.size == 1:
        return mean, math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    return mean, se, mean - float(stats.t.ppf(0.95, x.size - 1)) * se


def make_horizon(n_days: int, n_events: int, m: int, theta: ThetaDist, seed: int,
                 event_days=None, inflate_numerator: bool = True,
                 deflate_denominator: bool = True) -> HorizonPlan:
    """Horizon with evenly spaced events (unless given) and θ from the ``HORIZON`` stream."""
    if event_days is None:
        if n_events < 1:
            raise DomainError("need at least one event")
        spacing = n_days // n_events
        event_days = [spacing * (k + 1) - 1 for k in range(n_events)]
    u = rng.block_generator(seed, rng.HORIZON, 0).random(n_days)
    thetas = tuple(float(t) for t in theta.ppf(u))
    return HorizonPlan(n_days, tuple(int(e) for e in event_days), m, thetas,
                       inflate_numerator, deflate_denominator)


def compare_methods(params: ConsumerParams, mech: MechanismParams, plan: HorizonPlan,
                    sample_plan: ThetaSamplePlan = ThetaSamplePlan()) -> ComparisonReport:
    """Self-reported inflation against the m/m estimate and the ``d π2`` bound.

    Dominance holds when the self-report inflation is below ``d π2`` and the
    one-sided 95% lower confidence bound of the m/m inflation is above it.
    """
    if np.ndim(params.d):
        raise ContractError("compare_methods takes a single consumer")
    pen = mech.penalty
    if pen.eps == 0 and not pen.is_none:
        selfreport = optimal_report_closed_form(params, mech).delta_f
    else:
        selfreport = solve_optimal_report(params, mech, sample_plan).expected_inflation
    horizon = simulate_caiso_horizon(params, mech.pi0, mech.pi2, plan)
    bound = params.d * mech.pi2
    lower = horizon.lower95
    if math.isnan(lower):
        lower = horizon.mean_inflation
    return ComparisonReport(
        caiso_inflation=horizon.mean_inflation,
        caiso_stderr=horizon.stderr,
        caiso_lower95=horizon.lower95,
        selfreport_inflation=float(selfreport),
        lemma5_bound=bound,
        dominance=bool(selfreport < bound < lower),
    )
