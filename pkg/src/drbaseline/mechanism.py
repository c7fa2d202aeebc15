"""Recruitment, random calling, settlement and the system operator's cost.

The operator splits recruits into ``n = 1/p`` disjoint groups that can each
deliver ``ΔQ*`` and calls one group per event. Called consumers are paid
``π2 (f - q)``; uncalled recruits pay ``φ(f - q)``.

Event randomness is drawn in blocks of ``rng.BLOCK_SIZE`` events from
counter-based streams, so a batch gives bit-identical results whether blocks are
evaluated serially or spread across worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .consumer import consumption_called, consumption_nonparticipant, consumption_not_called
from .errors import ContractError, DomainError, RecruitmentError
from .market import MarketModel, supply_price
from .model import ConsumerParams, MechanismParams, ThetaDist, penalty_value


@dataclass(frozen=True)
class Population:
    """Consumers and their baseline reports, in recruitment order."""

    consumers: tuple[ConsumerParams, ...]
    reports: tuple[float, ...]
    unit: str = "kWh"

    def __post_init__(self):
        if len(self.consumers) != len(self.reports):
            raise DomainError("one report per consumer is required")
        if any(f < 0 for f in self.reports):
            raise DomainError("reports must be non-negative")

    @classmethod
    def homogeneous(cls, params: ConsumerParams, count: int, report: float,
                    unit: str = "kWh") -> "Population":
        return cls((params,) * count, (report,) * count, unit)

    def __len__(self):
        return len(self.consumers)

    @property
    def c(self) -> np.ndarray:
        return np.array([p.c for p in self.consumers], dtype=float)

    @property
    def d(self) -> np.ndarray:
        return np.array([p.d for p in self.consumers], dtype=float)

    @property
    def f(self) -> np.ndarray:
        return np.array(self.reports, dtype=float)

    def stacked(self) -> ConsumerParams:
        """The whole population as one array-valued ``ConsumerParams``."""
        return ConsumerParams(self.c, self.d)

    def sample_thetas(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms of shape ``(events, consumers)`` onto each consumer's θ."""
        out = np.empty_like(u)
        columns: dict[ThetaDist, list[int]] = {}
        for i, params in enumerate(self.consumers):
            columns.setdefault(params.theta, []).append(i)
        for dist, idx in columns.items():
            out[:, idx] = dist.ppf(u[:, idx])
        return out


@dataclass(frozen=True)
class GroupPlan:
    """Disjoint recruitment groups; ``group_of[i]`` is -1 for unrecruited consumers."""

    n_groups: int
    groups: tuple[tuple[int, ...], ...]
    capacities: tuple[float, ...]
    p: float
    delta_q_star: float
    group_of: tuple[int, ...]

    @property
    def n_total(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def n_bar(self) -> float:
        return self.n_total / self.n_groups


@dataclass(frozen=True)
class EventSettlement:
    """Outcome of one DR event. Per-consumer arrays follow population order."""

    event_index: int
    selected_group: int
    measured_reduction: float
    true_reduction: float
    rewards_paid: float
    penalties_collected: float
    called: np.ndarray
    consumption: np.ndarray
    payments: np.ndarray
    penalties: np.ndarray


@dataclass(frozen=True)
class SettlementBatch:
    """Per-event aggregates for a run of consecutive events.

    ``inflation_sum``/``inflation_sumsq``/``called_count`` summarise
    ``f - q^a(θ)`` over the called consumers of each event.
    """

    event_index: np.ndarray
    selected: np.ndarray
    delta_q_tilde: np.ndarray
    delta_q_true: np.ndarray
    rewards: np.ndarray
    penalties: np.ndarray
    inflation_sum: np.ndarray
    inflation_sumsq: np.ndarray
    called_count: np.ndarray

    def __len__(self):
        return len(self.event_index)

    def consumer_inflation(self) -> tuple[float, float, int]:
        """Mean and standard error of ``f - q^a`` over every called consumer."""
        n = int(self.called_count.sum())
        if n == 0:
            return 0.0, 0.0, 0
        total = float(self.inflation_sum.sum())
        mean = total / n
        if n == 1:
            return mean, 0.0, 1
        var = max(float(self.inflation_sumsq.sum()) - n * mean * mean, 0.0) / (n - 1)
        return mean, math.sqrt(var / n), n


@dataclass(frozen=True)
class SoCostCurve:
    """SO cost against calling probability.

    ``points`` rows are ``(p, J_SO, J_SO_no_recruit, recruitment_term)``.
    """

    points: tuple[tuple[float, float, float, float], ...]
    j_star: float
    pi_rec: float
    minimizer_p: float


# -- recruitment and selection --------------------------------------------------

def groups_for_probability(p: float) -> int:
    """Number of groups ``n`` with ``n p = 1``; rejects ``p`` whose inverse is not integral."""
    if not 0 < p <= 1:
        raise RecruitmentError(f"calling probability must lie in (0, 1], got {p}")
    n = round(1.0 / p)
    if abs(n * p - 1.0) > 1e-12:
        raise RecruitmentError(f"1/p = {1.0 / p:.6g} is not an integer; round p to 1/n first")
    return n


def build_groups(pop: Population, p: float, delta_q_star: float, pi2: float) -> GroupPlan:
    """Greedy recruitment of ``1/p`` groups, each expected to shed ``ΔQ*``.

    Consumers are taken in input order; a consumer's expected reduction is
    ``d π2``. A group closes as soon as it reaches ``ΔQ*`` (so its last member may
    overshoot). Consumers left over once all groups are full are not recruited.
    """
    n = groups_for_probability(p)
    if not delta_q_star > 0:
        raise RecruitmentError("delta_q_star must be positive")
    capacity = pop.d * pi2
    need = delta_q_star * (1.0 - 1e-12)
    groups, caps = [], []
    current, total = [], 0.0
    for i, cap in enumerate(capacity):
        if len(groups) == n:
            break
        current.append(i)
        total += cap
        if total >= need:
            groups.append(tuple(current))
            caps.append(total)
            current, total = [], 0.0
    if len(groups) < n:
        shortfall = (n - len(groups)) * delta_q_star - total
        raise RecruitmentError(
            f"population capacity {capacity.sum():.6g} cannot fill {n} groups of "
            f"{delta_q_star:.6g}; short by {shortfall:.6g}")
    group_of = [-1] * len(pop)
    for k, members in enumerate(groups):
        for i in members:
            group_of[i] = k
    return GroupPlan(n, tuple(groups), tuple(caps), 1.0 / n, delta_q_star, tuple(group_of))


def _block_selections(plan: GroupPlan, seed: int, block: int) -> np.ndarray:
    gen = rng.block_generator(seed, rng.SELECT, block)
    return gen.integers(0, plan.n_groups, size=rng.BLOCK_SIZE)


def select_group(plan: GroupPlan, seed: int, event_index: int) -> int:
    """Group called at ``event_index``: uniform over groups, fixed by ``(seed, event_index)``."""
    if plan.n_groups < 1:
        raise RecruitmentError("plan has no groups")
    block, offset = rng.block_of(event_index)
    return int(_block_selections(plan, seed, block)[offset])


# -- settlement -----------------------------------------------------------------

def _settle(pop: Population, plan: GroupPlan, mech: MechanismParams,
            selected: np.ndarray, thetas: np.ndarray) -> dict:
    """Vectorised settlement of ``len(selected)`` events (rows of ``thetas``)."""
    params = pop.stacked()
    f = pop.f
    group_of = np.asarray(plan.group_of)
    recruited = group_of >= 0
    called = (group_of[None, :] == selected[:, None]) & recruited[None, :]
    uncalled = recruited[None, :] & ~called

    qa = consumption_nonparticipant(params, mech.pi0, thetas)
    qc = consumption_called(params, mech.pi0, mech.pi2, thetas)
    qb = consumption_not_called(params, mech, f, thetas)
    consumption = np.where(called, qc, np.where(uncalled, qb, qa))

    measured = np.where(called, f - qc, 0.0)
    true = np.where(called, qa - qc, 0.0)
    payments = mech.pi2 * measured
    penalties = np.where(uncalled, penalty_value(mech.penalty, f - qb), 0.0)
    inflation = np.where(called, f - qa, 0.0)
    return dict(
        called=called,
        consumption=consumption,
        payments=payments,
        penalties=penalties,
        delta_q_tilde=measured.sum(axis=1),
        delta_q_true=true.sum(axis=1),
        rewards=payments.sum(axis=1),
        penalty_total=penalties.sum(axis=1),
        inflation_sum=inflation.sum(axis=1),
        inflation_sumsq=(inflation * inflation).sum(axis=1),
        called_count=called.sum(axis=1),
    )


def run_dr_event(pop: Population, plan: GroupPlan, mech: MechanismParams, thetas,
                 seed: int, event_index: int) -> EventSettlement:
    """Settle one event given the realised θ of every consumer."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape != (len(pop),):
        raise DomainError(f"need one theta per consumer ({len(pop)}), got shape {thetas.shape}")
    k = select_group(plan, seed, event_index)
    out = _settle(pop, plan, mech, np.array([k]), thetas[None, :])
    return EventSettlement(
        event_index=event_index,
        selected_group=k,
        measured_reduction=float(out["delta_q_tilde"][0]),
        true_reduction=float(out["delta_q_true"][0]),
        rewards_paid=float(out["rewards"][0]),
        penalties_collected=float(out["penalty_total"][0]),
        called=out["called"][0],
        consumption=out["consumption"][0],
        payments=out["payments"][0],
        penalties=out["penalties"][0],
    )


def event_thetas(pop: Population, seed: int, event_index: int) -> np.ndarray:
    """θ realised by every consumer at ``event_index`` in batch simulations."""
    block, offset = rng.block_of(event_index)
    u = rng.block_generator(seed, rng.THETA, block).random((rng.BLOCK_SIZE, len(pop)))
    return pop.sample_thetas(u[offset:offset + 1])[0]


def _simulate_block(args) -> dict:
    pop, plan, mech, seed, block, start, stop = args
    selections = _block_selections(plan, seed, block)[start:stop]
    u = rng.block_generator(seed, rng.THETA, block).random((rng.BLOCK_SIZE, len(pop)))
    thetas = pop.sample_thetas(u[start:stop])
    out = _settle(pop, plan, mech, selections, thetas)
    out["selected"] = selections
    out["event_index"] = np.arange(block * rng.BLOCK_SIZE + start, block * rng.BLOCK_SIZE + stop)
    for key in ("called", "consumption", "payments", "penalties"):
        del out[key]
    return out


def simulate_events(pop: Population, plan: GroupPlan, mech: MechanismParams, seed: int,
                    n_events: int, first_event: int = 0, workers: int = 1) -> SettlementBatch:
    """Run events ``first_event .. first_event + n_events - 1`` with sampled θ.

    Each event draws its group from the ``SELECT`` stream and every consumer's
    θ from the ``THETA`` stream at the event's counter position.
    """
    if n_events < 0:
        raise DomainError("n_events must be non-negative")
    jobs = []
    index, end = first_event, first_event + n_events
    while index < end:
        block, start = rng.block_of(index)
        stop = min(rng.BLOCK_SIZE, start + (end - index))
        jobs.append((pop, plan, mech, seed, block, start, stop))
        index += stop - start
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_block, jobs))
    else:
        parts = [_simulate_block(job) for job in jobs]

    def cat(key, dtype=float):
        if not parts:
            return np.empty(0, dtype=dtype)
        return np.concatenate([part[key] for part in parts])

    return SettlementBatch(
        event_index=cat("event_index", int),
        selected=cat("selected", int),
        delta_q_tilde=cat("delta_q_tilde"),
        delta_q_true=cat("delta_q_true"),
        rewards=cat("rewards"),
        penalties=cat("penalty_total"),
        inflation_sum=cat("inflation_sum"),
        inflation_sumsq=cat("inflation_sumsq"),
        called_count=cat("called_count", int),
    )


# -- system operator cost -------------------------------------------------------

def population_stats(pop: Population, plan: GroupPlan) -> tuple[float, float]:
    """``(N̄, d̄)``: mean group size and mean ``d`` over recruited consumers."""
    members = [i for g in plan.groups for i in g]
    return plan.n_bar, float(np.mean(pop.d[members]))


def optimal_cost(market: MarketModel, pi0: float, delta_q_star: float) -> float:
    """``J*_SO``: wholesale purchase minus retail revenue plus DR payment, no inflation."""
    q = market.q0 - delta_q_star
    price = supply_price(market, q)
    return (price - pi0) * q + price * delta_q_star


def so_cost_no_recruitment(market: MarketModel, n_bar: float, d_bar: float,
                           mech: MechanismParams, delta_q_star: float) -> float:
    """``J*_SO`` plus the payment on inflated reductions of one called group.

    Each called consumer over-reports by ``(d + λ) p π2 / (1 - p)``, and the
    deadband adds up to ``ε`` more; the operator pays ``π*`` per measured unit.
    """
    pi_star = supply_price(market, market.q0 - delta_q_star)
    pen = mech.penalty
    if pen.is_none:
        raise ContractError("SO cost needs a finite penalty; without one inflation is unbounded")
    per_consumer = (d_bar + pen.lam) * mech.odds * mech.pi2 + pen.eps
    return optimal_cost(market, mech.pi0, delta_q_star) + pi_star * n_bar * per_consumer


def recruitment_cost(n_bar: float, p: float, pi_rec: float) -> float:
    """``π_rec N_T`` with ``N_T = N̄ / p`` recruits across ``1/p`` groups."""
    if not p > 0:
        raise DomainError("p must be positive: recruitment cost is unbounded as p -> 0")
    if pi_rec < 0:
        raise DomainError("pi_rec must be non-negative")
    return pi_rec * n_bar / p


def so_cost_with_recruitment(market: MarketModel, n_bar: float, d_bar: float,
                             mech: MechanismParams, delta_q_star: float, pi_rec: float) -> float:
    return (so_cost_no_recruitment(market, n_bar, d_bar, mech, delta_q_star)
            + recruitment_cost(n_bar, mech.p, pi_rec))


def sweep_probability(market: MarketModel, n_bar: float, d_bar: float, mech: MechanismParams,
                      delta_q_star: float, pi_rec: float, p_grid) -> SoCostCurve:
    """SO cost over a grid of calling probabilities.

    ``N_T = N̄/p`` is used as a continuous relaxation, so grid points need not
    have integral ``1/p``.
    """
    p_grid = [float(p) for p in p_grid]
    if not p_grid:
        raise DomainError("probability grid is empty")
    if any(not 0 < p < 1 for p in p_grid):
        raise DomainError("probability grid must lie inside (0, 1)")
    points = []
    for p in p_grid:
        m = replace(mech, p=p)
        base = so_cost_no_recruitment(market, n_bar, d_bar, m, delta_q_star)
        rec = recruitment_cost(n_bar, p, pi_rec)
        points.append((p, base + rec, base, rec))
    best = min(points, key=lambda row: row[1])
    return SoCostCurve(tuple(points), optimal_cost(market, mech.pi0, delta_q_star),
                       pi_rec, best[0])


def so_cost_per_event(market: MarketModel, pi0: float, batch: SettlementBatch) -> np.ndarray:
    """Realised ``Π(Q)Q + Π(Q)ΔQ̃ - π0 Q`` for each event, ``Q = Q0 - ΔQ``."""
    q = market.q0 - batch.delta_q_true
    price = supply_price(market, q)
    return price * q + price * batch.delta_q_tilde - pi0 * q
