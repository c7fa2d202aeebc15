"""The consumer's two-stage problem.

Second stage: given a report ``f`` and a realised θ the consumer picks its
consumption in one of three situations (not participating, participating but
not called, called). First stage: ``f`` minimises the expected cost
``H(f) = p E J^c + (1 - p) E J^b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, SolverError
from .model import (
    ConsumerParams,
    MechanismParams,
    ThetaSamplePlan,
    inverse_marginal_utility,
    marginal_utility,
    penalty_derivative,
    penalty_value,
    theta_nodes,
    utility_value,
)


@dataclass(frozen=True)
class SecondStageResult:
    q_a: float
    q_b: float
    q_c: float
    theta: float
    f: float


@dataclass(frozen=True)
class ReportSolution:
    """Numerical optimum of the first-stage problem.

    ``expected_inflation`` is ``f* - E q^a`` and ``measurable_inflation`` is
    ``f* - E q^b(f*)``, the part the operator can observe on uncalled consumers.
    """

    f_star: float
    expected_cost: float
    expected_inflation: float
    measurable_inflation: float
    residual: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class InflationReport:
    f_star: float
    delta_f: float
    delta_f_tilde: float
    theory_value: float
    theory_bound: float | None = None


@dataclass(frozen=True)
class RationalityCheck:
    rational: bool
    participant_cost: float
    outside_cost: float


# -- second stage -------------------------------------------------------------

def consumption_nonparticipant(params: ConsumerParams, pi0, theta=0.0):
    """True baseline ``q^a(θ)``: marginal utility equals the retail price."""
    return inverse_marginal_utility(params, pi0, theta)


def consumption_called(params: ConsumerParams, pi0, pi2, theta=0.0):
    """Consumption when called; the reward acts as a price increase of ``pi2``."""
    return inverse_marginal_utility(params, np.asarray(pi0) + np.asarray(pi2), theta)


def consumption_not_called(params: ConsumerParams, mech: MechanismParams, f, theta=0.0):
    """Consumption of an uncalled participant who reported ``f``.

    Solves ``π0 - μ(q, θ) - φ'(f - q) = 0``. With affine marginal utility the
    condition is piecewise affine in ``q``: inside the deadband the penalty is
    inert and ``q = q^a``; outside, ``q`` is the ``λ : d`` weighted mix of
    ``q^a`` and the nearest deadband edge ``f ∓ ε``. Ties at a kink go to the
    deadband interior.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise DomainError("baseline report must be non-negative")
    qa = np.asarray(consumption_nonparticipant(params, mech.pi0, theta))
    pen = mech.penalty
    if pen.is_none:
        return _as_float(np.broadcast_to(qa, np.broadcast(qa, f).shape).copy())
    d = np.asarray(params.d)
    dev = f - qa
    above = dev > pen.eps
    below = dev < -pen.eps
    edge = np.where(above, f - pen.eps, f + pen.eps)
    mixed = (pen.lam * qa + d * edge) / (d + pen.lam)
    return _as_float(np.where(above | below, mixed, qa))


def second_stage(params: ConsumerParams, mech: MechanismParams, f: float,
                 theta: float = 0.0) -> SecondStageResult:
    return SecondStageResult(
        q_a=consumption_nonparticipant(params, mech.pi0, theta),
        q_b=consumption_not_called(params, mech, f, theta),
        q_c=consumption_called(params, mech.pi0, mech.pi2, theta),
        theta=theta,
        f=f,
    )


def _as_float(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


# -- first stage --------------------------------------------------------------

class _Expectation:
    """θ nodes for one consumer, shared by every quantity of one solve."""

    def __init__(self, params: ConsumerParams, mech: MechanismParams, plan: ThetaSamplePlan):
        self.params = params
        self.mech = mech
        self.nodes, self.weights = theta_nodes(params.theta, plan)
        self.qa = consumption_nonparticipant(params, mech.pi0, self.nodes)
        self.qc = consumption_called(params, mech.pi0, mech.pi2, self.nodes)

    def mean(self, values) -> float:
        return float(np.dot(self.weights, values))

    def qb(self, f):
        return consumption_not_called(self.params, self.mech, f, self.nodes)

    def cost(self, f: float) -> float:
        m, par, th = self.mech, self.params, self.nodes
        qb = self.qb(f)
        jc = m.pi0 * self.qc - utility_value(par, self.qc, th) - m.pi2 * (f - self.qc)
        jb = m.pi0 * qb - utility_value(par, qb, th) + penalty_value(m.penalty, f - qb)
        return m.p * self.mean(jc) + (1.0 - m.p) * self.mean(jb)

    def marginal(self, f: float) -> float:
        mu_c = marginal_utility(self.params, self.qc, self.nodes)
        mu_b = marginal_utility(self.params, self.qb(f), self.nodes)
        return self.mech.p * self.mean(mu_c) + (1.0 - self.mech.p) * self.mean(mu_b)

    def slope(self, f: float) -> float:
        """``E φ'(f - q^b(f, θ))``; nondecreasing in ``f``."""
        return self.mean(penalty_derivative(self.mech.penalty, f - self.qb(f)))


def expected_cost(params: ConsumerParams, mech: MechanismParams, f: float,
                  plan: ThetaSamplePlan = ThetaSamplePlan()) -> float:
    """``H(f)``, each realised cost taken at its optimal second-stage consumption."""
    return _Expectation(params, mech, plan).cost(f)


def expected_marginal_utility(params: ConsumerParams, mech: MechanismParams, f: float,
                              plan: ThetaSamplePlan = ThetaSamplePlan()) -> float:
    """``M(f) = p E μ(q^c) + (1 - p) E μ(q^b(f))``."""
    return _Expectation(params, mech, plan).marginal(f)


def stationarity_residual(params: ConsumerParams, mech: MechanismParams, f: float,
                          plan: ThetaSamplePlan = ThetaSamplePlan()) -> float:
    """``E φ'(f - q^b) - p π2 / (1 - p)``; zero at the optimal report."""
    return _Expectation(params, mech, plan).slope(f) - mech.odds * mech.pi2


def solve_optimal_report(params: ConsumerParams, mech: MechanismParams,
                         plan: ThetaSamplePlan = ThetaSamplePlan(), tol: float = 1e-10,
                         xtol: float = 1e-12, max_iter: int = 400,
                         strict: bool = True) -> ReportSolution:
    """Minimise ``H`` by bisection on its derivative.

    ``H'(f) = (1 - p) g(f)`` with ``g(f) = E φ'(f - q^b(f, θ)) - p π2 / (1 - p)``
    continuous and nondecreasing, so a sign-change bracket plus bisection
    converges globally. The bracket starts at ``[E q^a, E q^a + (d + λ) p π2 / (1 - p) + ε]``
    padded by a margin, and is widened geometrically if it fails to bracket.
    """
    pen = mech.penalty
    if pen.is_none:
        raise ContractError("no penalty: H(f) decreases without bound, no optimal report exists")
    if pen.lam == 0:
        raise ContractError("lam = 0 is a limit case; use optimal_report_closed_form")
    if mech.p >= 1.0:
        raise ContractError("p must be < 1 for the report problem to be defined")
    if tol <= 0:
        raise ContractError("tol must be positive")
    if np.ndim(params.d) or np.ndim(params.c):
        raise ContractError("solve_optimal_report handles one consumer at a time")

    ex = _Expectation(params, mech, plan)
    target = mech.odds * mech.pi2

    def g(f):
        return ex.slope(f) - target

    mean_qa = ex.mean(ex.qa)
    span = (params.d + pen.lam) * target + pen.eps
    lo = mean_qa
    hi = mean_qa + span
    step = 0.1 * span + 1e-9 * max(1.0, abs(mean_qa))
    hi += step
    g_lo, g_hi = g(lo), g(hi)
    for _ in range(200):
        if g_lo <= 0 <= g_hi:
            break
        if g_lo > 0:
            if lo == 0.0:
                raise SolverError("optimal report would be negative", g_lo, (lo, hi))
            lo = max(0.0, lo - step)
            g_lo = g(lo)
        if g_hi < 0:
            hi += step
            g_hi = g(hi)
        step *= 2.0
    else:
        raise SolverError("could not bracket the stationarity condition",
                          min(abs(g_lo), abs(g_hi)), (lo, hi))

    iterations = 0
    while hi - lo > xtol and iterations < max_iter:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        g_mid = g(mid)
        iterations += 1
        if g_mid == 0.0:
            lo = hi = mid
            break
        if g_mid > 0:
            hi, g_hi = mid, g_mid
        else:
            lo, g_lo = mid, g_mid
    f_star = lo if abs(g_lo) <= abs(g_hi) else hi
    residual = g(f_star)
    converged = abs(residual) <= tol
    if strict and not converged:
        raise SolverError(f"bisection stopped with residual {residual:.3e} > tol {tol:.1e}",
                          residual, (lo, hi))
    return ReportSolution(
        f_star=f_star,
        expected_cost=ex.cost(f_star),
        expected_inflation=f_star - mean_qa,
        measurable_inflation=f_star - ex.mean(ex.qb(f_star)),
        residual=residual,
        converged=converged,
        iterations=iterations,
    )


def _mean_qa(params: ConsumerParams, pi0: float):
    # q^a is affine in θ, so its mean is q^a at the mean θ
    return consumption_nonparticipant(params, pi0, params.theta.mean)


def optimal_report_closed_form(params: ConsumerParams, mech: MechanismParams) -> InflationReport:
    """Optimal report for quadratic utility and quadratic penalty.

    ``f* - E q^a = (d + λ) p π2 / (1 - p)`` and ``f* - E q^b = λ p π2 / (1 - p)``.
    ``λ = 0`` gives the lower bound ``d p π2 / (1 - p)``.
    """
    pen = mech.penalty
    if pen.eps > 0:
        raise ContractError("closed form needs eps = 0; use inflation_bound_deadband")
    if pen.is_none:
        raise ContractError("closed form needs a finite penalty")
    scaled = mech.odds * mech.pi2
    delta_f = (params.d + pen.lam) * scaled
    mean_qa = _mean_qa(params, mech.pi0)
    return InflationReport(
        f_star=_as_float(mean_qa + delta_f),
        delta_f=_as_float(delta_f),
        delta_f_tilde=pen.lam * scaled,
        theory_value=_as_float(delta_f),
    )


def inflation_bound_deadband(params: ConsumerParams, mech: MechanismParams) -> float:
    """Upper bound ``(d + λ) p π2 / (1 - p) + ε`` on the expected inflation.

    Only guaranteed when ``ε`` covers the spread of ``q^a`` around its mean.
    """
    pen = mech.penalty
    if pen.is_none:
        raise ContractError("bound needs a finite penalty")
    q_min, q_max = params.qa_range(mech.pi0)
    mean_qa = _mean_qa(params, mech.pi0)
    spread = max(q_max - mean_qa, mean_qa - q_min)
    if spread > pen.eps + 1e-9 * max(pen.eps, spread):
        raise ContractError(
            f"deadband eps={pen.eps:.6g} does not cover the q^a spread {spread:.6g}; "
            "the bound and individual rationality are not guaranteed")
    return (params.d + pen.lam) * mech.odds * mech.pi2 + pen.eps


def check_individual_rationality(params: ConsumerParams, mech: MechanismParams, f: float,
                                 plan: ThetaSamplePlan = ThetaSamplePlan()) -> RationalityCheck:
    """Compare ``H(f)`` with the expected cost of staying out, ``E min_q J^a``."""
    ex = _Expectation(params, mech, plan)
    participant = ex.cost(f)
    outside = ex.mean(mech.pi0 * ex.qa - utility_value(params, ex.qa, ex.nodes))
    return RationalityCheck(participant <= outside, participant, outside)


def excess_payment_rate(params: ConsumerParams, mech: MechanismParams, f: float,
                        plan: ThetaSamplePlan = ThetaSamplePlan()) -> float:
    """Expected reward per unit of true reduction, ``π2 (f - E q^c) / (E q^a - E q^c)``."""
    ex = _Expectation(params, mech, plan)
    mean_qa, mean_qc = ex.mean(ex.qa), ex.mean(ex.qc)
    gap = mean_qa - mean_qc
    if not gap > 0 or math.isclose(mean_qa, mean_qc, rel_tol=1e-15, abs_tol=0.0):
        raise DomainError("expected reduction E q^a - E q^c is zero; rate undefined")
    return mech.pi2 * (f - mean_qc) / gap
