"""Wholesale inverse supply curve ``Π(Q) = aQ + bQ²`` and the TMC price."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class MarketModel:
    """Quadratic inverse supply curve fitted on ``[q_lo, q_hi]`` with peak load ``q0``."""

    a: float
    b: float
    q_lo: float
    q_hi: float
    q0: float

    @property
    def q_range(self) -> tuple[float, float]:
        return (self.q_lo, self.q_hi)


@dataclass(frozen=True)
class ReductionSolution:
    delta_q_star: float
    q_clear: float
    pi_star: float
    in_range: bool


def supply_price(m: MarketModel, q):
    q = np.asarray(q, dtype=float)
    out = m.a * q + m.b * q * q
    return float(out) if out.ndim == 0 else out


def supply_price_derivative(m: MarketModel, q):
    q = np.asarray(q, dtype=float)
    out = m.a + 2.0 * m.b * q
    return float(out) if out.ndim == 0 else out


def tmc_price(m: MarketModel, delta_q: float) -> float:
    """Market price once ``delta_q`` of load has been shed from the peak."""
    return supply_price(m, m.q0 - delta_q)


def optimal_reduction(m: MarketModel, pi0: float) -> ReductionSolution:
    """Reduction satisfying the first-order condition ``Π'(Q0 - ΔQ) Q0 = π0``.

    The clearing quantity is allowed to fall outside the fitted range; the
    ``in_range`` flag reports it instead of failing.
    """
    if m.b == 0:
        raise DomainError("linear supply curve: Π' is constant, the first-order condition "
                          "has no unique solution")
    delta_q = m.q0 - (pi0 / m.q0 - m.a) / (2.0 * m.b)
    # rebuilt from delta_q so that tmc_price(delta_q) reproduces pi_star bit for bit
    q_clear = m.q0 - delta_q
    return ReductionSolution(
        delta_q_star=delta_q,
        q_clear=q_clear,
        pi_star=supply_price(m, q_clear),
        in_range=m.q_lo <= q_clear <= m.q_hi,
    )


def validate_market(m: MarketModel) -> list[str]:
    """Named violations of the monotone/convex assumptions; empty when valid."""
    problems = []
    if not m.q_lo < m.q_hi:
        problems.append(f"empty quantity range [{m.q_lo}, {m.q_hi}]")
    if m.b < 0:
        problems.append(f"convexity: b = {m.b} < 0")
    # Π' is affine, so checking both ends covers the whole range
    lo_slope = supply_price_derivative(m, m.q_lo)
    hi_slope = supply_price_derivative(m, m.q_hi)
    if min(lo_slope, hi_slope) <= 0:
        where = m.q_lo if lo_slope <= hi_slope else m.q_hi
        problems.append(f"monotonicity: Π'({where:g}) = {min(lo_slope, hi_slope):.6g} <= 0")
    if not m.q_lo <= m.q0 <= m.q_hi:
        problems.append(f"peak load q0 = {m.q0:g} outside range [{m.q_lo:g}, {m.q_hi:g}]")
    return problems
