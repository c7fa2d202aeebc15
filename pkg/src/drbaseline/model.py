"""Primitive objects: quadratic utility, penalty families and the θ distribution.

Utility is ``u(q, θ) = (c + θ) q - q² / (2d)``, so the marginal utility is affine
in ``q`` with slope ``-1/d`` and θ shifts its intercept. Every function here
accepts scalars or numpy arrays (broadcast elementwise) and returns a float for
scalar input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng
from .errors import DomainError

THETA_KINDS = ("degenerate", "uniform", "truncated-normal")


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class ThetaDist:
    """Distribution of the exogenous shock θ (same units as ``c``).

    ``low``/``high`` bound the support. For ``truncated-normal`` the parent
    normal has location ``mu`` and scale ``sigma``; the other kinds ignore them.
    """

    kind: str = "degenerate"
    low: float = 0.0
    high: float = 0.0
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in THETA_KINDS:
            raise DomainError(f"unknown theta distribution kind {self.kind!r}")
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise DomainError("theta support must be bounded")
        if self.low > self.high:
            raise DomainError(f"theta support is empty: low={self.low} > high={self.high}")
        if self.kind == "degenerate" and self.low != self.high:
            raise DomainError("degenerate theta needs low == high")
        if self.kind == "uniform" and not self.low < self.high:
            raise DomainError("uniform theta needs low < high")
        if self.kind == "truncated-normal" and not (self.sigma > 0 and self.low < self.high):
            raise DomainError("truncated-normal theta needs sigma > 0 and low < high")

    @classmethod
    def degenerate(cls, value: float = 0.0) -> "ThetaDist":
        return cls("degenerate", value, value, value, 0.0)

    @classmethod
    def uniform(cls, low: float, high: float) -> "ThetaDist":
        return cls("uniform", low, high, 0.5 * (low + high), 0.0)

    @classmethod
    def truncated_normal(cls, mu: float, sigma: float, low: float, high: float) -> "ThetaDist":
        return cls("truncated-normal", low, high, mu, sigma)

    def _truncnorm(self):
        a = (self.low - self.mu) / self.sigma
        b = (self.high - self.mu) / self.sigma
        return stats.truncnorm(a, b, loc=self.mu, scale=self.sigma)

    @property
    def mean(self) -> float:
        if self.kind == "degenerate":
            return self.low
        if self.kind == "uniform":
            return 0.5 * (self.low + self.high)
        return float(self._truncnorm().mean())

    @property
    def std(self) -> float:
        if self.kind == "degenerate":
            return 0.0
        if self.kind == "uniform":
            return (self.high - self.low) / math.sqrt(12.0)
        return float(self._truncnorm().std())

    def ppf(self, u):
        """Quantile function, used to map uniform draws onto θ."""
        u = np.asarray(u, dtype=float)
        if self.kind == "degenerate":
            return np.full_like(u, self.low)
        if self.kind == "uniform":
            return self.low + (self.high - self.low) * u
        return self._truncnorm().ppf(u)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.where((x >= self.low) & (x <= self.high), 1.0 / (self.high - self.low), 0.0)
        if self.kind == "truncated-normal":
            return self._truncnorm().pdf(x)
        raise DomainError("degenerate theta has no density")


@dataclass(frozen=True)
class ConsumerParams:
    """One consumer's private model.

    ``c`` and ``d`` may also be equal-length arrays describing a whole
    population; all formulas then apply elementwise.
    """

    c: float
    d: float
    theta: ThetaDist = field(default_factory=ThetaDist)

    def __post_init__(self):
        if not np.all(np.asarray(self.d) > 0):
            raise DomainError("d must be strictly positive")

    def qa_range(self, pi0: float) -> tuple[float, float]:
        """Range of the non-participant consumption over the θ support."""
        return (inverse_marginal_utility(self, pi0, self.theta.low),
                inverse_marginal_utility(self, pi0, self.theta.high))


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty ``φ`` on uninstructed deviation ``x = f - q``.

    ``lam`` is the inverse curvature (``φ'' = 1/lam`` outside the deadband) and
    ``eps`` the deadband half-width. ``lam = 0`` is the hard-constraint limit
    (any deviation beyond ``eps`` is infinitely costly) and ``lam = inf`` means
    no penalty at all.
    """

    lam: float
    eps: float = 0.0

    def __post_init__(self):
        if math.isnan(self.lam) or self.lam < 0:
            raise DomainError("penalty lam must be >= 0")
        if not (math.isfinite(self.eps) and self.eps >= 0):
            raise DomainError("penalty eps must be finite and >= 0")

    @property
    def is_quadratic(self) -> bool:
        return self.eps == 0.0 and 0 < self.lam < math.inf

    @property
    def is_none(self) -> bool:
        return self.lam == math.inf


@dataclass(frozen=True)
class MechanismParams:
    """Retail price, reward rate, calling probability and penalty."""

    pi0: float
    pi2: float
    p: float
    penalty: PenaltySpec

    def __post_init__(self):
        if not self.pi0 > 0:
            raise DomainError("retail price pi0 must be positive")
        if not self.pi2 >= 0:
            raise DomainError("reward pi2 must be non-negative")
        if not 0.0 <= self.p <= 1.0:
            raise DomainError("calling probability p must lie in [0, 1]")

    @property
    def odds(self) -> float:
        """``p / (1 - p)``, the factor every inflation formula carries."""
        if self.p >= 1.0:
            raise DomainError("p = 1 leaves no uncalled consumers; p/(1-p) is undefined")
        return self.p / (1.0 - self.p)

    @classmethod
    def from_market(cls, market, pi0: float, p: float, penalty: PenaltySpec,
                    delta_q: float) -> "MechanismParams":
        """Mechanism whose reward equals the TMC price at reduction ``delta_q``."""
        from .market import tmc_price

        return cls(pi0=pi0, pi2=tmc_price(market, delta_q), p=p, penalty=penalty)


@dataclass(frozen=True)
class ThetaSamplePlan:
    """How expectations over θ are evaluated."""

    method: str = "quadrature"
    n_points: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("quadrature", "monte-carlo"):
            raise DomainError(f"unknown sampling method {self.method!r}")
        if self.n_points < 1:
            raise DomainError("n_points must be at least 1")


# -- utility ------------------------------------------------------------------

def utility_value(params: ConsumerParams, q, theta=0.0):
    """``(c + θ) q - q² / (2d)``; rejects negative consumption."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise DomainError("consumption must be non-negative")
    return _out((params.c + np.asarray(theta)) * q - q * q / (2.0 * np.asarray(params.d)))


def marginal_utility(params: ConsumerParams, q, theta=0.0):
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise DomainError("consumption must be non-negative")
    return _out(params.c + np.asarray(theta) - q / np.asarray(params.d))


def inverse_marginal_utility(params: ConsumerParams, x, theta=0.0):
    """Consumption at which marginal utility equals ``x``: ``d (c + θ - x)``."""
    head = params.c + np.asarray(theta, dtype=float) - np.asarray(x, dtype=float)
    if np.any(head < 0):
        raise DomainError("marginal utility target exceeds c + theta; consumption would be negative")
    return _out(np.asarray(params.d) * head)


# -- penalty ------------------------------------------------------------------

def penalty_value(spec: PenaltySpec, x):
    """``φ(x)``: zero inside the deadband, ``(|x| - ε)² / (2λ)`` outside."""
    excess = np.maximum(np.abs(np.asarray(x, dtype=float)) - spec.eps, 0.0)
    if spec.is_none:
        return _out(np.zeros_like(excess))
    if spec.lam == 0:
        return _out(np.where(excess > 0, np.inf, 0.0))
    return _out(excess * excess / (2.0 * spec.lam))


def penalty_derivative(spec: PenaltySpec, x):
    """``φ'(x)``, an odd function that vanishes on the deadband."""
    x = np.asarray(x, dtype=float)
    excess = np.maximum(np.abs(x) - spec.eps, 0.0)
    if spec.is_none:
        return _out(np.zeros_like(x))
    if spec.lam == 0:
        return _out(np.where(excess > 0, np.sign(x) * np.inf, 0.0))
    return _out(np.sign(x) * excess / spec.lam)


def penalty_derivative_inverse(spec: PenaltySpec, y):
    """Positive deviation whose penalty slope is ``y``: ``λ y + ε``.

    Only defined for ``y > 0``; at zero the deadband makes the inverse a set.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("penalty derivative inverse needs y > 0")
    if spec.is_none:
        raise DomainError("zero penalty has no derivative inverse")
    return _out(spec.lam * y + spec.eps)


# -- expectations over theta -------------------------------------------------

def theta_nodes(dist: ThetaDist, plan: ThetaSamplePlan) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights realising ``E_θ``.

    Quadrature uses Gauss-Legendre on the support (density-weighted and
    renormalised for the truncated normal). Monte Carlo draws ``n_points``
    samples from the ``THETA_NODES`` stream with equal weights.
    """
    if dist.kind == "degenerate":
        return np.array([dist.low]), np.array([1.0])
    n = plan.n_points
    if plan.method == "monte-carlo":
        u = rng.block_generator(plan.seed, rng.THETA_NODES, 0).random(n)
        return dist.ppf(u), np.full(n, 1.0 / n)
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (dist.high - dist.low)
    nodes = dist.low + half * (x + 1.0)
    if dist.kind == "uniform":
        weights = 0.5 * w
    else:
        weights = w * dist.pdf(nodes)
    return nodes, weights / weights.sum()
