"""Scenario files.

A scenario is an INI-style file with the sections ``[scenario]``,
``[consumer]``, ``[mechanism]``, ``[market]``, ``[theta]``, ``[sampling]``,
``[horizon]`` and ``[output]``. Unknown sections and keys are errors. Lists are
comma separated; ``p_grid`` also accepts ``start:stop:step``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import DomainError, RecruitmentError, ScenarioError
from .market import MarketModel, optimal_reduction, supply_price, validate_market
from .model import ConsumerParams, MechanismParams, PenaltySpec, ThetaDist, ThetaSamplePlan

log = logging.getLogger(__name__)

SCHEMA = {
    "scenario": {"name", "units"},
    "consumer": {"c", "d", "count", "report"},
    "mechanism": {"pi0", "pi2", "p", "lambda", "epsilon", "pi_rec", "p_grid"},
    "market": {"a", "b", "q0", "q_lo", "q_hi", "delta_q_star"},
    "theta": {"kind", "value", "low", "high", "mu", "sigma"},
    "sampling": {"method", "n_points", "seed", "samples", "events"},
    "horizon": {"n_days", "n_events", "m", "event_days", "inflate_numerator",
                "deflate_denominator"},
    "output": {"dir"},
}
UNITS = {"kWh-scale": "kWh", "MWh-scale": "MWh"}
EXPERIMENTS = ("table2", "fig3", "compare", "event")


@dataclass(frozen=True)
class MarketSection:
    """Supply curve (optional) and the reduction target.

    ``delta_q_star`` is ``None`` when it should come from the first-order
    condition instead of being pinned.
    """

    curve: MarketModel | None
    delta_q_star: float | None
    delta_q_from_foc: bool = False


@dataclass(frozen=True)
class HorizonSection:
    n_days: int
    n_events: int
    m: int
    event_days: tuple[int, ...] | None
    inflate_numerator: bool = True
    deflate_denominator: bool = True


@dataclass(frozen=True)
class Scenario:
    name: str
    units: str
    c: float
    d_values: tuple[float, ...]
    count: int | None
    report: str
    pi0: float
    pi2: float
    p: float
    p_requested: float
    lam: float
    eps: float
    pi_rec: tuple[float, ...]
    p_grid: tuple[float, ...]
    market: MarketSection | None
    theta: ThetaDist
    plan: ThetaSamplePlan
    samples: int
    events: int
    horizon: HorizonSection | None
    output_dir: str
    warnings: tuple[str, ...] = ()
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def unit_label(self) -> str:
        return UNITS[self.units]

    @property
    def seed(self) -> int:
        return self.plan.seed

    @property
    def penalty(self) -> PenaltySpec:
        return PenaltySpec(self.lam, self.eps)

    def mechanism(self, p: float | None = None) -> MechanismParams:
        return MechanismParams(self.pi0, self.pi2, self.p if p is None else p, self.penalty)

    def consumer(self, d: float) -> ConsumerParams:
        return ConsumerParams(self.c, d, self.theta)

    def scenario_hash(self) -> str:
        """Digest of every resolved field, so it changes iff the scenario does."""
        data = asdict(self)
        data.pop("raw")
        data.pop("warnings")
        blob = json.dumps(data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def resolved(self) -> dict:
        data = asdict(self)
        data.pop("raw")
        return data

    def with_overrides(self, seed: int | None = None, samples: int | None = None,
                       output_dir: str | None = None) -> "Scenario":
        from dataclasses import replace

        out = self
        if seed is not None:
            if seed < 0 or seed >= 2 ** 64:
                raise ScenarioError("seed must be an unsigned 64-bit integer")
            out = replace(out, plan=replace(out.plan, seed=seed))
        if samples is not None:
            if samples < 1:
                raise ScenarioError("--samples must be positive")
            out = replace(out, samples=samples)
        if output_dir is not None:
            out = replace(out, output_dir=output_dir)
        return out


class _Reader:
    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser

    def has(self, section, key=None):
        if key is None:
            return self.parser.has_section(section)
        return self.parser.has_option(section, key)

    def raw(self, section, key, default=None):
        if not self.has(section, key):
            if default is _REQUIRED:
                raise ScenarioError(f"{section}.{key}: required key missing")
            return default
        return self.parser.get(section, key).strip()

    def number(self, section, key, default=None, kind=float):
        text = self.raw(section, key, default)
        if text is None or not isinstance(text, str):
            return text
        try:
            value = kind(text)
        except ValueError:
            raise ScenarioError(f"{section}.{key}: cannot parse {text!r} as {kind.__name__}") from None
        if kind is float and math.isnan(value):
            raise ScenarioError(f"{section}.{key}: NaN is not allowed")
        return value

    def numbers(self, section, key, default=None):
        text = self.raw(section, key, default)
        if text is None or not isinstance(text, str):
            return text
        try:
            return tuple(float(x) for x in text.split(",") if x.strip())
        except ValueError:
            raise ScenarioError(f"{section}.{key}: expected a comma separated list of numbers") from None

    def flag(self, section, key, default):
        if not self.has(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise ScenarioError(f"{section}.{key}: expected true/false") from None


_REQUIRED = object()


def _parse_grid(text: str) -> tuple[float, ...]:
    if ":" in text:
        try:
            start, stop, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise ScenarioError("mechanism.p_grid: expected start:stop:step") from None
        if step <= 0 or stop < start:
            raise ScenarioError("mechanism.p_grid: need step > 0 and stop >= start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + k * step, 12) for k in range(n))
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ScenarioError("mechanism.p_grid: expected a list or start:stop:step") from None


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario text."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None,
                                       strict=True)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise ScenarioError(f"unknown section [{section}]")
        unknown = set(parser.options(section)) - SCHEMA[section]
        if unknown:
            raise ScenarioError(f"[{section}]: unknown key(s) {', '.join(sorted(unknown))}")
    r = _Reader(parser)
    warnings = []

    name = r.raw("scenario", "name", Path(source).stem)
    units = r.raw("scenario", "units", "kWh-scale")
    if units not in UNITS:
        raise ScenarioError(f"scenario.units: expected one of {', '.join(UNITS)}, got {units!r}")

    c = r.number("consumer", "c", _REQUIRED)
    d_values = r.numbers("consumer", "d", _REQUIRED)
    if not d_values or any(not d > 0 for d in d_values):
        raise ScenarioError("consumer.d: every value must be positive")
    count = r.number("consumer", "count", None, int)
    if count is not None and count < 1:
        raise ScenarioError("consumer.count: must be positive")
    report = r.raw("consumer", "report", "optimal")
    if report not in ("optimal", "truthful"):
        raise ScenarioError("consumer.report: expected optimal or truthful")

    # market first: the reward may derive from it
    market = None
    if r.has("market"):
        keys = ("a", "b", "q0", "q_lo", "q_hi")
        present = [k for k in keys if r.has("market", k)]
        curve = None
        if present:
            if len(present) != len(keys):
                missing = sorted(set(keys) - set(present))
                raise ScenarioError(f"[market]: supply curve incomplete, missing {', '.join(missing)}")
            curve = MarketModel(*(r.number("market", k, _REQUIRED) for k in ("a", "b", "q_lo", "q_hi", "q0")))
            problems = validate_market(curve)
            if problems:
                raise ScenarioError("[market] invalid: " + "; ".join(problems))
        dq_text = r.raw("market", "delta_q_star", "foc" if curve else None)
        from_foc = dq_text == "foc"
        if from_foc:
            if curve is None:
                raise ScenarioError("market.delta_q_star = foc needs a supply curve")
            delta_q = None
        elif dq_text is None:
            delta_q = None
        else:
            delta_q = r.number("market", "delta_q_star")
            if not delta_q > 0:
                raise ScenarioError("market.delta_q_star: must be positive")
        market = MarketSection(curve, delta_q, from_foc)

    pi0 = r.number("mechanism", "pi0", _REQUIRED)
    if not pi0 > 0:
        raise ScenarioError("mechanism.pi0: must be positive")
    if market is not None and market.curve is not None and market.delta_q_from_foc:
        sol = optimal_reduction(market.curve, pi0)
        if not sol.in_range:
            warnings.append(f"first-order clearing quantity {sol.q_clear:.6g} lies outside the "
                            f"fitted range [{market.curve.q_lo:g}, {market.curve.q_hi:g}]")
        if not sol.delta_q_star > 0:
            raise ScenarioError(f"first-order reduction {sol.delta_q_star:.6g} is not positive")
        market = MarketSection(market.curve, sol.delta_q_star, True)

    pi2_text = r.raw("mechanism", "pi2", _REQUIRED)
    if pi2_text == "derive-from-market":
        if market is None or market.curve is None or market.delta_q_star is None:
            raise ScenarioError("mechanism.pi2 = derive-from-market: market section required "
                                "(supply curve and delta_q_star)")
        pi2 = supply_price(market.curve, market.curve.q0 - market.delta_q_star)
        if pi2 < 0:
            raise ScenarioError(f"mechanism.pi2: derived reward {pi2:.6g} is negative at "
                                f"delta_q_star = {market.delta_q_star:.6g}")
    else:
        pi2 = r.number("mechanism", "pi2")
    if not pi2 >= 0:
        raise ScenarioError("mechanism.pi2: must be non-negative")

    p_requested = r.number("mechanism", "p", _REQUIRED)
    if not 0 <= p_requested < 1:
        raise ScenarioError("mechanism.p: must lie in [0, 1)")
    p = p_requested
    if p > 0:
        n = round(1.0 / p)
        if abs(n * p - 1.0) > 1e-12:
            p = 1.0 / n
            warnings.append(f"p = {p_requested:g} has non-integral 1/p; using n = {n} groups, "
                            f"effective p = {p:.12g}")
    lam = r.number("mechanism", "lambda", _REQUIRED)
    eps = r.number("mechanism", "epsilon", 0.0)
    try:
        PenaltySpec(lam, eps)
    except DomainError as exc:
        raise ScenarioError(f"[mechanism] penalty: {exc}") from None
    pi_rec = r.numbers("mechanism", "pi_rec", ())
    if any(x < 0 for x in pi_rec):
        raise ScenarioError("mechanism.pi_rec: must be non-negative")
    p_grid = _parse_grid(r.raw("mechanism", "p_grid", "0.01:0.5:0.01"))
    if not p_grid or any(not 0 < x < 1 for x in p_grid):
        raise ScenarioError("mechanism.p_grid: every point must lie in (0, 1)")

    kind = r.raw("theta", "kind", "degenerate")
    try:
        if kind == "degenerate":
            theta = ThetaDist.degenerate(r.number("theta", "value", 0.0))
        elif kind == "uniform":
            theta = ThetaDist.uniform(r.number("theta", "low", _REQUIRED),
                                      r.number("theta", "high", _REQUIRED))
        elif kind == "truncated-normal":
            theta = ThetaDist.truncated_normal(
                r.number("theta", "mu", 0.0), r.number("theta", "sigma", _REQUIRED),
                r.number("theta", "low", _REQUIRED), r.number("theta", "high", _REQUIRED))
        else:
            raise ScenarioError(f"theta.kind: unknown distribution {kind!r}")
    except DomainError as exc:
        raise ScenarioError(f"[theta]: {exc}") from None

    # q^c must stay positive over the whole support
    head = c + theta.low - pi0 - pi2
    if not head > 0:
        raise ScenarioError(
            f"c + theta_min - pi0 - pi2 = {head:.6g} <= 0: called consumption would not be "
            "positive for every theta in the support")

    try:
        plan = ThetaSamplePlan(r.raw("sampling", "method", "quadrature"),
                               r.number("sampling", "n_points", 16, int),
                               r.number("sampling", "seed", 0, int))
    except DomainError as exc:
        raise ScenarioError(f"[sampling]: {exc}") from None
    if not 0 <= plan.seed < 2 ** 64:
        raise ScenarioError("sampling.seed: must be an unsigned 64-bit integer")
    samples = r.number("sampling", "samples", 100_000, int)
    events = r.number("sampling", "events", 1000, int)
    if samples < 1 or events < 0:
        raise ScenarioError("sampling.samples must be positive and sampling.events non-negative")

    horizon = None
    if r.has("horizon"):
        event_days = r.raw("horizon", "event_days", None)
        if event_days is not None:
            try:
                event_days = tuple(int(x) for x in event_days.split(",") if x.strip())
            except ValueError:
                raise ScenarioError("horizon.event_days: expected integers") from None
        horizon = HorizonSection(
            r.number("horizon", "n_days", _REQUIRED, int),
            r.number("horizon", "n_events", len(event_days) if event_days else _REQUIRED, int),
            r.number("horizon", "m", 10, int),
            event_days,
            r.flag("horizon", "inflate_numerator", True),
            r.flag("horizon", "deflate_denominator", True),
        )

    for w in warnings:
        log.warning("%s: %s", name, w)
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    return Scenario(
        name=name, units=units, c=c, d_values=d_values, count=count, report=report,
        pi0=pi0, pi2=pi2, p=p, p_requested=p_requested, lam=lam, eps=eps,
        pi_rec=pi_rec, p_grid=p_grid, market=market, theta=theta, plan=plan,
        samples=samples, events=events, horizon=horizon,
        output_dir=r.raw("output", "dir", "out"), warnings=tuple(warnings), raw=raw,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_scenario(text, str(path))


def require(sc: Scenario, experiment: str) -> None:
    """Check the sections an experiment needs, naming whatever is missing."""
    if experiment not in EXPERIMENTS:
        raise ScenarioError(f"unknown experiment {experiment!r}")
    if experiment == "fig3":
        if sc.market is None or sc.market.curve is None:
            raise ScenarioError("market section required (supply curve) for fig3")
        if not sc.pi_rec:
            raise ScenarioError("mechanism.pi_rec required for fig3")
    if experiment in ("table2", "event"):
        if sc.market is None or sc.market.delta_q_star is None:
            raise ScenarioError(f"market section required (delta_q_star) for {experiment}")
    if experiment == "event" and sc.p == 0:
        raise ScenarioError("event settlement needs p > 0")
    if experiment == "compare":
        if sc.horizon is None:
            raise ScenarioError("horizon section required for compare")
        if len(sc.d_values) != 1:
            raise ScenarioError("compare needs a single consumer.d value")
    if experiment in ("table2", "event") and sc.p > 0:
        _check_capacity(sc, experiment)


def needed_count(sc: Scenario, d: float) -> int:
    """Homogeneous consumers needed to fill every group at reduction ``d π2``."""
    n = round(1.0 / sc.p)
    per_group = math.ceil(sc.market.delta_q_star / (d * sc.pi2) * (1.0 - 1e-12))
    return n * per_group


def _check_capacity(sc: Scenario, experiment: str) -> None:
    if sc.pi2 == 0:
        raise RecruitmentError("pi2 = 0: consumers offer no reduction, groups cannot be filled")
    if sc.count is None:
        return
    if experiment == "event":
        d_cycle = [sc.d_values[i % len(sc.d_values)] for i in range(sc.count)]
        capacity = sum(d * sc.pi2 for d in d_cycle)
        need = round(1.0 / sc.p) * sc.market.delta_q_star
        if capacity < need * (1 - 1e-12):
            raise RecruitmentError(f"population capacity {capacity:.6g} below required {need:.6g}")
    else:
        for d in sc.d_values:
            if sc.count < needed_count(sc, d):
                raise RecruitmentError(
                    f"consumer.count = {sc.count} too small for d = {d}: need {needed_count(sc, d)}")
