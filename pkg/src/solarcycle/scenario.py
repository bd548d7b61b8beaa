"""Scenario files: actors, agreements, lifecycle scripts and policy knobs.

Scenarios are JSON documents with ``schema_version`` 1. Money is written as
decimal strings in dollars (``"0.125"`` $/W, ``"12.50"``), energy as kWh
numbers; both are converted to fixed point on load. A ``fleets`` section
expands into many identical prosumer agreements with seeded failures,
which is how the desk-scale fixtures stay small.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

from .identity import FULL_NODE_ROLES, NodeClass, Role
from .lifecycle import THIRDS, Event, FeeMode
from .money import MICRO, to_micro, to_milli

SCHEMA_VERSION = 1
FIXTURES = Path(__file__).with_name("fixtures")


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, *, line: int | None = None, column: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}" + (f", column {column}" if column is not None else ""))
        if field is not None:
            where.append(f"field {field}")
        super().__init__(f"{message} ({'; '.join(where)})" if where else message)
        self.line = line
        self.column = column
        self.field = field


class ValidationError(ScenarioError):
    def __init__(self, violations: list[str]):
        super().__init__(f"{len(violations)} violation(s):\n  " + "\n  ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class ActorSpec:
    actor_id: str
    role: Role
    node_class: NodeClass
    fiat: int = 0


@dataclass(frozen=True)
class EventSpec:
    tick: int
    event: Event
    cause: str | None = None
    new_prosumer: str | None = None


@dataclass(frozen=True)
class RefusalSpec:
    # "prosumer" | "manufacturer" | "recycler"; refuses to pay liabilities before ``until`` (None: never pays)
    party: str
    until: int | None = None


@dataclass(frozen=True)
class AgreementSpec:
    agreement_id: str
    prosumer: str
    manufacturer: str
    recycler: str
    utility: str
    capacity_w: int
    cost_rate: int
    lifetime_months: int
    warranty_months: int
    transport_allowance: int = 0
    start_tick: int = 0
    monthly_kwh: tuple[int, ...] = (0,)
    expected_lifetime_kwh: int = 0
    events: tuple[EventSpec, ...] = ()
    refusals: tuple[RefusalSpec, ...] = ()

    def kwh_at(self, tick: int) -> int:
        k = tick - self.start_tick
        return self.monthly_kwh[k % len(self.monthly_kwh)]


@dataclass(frozen=True)
class PolicySpec:
    coins_per_batch: int = 100 * MICRO
    units_per_batch: int = to_milli(1000)
    gamma: Fraction = Fraction(4, 5)
    approach: str = "A"
    # applied at the start of year 1, 2, ...; the last entry repeats
    growth_factors: tuple[Fraction, ...] = ()

    def growth_for_year(self, year: int) -> Fraction | None:
        if not self.growth_factors or year < 1:
            return None
        return self.growth_factors[min(year, len(self.growth_factors)) - 1]


@dataclass(frozen=True)
class RcscSpec:
    burn_threshold: int | None = None
    burn_fraction: Fraction = Fraction(1, 10)
    band_lower: int | None = None
    band_upper: int | None = None
    trade_size: int = 0
    topup_after_ticks: int | None = 6
    fiat_budget: int = 0


@dataclass(frozen=True)
class MarketSpec:
    price: int = 2 * MICRO
    drift: float = 0.0
    volatility: float = 0.0
    impact: float = 0.0


@dataclass(frozen=True)
class Misreport:
    tick: int
    delta: int


@dataclass
class Scenario:
    name: str
    solution: int
    seed: int
    duration_ticks: int
    actors: list[ActorSpec]
    agreements: list[AgreementSpec]
    fee_mode: FeeMode = FeeMode.MONTHLY
    split_fractions: tuple[Fraction, ...] = THIRDS
    account_number: str = "RCY-0001"
    policy: PolicySpec = field(default_factory=PolicySpec)
    rcsc: RcscSpec = field(default_factory=RcscSpec)
    market: MarketSpec = field(default_factory=MarketSpec)
    misreports: tuple[Misreport, ...] = ()
    source: str | None = None

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)


# field readers


class _Fields:
    """Pulls typed fields out of a JSON object, collecting every problem instead of stopping."""

    def __init__(self, errors: list[str], path: str, raw: Any):
        self.errors = errors
        self.path = path
        if not isinstance(raw, dict):
            errors.append(f"{path}: expected an object")
            raw = {}
        self.raw = raw

    def _err(self, key: str, msg: str) -> None:
        self.errors.append(f"{self.path}.{key}: {msg}" if self.path else f"{key}: {msg}")

    def has(self, key: str) -> bool:
        return key in self.raw

    def get(self, key: str, kind, default: Any = ..., *, check=None) -> Any:
        if key not in self.raw:
            if default is ...:
                self._err(key, "required")
                return None
            return default
        value = self.raw[key]
        try:
            out = kind(value)
        except (TypeError, ValueError, ZeroDivisionError, ArithmeticError) as exc:
            self._err(key, f"bad value {value!r} ({exc})")
            return None if default is ... else default
        if check is not None:
            msg = check(out)
            if msg:
                self._err(key, msg)
        return out


def _int(v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError("expected an integer")
    return v


def _str(v: Any) -> str:
    if not isinstance(v, str) or not v:
        raise ValueError("expected a non-empty string")
    return v


def _money(v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise ValueError("expected a decimal amount")
    return to_micro(v)


def _frac(v: Any) -> Fraction:
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise ValueError("expected a number or fraction string")
    return Fraction(repr(v)) if isinstance(v, float) else Fraction(v)


def _float(v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError("expected a number")
    return float(v)


def _kwh_series(v: Any) -> tuple[int, ...]:
    vals = v if isinstance(v, list) else [v]
    if not vals:
        raise ValueError("empty series")
    out = tuple(to_milli(x) for x in vals if not isinstance(x, bool))
    if len(out) != len(vals) or min(out) < 0:
        raise ValueError("kWh values must be non-negative numbers")
    return out


def _nonneg(x: int) -> str | None:
    return "must be non-negative" if x is not None and x < 0 else None


def _positive(x: int) -> str | None:
    return "must be positive" if x is not None and x <= 0 else None


# sections


def _actor(errors: list[str], i: int, raw: Any) -> ActorSpec | None:
    f = _Fields(errors, f"actors[{i}]", raw)
    aid = f.get("id", _str)
    role = f.get("role", Role)
    default_class = NodeClass.FULL if role in FULL_NODE_ROLES else NodeClass.LIGHT
    node_class = f.get("node_class", NodeClass, default_class)
    fiat = f.get("fiat", _money, 0, check=_nonneg)
    if role is not None and node_class is NodeClass.FULL and role not in FULL_NODE_ROLES:
        errors.append(f"actors[{i}].node_class: {role.value} cannot run a full node")
    if aid is None or role is None or node_class is None:
        return None
    return ActorSpec(aid, role, node_class, fiat or 0)


def _event(errors: list[str], path: str, raw: Any) -> EventSpec | None:
    f = _Fields(errors, path, raw)
    tick = f.get("tick", _int, check=_nonneg)
    ev = f.get("event", Event)
    if ev is not None and ev not in (Event.FAIL, Event.REFURBISH, Event.LANDFILL, Event.REACH_EOL):
        errors.append(f"{path}.event: {ev.value} is driven by the settlement flow, not scriptable")
    cause = f.get("cause", _str, None)
    new_prosumer = f.get("new_prosumer", _str, None)
    if ev is Event.REFURBISH and new_prosumer is None:
        errors.append(f"{path}.new_prosumer: required for refurbish")
    if tick is None or ev is None:
        return None
    return EventSpec(tick, ev, cause, new_prosumer)


def _refusal(errors: list[str], path: str, raw: Any) -> RefusalSpec | None:
    f = _Fields(errors, path, raw)
    party = f.get("party", _str)
    if party is not None and party not in ("prosumer", "manufacturer", "recycler"):
        errors.append(f"{path}.party: must be prosumer, manufacturer or recycler")
    until = f.get("until", lambda v: None if v is None else _int(v), None)
    return RefusalSpec(party, until) if party else None


def _agreement(errors: list[str], i: int, raw: Any) -> AgreementSpec | None:
    path = f"agreements[{i}]"
    f = _Fields(errors, path, raw)
    vals = dict(
        agreement_id=f.get("id", _str),
        prosumer=f.get("prosumer", _str),
        manufacturer=f.get("manufacturer", _str),
        recycler=f.get("recycler", _str),
        utility=f.get("utility", _str),
        capacity_w=f.get("capacity_w", _int, check=_nonneg),
        cost_rate=f.get("cost_rate", _money, check=_positive),
        lifetime_months=f.get("lifetime_months", _int, check=_positive),
        warranty_months=f.get("warranty_months", _int, check=_nonneg),
        transport_allowance=f.get("transport_allowance", _money, 0, check=_nonneg),
        start_tick=f.get("start_tick", _int, 0, check=_nonneg),
        monthly_kwh=f.get("monthly_kwh", _kwh_series, (0,)),
        expected_lifetime_kwh=f.get("expected_lifetime_kwh", to_milli, 0),
    )
    events = [_event(errors, f"{path}.events[{j}]", e) for j, e in enumerate(f.get("events", list, []) or [])]
    refusals = [_refusal(errors, f"{path}.refuse[{j}]", r) for j, r in enumerate(f.get("refuse", list, []) or [])]
    if None in vals.values():
        return None
    if vals["warranty_months"] > vals["lifetime_months"]:
        errors.append(f"{path}.warranty_months: {vals['warranty_months']} exceeds lifetime {vals['lifetime_months']}")
    return AgreementSpec(
        **vals,
        events=tuple(e for e in events if e is not None),
        refusals=tuple(r for r in refusals if r is not None),
    )


def _expand_fleet(errors: list[str], i: int, raw: Any, seed: int) -> tuple[list[ActorSpec], list[AgreementSpec]]:
    """Generate ``count`` prosumers and agreements sharing one template."""
    path = f"fleets[{i}]"
    f = _Fields(errors, path, raw)
    count = f.get("count", _int, check=_nonneg)
    prefix = f.get("prefix", _str, f"fleet{i}")
    template = dict(
        manufacturer=f.get("manufacturer", _str),
        recycler=f.get("recycler", _str),
        utility=f.get("utility", _str),
        capacity_w=f.get("capacity_w", _int, check=_nonneg),
        cost_rate=f.get("cost_rate", _money, check=_positive),
        lifetime_months=f.get("lifetime_months", _int, check=_positive),
        warranty_months=f.get("warranty_months", _int, check=_nonneg),
        transport_allowance=f.get("transport_allowance", _money, 0, check=_nonneg),
        start_tick=f.get("start_tick", _int, 0, check=_nonneg),
        monthly_kwh=f.get("monthly_kwh", _kwh_series, (0,)),
    )
    failure_rate = f.get("failure_rate", _frac, Fraction(0))
    causes = f.get("failure_causes", list, ["hail damage"]) or ["hail damage"]
    landfill_rate = f.get("landfill_rate", _frac, Fraction(0))
    fiat = f.get("prosumer_fiat", _money, None)
    if count is None or None in template.values() or failure_rate is None:
        return [], []
    if template["warranty_months"] > template["lifetime_months"]:
        errors.append(f"{path}.warranty_months: exceeds lifetime")
        return [], []
    total_due = template["cost_rate"] * template["capacity_w"] + template["transport_allowance"]
    rng = random.Random(f"{seed}:{prefix}")
    actors, agreements = [], []
    for n in range(count):
        pid = f"{prefix}-{n:04d}"
        actors.append(ActorSpec(pid, Role.PROSUMER, NodeClass.LIGHT, 2 * total_due if fiat is None else fiat))
        events = []
        start, life = template["start_tick"], template["lifetime_months"]
        if rng.random() < failure_rate:
            t = start + rng.randrange(life)
            events.append(EventSpec(t, Event.FAIL, str(rng.choice(causes))))
        elif rng.random() < landfill_rate:
            events.append(EventSpec(start + life, Event.LANDFILL))
        agreements.append(AgreementSpec(agreement_id=f"{pid}-ag", prosumer=pid, events=tuple(events), **template))
    return actors, agreements


def _policy(errors: list[str], raw: Any) -> PolicySpec:
    f = _Fields(errors, "policy", raw)
    d = PolicySpec()
    growth = f.get("growth_factors", lambda v: tuple(_frac(x) for x in v), ())
    if f.has("growth_factor"):
        growth = (f.get("growth_factor", _frac),)
    gamma = f.get("gamma", _frac, d.gamma)
    spec = PolicySpec(
        coins_per_batch=f.get("coins_per_batch", _money, d.coins_per_batch, check=_positive),
        units_per_batch=f.get("units_per_batch_kwh", to_milli, d.units_per_batch, check=_positive),
        gamma=gamma,
        approach=f.get("approach", str, "A"),
        growth_factors=tuple(g for g in growth or () if g is not None),
    )
    if spec.approach not in ("A", "B"):
        errors.append("policy.approach: must be A or B")
    if gamma is not None and not 0 < gamma <= 1:
        errors.append("policy.gamma: must lie in (0, 1]")
    if any(g <= 0 for g in spec.growth_factors):
        errors.append("policy.growth_factors: must be positive")
    return spec


def _optional(kind):
    return lambda v: None if v is None else kind(v)


def _rcsc(errors: list[str], raw: Any) -> RcscSpec:
    f = _Fields(errors, "rcsc", raw)
    d = RcscSpec()
    return RcscSpec(
        burn_threshold=f.get("burn_threshold", _optional(_money), d.burn_threshold),
        burn_fraction=f.get("burn_fraction", _frac, d.burn_fraction),
        band_lower=f.get("band_lower", _optional(_money), d.band_lower),
        band_upper=f.get("band_upper", _optional(_money), d.band_upper),
        trade_size=f.get("trade_size", _money, d.trade_size, check=_nonneg),
        topup_after_ticks=f.get("topup_after_ticks", _optional(_int), d.topup_after_ticks),
        fiat_budget=f.get("fiat_budget", _money, d.fiat_budget, check=_nonneg),
    )


def _market(errors: list[str], raw: Any) -> MarketSpec:
    f = _Fields(errors, "market", raw)
    d = MarketSpec()
    return MarketSpec(
        price=f.get("price", _money, d.price, check=_positive),
        drift=f.get("drift", _float, d.drift),
        volatility=f.get("volatility", _float, d.volatility, check=lambda v: "must be non-negative" if v < 0 else None),
        impact=f.get("impact", _float, d.impact, check=lambda v: "must be non-negative" if v < 0 else None),
    )


# cross-reference checks


def _cross_check(sc: Scenario, errors: list[str]) -> None:
    roles: dict[str, Role] = {}
    for i, a in enumerate(sc.actors):
        if a.actor_id in roles:
            errors.append(f"actors[{i}].id: duplicate actor {a.actor_id!r}")
        roles[a.actor_id] = a.role
    if not any(a.node_class is NodeClass.FULL for a in sc.actors):
        errors.append("actors: at least one full node is needed to create blocks")
    seen: set[str] = set()
    for i, ag in enumerate(sc.agreements):
        path = f"agreements[{i}]"
        if ag.agreement_id in seen:
            errors.append(f"{path}.id: duplicate agreement {ag.agreement_id!r}")
        seen.add(ag.agreement_id)
        for party, role in (
            ("prosumer", Role.PROSUMER),
            ("manufacturer", Role.MANUFACTURER),
            ("recycler", Role.RECYCLER),
            ("utility", Role.UTILITY),
        ):
            actor = getattr(ag, party)
            if actor not in roles:
                errors.append(f"{path}.{party}: unknown actor {actor!r}")
            elif roles[actor] is not role:
                errors.append(f"{path}.{party}: {actor!r} is a {roles[actor].value}, expected {role.value}")
        if ag.start_tick >= sc.duration_ticks:
            errors.append(f"{path}.start_tick: {ag.start_tick} is beyond duration {sc.duration_ticks}")
        if sc.fee_mode is FeeMode.ENERGY and ag.expected_lifetime_kwh <= 0:
            errors.append(f"{path}.expected_lifetime_kwh: required in energy fee mode")
        for j, ev in enumerate(ag.events):
            epath = f"{path}.events[{j}]"
            if ev.tick >= sc.duration_ticks:
                errors.append(f"{epath}.tick: {ev.tick} is beyond duration {sc.duration_ticks}")
            if ev.event is Event.FAIL and not ag.start_tick <= ev.tick < ag.start_tick + ag.lifetime_months:
                errors.append(f"{epath}.tick: failure must fall within the panel's lifetime")
            if ev.new_prosumer is not None and roles.get(ev.new_prosumer) is not Role.PROSUMER:
                errors.append(f"{epath}.new_prosumer: unknown prosumer {ev.new_prosumer!r}")
    for k, m in enumerate(sc.misreports):
        if not 0 <= m.tick < sc.duration_ticks:
            errors.append(f"misreport[{k}].tick: outside the run")


def scenario_from_dict(doc: Mapping[str, Any], source: str | None = None) -> Scenario:
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ValidationError(["top level: expected an object"])
    f = _Fields(errors, "", doc)
    version = f.get("schema_version", _int)
    if version is not None and version != SCHEMA_VERSION:
        errors.append(f"schema_version: unsupported version {version}")
    seed = f.get("seed", _int, 0)
    solution = f.get("solution", _int, check=lambda s: None if s in (1, 2, 3) else "must be 1, 2 or 3")
    duration = f.get("duration_ticks", _int, check=_positive)
    actors = [_actor(errors, i, a) for i, a in enumerate(f.get("actors", list, []) or [])]
    agreements = [_agreement(errors, i, a) for i, a in enumerate(f.get("agreements", list, []) or [])]
    actors = [a for a in actors if a is not None]
    agreements = [a for a in agreements if a is not None]
    for i, fleet in enumerate(f.get("fleets", list, []) or []):
        new_actors, new_agreements = _expand_fleet(errors, i, fleet, seed or 0)
        actors.extend(new_actors)
        agreements.extend(new_agreements)
    fractions = f.get("split_fractions", lambda v: tuple(_frac(x) for x in v), THIRDS)
    if fractions is not None and (len(fractions) != 3 or sum(fractions) != 1 or min(fractions) < 0):
        errors.append("split_fractions: need three non-negative fractions summing to 1")
    misreports = []
    for k, m in enumerate(f.get("misreport", lambda v: v if isinstance(v, list) else [v], []) or []):
        mf = _Fields(errors, f"misreport[{k}]", m)
        tick, delta = mf.get("tick", _int), mf.get("delta", _money)
        if tick is not None and delta is not None:
            misreports.append(Misreport(tick, delta))
    sc = Scenario(
        name=f.get("name", _str, Path(source).stem if source else "scenario"),
        solution=solution or 0,
        seed=seed or 0,
        duration_ticks=duration or 0,
        actors=actors,
        agreements=agreements,
        fee_mode=f.get("fee_mode", FeeMode, FeeMode.MONTHLY),
        split_fractions=fractions or THIRDS,
        account_number=f.get("account_number", _str, "RCY-0001"),
        policy=_policy(errors, doc.get("policy", {})),
        rcsc=_rcsc(errors, doc.get("rcsc", {})),
        market=_market(errors, doc.get("market", {})),
        misreports=tuple(misreports),
        source=source,
    )
    if duration:
        _cross_check(sc, errors)
    if errors:
        raise ValidationError(errors)
    return sc


def resolve_path(path: str | Path) -> Path:
    """A file path, or the name of a bundled fixture such as ``normal_eol_10kw``."""
    p = Path(path)
    if p.is_file():
        return p
    bundled = FIXTURES / (p.name if p.suffix == ".json" else f"{p.name}.json")
    if bundled.exists():
        return bundled
    raise FileNotFoundError(path)


def load_scenario(path: str | Path) -> Scenario:
    p = resolve_path(path)
    text = p.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    return scenario_from_dict(doc, str(p))


def bundled_fixtures() -> list[str]:
    return sorted(p.stem for p in FIXTURES.glob("*.json"))
