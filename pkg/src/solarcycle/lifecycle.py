"""Panel agreements, fee accrual, the lifecycle state machine and liability splits.

Amounts are integer micro-dollars, energy is integer milli-kWh and ticks are
months. Settlement rules are shared by all three settlement solutions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

from .identity import Registry, Role, UnknownActor
from .ledger import Transaction, TxKind
from .money import div_half_even


class LifecycleError(Exception):
    pass


class InvalidParameters(LifecycleError):
    pass


class UnknownParty(LifecycleError):
    pass


class PanelNotActive(LifecycleError):
    pass


class IllegalTransition(LifecycleError):
    pass


class WrongTickWindow(LifecycleError):
    pass


class PhaseNotSettleable(LifecycleError):
    pass


class Phase(str, enum.Enum):
    ACTIVE = "Active"
    REACHED_EOL = "ReachedEOL"
    FAILED_IN_WARRANTY = "FailedInWarranty"
    FAILED_POST_WARRANTY = "FailedPostWarranty"
    REFURBISHED = "Refurbished"
    SHIPPED = "Shipped"
    RECYCLED = "Recycled"
    LANDFILLED = "Landfilled"


class Event(str, enum.Enum):
    REACH_EOL = "reach-eol"
    FAIL = "fail"
    REFURBISH = "refurbish"
    SHIP = "ship"
    RECEIVE = "receive-at-recycler"
    LANDFILL = "landfill"


class FeeMode(str, enum.Enum):
    MONTHLY = "monthly"
    ENERGY = "energy"


SETTLEABLE = frozenset({Phase.REACHED_EOL, Phase.FAILED_IN_WARRANTY, Phase.FAILED_POST_WARRANTY})
THIRDS = (Fraction(1, 3), Fraction(1, 3), Fraction(1, 3))

# cost_rate is micro-dollars per watt; the band is the module price range
PLAUSIBLE_RATE = (42_800, 128_600)

_EVENT_KIND = {
    Event.REACH_EOL: TxKind.EOL_DECLARATION,
    Event.FAIL: TxKind.FAILURE_DECLARATION,
    Event.REFURBISH: TxKind.REFURBISHMENT,
    Event.SHIP: TxKind.SHIPMENT,
    Event.RECEIVE: TxKind.RECEIPT,
    Event.LANDFILL: TxKind.LANDFILL,
}

_AFTER_SETTLEABLE = {Event.SHIP: Phase.SHIPPED, Event.LANDFILL: Phase.LANDFILLED}
_TRANSITIONS: dict[Phase, dict[Event, Phase]] = {
    Phase.REACHED_EOL: {**_AFTER_SETTLEABLE, Event.REFURBISH: Phase.REFURBISHED},
    Phase.FAILED_IN_WARRANTY: dict(_AFTER_SETTLEABLE),
    Phase.FAILED_POST_WARRANTY: dict(_AFTER_SETTLEABLE),
    Phase.SHIPPED: {Event.RECEIVE: Phase.RECYCLED},
}


def rate_from_module_price(price: int, module_watts: int) -> int:
    """Micro-dollars per watt from a module price in micro-dollars, e.g. $45 / 350 W -> 128571."""
    return div_half_even(price, module_watts)


@dataclass(frozen=True)
class PanelAgreement:
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
    # only used by FeeMode.ENERGY
    expected_lifetime_kwh: int = 0

    @property
    def total_recycling_cost(self) -> int:
        return self.cost_rate * self.capacity_w

    @property
    def total_due(self) -> int:
        return self.total_recycling_cost + self.transport_allowance

    @property
    def channel(self) -> str:
        return f"agreement:{self.agreement_id}"

    @property
    def eol_tick(self) -> int:
        return self.start_tick + self.lifetime_months

    @property
    def warranty_end_tick(self) -> int:
        return self.start_tick + self.warranty_months

    def plausible_rate(self) -> bool:
        lo, hi = PLAUSIBLE_RATE
        return lo <= self.cost_rate <= hi

    def terms(self) -> dict:
        return {
            "agreement_id": self.agreement_id,
            "prosumer": self.prosumer,
            "manufacturer": self.manufacturer,
            "recycler": self.recycler,
            "utility": self.utility,
            "capacity_w": self.capacity_w,
            "cost_rate": self.cost_rate,
            "lifetime_months": self.lifetime_months,
            "warranty_months": self.warranty_months,
            "transport_allowance": self.transport_allowance,
            "start_tick": self.start_tick,
            "total_recycling_cost": self.total_recycling_cost,
        }


@dataclass
class PanelState:
    agreement_id: str
    prosumer: str
    phase: Phase = Phase.ACTIVE
    accrued: int = 0
    energy_total: int = 0
    failure_cause: str | None = None
    months_billed: int = 0
    last_billed_tick: int | None = None
    history: list[tuple[int, Phase]] = field(default_factory=list)


@dataclass(frozen=True)
class SettlementObligations:
    owed: dict[str, int]
    recycler_payout: int
    prosumer_reward: int

    @property
    def total_owed(self) -> int:
        return sum(self.owed.values())


@dataclass(frozen=True)
class AccrualEvent:
    agreement_id: str
    tick: int
    kwh: int
    fee: int


def register_agreement(
    registry: Registry,
    agreement_id: str,
    *,
    prosumer: str,
    manufacturer: str,
    recycler: str,
    utility: str,
    capacity_w: int,
    cost_rate: int,
    lifetime_months: int,
    warranty_months: int,
    transport_allowance: int = 0,
    start_tick: int = 0,
    expected_lifetime_kwh: int = 0,
) -> tuple[PanelAgreement, PanelState, Transaction]:
    """Record a new panel agreement on its private channel.

    The manufacturer authors the agreement transaction.
    """
    expected_roles = (
        (prosumer, Role.PROSUMER),
        (manufacturer, Role.MANUFACTURER),
        (recycler, Role.RECYCLER),
        (utility, Role.UTILITY),
    )
    for actor_id, role in expected_roles:
        try:
            actor = registry.get(actor_id)
        except UnknownActor:
            raise UnknownParty(actor_id) from None
        if actor.role is not role:
            raise UnknownParty(f"{actor_id} is a {actor.role.value}, expected {role.value}")
    blocked = [a for a in (prosumer, manufacturer, recycler) if registry.get(a).blocked]
    if blocked:
        raise InvalidParameters(f"{', '.join(blocked)} blocked after a prior default")
    if capacity_w < 0 or cost_rate <= 0 or lifetime_months <= 0 or warranty_months < 0 or transport_allowance < 0:
        raise InvalidParameters("capacity, rate, lifetime and allowances must be positive")
    if warranty_months > lifetime_months:
        raise InvalidParameters(f"warranty {warranty_months} exceeds lifetime {lifetime_months}")
    ag = PanelAgreement(
        agreement_id,
        prosumer,
        manufacturer,
        recycler,
        utility,
        capacity_w,
        cost_rate,
        lifetime_months,
        warranty_months,
        transport_allowance,
        start_tick,
        expected_lifetime_kwh,
    )
    registry.open_channel(ag.channel, [prosumer, manufacturer, recycler, utility])
    tx = registry.get(manufacturer).sign(ag.channel, TxKind.AGREEMENT, {**ag.terms(), "tick": start_tick})
    return ag, PanelState(agreement_id, prosumer), tx


def monthly_fee(agreement: PanelAgreement) -> int:
    """Base monthly contribution, half-even to the micro-dollar."""
    return div_half_even(agreement.total_due, agreement.lifetime_months)


def fee_for_month(agreement: PanelAgreement, month_index: int) -> int:
    """Fee for the ``month_index``-th month; the last month absorbs the rounding residue.

    When the base rounds up on a tiny total, months stop billing once the
    total is reached, so no fee is ever negative.
    """
    n = agreement.lifetime_months
    if not 0 <= month_index < n:
        return 0
    total = agreement.total_due
    paid = min(monthly_fee(agreement) * month_index, total)
    if month_index == n - 1:
        return total - paid
    return min(monthly_fee(agreement), total - paid)


def fee_schedule(agreement: PanelAgreement) -> list[int]:
    return [fee_for_month(agreement, k) for k in range(agreement.lifetime_months)]


def record_energy(
    agreement: PanelAgreement,
    state: PanelState,
    kwh: int,
    tick: int,
    mode: FeeMode = FeeMode.MONTHLY,
) -> AccrualEvent:
    """Meter ``kwh`` (milli-kWh) for this tick and work out the fee now due.

    Monthly mode bills at most one fee per tick. Energy mode bills the
    cumulative energy share of the total, so low-output months pay less.
    The fee is only due; ``apply_accrual`` books it once paid.
    """
    if state.phase is not Phase.ACTIVE:
        raise PanelNotActive(f"{agreement.agreement_id} is {state.phase.value}")
    if kwh < 0:
        raise InvalidParameters("negative energy reading")
    state.energy_total += kwh
    fee = 0
    if state.last_billed_tick != tick and tick >= agreement.start_tick:
        if mode is FeeMode.MONTHLY:
            fee = fee_for_month(agreement, state.months_billed)
        else:
            if agreement.expected_lifetime_kwh <= 0:
                raise InvalidParameters("energy mode needs expected_lifetime_kwh")
            target = min(
                agreement.total_due,
                div_half_even(state.energy_total * agreement.total_due, agreement.expected_lifetime_kwh),
            )
            fee = max(0, target - state.accrued)
        state.months_billed += 1
        state.last_billed_tick = tick
    return AccrualEvent(agreement.agreement_id, tick, kwh, fee)


def apply_accrual(agreement: PanelAgreement, state: PanelState, amount: int) -> None:
    if amount < 0 or state.accrued + amount > agreement.total_due:
        raise InvalidParameters(f"accrual {amount} would exceed the agreed total")
    state.accrued += amount


def _next_phase(agreement: PanelAgreement, state: PanelState, event: Event, tick: int) -> Phase:
    if state.phase is Phase.ACTIVE:
        if event is Event.REACH_EOL:
            if tick < agreement.eol_tick:
                raise WrongTickWindow(f"EOL at {agreement.eol_tick}, tick {tick}")
            return Phase.REACHED_EOL
        if event is Event.FAIL:
            if tick < agreement.start_tick or tick >= agreement.eol_tick:
                raise WrongTickWindow(f"failure at tick {tick} outside [start, EOL)")
            if tick < agreement.warranty_end_tick:
                return Phase.FAILED_IN_WARRANTY
            return Phase.FAILED_POST_WARRANTY
        raise IllegalTransition(f"{event.value} from Active")
    nxt = _TRANSITIONS.get(state.phase, {}).get(event)
    if nxt is None:
        raise IllegalTransition(f"{event.value} from {state.phase.value}")
    return nxt


def declare_transition(
    registry: Registry,
    agreement: PanelAgreement,
    state: PanelState,
    event: Event | str,
    tick: int,
    *,
    cause: str | None = None,
    new_prosumer: str | None = None,
) -> tuple[PanelState, Transaction]:
    """Move the panel to its next phase and produce the signed declaration.

    Failure declarations carry the cause and the remaining recycling cost.
    The recycler authors the receipt; the current holder authors the rest.
    """
    event = Event(event)
    phase = _next_phase(agreement, state, event, tick)
    new = replace(state, phase=phase, history=[*state.history, (tick, phase)])
    payload: dict = {"agreement_id": agreement.agreement_id, "event": event.value, "phase": phase.value, "tick": tick}
    if event is Event.FAIL:
        new.failure_cause = cause or "unspecified"
        payload["cause"] = new.failure_cause
        payload["remaining_cost"] = remaining_cost(agreement, state)
        payload["warranty_claim"] = phase is Phase.FAILED_IN_WARRANTY
        payload["manufacturer"] = agreement.manufacturer
    elif event is Event.REFURBISH:
        if new_prosumer is None:
            raise InvalidParameters("refurbish needs the new prosumer")
        if registry.get(new_prosumer).role is not Role.PROSUMER:
            raise InvalidParameters(f"{new_prosumer} is not a prosumer")
        registry.open_channel(agreement.channel, [new_prosumer])
        new.prosumer = new_prosumer
        payload["new_prosumer"] = new_prosumer
    author = agreement.recycler if event is Event.RECEIVE else state.prosumer
    tx = registry.get(author).sign(agreement.channel, _EVENT_KIND[event], payload)
    return new, tx


def remaining_cost(agreement: PanelAgreement, state: PanelState) -> int:
    return max(0, agreement.total_due - state.accrued)


def split_amount(amount: int, fractions: Sequence[Fraction] = THIRDS) -> dict[str, int]:
    """Split among (prosumer, manufacturer, recycler); the manufacturer takes the residue."""
    fp, fm, fr = (Fraction(f) for f in fractions)
    if min(fp, fm, fr) < 0 or fp + fm + fr != 1:
        raise InvalidParameters("split fractions must be non-negative and sum to 1")
    p = (amount * fp.numerator) // fp.denominator
    r = (amount * fr.numerator) // fr.denominator
    return {"prosumer": p, "manufacturer": amount - p - r, "recycler": r}


def settlement_split(
    agreement: PanelAgreement,
    state: PanelState,
    fractions: Sequence[Fraction] = THIRDS,
) -> SettlementObligations:
    if state.phase not in SETTLEABLE:
        raise PhaseNotSettleable(state.phase.value)
    remaining = remaining_cost(agreement, state)
    if state.phase is Phase.REACHED_EOL:
        # zero under monthly billing; an energy-mode shortfall is trued up by the prosumer
        owed = {"prosumer": remaining, "manufacturer": 0, "recycler": 0}
    elif state.phase is Phase.FAILED_IN_WARRANTY:
        owed = {"prosumer": 0, "manufacturer": remaining, "recycler": 0}
    else:
        owed = split_amount(remaining, fractions)
    payout = agreement.total_recycling_cost
    reward = state.accrued + sum(owed.values()) - payout
    return SettlementObligations(owed, payout, reward)


def party_actor(agreement: PanelAgreement, state: PanelState, party: str) -> str:
    return {"prosumer": state.prosumer, "manufacturer": agreement.manufacturer, "recycler": agreement.recycler}[party]


def upfront_cost(capacity_w: int, cost_rate: int) -> int:
    return capacity_w * cost_rate

