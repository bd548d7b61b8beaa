from fractions import Fraction

import pytest

import oracles
from conftest import make_agreement
from solarcycle.lifecycle import (
    Event,
    FeeMode,
    IllegalTransition,
    InvalidParameters,
    Phase,
    PanelNotActive,
    PhaseNotSettleable,
    UnknownParty,
    WrongTickWindow,
    apply_accrual,
    declare_transition,
    fee_for_month,
    fee_schedule,
    monthly_fee,
    rate_from_module_price,
    record_energy,
    remaining_cost,
    settlement_split,
    split_amount,
    upfront_cost,
)
from solarcycle.money import to_cents, to_micro


def accrue(ag, st, months):
    for t in range(months):
        ev = record_energy(ag, st, 1000, ag.start_tick + t)
        apply_accrual(ag, st, ev.fee)
    return st


def test_total_recycling_cost(registry):
    ag, st, tx = make_agreement(registry)
    assert ag.total_recycling_cost == 1_250_000_000
    assert tx.author == "maker-1" and tx.channel == ag.channel
    assert st.phase is Phase.ACTIVE


def test_rate_from_module_price():
    assert rate_from_module_price(to_micro(45), 350) == 128_571


def test_warranty_longer_than_lifetime(registry):
    with pytest.raises(InvalidParameters):
        make_agreement(registry, warranty=301)


def test_wrong_role_party(registry):
    with pytest.raises(UnknownParty):
        make_agreement(registry, prosumer="maker-1")


def test_monthly_fee_examples(registry):
    ag, _, _ = make_agreement(registry)
    assert monthly_fee(ag) == 4_166_667
    zero, _, _ = make_agreement(registry, "ag-0", capacity_w=0)
    assert monthly_fee(zero) == 0
    small, _, _ = make_agreement(registry, "ag-s", capacity_w=5000, rate="0.0428")
    assert monthly_fee(small) == 713_333


def test_schedule_matches_oracle_and_residue(registry):
    ag, _, _ = make_agreement(registry)
    sched = fee_schedule(ag)
    assert sched == oracles.fee_schedule(1_250_000_000, 300)
    assert sched[-1] == 4_166_567
    assert sum(sched) == 1_250_000_000
    assert fee_for_month(ag, 300) == 0


def test_full_lifetime_accrues_total(registry):
    ag, st, _ = make_agreement(registry)
    accrue(ag, st, 300)
    assert st.accrued == 1_250_000_000
    assert remaining_cost(ag, st) == 0
    # one fee per tick at most
    assert record_energy(ag, st, 10, 299).fee == 0


def test_remaining_after_sixty_months(registry):
    ag, st, _ = make_agreement(registry)
    accrue(ag, st, 60)
    assert remaining_cost(ag, st) == 999_999_980
    assert to_cents(remaining_cost(ag, st)) == to_cents(to_micro(1000))


def test_remaining_at_half_life_is_half(registry):
    ag, st, _ = make_agreement(registry, capacity_w=12_000, rate="0.1", lifetime=240, warranty=120, transport="24")
    accrue(ag, st, 120)
    assert remaining_cost(ag, st) == ag.total_due // 2


def test_energy_mode_tracks_share(registry):
    ag, st, _ = make_agreement(registry)
    ag = type(ag)(**{**ag.__dict__, "expected_lifetime_kwh": 300_000})
    ev = record_energy(ag, st, 1000, 0, FeeMode.ENERGY)
    assert ev.fee == 1_250_000_000 * 1000 // 300_000 + 1  # 4166666.67 rounds half-even up


def test_transitions(registry):
    ag, st, _ = make_agreement(registry)
    with pytest.raises(WrongTickWindow):
        declare_transition(registry, ag, st, Event.REACH_EOL, 299)
    eol, tx = declare_transition(registry, ag, st, Event.REACH_EOL, 300)
    assert eol.phase is Phase.REACHED_EOL and tx.author == "home-1"
    failed, _ = declare_transition(registry, ag, st, Event.FAIL, 100, cause="hail")
    assert failed.phase is Phase.FAILED_IN_WARRANTY
    late, ftx = declare_transition(registry, ag, st, Event.FAIL, 120, cause="hot spot")
    assert late.phase is Phase.FAILED_POST_WARRANTY
    assert ftx.payload["remaining_cost"] == ag.total_due and ftx.payload["cause"] == "hot spot"
    shipped, _ = declare_transition(registry, ag, eol, Event.SHIP, 300)
    with pytest.raises(IllegalTransition):
        declare_transition(registry, ag, shipped, Event.FAIL, 300)
    recycled, rtx = declare_transition(registry, ag, shipped, Event.RECEIVE, 301)
    assert recycled.phase is Phase.RECYCLED and rtx.author == "recycler-1"
    with pytest.raises(PanelNotActive):
        record_energy(ag, recycled, 5, 302)


def test_refurbish_moves_panel(registry):
    ag, st, _ = make_agreement(registry)
    eol, _ = declare_transition(registry, ag, st, Event.REACH_EOL, 300)
    ref, tx = declare_transition(registry, ag, eol, Event.REFURBISH, 300, new_prosumer="home-2")
    assert ref.phase is Phase.REFURBISHED and ref.prosumer == "home-2"
    assert "home-2" in registry.readers(ag.channel)
    with pytest.raises(IllegalTransition):
        declare_transition(registry, ag, ref, Event.SHIP, 301)


def test_split_examples(registry):
    ag, st, _ = make_agreement(registry, transport="25")
    full = accrue(ag, st, 300)
    eol, _ = declare_transition(registry, ag, full, Event.REACH_EOL, 300)
    obl = settlement_split(ag, eol)
    assert obl.total_owed == 0 and obl.prosumer_reward == to_micro(25)
    assert obl.recycler_payout == ag.total_recycling_cost

    ag2, st2, _ = make_agreement(registry, "ag-2")
    accrue(ag2, st2, 60)
    iw, _ = declare_transition(registry, ag2, st2, Event.FAIL, 60)
    assert settlement_split(ag2, iw).owed == {"prosumer": 0, "manufacturer": 999_999_980, "recycler": 0}

    assert split_amount(to_micro(900)) == {"prosumer": 300_000_000, "manufacturer": 300_000_000, "recycler": 300_000_000}
    assert split_amount(633_250_001) == dict(
        zip(("prosumer", "manufacturer", "recycler"), oracles.thirds_floor(633_250_001))
    )
    with pytest.raises(InvalidParameters):
        split_amount(10, (Fraction(1, 2), Fraction(1, 2), Fraction(1, 2)))
    with pytest.raises(PhaseNotSettleable):
        settlement_split(ag, st)


def test_upfront_comparison():
    rate = rate_from_module_price(to_micro(45), 350)
    assert upfront_cost(10_000, rate) == 1_285_710_000
