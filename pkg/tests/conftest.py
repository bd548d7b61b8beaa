from __future__ import annotations

import pytest

from solarcycle.identity import Registry
from solarcycle.lifecycle import register_agreement
from solarcycle.money import to_micro

STANDARD_ACTORS = [
    ("manufacturer", "full", "maker-1"),
    ("recycler", "full", "recycler-1"),
    ("utility", "full", "utility-1"),
    ("regulator", "full", "regulator-1"),
    ("prosumer", "light", "home-1"),
    ("prosumer", "light", "home-2"),
]


def make_registry(seed: str = "tests") -> Registry:
    reg = Registry(seed)
    for role, node, aid in STANDARD_ACTORS:
        reg.register_actor(role, node, aid)
    return reg


def make_agreement(
    reg: Registry,
    aid: str = "ag-1",
    *,
    prosumer: str = "home-1",
    capacity_w: int = 10_000,
    rate: str = "0.125",
    lifetime: int = 300,
    warranty: int = 120,
    transport: str = "0",
    start: int = 0,
):
    return register_agreement(
        reg,
        aid,
        prosumer=prosumer,
        manufacturer="maker-1",
        recycler="recycler-1",
        utility="utility-1",
        capacity_w=capacity_w,
        cost_rate=to_micro(rate),
        lifetime_months=lifetime,
        warranty_months=warranty,
        transport_allowance=to_micro(transport),
        start_tick=start,
    )


@pytest.fixture
def registry() -> Registry:
    return make_registry()
