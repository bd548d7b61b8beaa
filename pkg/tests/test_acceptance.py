"""The ten acceptance criteria, each printing one PASS/FAIL line."""
from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import random
import time
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import pytest

import oracles
from solarcycle.escrow import EscrowEngine, EscrowError, withdrawal_message
from solarcycle.identity import Registry
from solarcycle.ledger import (
    Block,
    Chain,
    KeyPair,
    KeyRing,
    TxKind,
    create_block,
    make_transaction,
    validate_and_append,
    verify_chain_integrity,
    verify_signature,
)
from solarcycle.lifecycle import (
    Event,
    FeeMode,
    Phase,
    apply_accrual,
    declare_transition,
    fee_schedule,
    monthly_fee,
    rate_from_module_price,
    record_energy,
    register_agreement,
    settlement_split,
    upfront_cost,
)
from solarcycle.money import MICRO, to_micro
from solarcycle.offchain import FIAT, MissingLiabilityPayment, OffchainSettlement, Purpose, audit_account
from solarcycle.rccoin import Approach, SupplyPolicy, annual_policy_adjustment
from solarcycle.scenario import load_scenario
from solarcycle.sim import Simulation, write_outputs

KWH = 1000


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def run(n: int, title: str):
        notes: dict = {}
        t0 = time.perf_counter()
        ok = False
        try:
            yield notes
            ok = True
        finally:
            extra = ", ".join(f"{k}={v}" for k, v in notes.items())
            line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}  [{time.perf_counter() - t0:.2f}s{', ' + extra if extra else ''}]"
            with capsys.disabled():
                print("\n" + line)

    return run


def _registry(seed="acceptance"):
    reg = Registry(seed)
    for role, node, aid in [
        ("manufacturer", "full", "maker-1"),
        ("recycler", "full", "recycler-1"),
        ("utility", "full", "utility-1"),
        ("prosumer", "light", "home-1"),
        ("prosumer", "light", "home-2"),
    ]:
        reg.register_actor(role, node, aid)
    return reg


def _agreement(reg, aid, *, capacity_w, rate, lifetime, warranty, transport=0, prosumer="home-1"):
    return register_agreement(
        reg,
        aid,
        prosumer=prosumer,
        manufacturer="maker-1",
        recycler="recycler-1",
        utility="utility-1",
        capacity_w=capacity_w,
        cost_rate=rate,
        lifetime_months=lifetime,
        warranty_months=warranty,
        transport_allowance=transport,
    )


# 1


def test_fee_arithmetic(criterion):
    with criterion(1, "fee arithmetic: 10 kW at $0.125/W over 300 months") as notes:
        reg = _registry()
        ag, _, _ = _agreement(reg, "ag-1", capacity_w=10_000, rate=to_micro("0.125"), lifetime=300, warranty=120)
        fee = monthly_fee(ag)
        notes["monthly_fee"] = fee
        assert abs(fee - 4_166_667) <= 1
        sched = fee_schedule(ag)
        assert sched == oracles.fee_schedule(1_250_000_000, 300)
        assert sum(sched) == 1_250_000_000


# 2


def test_upfront_comparison(criterion):
    with criterion(2, "upfront comparison at 45/350 $/W") as notes:
        rate = rate_from_module_price(to_micro(45), 350)
        cost = upfront_cost(10_000, rate)
        notes["upfront"] = cost
        exact = Fraction(45, 350) * 10_000 * MICRO
        assert abs(cost - exact) <= to_micro("0.01")
        assert abs(cost - to_micro("1285.71")) <= to_micro("0.01")
        ag, _, _ = _agreement(_registry(), "ag-1", capacity_w=10_000, rate=rate, lifetime=300, warranty=120)
        assert sum(fee_schedule(ag)) == cost


# 3, 4


def _yearly_minted(series):
    totals = [r["minted"] for r in series if r["tick"] % 12 == 11]
    return [b - a for a, b in zip([0] + totals, totals)]


def _expected_yearly(sc, approach):
    """Hand arithmetic: whole batches of a year's energy times the year's award."""
    out = []
    for year in range(sc.duration_ticks // 12):
        g = Fraction(5, 4) ** year
        w = Fraction(100) / g if approach == "A" else Fraction(100)
        e = Fraction(1000) if approach == "A" else Fraction(1000) * g
        coins = 0
        for ag in sc.agreements:
            kwh = sum(Fraction(ag.kwh_at(t), KWH) for t in range(12 * year, 12 * year + 12))
            batches = kwh / e
            assert batches.denominator == 1, "fixture years hold whole batches"
            coins += batches * w
        out.append(int(coins * MICRO))
    return out


def test_supply_control_a(criterion):
    with criterion(3, "supply control A: W shrinks by g, yearly issuance flat") as notes:
        p = annual_policy_adjustment(SupplyPolicy(100 * MICRO, 1000 * KWH, approach=Approach.SHRINK_AWARD), "1.25")
        assert (p.coins_per_batch, p.units_per_batch) == (80 * MICRO, 1000 * KWH)
        sc = load_scenario("rc_growth_125")
        sim = Simulation(sc)
        years = _yearly_minted(sim.run().series)
        notes["yearly_coins"] = [y // MICRO for y in years]
        assert years == _expected_yearly(sc, "A")
        assert len(years) >= 2 and len(set(years)) == 1


def test_supply_control_b(criterion):
    with criterion(4, "supply control B: E grows by g, same issuance as A") as notes:
        p = annual_policy_adjustment(SupplyPolicy(100 * MICRO, 1000 * KWH, approach=Approach.GROW_UNITS), "1.25")
        assert (p.coins_per_batch, p.units_per_batch) == (100 * MICRO, 1250 * KWH)
        sc_b = load_scenario("rc_growth_125_b")
        sc_a = load_scenario("rc_growth_125")
        assert [a.monthly_kwh for a in sc_a.agreements] == [b.monthly_kwh for b in sc_b.agreements]
        years_b = _yearly_minted(Simulation(sc_b).run().series)
        years_a = _yearly_minted(Simulation(sc_a).run().series)
        notes["yearly_coins"] = [y // MICRO for y in years_b]
        assert years_b == _expected_yearly(sc_b, "B")
        assert len(set(years_b)) == 1 and years_a == years_b


# 5


def _fuzz_case(rng: random.Random, reg: Registry, i: int) -> str:
    lifetime = rng.randint(1, 360)
    warranty = rng.randint(0, lifetime)
    capacity = rng.randint(0, 20_000)
    rate = rng.randint(1, 400_000)
    transport = rng.choice([0, 0, rng.randint(1, 50 * MICRO)])
    ag, st, _ = _agreement(
        reg, f"fz-{i}", capacity_w=capacity, rate=rate, lifetime=lifetime, warranty=warranty, transport=transport
    )
    path = rng.choice(["eol", "fail"])
    months = lifetime if path == "eol" else rng.randint(0, lifetime - 1)
    sched = oracles.fee_schedule(ag.total_due, lifetime)
    energy_mode = rng.random() < 0.25
    if energy_mode:
        ag = dataclasses.replace(ag, expected_lifetime_kwh=rng.randint(1, 10**6) * KWH)
    for t in range(months):
        kwh = rng.randint(0, 2_000) * KWH
        ev = record_energy(ag, st, kwh, t, FeeMode.ENERGY if energy_mode else FeeMode.MONTHLY)
        apply_accrual(ag, st, ev.fee)
    if not energy_mode:
        assert st.accrued == sum(sched[:months])
    event = Event.REACH_EOL if path == "eol" else Event.FAIL
    settled, _ = declare_transition(reg, ag, st, event, months)
    obl = settlement_split(ag, settled)
    remaining = ag.total_due - settled.accrued
    assert settled.accrued + obl.total_owed == ag.total_due
    assert obl.recycler_payout == ag.total_recycling_cost
    if settled.phase is Phase.FAILED_IN_WARRANTY:
        assert months < warranty
        assert obl.owed == {"prosumer": 0, "manufacturer": remaining, "recycler": 0}
    elif settled.phase is Phase.FAILED_POST_WARRANTY:
        assert months >= warranty
        p, m, r = oracles.thirds_floor(remaining)
        assert obl.owed == {"prosumer": p, "manufacturer": m, "recycler": r}
    else:
        assert settled.phase is Phase.REACHED_EOL
        assert obl.owed["manufacturer"] == obl.owed["recycler"] == 0
    shipped, _ = declare_transition(reg, ag, settled, Event.SHIP, months)
    recycled, _ = declare_transition(reg, ag, shipped, Event.RECEIVE, months + rng.randint(0, 3))
    assert recycled.phase is Phase.RECYCLED
    return settled.phase.value


def test_settlement_paths(criterion):
    with criterion(5, "settlement paths: 10,000 random lifecycle scripts") as notes:
        rng = random.Random(20240605)
        reg = _registry("fuzz")
        t0 = time.perf_counter()
        seen: dict[str, int] = {}
        for i in range(10_000):
            phase = _fuzz_case(rng, reg, i)
            seen[phase] = seen.get(phase, 0) + 1
        dt = time.perf_counter() - t0
        notes.update(seen)
        assert len(seen) == 3
        assert dt < 30


# 6

KEYS = {n: KeyPair.derive("acceptance-ledger", n) for n in ("v1", "v2", "v3", "alice", "bob")}


def _ring():
    ring = KeyRing()
    for n, kp in KEYS.items():
        ring.add(n, kp.public_key, validator=n.startswith("v"))
    return ring


def _chain(length):
    chain = Chain(_ring())
    k = 0
    for h in range(length):
        body = []
        for _ in range(2):
            who = "alice" if k % 2 else "bob"
            body.append(make_transaction(KEYS[who], who, "public", TxKind.PAYMENT, {"n": k, "amount": k * 7 % 1000}))
            k += 1
        v = f"v{h % 3 + 1}"
        validate_and_append(chain, create_block(chain.head.header, body, v, KEYS[v], chain.rules, timestamp=h))
    return chain.branch()


def _different(rng, value):
    if isinstance(value, bytes):
        if not value:
            return bytes([rng.randrange(256)])
        out = bytearray(value)
        out[rng.randrange(len(out))] ^= 1 << rng.randrange(8)
        return bytes(out)
    if isinstance(value, TxKind):
        return rng.choice([k for k in TxKind if k is not value])
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return value + rng.choice([-1, 1]) * rng.randint(1, 1000)
    if isinstance(value, str):
        return rng.choice([n for n in list(KEYS) + ["public", "agreement:x", value + "x"] if n != value])
    if isinstance(value, dict):
        out = dict(value)
        key = rng.choice(sorted(out)) if out else "n"
        out[key] = _different(rng, out.get(key, 0))
        return out
    raise TypeError(type(value))


def _mutate(rng, blocks):
    i = rng.randrange(len(blocks))
    blk = blocks[i]
    if blk.body and rng.random() < 0.5:
        j = rng.randrange(len(blk.body))
        tx = blk.body[j]
        name = rng.choice([f.name for f in dataclasses.fields(tx)])
        body = list(blk.body)
        body[j] = dataclasses.replace(tx, **{name: _different(rng, getattr(tx, name))})
        mutated = Block(blk.header, tuple(body))
        where = f"tx.{name}"
    else:
        name = rng.choice([f.name for f in dataclasses.fields(blk.header)])
        mutated = Block(dataclasses.replace(blk.header, **{name: _different(rng, getattr(blk.header, name))}), blk.body)
        where = f"header.{name}"
    out = list(blocks)
    out[i] = mutated
    return i, where, out


def test_ledger_integrity(criterion):
    with criterion(6, "ledger integrity: 1,000 single-field mutations of a 500-block chain") as notes:
        t0 = time.perf_counter()
        blocks = _chain(499)
        assert len(blocks) == 500
        ring = _ring()
        assert verify_chain_integrity(blocks, ring).findings == []
        rng = random.Random(6)
        missed = []
        fields: dict[str, int] = {}
        for _ in range(1000):
            i, where, mutated = _mutate(rng, blocks)
            fields[where] = fields.get(where, 0) + 1
            if i not in verify_chain_integrity(mutated, ring).flagged_indices():
                missed.append((i, where))
        dt = time.perf_counter() - t0
        notes["false_negatives"] = len(missed)
        notes["fields"] = len(fields)
        assert missed == []
        assert dt < 30


# 7


def _escrow_model():
    """Four actors, one tiny agreement and a fixed alphabet of candidate transactions."""
    reg = Registry("no-bypass")
    for role, node, aid in [
        ("manufacturer", "full", "maker-1"),
        ("recycler", "full", "recycler-1"),
        ("utility", "full", "utility-1"),
        ("prosumer", "light", "home-1"),
    ]:
        reg.register_actor(role, node, aid)
    # $1 recycling cost plus a $0.50 reward, two monthly fees of $0.75
    ag, st, _ = _agreement(reg, "m", capacity_w=8, rate=to_micro("0.125"), lifetime=2, warranty=1, transport=500_000)
    scratch = EscrowEngine(reg)
    contract, deploy = scratch.deploy_escrow(ag, "utility-1")
    cid = contract.contract_id
    signers = sorted(contract.required_signers)
    util = reg.get("utility-1")

    def deposit(author, amount, purpose, payer, tick):
        payload = {"contract_id": cid, "amount": amount, "purpose": purpose, "payer": payer, "tick": tick}
        return reg.get(author).sign(ag.channel, TxKind.ESCROW_DEPOSIT, payload)

    alphabet = [
        ("deploy", deploy),
        ("fee-0", deposit("utility-1", 750_000, "fee", "home-1", 0)),
        ("fee-1", deposit("utility-1", 750_000, "fee", "home-1", 1)),
        ("fee-by-prosumer", deposit("home-1", 750_000, "fee", "home-1", 2)),
        ("liability-750k", deposit("utility-1", 750_000, "liability", "manufacturer", 3)),
        ("liability-1.5m", deposit("utility-1", 1_500_000, "liability", "manufacturer", 3)),
    ]
    eol, _ = declare_transition(reg, ag, st, Event.REACH_EOL, 2)
    _, eol_tx = declare_transition(reg, ag, st, Event.REACH_EOL, 2)
    _, fail_tx = declare_transition(reg, ag, st, Event.FAIL, 0)
    shipped, _ = declare_transition(reg, ag, eol, Event.SHIP, 2)
    _, receipt_tx = declare_transition(reg, ag, shipped, Event.RECEIVE, 2)
    alphabet += [("eol", eol_tx), ("fail", fail_tx), ("receipt", receipt_tx)]

    def withdrawal(author, beneficiary, to, amount, sigs):
        payload = {"contract_id": cid, "beneficiary": beneficiary, "to": to, "amount": amount, "signatures": sigs, "tick": 4}
        return reg.get(author).sign(ag.channel, TxKind.ESCROW_WITHDRAWAL, payload)

    for beneficiary, to, amount in [("prosumer", "home-1", 500_000), ("recycler", "recycler-1", 1_000_000)]:
        msg = withdrawal_message(cid, beneficiary, to, amount)
        full = {s: reg.get(s).keypair.sign(msg).hex() for s in signers}
        alphabet.append((f"{beneficiary}-all", withdrawal(to, beneficiary, to, amount, full)))
        for s in signers:
            partial = {k: v for k, v in full.items() if k != s}
            alphabet.append((f"{beneficiary}-no-{s}", withdrawal(to, beneficiary, to, amount, partial)))
        forged = dict(full, **{signers[0]: reg.get(signers[1]).keypair.sign(msg).hex()})
        alphabet.append((f"{beneficiary}-forged", withdrawal(to, beneficiary, to, amount, forged)))
        other_amount = withdrawal_message(cid, beneficiary, to, amount * 2)
        alphabet.append((
            f"{beneficiary}-inflated",
            withdrawal(to, beneficiary, to, amount * 2, {s: reg.get(s).keypair.sign(other_amount).hex() for s in signers}),
        ))
        alphabet.append((f"{beneficiary}-by-utility", withdrawal("utility-1", beneficiary, to, amount, full)))
    alphabet += [
        ("redeem-recycler", reg.get("recycler-1").sign("public", TxKind.PAYMENT,
                                                       {"purpose": "redemption", "amount": 1_000_000, "tick": 5})),
        ("redeem-prosumer", reg.get("home-1").sign("public", TxKind.PAYMENT,
                                                   {"purpose": "redemption", "amount": 500_000, "tick": 5})),
    ]
    keys = {a: reg.public_key(a) for a in reg.actors}
    return reg, alphabet, keys, cid, set(deploy.payload["required_signers"])


def _state_key(engine):
    return json.dumps(
        [engine.snapshot(), sorted(engine.wallets.items()), engine.issued, engine.redeemed], sort_keys=True, default=str
    )


def test_escrow_no_bypass(criterion):
    with criterion(7, "escrow no-bypass: every sequence of up to 6 transactions") as notes:
        t0 = time.perf_counter()
        reg, alphabet, keys, cid, required = _escrow_model()
        stats = {"distinct_states": 0, "releases": 0, "blocked_attempts": 0}
        violations = []
        seen: set = set()

        def balance(engine):
            c = engine.contracts.get(cid)
            return c.balance if c else 0

        def dfs(engine, used, depth):
            key = (frozenset(used), _state_key(engine))
            if key in seen:
                return
            seen.add(key)
            stats["distinct_states"] += 1
            if depth == 6:
                return
            for idx, (name, tx) in enumerate(alphabet):
                if idx in used:
                    continue
                trial = engine.clone()
                before = balance(trial)
                try:
                    trial.apply(tx)
                except EscrowError:
                    # a refused transaction leaves the state untouched
                    if _state_key(trial) != _state_key(engine):
                        violations.append(("refusal-mutated-state", name))
                    if tx.kind is TxKind.ESCROW_WITHDRAWAL:
                        stats["blocked_attempts"] += 1
                    continue
                if balance(trial) < before:
                    p = tx.payload
                    digest = oracles.withdrawal_digest(cid, p["beneficiary"], p["to"], p["amount"])
                    legit = (
                        tx.kind is TxKind.ESCROW_WITHDRAWAL
                        and oracles.all_signed(keys, required, digest, p["signatures"])
                        and before - balance(trial) == p["amount"]
                    )
                    if not legit:
                        violations.append(("unsigned-release", name))
                    stats["releases"] += 1
                if not trial.conserved():
                    violations.append(("conservation", name))
                dfs(trial, used | {idx}, depth + 1)

        dfs(EscrowEngine(reg), frozenset(), 0)
        dt = time.perf_counter() - t0
        notes.update(stats)
        notes["alphabet"] = len(alphabet)
        assert violations == []
        assert stats["releases"] > 0 and stats["blocked_attempts"] > 0
        assert dt < 60


# 9


def _random_history(rng: random.Random, h: int):
    reg = _registry(f"history-{h}")
    for a in ("home-1", "home-2", "maker-1", "recycler-1"):
        reg.get(a).wallet[FIAT] = to_micro(10**6)
    bank = OffchainSettlement(reg, "utility-1")
    txs = []
    runs = []
    for k in range(rng.randint(1, 4)):
        lifetime = rng.randint(2, 30)
        ag, st, tx = _agreement(
            reg,
            f"h{h}-{k}",
            prosumer=rng.choice(["home-1", "home-2"]),
            capacity_w=rng.randint(100, 20_000),
            rate=rng.randint(1_000, 300_000),
            lifetime=lifetime,
            warranty=rng.randint(0, lifetime),
            transport=rng.choice([0, rng.randint(1, 30) * MICRO]),
        )
        txs.append(tx)
        end = lifetime if rng.random() < 0.5 else rng.randint(0, lifetime - 1)
        runs.append([ag, st, end])
    misreported = False
    for t in range(max(r[2] for r in runs) + 1):
        for r in runs:
            ag, st, end = r
            if st.phase is not Phase.ACTIVE:
                continue
            if t < end:
                fee = record_energy(ag, st, rng.randint(0, 1500) * KWH, t).fee
                if fee:
                    txs.append(bank.post_payment(st.prosumer, "utility-1", fee, Purpose.FEE, ag, st, due=fee, tick=t))
                    apply_accrual(ag, st, fee)
            elif t == end:
                event = Event.REACH_EOL if end == ag.lifetime_months else Event.FAIL
                settled, dtx = declare_transition(reg, ag, st, event, t)
                txs.append(dtx)
                refusing = {rng.choice(["prosumer", "manufacturer", "recycler"])} if rng.random() < 0.2 else set()
                try:
                    final, flow = bank.run_settlement_flow(ag, settled, t, refusing=refusing)
                except MissingLiabilityPayment as exc:
                    flow, final = exc.transactions, settled
                txs.extend(flow)
                r[1] = final
        if rng.random() < 0.3:
            delta = rng.choice([0, 0, rng.randint(-(10**8), 10**8)])
            misreported |= delta != 0
            txs.append(bank.post_balance("utility-1", t, reported=bank.bank_balance + delta))
    return bank, txs, misreported


def test_solution1_audit_oracle(criterion):
    with criterion(9, "solution-1 audit vs brute-force replay on 100 random histories") as notes:
        rng = random.Random(9)
        flagged = payments = 0
        for h in range(100):
            bank, txs, misreported = _random_history(rng, h)
            acct = bank.account.account_number
            mirrored = [
                t.payload
                for t in txs
                if t.payload.get("account") == acct
                and t.payload.get("purpose") in ("fee", "liability", "transport-reward", "recycler-payment")
            ]
            payments += len(mirrored)
            rep = audit_account(txs, acct)
            assert rep.expected_balance == oracles.replay_sum(mirrored) == bank.bank_balance
            assert bool(rep.discrepancies) == misreported
            flagged += bool(rep.discrepancies)
        notes["payments"] = payments
        notes["misreport_histories"] = flagged


# 8, 10

DESK = {1: "desk_solution1", 2: "desk_solution2", 3: "desk_solution3"}


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _coin_recount(sim: Simulation) -> list[str]:
    """Per-block recount of minted and burned coins straight from committed transactions."""
    problems = []
    rows = {r["height"]: r for r in sim.series}
    minted = burned = 0
    for blk in sim.chain.branch()[1:]:
        for tx in blk.body:
            if tx.kind is TxKind.MINT:
                minted += tx.payload["coins"]
            elif tx.kind is TxKind.BURN:
                burned += tx.payload["coins"]
        row = rows[blk.height]
        if (row["minted"], row["burned"]) != (minted, burned):
            problems.append(f"height {blk.height}: ledger says {row['minted']}/{row['burned']}, chain {minted}/{burned}")
        if row["circulating"] != minted - burned or minted - burned != row["wallets"] + row["escrowed"] + row["reserve"]:
            problems.append(f"height {blk.height}: holdings do not balance")
    return problems


@functools.lru_cache(maxsize=None)
def _desk(solution: int, attempt: int, out_root: str) -> dict:
    sc = load_scenario(DESK[solution])
    out = Path(out_root) / f"s{solution}-{attempt}"
    # a warm cache from an earlier run would hide the verification cost
    verify_signature.cache_clear()
    t0 = time.perf_counter()
    sim = Simulation(sc)
    report = sim.run()
    paths = write_outputs(report, sim.chain, out)
    seconds = time.perf_counter() - t0
    summary = {
        "seconds": seconds,
        "agreements": len(sc.agreements),
        "months": sc.duration_ticks,
        "transactions": report.transactions,
        "integrity": len(report.integrity),
        "phases": sorted({s["phase"] for s in report.settlements}),
        "landfilled": sorted(s["agreement_id"] for s in report.settlements if s["phase"] == "Landfilled"),
        "findings": sorted((f["type"], f.get("agreement_id", "")) for f in report.audit),
        "digests": {k: _sha(p) for k, p in paths.items()},
    }
    if solution == 3:
        summary["blocks"] = report.blocks
        summary["recount"] = _coin_recount(sim)
    return summary


@pytest.fixture(scope="module")
def desk_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("desk"))


@pytest.mark.slow
def test_coin_conservation(criterion, desk_dir):
    with criterion(8, "coin conservation at every block of the desk solution-3 run") as notes:
        run = _desk(3, 0, desk_dir)
        notes["blocks"] = run["blocks"]
        assert run["recount"] == []


@pytest.mark.slow
@pytest.mark.parametrize("solution", [1, 2, 3])
def test_desk_scale(criterion, desk_dir, solution):
    with criterion(10, f"desk scale, solution {solution}: 1,000 agreements x 300 months, < 60 s, repeatable") as notes:
        first = _desk(solution, 0, desk_dir)
        second = _desk(solution, 1, desk_dir)
        notes["seconds"] = f"{first['seconds']:.1f}/{second['seconds']:.1f}"
        notes["transactions"] = first["transactions"]
        assert first["agreements"] == 1000 and first["months"] >= 300
        # the fleet injects a few landfilled panels; they are the only findings
        notes["landfilled"] = len(first["landfilled"])
        assert first["integrity"] == 0
        assert set(first["phases"]) <= {"Recycled", "Refurbished", "Landfilled"}
        assert first["findings"] == [("landfilled", a) for a in first["landfilled"]]
        assert first["digests"] == second["digests"]
        assert first["seconds"] < 60 and second["seconds"] < 60
