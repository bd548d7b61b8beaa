"""Deterministic monthly event loop tying the ledger to one of the three solutions.

Each tick runs, in order: the yearly supply adjustment (solution 3), new
agreements, metering with fee or mint handling, scripted and automatic
lifecycle events, settlement flows, account postings or reserve policy,
and finally one block proposed by the next validator in rotation.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import audit as audit_mod
from .escrow import EscrowEngine, EscrowError, EscrowPhase
from .identity import PUBLIC_CHANNEL, Registry
from .ledger import (
    Chain,
    LedgerError,
    Transaction,
    TxKind,
    create_block,
    dump_chain,
    export_blocks,
    hash_digest,
    validate_and_append,
)
from .lifecycle import (
    SETTLEABLE,
    Event,
    LifecycleError,
    PanelAgreement,
    PanelState,
    Phase,
    apply_accrual,
    declare_transition,
    party_actor,
    record_energy,
    register_agreement,
    settlement_split,
)
from .money import MICRO
from .offchain import FIAT, MissingLiabilityPayment, OffchainSettlement, Purpose
from .rccoin import (
    Approach,
    CoinEconomy,
    CoinError,
    InsufficientFiat,
    InsufficientLiquidity,
    InsufficientReserve,
    MarketPrice,
    RcscRules,
    SupplyPolicy,
    check_conservation,
)
from .scenario import AgreementSpec, Scenario

log = logging.getLogger(__name__)


class SimulationError(Exception):
    pass


@dataclass
class AgreementRun:
    spec: AgreementSpec
    agreement: PanelAgreement | None = None
    state: PanelState | None = None
    settled_tick: int | None = None
    recycler_paid: int = 0
    prosumer_reward: int = 0
    owed: dict[str, int] = field(default_factory=dict)
    coins_paid: dict[str, int] = field(default_factory=dict)


@dataclass
class SimReport:
    scenario: str
    solution: int
    seed: int
    duration_ticks: int
    head_hash: str
    blocks: int
    transactions: int
    settlements: list[dict[str, Any]]
    integrity: list[dict[str, Any]]
    audit: list[dict[str, Any]]
    compliance: list[dict[str, Any]]
    series: list[dict[str, Any]]
    escrows: list[dict[str, Any]] = field(default_factory=list)
    rcsc_log: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.integrity and not self.audit

    def settlement(self, agreement_id: str) -> dict[str, Any]:
        for s in self.settlements:
            if s["agreement_id"] == agreement_id:
                return s
        raise KeyError(agreement_id)

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": 1,
            "scenario": self.scenario,
            "solution": self.solution,
            "seed": self.seed,
            "duration_ticks": self.duration_ticks,
            "head_hash": self.head_hash,
            "blocks": self.blocks,
            "transactions": self.transactions,
            "settlements": self.settlements,
            "integrity": self.integrity,
            "audit": self.audit,
            "compliance": self.compliance,
            "escrows": self.escrows,
            "rcsc_log": self.rcsc_log,
            "series": self.series,
        }


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        self.sc = scenario
        self.registry = Registry(f"{scenario.name}:{scenario.seed}")
        self.chain = Chain(self.registry)
        self.pending: list[Transaction] = []
        self.compliance: list[dict[str, Any]] = []
        self.series: list[dict[str, Any]] = []
        self.runs = {a.agreement_id: AgreementRun(a) for a in scenario.agreements}
        self.by_start: dict[int, list[AgreementRun]] = {}
        for r in self.runs.values():
            self.by_start.setdefault(r.spec.start_tick, []).append(r)
        self.active: list[AgreementRun] = []
        self.settling: list[AgreementRun] = []
        self.tx_count = 0

        for a in scenario.actors:
            actor = self.registry.register_actor(a.role, a.node_class, a.actor_id, tick=0)
            actor.wallet[FIAT] = a.fiat
            self.pending.append(actor.registration)
        self.validators = self.registry.validators()
        utilities = sorted({a.utility for a in scenario.agreements}) or [
            a.actor_id for a in scenario.actors if a.role.value == "utility"
        ]
        self.utilities = utilities

        self.offchain: dict[str, OffchainSettlement] = {}
        self.escrow: EscrowEngine | None = None
        self.economy: CoinEconomy | None = None
        self.backing: dict[str, int] = {}
        if scenario.solution == 1:
            for u in utilities:
                acct = scenario.account_number if len(utilities) == 1 else f"{scenario.account_number}:{u}"
                self.offchain[u] = OffchainSettlement(self.registry, u, acct)
        elif scenario.solution == 2:
            self.escrow = EscrowEngine(self.registry, scenario.split_fractions)
        elif scenario.solution == 3:
            p, r, m = scenario.policy, scenario.rcsc, scenario.market
            self.economy = CoinEconomy(
                self.registry,
                SupplyPolicy(p.coins_per_batch, p.units_per_batch, p.gamma, 0, Approach(p.approach)),
                MarketPrice(m.price, scenario.seed, m.drift, m.volatility, m.impact),
                RcscRules(r.burn_threshold, r.burn_fraction, r.band_lower, r.band_upper, r.trade_size, r.topup_after_ticks),
                operator=utilities[0],
                fiat_budget=r.fiat_budget,
                fractions=scenario.split_fractions,
            )
        self.misreports = {m.tick: m.delta for m in scenario.misreports}

    # helpers

    def _emit(self, *txs: Transaction | None) -> None:
        self.pending.extend(tx for tx in txs if tx is not None)

    def _flag(self, kind: str, tick: int, agreement_id: str | None = None, **detail: Any) -> None:
        self.compliance.append({"type": kind, "tick": tick, "agreement_id": agreement_id, **detail})

    def _refusing(self, run: AgreementRun, tick: int) -> set[str]:
        return {r.party for r in run.spec.refusals if r.until is None or tick < r.until}

    def _transition(self, run: AgreementRun, event: Event, tick: int, **kw: Any) -> Transaction:
        run.state, tx = declare_transition(self.registry, run.agreement, run.state, event, tick, **kw)
        if self.escrow is not None:
            self.escrow.apply(tx)
        self._emit(tx)
        return tx

    # phases of a tick

    def _adjust_policy(self, tick: int) -> None:
        if self.economy is None or tick == 0 or tick % 12:
            return
        g = self.sc.policy.growth_for_year(tick // 12)
        if g is not None:
            self._emit(self.economy.adjust_policy(g, tick))

    def _open_agreements(self, tick: int) -> None:
        for run in self.by_start.get(tick, ()):
            s = run.spec
            try:
                ag, st, tx = register_agreement(
                    self.registry,
                    s.agreement_id,
                    prosumer=s.prosumer,
                    manufacturer=s.manufacturer,
                    recycler=s.recycler,
                    utility=s.utility,
                    capacity_w=s.capacity_w,
                    cost_rate=s.cost_rate,
                    lifetime_months=s.lifetime_months,
                    warranty_months=s.warranty_months,
                    transport_allowance=s.transport_allowance,
                    start_tick=s.start_tick,
                    expected_lifetime_kwh=s.expected_lifetime_kwh,
                )
            except LifecycleError as exc:
                self._flag("registration-refused", tick, s.agreement_id, detail=str(exc))
                continue
            run.agreement, run.state = ag, st
            self._emit(tx)
            if self.escrow is not None:
                _, dtx = self.escrow.deploy_escrow(ag, s.utility, tick=tick)
                self._emit(dtx)
            self.active.append(run)

    def _meter(self, tick: int) -> None:
        deposits: dict[str, list] = {}
        summary: dict[str, dict[str, int]] = {}
        for run in self.active:
            ag, st = run.agreement, run.state
            if st.phase is not Phase.ACTIVE or tick >= ag.eol_tick:
                continue
            kwh = run.spec.kwh_at(tick)
            ev = record_energy(ag, st, kwh, tick, self.sc.fee_mode)
            summary.setdefault(ag.utility, {})[st.prosumer] = st.energy_total
            if self.economy is not None:
                # coins fund the escrow; the fee schedule is tracked only to size liabilities
                if ev.fee:
                    apply_accrual(ag, st, ev.fee)
                self._emit(self.economy.mint_on_generation(ag, st, kwh, tick))
                continue
            if ev.fee <= 0:
                continue
            wallet = self.registry.get(st.prosumer).wallet
            if wallet.get(FIAT, 0) < ev.fee:
                self._flag("missed-fee", tick, ag.agreement_id, amount=ev.fee)
                continue
            if self.escrow is not None:
                wallet[FIAT] -= ev.fee
                self.backing[ag.utility] = self.backing.get(ag.utility, 0) + ev.fee
                deposits.setdefault(ag.utility, []).append((ag, ev.fee))
            else:
                bank = self.offchain[ag.utility]
                self._emit(
                    bank.post_payment(st.prosumer, ag.utility, ev.fee, Purpose.FEE, ag, st, due=ev.fee, tick=tick)
                )
            apply_accrual(ag, st, ev.fee)
        if self.escrow is not None:
            for u, entries in deposits.items():
                self._emit(self.escrow.batch_deposit(u, entries, tick))
        for u, totals in summary.items():
            # gross cumulative generation per prosumer, visible to everyone
            self._emit(
                self.registry.get(u).sign(
                    PUBLIC_CHANNEL, TxKind.ENERGY_SUMMARY, {"utility": u, "cumulative_kwh": totals, "tick": tick}
                )
            )

    def _events(self, tick: int) -> None:
        for run in list(self.active):
            ag, st = run.agreement, run.state
            if st.phase is Phase.ACTIVE and tick >= ag.eol_tick:
                self._transition(run, Event.REACH_EOL, tick)
            for ev in run.spec.events:
                if ev.tick != tick or (ev.event is Event.REACH_EOL and run.state.phase is not Phase.ACTIVE):
                    continue
                try:
                    self._transition(run, ev.event, tick, cause=ev.cause, new_prosumer=ev.new_prosumer)
                except (LifecycleError, EscrowError) as exc:
                    self._flag("illegal-event", tick, ag.agreement_id, event=ev.event.value, detail=str(exc))
            phase = run.state.phase
            if phase is Phase.LANDFILLED:
                self._flag("landfilled", tick, ag.agreement_id)
            if phase is not Phase.ACTIVE:
                self.active.remove(run)
                if phase in SETTLEABLE:
                    self.settling.append(run)

    def _settle(self, tick: int) -> None:
        still = []
        for run in self.settling:
            if run.state.phase is Phase.LANDFILLED:
                continue
            if not run.owed and run.state.phase in SETTLEABLE:
                run.owed = dict(settlement_split(run.agreement, run.state, self.sc.split_fractions).owed)
            try:
                done = {1: self._settle_offchain, 2: self._settle_escrow, 3: self._settle_coins}[self.sc.solution](
                    run, tick
                )
            except (MissingLiabilityPayment, InsufficientFiat) as exc:
                self._emit(*exc.transactions)
                missing = exc.missing
                new = [m for m in missing if not self.registry.get(party_actor(run.agreement, run.state, m)).blocked]
                for m in new:
                    self.registry.get(party_actor(run.agreement, run.state, m)).blocked = True
                    self._flag("default", tick, run.agreement.agreement_id, party=m)
                done = False
                if self.economy is not None:
                    try:
                        self._emit(*self.economy.topup_defaulted(run.agreement, tick))
                    except InsufficientReserve as low:
                        self._flag("illiquid", tick, run.agreement.agreement_id, detail=str(low))
            except (InsufficientLiquidity, InsufficientReserve) as exc:
                self._flag("illiquid", tick, run.agreement.agreement_id, detail=str(exc))
                done = False
            if done:
                run.settled_tick = tick
            else:
                still.append(run)
        self.settling = still

    def _settle_offchain(self, run: AgreementRun, tick: int) -> bool:
        ag = run.agreement
        bank = self.offchain[ag.utility]
        try:
            run.state, txs = bank.run_settlement_flow(
                ag, run.state, tick, refusing=self._refusing(run, tick), fractions=self.sc.split_fractions
            )
        finally:
            flow = bank.flows.get(ag.agreement_id)
            if flow is not None:
                run.owed = dict(flow.obligations.owed)
        self._emit(*txs)
        obl = bank.flows[ag.agreement_id].obligations
        run.recycler_paid, run.prosumer_reward = obl.recycler_payout, obl.prosumer_reward
        return True

    def _settle_escrow(self, run: AgreementRun, tick: int) -> bool:
        ag, eng = run.agreement, self.escrow
        c = eng.contract_for(ag.agreement_id)
        if c.phase is EscrowPhase.SHORTFALL_PENDING:
            refusing = self._refusing(run, tick)
            missing, txs = [], []
            for party, due in list(c.dues.items()):
                if due <= 0:
                    continue
                payer = party_actor(ag, run.state, party)
                wallet = self.registry.get(payer).wallet
                if party in refusing or wallet.get(FIAT, 0) < due:
                    missing.append(party)
                    continue
                wallet[FIAT] -= due
                self.backing[ag.utility] = self.backing.get(ag.utility, 0) + due
                txs.append(eng.convert_and_deposit(ag, due, due=due, payer=payer, purpose="liability", tick=tick))
            if missing:
                raise MissingLiabilityPayment(ag.agreement_id, missing, txs)
            self._emit(*txs)
        if c.phase is not EscrowPhase.MATURED:
            return False
        if c.prosumer_payout > 0 and "prosumer" not in c.paid:
            self._withdraw_and_redeem(ag, "prosumer", tick)
        if run.state.phase in SETTLEABLE:
            self._transition(run, Event.SHIP, tick)
        if run.state.phase is Phase.SHIPPED:
            self._transition(run, Event.RECEIVE, tick)
        self._withdraw_and_redeem(ag, "recycler", tick)
        run.recycler_paid = c.paid.get("recycler", 0)
        run.prosumer_reward = c.paid.get("prosumer", 0)
        return True

    def _withdraw_and_redeem(self, ag: PanelAgreement, beneficiary: str, tick: int) -> None:
        eng = self.escrow
        sigs = eng.collect_signatures(ag, beneficiary)
        tx = eng.release_withdrawal(ag, beneficiary, sigs, tick=tick)
        self._emit(tx)
        to, amount = tx.payload["to"], tx.payload["amount"]
        # tokens go straight back to fiat at the peg
        self._emit(eng.redeem(to, amount, tick=tick, ref=ag.agreement_id))
        self.backing[ag.utility] -= amount
        w = self.registry.get(to).wallet
        w[FIAT] = w.get(FIAT, 0) + amount

    def _settle_coins(self, run: AgreementRun, tick: int) -> bool:
        ag, eco = run.agreement, self.economy
        if run.state.phase in SETTLEABLE:
            self._emit(*eco.settle_liabilities_in_coins(ag, run.state, tick, refusing=self._refusing(run, tick)))
        price = eco.market.price
        self._emit(*eco.release_payout(ag, run.state, "prosumer", tick))
        if run.state.phase in SETTLEABLE:
            self._transition(run, Event.SHIP, tick)
        if run.state.phase is Phase.SHIPPED:
            self._transition(run, Event.RECEIVE, tick)
        self._emit(*eco.release_payout(ag, run.state, "recycler", tick))
        paid = eco.paid_out.get(ag.agreement_id, {})
        run.coins_paid = dict(paid)
        # fiat value at the settlement-tick price
        run.recycler_paid = paid.get("recycler", 0) * price // MICRO
        run.prosumer_reward = paid.get("prosumer", 0) * price // MICRO
        return True

    def _periodic(self, tick: int) -> None:
        if self.offchain:
            for u, bank in self.offchain.items():
                reported = None
                if tick in self.misreports:
                    reported = bank.bank_balance + self.misreports[tick]
                self._emit(bank.post_balance(u, tick, reported=reported))
        if self.economy is not None:
            self._emit(*self.economy.rcsc_apply_policy(tick))
            self.economy.advance_market(tick)

    def _commit(self, tick: int) -> None:
        head = self.chain.head
        validator = self.validators[head.height % len(self.validators)]
        kp = self.registry.get(validator).keypair
        block = create_block(head.header, self.pending, validator, kp, self.registry, timestamp=tick)
        validate_and_append(self.chain, block)
        self.tx_count += len(self.pending)
        self.pending = []
        row: dict[str, Any] = {"tick": tick, "height": block.height, "transactions": self.tx_count}
        if self.offchain:
            row["account_balance"] = sum(b.bank_balance for b in self.offchain.values())
        if self.escrow is not None:
            if not self.escrow.conserved():
                raise SimulationError(f"tick {tick}: stablecoin supply does not balance")
            row["escrowed"] = sum(c.balance for c in self.escrow.contracts.values())
            row["issued"], row["redeemed"] = self.escrow.issued, self.escrow.redeemed
        if self.economy is not None:
            check_conservation(self.economy.ledger, self.economy.rcsc)
            row.update(self.economy.series_row(tick))
        self.series.append(row)

    def step(self, tick: int) -> None:
        try:
            self._adjust_policy(tick)
            self._open_agreements(tick)
            self._meter(tick)
            self._events(tick)
            self._settle(tick)
            self._periodic(tick)
            self._commit(tick)
        except (LedgerError, LifecycleError, EscrowError, CoinError) as exc:
            last = self.pending[-1].tx_id.hex()[:16] if self.pending else "none"
            raise SimulationError(f"tick {tick}: {type(exc).__name__}: {exc} (last transaction {last})") from exc

    def run(self) -> SimReport:
        for tick in range(self.sc.duration_ticks):
            self.step(tick)
        return self.report()

    # reporting

    def _settlement_rows(self) -> list[dict[str, Any]]:
        rows = []
        for run in self.runs.values():
            st = run.state
            row = {
                "agreement_id": run.spec.agreement_id,
                "prosumer": st.prosumer if st else run.spec.prosumer,
                "phase": st.phase.value if st else "unregistered",
                "accrued": st.accrued if st else 0,
                "energy_kwh": st.energy_total // 1000 if st else 0,
                "total_recycling_cost": run.agreement.total_recycling_cost if run.agreement else 0,
                "owed": dict(run.owed),
                "recycler_paid": run.recycler_paid,
                "prosumer_reward": run.prosumer_reward,
                "settled_tick": run.settled_tick,
            }
            if self.economy is not None:
                row["coins_paid"] = dict(run.coins_paid)
            rows.append(row)
        return rows

    def report(self) -> SimReport:
        blocks = self.chain.branch()
        result = audit_mod.audit_blocks(blocks)
        return SimReport(
            scenario=self.sc.name,
            solution=self.sc.solution,
            seed=self.sc.seed,
            duration_ticks=self.sc.duration_ticks,
            head_hash=blocks[-1].hash.hex(),
            blocks=len(blocks),
            transactions=self.tx_count,
            settlements=self._settlement_rows(),
            integrity=result.integrity,
            audit=result.findings,
            compliance=self.compliance,
            series=self.series,
            escrows=self.escrow.snapshot() if self.escrow else [],
            rcsc_log=list(self.economy.rcsc.log) if self.economy else [],
        )


def run(scenario: Scenario) -> tuple[SimReport, Chain]:
    sim = Simulation(scenario)
    report = sim.run()
    return report, sim.chain


def chain_digest(chain: Chain) -> str:
    """Digest of the exported chain bytes, handy for determinism checks."""
    doc = json.dumps(export_blocks(chain.branch()), separators=(",", ":")).encode()
    return hash_digest(doc).hex()


def write_outputs(report: SimReport, chain: Chain, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"chain": out / "chain.json", "report": out / "report.json", "series": out / "series.csv"}
    dump_chain(chain, paths["chain"])
    with open(paths["report"], "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report.to_json(), indent=1, sort_keys=True))
        fh.write("\n")
    write_series(report.series, paths["series"])
    return paths


def write_series(rows: list[dict[str, Any]], path: str | Path) -> None:
    cols: list[str] = []
    for r in rows:
        cols.extend(c for c in r if c not in cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
