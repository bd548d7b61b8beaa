"""Solution 1: fiat held by the utility, mirrored on the ledger.

The utility keeps one recycling bank account. Every fiat movement into or
out of it is recorded as a signed transaction, and the utility posts the
account balance at regular intervals so anyone can replay the payments and
check the custodian.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable

from .identity import PUBLIC_CHANNEL, Registry, Role
from .ledger import Transaction, TxKind
from .lifecycle import (
    SETTLEABLE,
    THIRDS,
    Event,
    PanelAgreement,
    PanelState,
    Phase,
    SettlementObligations,
    declare_transition,
    party_actor,
    settlement_split,
)
from .money import fmt_micro

log = logging.getLogger(__name__)

FIAT = "USD"


class OffchainError(Exception):
    pass


class AmountMismatch(OffchainError):
    pass


class Unauthorized(OffchainError):
    pass


class InsufficientFiat(OffchainError):
    pass


class MissingLiabilityPayment(OffchainError):
    """Settlement halted; ``transactions`` holds what was emitted before the halt."""

    def __init__(self, agreement_id: str, missing: list[str], transactions: list[Transaction]):
        super().__init__(f"{agreement_id}: unpaid liabilities from {', '.join(missing)}")
        self.agreement_id = agreement_id
        self.missing = missing
        self.transactions = transactions


class Purpose(str, enum.Enum):
    FEE = "fee"
    LIABILITY = "liability"
    TRANSPORT_REWARD = "transport-reward"
    RECYCLER_PAYMENT = "recycler-payment"


INFLOWS = frozenset({Purpose.FEE, Purpose.LIABILITY})


@dataclass
class BankAccountMirror:
    account_number: str
    custodian: str
    reported_balance: int = 0
    active_customers: int = 0
    last_posting_tick: int | None = None


@dataclass(frozen=True)
class FiatPaymentRecord:
    payer: str
    payee: str
    amount: int
    purpose: Purpose
    agreement_id: str


@dataclass
class SettlementFlow:
    """Progress of one agreement's end-of-life settlement."""

    agreement_id: str
    obligations: SettlementObligations
    paid: set[str] = field(default_factory=set)
    transport_paid: bool = False
    recycler_paid: bool = False
    acknowledged: bool = False
    halted_since: int | None = None

    @property
    def done(self) -> bool:
        return self.acknowledged


class OffchainSettlement:
    """Bank account custody by the utility plus the on-ledger mirror."""

    def __init__(self, registry: Registry, utility: str, account_number: str = "RCY-0001") -> None:
        if registry.get(utility).role is not Role.UTILITY:
            raise Unauthorized(f"{utility} cannot hold the recycling account")
        self.registry = registry
        self.account = BankAccountMirror(account_number, utility)
        # off-ledger truth; wallets live on the actors
        self.bank_balance = 0
        self.flows: dict[str, SettlementFlow] = {}
        self.customers: set[str] = set()

    # payments

    def _check_pair(self, rec: FiatPaymentRecord, agreement: PanelAgreement, state: PanelState) -> None:
        custodian = self.account.custodian
        p = rec.purpose
        if p is Purpose.FEE:
            ok = rec.payer == state.prosumer and rec.payee == custodian
        elif p is Purpose.LIABILITY:
            ok = rec.payer in (state.prosumer, agreement.manufacturer, agreement.recycler) and rec.payee == custodian
        elif p is Purpose.TRANSPORT_REWARD:
            ok = rec.payer == custodian and rec.payee == state.prosumer
        else:
            ok = rec.payer == custodian and rec.payee == agreement.recycler
        if not ok:
            raise Unauthorized(f"{rec.purpose.value} from {rec.payer} to {rec.payee} is not a legal pair")

    def post_payment(
        self,
        payer: str,
        payee: str,
        amount: int,
        purpose: Purpose | str,
        agreement: PanelAgreement,
        state: PanelState,
        *,
        due: int,
        tick: int,
    ) -> Transaction:
        """Move fiat and record the mirror transaction.

        ``due`` is what the lifecycle rules say is owed for ``purpose``; any
        other amount is refused.
        """
        purpose = Purpose(purpose)
        rec = FiatPaymentRecord(payer, payee, amount, purpose, agreement.agreement_id)
        if amount <= 0 or amount != due:
            raise AmountMismatch(f"{purpose.value}: paid {fmt_micro(amount)}, due {fmt_micro(due)}")
        self._check_pair(rec, agreement, state)
        # the payer records inflows; the prosumer records receiving its reward
        author = {
            Purpose.FEE: payer,
            Purpose.LIABILITY: payer,
            Purpose.TRANSPORT_REWARD: payee,
            Purpose.RECYCLER_PAYMENT: payer,
        }[purpose]
        if not self.registry.authorize(author, "create-transaction"):
            raise Unauthorized(author)
        if purpose in INFLOWS:
            wallet = self.registry.get(payer).wallet
            if wallet.get(FIAT, 0) < amount:
                raise InsufficientFiat(f"{payer} cannot pay {fmt_micro(amount)}")
            wallet[FIAT] -= amount
            self.bank_balance += amount
        else:
            if self.bank_balance < amount:
                raise InsufficientFiat(f"account {self.account.account_number} cannot pay {fmt_micro(amount)}")
            self.bank_balance -= amount
            w = self.registry.get(payee).wallet
            w[FIAT] = w.get(FIAT, 0) + amount
        if purpose is Purpose.FEE:
            self.customers.add(payer)
        kind = TxKind.FEE_PAYMENT if purpose is Purpose.FEE else TxKind.PAYMENT
        return self.registry.get(author).sign(
            agreement.channel,
            kind,
            {
                "account": self.account.account_number,
                "agreement_id": agreement.agreement_id,
                "payer": payer,
                "payee": payee,
                "amount": amount,
                "purpose": purpose.value,
                "tick": tick,
            },
        )

    def post_balance(self, utility: str, tick: int, *, reported: int | None = None) -> Transaction:
        """Publish the account balance; ``reported`` overrides the true balance (audit tests)."""
        if utility != self.account.custodian or not self.registry.authorize(utility, "post-balance"):
            raise Unauthorized(f"{utility} may not post balances for {self.account.account_number}")
        bal = self.bank_balance if reported is None else reported
        self.account.reported_balance = bal
        self.account.active_customers = len(self.customers)
        self.account.last_posting_tick = tick
        return self.registry.get(utility).sign(
            PUBLIC_CHANNEL,
            TxKind.BALANCE_POSTING,
            {
                "account": self.account.account_number,
                "balance": bal,
                "active_customers": self.account.active_customers,
                "tick": tick,
            },
        )

    # settlement

    def run_settlement_flow(
        self,
        agreement: PanelAgreement,
        state: PanelState,
        tick: int,
        *,
        refusing: Iterable[str] = (),
        fractions=THIRDS,
    ) -> tuple[PanelState, list[Transaction]]:
        """Drive an agreement from a settleable phase to an acknowledged recycler payment.

        Order: liability payments, transport reward, shipment, receipt,
        recycler payment, recycler acknowledgment. Parties in ``refusing``
        (prosumer/manufacturer/recycler) do not pay; the flow then halts with
        MissingLiabilityPayment and can be resumed on a later tick.
        """
        refusing = set(refusing)
        flow = self.flows.get(agreement.agreement_id)
        if flow is None:
            if state.phase not in SETTLEABLE:
                raise OffchainError(f"{agreement.agreement_id} is {state.phase.value}, not settleable")
            flow = SettlementFlow(agreement.agreement_id, settlement_split(agreement, state, fractions))
            self.flows[agreement.agreement_id] = flow
        txs: list[Transaction] = []
        missing = []
        for party, amount in flow.obligations.owed.items():
            if amount <= 0 or party in flow.paid:
                continue
            payer = party_actor(agreement, state, party)
            if party in refusing:
                missing.append(party)
                continue
            try:
                txs.append(
                    self.post_payment(
                        payer, self.account.custodian, amount, Purpose.LIABILITY, agreement, state, due=amount, tick=tick
                    )
                )
            except InsufficientFiat:
                missing.append(party)
                continue
            flow.paid.add(party)
        if missing:
            if flow.halted_since is None:
                flow.halted_since = tick
            raise MissingLiabilityPayment(agreement.agreement_id, missing, txs)
        flow.halted_since = None
        obl = flow.obligations
        custodian = self.account.custodian
        if not flow.transport_paid:
            if obl.prosumer_reward > 0:
                txs.append(
                    self.post_payment(
                        custodian,
                        state.prosumer,
                        obl.prosumer_reward,
                        Purpose.TRANSPORT_REWARD,
                        agreement,
                        state,
                        due=obl.prosumer_reward,
                        tick=tick,
                    )
                )
            flow.transport_paid = True
        if state.phase in SETTLEABLE:
            state, tx = declare_transition(self.registry, agreement, state, Event.SHIP, tick)
            txs.append(tx)
        if state.phase is Phase.SHIPPED:
            state, tx = declare_transition(self.registry, agreement, state, Event.RECEIVE, tick)
            txs.append(tx)
        if not flow.recycler_paid:
            txs.append(
                self.post_payment(
                    custodian,
                    agreement.recycler,
                    obl.recycler_payout,
                    Purpose.RECYCLER_PAYMENT,
                    agreement,
                    state,
                    due=obl.recycler_payout,
                    tick=tick,
                )
            )
            flow.recycler_paid = True
        if not flow.acknowledged:
            txs.append(
                self.registry.get(agreement.recycler).sign(
                    agreement.channel,
                    TxKind.ACKNOWLEDGMENT,
                    {
                        "agreement_id": agreement.agreement_id,
                        "account": self.account.account_number,
                        "amount": obl.recycler_payout,
                        "tick": tick,
                    },
                )
            )
            flow.acknowledged = True
        return state, txs


# audit


@dataclass
class AuditReport:
    account_number: str
    expected_balance: int = 0
    latest_posting: int | None = None
    discrepancies: list[dict[str, Any]] = field(default_factory=list)
    violations: list[dict[str, Any]] = field(default_factory=list)
    shortfalls: list[dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.discrepancies or self.violations or self.shortfalls)

    def findings(self) -> list[dict[str, Any]]:
        return (
            [{"type": "discrepancy", **d} for d in self.discrepancies]
            + [{"type": "ordering", **v} for v in self.violations]
            + [{"type": "shortfall", **s} for s in self.shortfalls]
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "account": self.account_number,
            "expected_balance": self.expected_balance,
            "latest_posting": self.latest_posting,
            "findings": self.findings(),
        }

    def table(self) -> str:
        lines = [
            f"account {self.account_number}",
            f"  expected balance  {fmt_micro(self.expected_balance):>16}",
            f"  latest posting    {fmt_micro(self.latest_posting) if self.latest_posting is not None else '-':>16}",
        ]
        for f in self.findings():
            lines.append("  " + "  ".join(f"{k}={v}" for k, v in f.items()))
        if self.ok:
            lines.append("  no findings")
        return "\n".join(lines)


def payment_delta(tx: Transaction) -> int:
    """Signed effect of a mirrored payment on the recycling account."""
    p = tx.payload
    purpose = Purpose(p["purpose"])
    return p["amount"] if purpose in INFLOWS else -p["amount"]


def _payments(txs: Iterable[Transaction], account_number: str) -> Iterable[Transaction]:
    for tx in txs:
        if tx.kind in (TxKind.FEE_PAYMENT, TxKind.PAYMENT) and tx.payload.get("account") == account_number:
            yield tx


def audit_account(txs: Iterable[Transaction], account_number: str) -> AuditReport:
    """Replay mirrored payments in ledger order and compare with each balance posting.

    Also flags recycler payments without a prior receipt and failure
    liabilities that were never fully paid.
    """
    rep = AuditReport(account_number)
    balance = 0
    received: set[str] = set()
    remaining: dict[str, tuple[int, int]] = {}
    liabilities: dict[str, int] = {}
    paid_recycler: set[str] = set()
    mine: set[str] = set()
    for tx in txs:
        p = tx.payload
        if tx.kind is TxKind.RECEIPT:
            received.add(p["agreement_id"])
        elif tx.kind is TxKind.FAILURE_DECLARATION:
            remaining[p["agreement_id"]] = (p["remaining_cost"], p["tick"])
        elif tx.kind in (TxKind.FEE_PAYMENT, TxKind.PAYMENT) and p.get("account") == account_number:
            try:
                balance += payment_delta(tx)
            except (KeyError, ValueError):
                rep.violations.append({"tick": p.get("tick"), "problem": "malformed payment"})
                continue
            aid = p.get("agreement_id")
            mine.add(aid)
            if p["purpose"] == Purpose.LIABILITY.value:
                liabilities[aid] = liabilities.get(aid, 0) + p["amount"]
            if p["purpose"] == Purpose.RECYCLER_PAYMENT.value:
                if aid not in received:
                    rep.violations.append(
                        {"tick": p["tick"], "agreement_id": aid, "problem": "recycler paid before receipt"}
                    )
                paid_recycler.add(aid)
            if balance < 0:
                rep.violations.append({"tick": p["tick"], "problem": "account overdrawn", "balance": balance})
        elif tx.kind is TxKind.BALANCE_POSTING and p.get("account") == account_number:
            rep.latest_posting = p["balance"]
            if p["balance"] != balance:
                rep.discrepancies.append(
                    {
                        "tick": p["tick"],
                        "posted": p["balance"],
                        "expected": balance,
                        "difference": p["balance"] - balance,
                    }
                )
    for aid, (owed, tick) in remaining.items():
        got = liabilities.get(aid, 0)
        if aid in mine and got < owed:
            rep.shortfalls.append({"tick": tick, "agreement_id": aid, "owed": owed, "paid": got})
    rep.expected_balance = balance
    return rep
