"""Solution 2: escrow contracts holding a 1:1 fiat-pegged stablecoin.

Contracts are a fixed rule engine. All state changes go through
``EscrowEngine.apply`` on a signed transaction, so replaying the committed
chain reproduces contract state exactly, and the public helpers
(``deploy_escrow``, ``convert_and_deposit``, ``mature``,
``release_withdrawal``) only build a transaction and apply it.
"""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .identity import PUBLIC_CHANNEL, Registry, Role
from .ledger import Transaction, TxKind, hash_digest, verify_signature
from .lifecycle import (
    SETTLEABLE,
    THIRDS,
    PanelAgreement,
    PanelState,
    Phase,
    settlement_split,
)
from .money import fmt_micro

TOKEN = "STBL"
COIN = "RC"


class EscrowError(Exception):
    pass


class Unauthorized(EscrowError):
    pass


class DuplicateContract(EscrowError):
    pass


class UnknownContract(EscrowError):
    pass


class WrongPhase(EscrowError):
    pass


class AmountMismatch(EscrowError):
    pass


class MissingSignature(EscrowError):
    pass


class SequenceViolation(EscrowError):
    pass


class DoubleWithdrawal(EscrowError):
    pass


class EscrowPhase(str, enum.Enum):
    FUNDING = "Funding"
    MATURED = "Matured"
    SHORTFALL_PENDING = "ShortfallPending"
    PAID_OUT = "PaidOut"


@dataclass
class EscrowContract:
    contract_id: str
    agreement_id: str
    terms: dict[str, Any]
    custodian: str
    required_signers: frozenset[str]
    balance: int = 0
    phase: EscrowPhase = EscrowPhase.FUNDING
    fees_deposited: int = 0
    dues: dict[str, int] = field(default_factory=dict)
    recycler_payout: int = 0
    prosumer_payout: int = 0
    paid: dict[str, int] = field(default_factory=dict)
    receipt_seen: bool = False

    @property
    def total_recycling_cost(self) -> int:
        return self.terms["total_recycling_cost"]

    @property
    def total_due(self) -> int:
        return self.terms["total_recycling_cost"] + self.terms["transport_allowance"]

    def beneficiary_actor(self, beneficiary: str) -> str:
        return self.terms["prosumer"] if beneficiary == "prosumer" else self.terms["recycler"]


def withdrawal_message(contract_id: str, beneficiary: str, to: str, amount: int) -> bytes:
    """Digest every required signer signs to consent to one payout."""
    return hash_digest(f"escrow-withdrawal|{contract_id}|{beneficiary}|{to}|{amount}".encode())


def sign_withdrawal(registry: Registry, signers: Iterable[str], message: bytes) -> dict[str, str]:
    out = {}
    for s in signers:
        kp = registry.get(s).keypair
        if kp is None:
            raise Unauthorized(f"no key for {s}")
        out[s] = kp.sign(message).hex()
    return out


def missing_signers(
    registry: Registry, required: Iterable[str], message: bytes, signatures: Mapping[str, str]
) -> list[str]:
    missing = []
    for s in sorted(required):
        sig = signatures.get(s)
        key = registry.public_key(s)
        try:
            raw = bytes.fromhex(sig) if isinstance(sig, str) else sig
        except ValueError:
            raw = None
        if raw is None or key is None or not verify_signature(key, message, raw):
            missing.append(s)
    return missing


class EscrowEngine:
    """Contract state plus stablecoin supply, advanced one transaction at a time."""

    def __init__(self, registry: Registry, fractions: Sequence[Fraction] = THIRDS) -> None:
        self.registry = registry
        self.fractions = tuple(fractions)
        self.contracts: dict[str, EscrowContract] = {}
        self.by_agreement: dict[str, str] = {}
        self.wallets: dict[str, int] = {}
        self.issued = 0
        self.redeemed = 0

    def clone(self) -> EscrowEngine:
        other = copy.copy(self)
        other.contracts = {k: copy.deepcopy(v) for k, v in self.contracts.items()}
        other.by_agreement = dict(self.by_agreement)
        other.wallets = dict(self.wallets)
        return other

    def contract_for(self, agreement_id: str) -> EscrowContract:
        try:
            return self.contracts[self.by_agreement[agreement_id]]
        except KeyError:
            raise UnknownContract(agreement_id) from None

    def _contract(self, contract_id: str) -> EscrowContract:
        try:
            return self.contracts[contract_id]
        except KeyError:
            raise UnknownContract(contract_id) from None

    def conserved(self) -> bool:
        held = sum(c.balance for c in self.contracts.values()) + sum(self.wallets.values())
        return held == self.issued - self.redeemed

    # transaction rules

    def apply(self, tx: Transaction) -> None:
        """Validate ``tx`` against contract rules and apply it; raise and change nothing on failure."""
        handler = _HANDLERS.get(tx.kind)
        # RC-coin escrow records belong to the coin economy
        if handler is not None and tx.payload.get("currency") != COIN:
            handler(self, tx)

    def _deploy(self, tx: Transaction) -> None:
        p = tx.payload
        if self.registry.get(tx.author).role is not Role.UTILITY:
            raise Unauthorized(f"{tx.author} may not deploy escrow contracts")
        if p["contract_id"] in self.contracts or p["agreement_id"] in self.by_agreement:
            raise DuplicateContract(p["agreement_id"])
        c = EscrowContract(
            contract_id=p["contract_id"],
            agreement_id=p["agreement_id"],
            terms=dict(p["terms"]),
            custodian=tx.author,
            required_signers=frozenset(p["required_signers"]),
        )
        self.contracts[c.contract_id] = c
        self.by_agreement[c.agreement_id] = c.contract_id

    def _check_deposit(self, c: EscrowContract, author: str, amount: int, purpose: str, payer: str) -> None:
        if author != c.custodian:
            raise Unauthorized(f"only {c.custodian} converts and deposits for {c.contract_id}")
        if amount <= 0:
            raise AmountMismatch("deposit must be positive")
        if c.phase is EscrowPhase.FUNDING:
            if purpose != "fee":
                raise AmountMismatch(f"{purpose} deposit while funding")
        elif c.phase is EscrowPhase.SHORTFALL_PENDING:
            if purpose != "liability" or c.dues.get(payer, 0) != amount:
                raise AmountMismatch(f"{payer} owes {fmt_micro(c.dues.get(payer, 0))}, deposited {fmt_micro(amount)}")
        else:
            raise WrongPhase(f"{c.contract_id} is {c.phase.value}")

    def _credit(self, c: EscrowContract, amount: int, purpose: str, payer: str) -> None:
        c.balance += amount
        self.issued += amount
        if purpose == "fee":
            c.fees_deposited += amount
        else:
            c.dues[payer] = 0
            if not any(c.dues.values()):
                self._set_matured(c)

    def _deposit(self, tx: Transaction) -> None:
        p = tx.payload
        entries = p["deposits"] if "deposits" in p else [[p["contract_id"], p["amount"], p["purpose"], p["payer"]]]
        consumed: set[tuple[str, str]] = set()
        for cid, amount, purpose, payer in entries:
            self._check_deposit(self._contract(cid), tx.author, amount, purpose, payer)
            if purpose == "liability":
                if (cid, payer) in consumed:
                    raise AmountMismatch(f"{payer} deposited twice for {cid}")
                consumed.add((cid, payer))
        for cid, amount, purpose, payer in entries:
            self._credit(self.contracts[cid], amount, purpose, payer)

    def _set_matured(self, c: EscrowContract) -> None:
        c.phase = EscrowPhase.MATURED
        # over-funding surplus goes to the prosumer
        c.prosumer_payout = c.balance - c.recycler_payout

    def _mature(self, c: EscrowContract, phase: Phase) -> None:
        if c.phase is not EscrowPhase.FUNDING:
            raise WrongPhase(f"{c.contract_id} is {c.phase.value}")
        if phase not in SETTLEABLE:
            raise WrongPhase(f"lifecycle phase {phase.value} is not settleable")
        t = c.terms
        ag = PanelAgreement(
            t["agreement_id"],
            t["prosumer"],
            t["manufacturer"],
            t["recycler"],
            t["utility"],
            t["capacity_w"],
            t["cost_rate"],
            t["lifetime_months"],
            t["warranty_months"],
            t["transport_allowance"],
            t["start_tick"],
        )
        st = PanelState(ag.agreement_id, ag.prosumer, phase=phase, accrued=min(c.fees_deposited, ag.total_due))
        obl = settlement_split(ag, st, _fractions(c.terms, self.fractions))
        c.recycler_payout = obl.recycler_payout
        if c.balance >= c.total_due:
            self._set_matured(c)
        else:
            c.dues = {k: v for k, v in obl.owed.items() if v > 0}
            c.phase = EscrowPhase.SHORTFALL_PENDING
            if not c.dues:
                self._set_matured(c)

    def _declaration(self, tx: Transaction) -> None:
        cid = self.by_agreement.get(tx.payload.get("agreement_id"))
        if cid is None:
            return
        self._mature(self.contracts[cid], Phase(tx.payload["phase"]))

    def _receipt(self, tx: Transaction) -> None:
        cid = self.by_agreement.get(tx.payload.get("agreement_id"))
        if cid is not None:
            self.contracts[cid].receipt_seen = True

    def _withdraw(self, tx: Transaction) -> None:
        p = tx.payload
        c = self._contract(p["contract_id"])
        beneficiary = p["beneficiary"]
        if beneficiary not in ("prosumer", "recycler"):
            raise SequenceViolation(f"unknown beneficiary {beneficiary!r}")
        if beneficiary in c.paid:
            raise DoubleWithdrawal(f"{c.contract_id} already paid the {beneficiary}")
        if c.phase is not EscrowPhase.MATURED:
            raise WrongPhase(f"{c.contract_id} is {c.phase.value}")
        to = c.beneficiary_actor(beneficiary)
        amount = c.prosumer_payout if beneficiary == "prosumer" else c.recycler_payout
        if amount <= 0:
            raise SequenceViolation(f"nothing to release to the {beneficiary}")
        if p["to"] != to or p["amount"] != amount:
            raise AmountMismatch(f"withdrawal must pay {fmt_micro(amount)} to {to}")
        if tx.author != to:
            raise Unauthorized(f"{tx.author} cannot trigger the {beneficiary} payout")
        if beneficiary == "recycler":
            if c.prosumer_payout > 0 and "prosumer" not in c.paid:
                raise SequenceViolation("prosumer transport reward is released first")
            if not c.receipt_seen:
                raise SequenceViolation("recycler payout needs the receipt transaction")
        missing = missing_signers(
            self.registry, c.required_signers, withdrawal_message(c.contract_id, beneficiary, to, amount), p["signatures"]
        )
        if missing:
            raise MissingSignature(", ".join(missing))
        if amount > c.balance:
            raise AmountMismatch("withdrawal exceeds balance")
        c.balance -= amount
        c.paid[beneficiary] = amount
        self.wallets[to] = self.wallets.get(to, 0) + amount
        if len(c.paid) == 2 or (c.balance == 0 and "recycler" in c.paid):
            c.phase = EscrowPhase.PAID_OUT

    def _redeem(self, tx: Transaction) -> None:
        p = tx.payload
        if p.get("purpose") != "redemption":
            return
        amount = p["amount"]
        if amount <= 0 or self.wallets.get(tx.author, 0) < amount:
            raise AmountMismatch(f"{tx.author} cannot redeem {fmt_micro(amount)}")
        self.wallets[tx.author] -= amount
        self.redeemed += amount

    # public operations

    def deploy_escrow(
        self,
        agreement: PanelAgreement,
        deployer: str,
        required_signers: Iterable[str] | None = None,
        *,
        tick: int = 0,
    ) -> tuple[EscrowContract, Transaction]:
        if required_signers is None:
            required_signers = (agreement.prosumer, agreement.recycler, agreement.manufacturer, agreement.utility)
        terms = {**agreement.terms(), "fractions": [str(f) for f in self.fractions]}
        tx = self.registry.get(deployer).sign(
            agreement.channel,
            TxKind.ESCROW_DEPLOY,
            {
                "contract_id": f"escrow:{agreement.agreement_id}",
                "agreement_id": agreement.agreement_id,
                "terms": terms,
                "required_signers": sorted(set(required_signers)),
                "tick": tick,
            },
        )
        if self.registry.get(deployer).role is not Role.UTILITY:
            raise Unauthorized(f"{deployer} may not deploy escrow contracts")
        self.apply(tx)
        return self.contract_for(agreement.agreement_id), tx

    def convert_and_deposit(
        self,
        agreement: PanelAgreement,
        amount: int,
        *,
        due: int,
        payer: str,
        purpose: str = "fee",
        tick: int = 0,
    ) -> Transaction:
        """The custodian converts ``amount`` fiat into tokens and deposits them."""
        if amount != due:
            raise AmountMismatch(f"deposit {fmt_micro(amount)} but {fmt_micro(due)} is due")
        c = self.contract_for(agreement.agreement_id)
        party = payer if purpose == "fee" else _party_of(c, payer)
        tx = self.registry.get(c.custodian).sign(
            agreement.channel,
            TxKind.ESCROW_DEPOSIT,
            {
                "contract_id": c.contract_id,
                "amount": amount,
                "purpose": purpose,
                "payer": party,
                "tick": tick,
            },
        )
        self.apply(tx)
        return tx

    def batch_deposit(self, custodian: str, entries: list[tuple[PanelAgreement, int]], tick: int) -> Transaction | None:
        """One transaction converting a month of collected fees for many contracts."""
        if not entries:
            return None
        rows = [[self.contract_for(ag.agreement_id).contract_id, amt, "fee", ag.prosumer] for ag, amt in entries]
        tx = self.registry.get(custodian).sign(PUBLIC_CHANNEL, TxKind.ESCROW_DEPOSIT, {"deposits": rows, "tick": tick})
        self.apply(tx)
        return tx

    def mature(self, agreement: PanelAgreement, state: PanelState) -> EscrowPhase:
        """Evaluate the contract against a settleable lifecycle phase.

        Outside a replay this mirrors what applying the phase's declaration
        transaction does.
        """
        c = self.contract_for(agreement.agreement_id)
        self._mature(c, state.phase)
        return c.phase

    def payout_amount(self, agreement: PanelAgreement, beneficiary: str) -> tuple[str, int]:
        c = self.contract_for(agreement.agreement_id)
        if beneficiary == "prosumer":
            return c.beneficiary_actor("prosumer"), c.prosumer_payout
        return c.beneficiary_actor("recycler"), c.recycler_payout

    def release_withdrawal(
        self,
        agreement: PanelAgreement,
        beneficiary: str,
        signatures: Mapping[str, str],
        *,
        tick: int = 0,
    ) -> Transaction:
        c = self.contract_for(agreement.agreement_id)
        to, amount = self.payout_amount(agreement, beneficiary)
        tx = self.registry.get(to).sign(
            agreement.channel,
            TxKind.ESCROW_WITHDRAWAL,
            {
                "contract_id": c.contract_id,
                "beneficiary": beneficiary,
                "to": to,
                "amount": amount,
                "signatures": dict(sorted(signatures.items())),
                "tick": tick,
            },
        )
        self.apply(tx)
        return tx

    def collect_signatures(self, agreement: PanelAgreement, beneficiary: str) -> dict[str, str]:
        c = self.contract_for(agreement.agreement_id)
        to, amount = self.payout_amount(agreement, beneficiary)
        return sign_withdrawal(
            self.registry, c.required_signers, withdrawal_message(c.contract_id, beneficiary, to, amount)
        )

    def redeem(self, actor_id: str, amount: int, *, tick: int = 0, ref: str | None = None) -> Transaction:
        # ref tells apart two same-sized redemptions in one tick
        payload = {"purpose": "redemption", "currency": TOKEN, "amount": amount, "tick": tick}
        if ref is not None:
            payload["ref"] = ref
        tx = self.registry.get(actor_id).sign(PUBLIC_CHANNEL, TxKind.PAYMENT, payload)
        self.apply(tx)
        return tx

    def snapshot(self) -> list[dict[str, Any]]:
        return [
            {
                "contract_id": c.contract_id,
                "agreement_id": c.agreement_id,
                "phase": c.phase.value,
                "balance": c.balance,
                "fees_deposited": c.fees_deposited,
                "dues": dict(c.dues),
                "paid": dict(c.paid),
                "required_signers": sorted(c.required_signers),
            }
            for c in self.contracts.values()
        ]


def _fractions(terms: Mapping[str, Any], default: Sequence[Fraction]) -> tuple[Fraction, ...]:
    raw = terms.get("fractions")
    return tuple(Fraction(f) for f in raw) if raw else tuple(default)


def _party_of(c: EscrowContract, actor_id: str) -> str:
    for party in ("prosumer", "manufacturer", "recycler"):
        if c.terms[party] == actor_id:
            return party
    return actor_id


_HANDLERS = {
    TxKind.ESCROW_DEPLOY: EscrowEngine._deploy,
    TxKind.ESCROW_DEPOSIT: EscrowEngine._deposit,
    TxKind.EOL_DECLARATION: EscrowEngine._declaration,
    TxKind.FAILURE_DECLARATION: EscrowEngine._declaration,
    TxKind.RECEIPT: EscrowEngine._receipt,
    TxKind.ESCROW_WITHDRAWAL: EscrowEngine._withdraw,
    TxKind.PAYMENT: EscrowEngine._redeem,
}


def replay_escrows(txs: Iterable[Transaction], registry: Registry) -> tuple[EscrowEngine, list[dict[str, Any]]]:
    """Re-run every committed transaction through the contract rules.

    Any committed transaction the rules reject is a finding; so is a token
    supply that does not balance.
    """
    engine = EscrowEngine(registry)
    findings = []
    for tx in txs:
        try:
            before = {cid: c.balance for cid, c in engine.contracts.items()}
            engine.apply(tx)
        except (EscrowError, KeyError, ValueError, TypeError) as exc:
            findings.append({"type": "escrow-rule", "tx_id": tx.tx_id.hex(), "kind": tx.kind.value, "detail": str(exc)})
            continue
        for cid, c in engine.contracts.items():
            if c.balance < before.get(cid, 0) and tx.kind is not TxKind.ESCROW_WITHDRAWAL:
                findings.append({"type": "escrow-bypass", "tx_id": tx.tx_id.hex(), "contract_id": cid})
    if not engine.conserved():
        findings.append({"type": "token-conservation", "issued": engine.issued, "redeemed": engine.redeemed})
    return engine, findings
