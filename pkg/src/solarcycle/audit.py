"""Full-node audit of an exported chain.

Only the committed blocks are trusted. Public keys and roles come from
the registration records; every account, escrow and coin balance is
rebuilt by replay.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .escrow import replay_escrows
from .identity import Registry
from .ledger import Block, TxKind, load_chain, verify_chain_integrity
from .offchain import audit_account
from .rccoin import replay_coin_supply


@dataclass
class AuditResult:
    integrity: list[dict[str, Any]] = field(default_factory=list)
    findings: list[dict[str, Any]] = field(default_factory=list)
    accounts: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.integrity and not self.findings

    def to_json(self) -> dict[str, Any]:
        return {"ok": self.ok, "integrity": self.integrity, "findings": self.findings, "accounts": self.accounts}

    def table(self) -> str:
        lines = [f"integrity findings: {len(self.integrity)}", f"audit findings: {len(self.findings)}"]
        for f in self.integrity:
            lines.append(f"  block {f['height']:>6}  {f['problem']:<20} {f['detail']}")
        for f in self.findings:
            rest = ", ".join(f"{k}={v}" for k, v in f.items() if k != "type")
            lines.append(f"  {f['type']:<26} {rest}")
        for acct, rep in self.accounts.items():
            lines.append(f"account {acct}: expected {rep['expected_balance']}, posted {rep['latest_posting']}")
        return "\n".join(lines)


def audit_blocks(blocks: Sequence[Block]) -> AuditResult:
    registry = Registry.from_blocks(blocks)
    result = AuditResult()
    result.integrity = verify_chain_integrity(blocks, registry).to_json()
    txs = [tx for b in blocks for tx in b.body]

    accounts = sorted(
        {tx.payload["account"] for tx in txs if tx.kind is TxKind.BALANCE_POSTING and "account" in tx.payload}
    )
    for acct in accounts:
        rep = audit_account(txs, acct)
        result.accounts[acct] = rep.to_json()
        result.findings.extend({**f, "account": acct} for f in rep.findings())

    if any(tx.kind is TxKind.ESCROW_DEPLOY for tx in txs):
        _, escrow_findings = replay_escrows(txs, registry)
        result.findings.extend(escrow_findings)

    if any(tx.kind is TxKind.MINT for tx in txs):
        result.findings.extend(replay_coin_supply(txs))

    for tx in txs:
        if tx.kind is TxKind.LANDFILL:
            result.findings.append(
                {"type": "landfilled", "agreement_id": tx.payload.get("agreement_id"), "tick": tx.payload.get("tick")}
            )
    return result


def audit_file(path: str | Path) -> AuditResult:
    return audit_blocks(load_chain(path))
