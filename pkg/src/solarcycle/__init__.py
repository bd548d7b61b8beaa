"""Consortium-ledger simulator for solar-panel recycling cost sharing.

Three settlement designs share one ledger and one panel lifecycle:
fiat payments mirrored on-ledger (solution 1), stablecoin escrow
contracts (solution 2) and an energy-minted recycling coin with a reserve
contract (solution 3).
"""
from __future__ import annotations

__version__ = "0.1.0"
