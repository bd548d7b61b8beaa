"""Solution 3: RC-coin minting, the reserve contract and coin-denominated settlement.

Coins are integer micro-coins, prices integer micro-dollars per coin and
energy integer milli-kWh. Minted batches are split between the agreement's
escrow (the gamma share) and the reserve contract (RCSC), which burns,
trades and tops up escrows under a small fixed rule set.
"""
from __future__ import annotations

import enum
import logging
import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .escrow import COIN, MissingSignature, missing_signers, sign_withdrawal, withdrawal_message
from .identity import PUBLIC_CHANNEL, Registry
from .ledger import Transaction, TxKind
from .lifecycle import (
    SETTLEABLE,
    THIRDS,
    PanelAgreement,
    PanelState,
    Phase,
    party_actor,
    settlement_split,
)
from .money import MICRO, ceil_div, div_half_even, fmt_micro, round_fraction

log = logging.getLogger(__name__)

FIAT = "USD"
MARKET = "market"


class CoinError(Exception):
    pass


class PanelNotActive(CoinError):
    pass


class NonpositivePrice(CoinError):
    pass


class InsufficientFiat(CoinError):
    def __init__(self, message: str, missing: Sequence[str] = (), transactions: Sequence[Transaction] = ()):
        super().__init__(message)
        self.missing = list(missing)
        self.transactions = list(transactions)


class InsufficientReserve(CoinError):
    pass


class InsufficientLiquidity(CoinError):
    pass


class ConservationError(CoinError):
    pass


class Approach(str, enum.Enum):
    SHRINK_AWARD = "A"
    GROW_UNITS = "B"


@dataclass(frozen=True)
class SupplyPolicy:
    coins_per_batch: int = 100 * MICRO
    units_per_batch: int = 1000 * 1000
    gamma: Fraction = Fraction(4, 5)
    year_index: int = 0
    approach: Approach = Approach.SHRINK_AWARD

    def __post_init__(self) -> None:
        if self.coins_per_batch <= 0 or self.units_per_batch <= 0:
            raise ValueError("coins and units per batch must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass
class RcscRules:
    # burn `burn_fraction` of the reserve whenever circulating supply exceeds the threshold
    burn_threshold: int | None = None
    burn_fraction: Fraction = Fraction(1, 10)
    # sell above the upper band, buy below the lower band, `trade_size` coins at a time
    band_lower: int | None = None
    band_upper: int | None = None
    trade_size: int = 0
    # top up a shortfall escrow once a party has defaulted this many ticks
    topup_after_ticks: int | None = 6


@dataclass
class RcscState:
    reserve_balance: int = 0
    cumulative_burned: int = 0
    fiat_budget: int = 0
    rules: RcscRules = field(default_factory=RcscRules)
    log: list[str] = field(default_factory=list)


@dataclass
class CoinLedger:
    total_minted: int = 0
    total_burned: int = 0
    wallets: dict[str, int] = field(default_factory=dict)
    escrows: dict[str, int] = field(default_factory=dict)

    @property
    def circulating(self) -> int:
        return self.total_minted - self.total_burned

    def move_wallet(self, src: str, dst: str, amount: int) -> None:
        if self.wallets.get(src, 0) < amount:
            raise InsufficientLiquidity(f"{src} holds {fmt_micro(self.wallets.get(src, 0))} coins")
        self.wallets[src] -= amount
        self.wallets[dst] = self.wallets.get(dst, 0) + amount


@dataclass
class MarketPrice:
    price: int
    seed: int = 0
    drift: float = 0.0
    volatility: float = 0.0
    # dollars of price drop per coin of net reserve selling
    impact: float = 0.0

    def __post_init__(self) -> None:
        if self.price <= 0:
            raise NonpositivePrice(str(self.price))


def holdings(ledger: CoinLedger, rcsc: RcscState) -> int:
    return sum(ledger.wallets.values()) + sum(ledger.escrows.values()) + rcsc.reserve_balance


def check_conservation(ledger: CoinLedger, rcsc: RcscState) -> None:
    if ledger.circulating != holdings(ledger, rcsc):
        raise ConservationError(
            f"minted-burned {ledger.circulating} != wallets+escrows+reserve {holdings(ledger, rcsc)}"
        )


# pure rules


def mint_split(remainder: int, kwh: int, policy: SupplyPolicy) -> tuple[int, int, int, int]:
    """(batches, escrow coins, reserve coins, new remainder) for ``kwh`` more energy."""
    total = remainder + kwh
    batches, rest = divmod(total, policy.units_per_batch)
    coins = batches * policy.coins_per_batch
    to_escrow = div_half_even(coins * policy.gamma.numerator, policy.gamma.denominator)
    return batches, to_escrow, coins - to_escrow, rest


def annual_policy_adjustment(policy: SupplyPolicy, growth_factor: Fraction | str | float) -> SupplyPolicy:
    """Keep yearly issuance flat when generation grows by ``growth_factor``.

    Approach A shrinks the coins per batch; approach B enlarges the energy
    per batch. Both round half-even at their fixed-point granularity.
    """
    g = Fraction(str(growth_factor)) if isinstance(growth_factor, float) else Fraction(growth_factor)
    if g <= 0:
        raise ValueError("growth factor must be positive")
    if policy.approach is Approach.SHRINK_AWARD:
        return replace(policy, coins_per_batch=round_fraction(policy.coins_per_batch / g), year_index=policy.year_index + 1)
    return replace(policy, units_per_batch=round_fraction(policy.units_per_batch * g), year_index=policy.year_index + 1)


def settle_in_coins(fee: int, price: int) -> int:
    """Micro-coins needed to cover ``fee`` micro-dollars at ``price``, rounded up."""
    if price <= 0:
        raise NonpositivePrice(str(price))
    return ceil_div(fee * MICRO, price)


def coin_value(coins: int, price: int) -> Fraction:
    """Exact micro-dollar value of ``coins`` micro-coins."""
    return Fraction(coins * price, MICRO)


def _shock(seed: int, tick: int) -> float:
    return random.Random(seed * 1_000_003 + tick).gauss(0.0, 1.0)


def step_market(market: MarketPrice, net_flow: int, tick: int) -> int:
    """Next price after one tick.

    A multiplicative log-normal step with the configured drift and
    volatility, minus a linear impact of the reserve's net coin sales
    (``net_flow`` > 0 means the reserve sold). The shock depends only on
    (seed, tick), so counterfactuals share it.
    """
    z = _shock(market.seed, tick)
    sigma = market.volatility
    base = market.price * math.exp(market.drift - 0.5 * sigma * sigma + sigma * z)
    nxt = base - market.impact * net_flow
    return max(1, round(nxt))


# the economy


class CoinEconomy:
    def __init__(
        self,
        registry: Registry,
        policy: SupplyPolicy,
        market: MarketPrice,
        rules: RcscRules | None = None,
        *,
        operator: str,
        fiat_budget: int = 0,
        fractions: Sequence[Fraction] = THIRDS,
    ) -> None:
        self.registry = registry
        self.policy = policy
        self.market = market
        self.rcsc = RcscState(fiat_budget=fiat_budget, rules=rules or RcscRules())
        self.ledger = CoinLedger()
        self.operator = operator
        self.fractions = tuple(fractions)
        self.remainders: dict[str, int] = {}
        self.dues: dict[str, dict[str, int]] = {}
        self.due_since: dict[str, int] = {}
        self.paid_out: dict[str, dict[str, int]] = {}
        self.pending_net_flow = 0
        self.minted_by_year: dict[int, int] = {}

    def _sign(self, author: str, channel: str, kind: TxKind, payload: dict[str, Any]) -> Transaction:
        return self.registry.get(author).sign(channel, kind, payload)

    # issuance

    def mint_on_generation(
        self, agreement: PanelAgreement, state: PanelState, kwh: int, tick: int
    ) -> Transaction | None:
        if state.phase is not Phase.ACTIVE:
            raise PanelNotActive(f"{agreement.agreement_id} is {state.phase.value}")
        if kwh < 0:
            raise ValueError("negative energy")
        aid = agreement.agreement_id
        batches, to_escrow, to_reserve, rest = mint_split(self.remainders.get(aid, 0), kwh, self.policy)
        self.remainders[aid] = rest
        if batches == 0:
            return None
        coins = to_escrow + to_reserve
        self.ledger.total_minted += coins
        self.ledger.escrows[aid] = self.ledger.escrows.get(aid, 0) + to_escrow
        self.rcsc.reserve_balance += to_reserve
        year = self.policy.year_index
        self.minted_by_year[year] = self.minted_by_year.get(year, 0) + coins
        return self._sign(
            state.prosumer,
            agreement.channel,
            TxKind.MINT,
            {
                "agreement_id": aid,
                "kwh": kwh,
                "batches": batches,
                "coins": coins,
                "escrow": to_escrow,
                "reserve": to_reserve,
                "tick": tick,
            },
        )

    def adjust_policy(self, growth_factor: Fraction | str, tick: int) -> Transaction:
        self.policy = annual_policy_adjustment(self.policy, growth_factor)
        return self._sign(
            self.operator,
            PUBLIC_CHANNEL,
            TxKind.POLICY_ADJUSTMENT,
            {
                "coins_per_batch": self.policy.coins_per_batch,
                "units_per_batch": self.policy.units_per_batch,
                "year_index": self.policy.year_index,
                "approach": self.policy.approach.value,
                "growth_factor": str(Fraction(growth_factor)),
                "tick": tick,
            },
        )

    # market access

    def buy_coins(self, buyer: str, coins: int, tick: int, ref: str | None = None) -> Transaction:
        """``buyer`` pays fiat at the current price for coins from the market pool.

        When the pool is short the reserve sells the difference.
        """
        price = self.market.price
        cost = ceil_div(coins * price, MICRO)
        wallet = self.registry.get(buyer).wallet
        if wallet.get(FIAT, 0) < cost:
            raise InsufficientFiat(f"{buyer} needs {fmt_micro(cost)} for {fmt_micro(coins)} coins", [buyer])
        pool = self.ledger.wallets.get(MARKET, 0)
        from_pool = min(pool, coins)
        from_reserve = coins - from_pool
        if from_reserve > self.rcsc.reserve_balance:
            raise InsufficientLiquidity(f"market and reserve cannot supply {fmt_micro(coins)} coins")
        wallet[FIAT] -= cost
        if from_pool:
            self.ledger.move_wallet(MARKET, buyer, from_pool)
        if from_reserve:
            self.rcsc.reserve_balance -= from_reserve
            self.ledger.wallets[buyer] = self.ledger.wallets.get(buyer, 0) + from_reserve
            # filling demand the pool cannot meet does not move the price;
            # only the reserve's own band trades carry market impact
            self.rcsc.fiat_budget += ceil_div(from_reserve * price, MICRO)
        payload = {
            "side": "buy",
            "trader": buyer,
            "coins": coins,
            "price": price,
            "cost": cost,
            "from_reserve": from_reserve,
            "tick": tick,
        }
        if ref is not None:
            payload["ref"] = ref
        return self._sign(buyer, PUBLIC_CHANNEL, TxKind.TRADE, payload)

    def sell_coins(self, seller: str, coins: int, tick: int, ref: str | None = None) -> Transaction:
        price = self.market.price
        self.ledger.move_wallet(seller, MARKET, coins)
        proceeds = (coins * price) // MICRO
        w = self.registry.get(seller).wallet
        w[FIAT] = w.get(FIAT, 0) + proceeds
        payload = {"side": "sell", "trader": seller, "coins": coins, "price": price, "proceeds": proceeds, "tick": tick}
        if ref is not None:
            payload["ref"] = ref
        return self._sign(seller, PUBLIC_CHANNEL, TxKind.TRADE, payload)

    def donate(self, donor: str, coins: int, tick: int) -> Transaction:
        """Coins move from ``donor`` into the reserve; circulating supply is unchanged."""
        if self.ledger.wallets.get(donor, 0) < coins:
            raise InsufficientLiquidity(f"{donor} cannot donate {fmt_micro(coins)}")
        self.ledger.wallets[donor] -= coins
        self.rcsc.reserve_balance += coins
        return self._sign(donor, PUBLIC_CHANNEL, TxKind.DONATION, {"donor": donor, "coins": coins, "tick": tick})

    # reserve policy

    def rcsc_apply_policy(self, tick: int) -> list[Transaction]:
        """Run the burn and band-trading rules once; skipped rules are logged."""
        r = self.rcsc
        rules = r.rules
        txs = []
        if rules.burn_threshold is not None and self.ledger.circulating > rules.burn_threshold:
            amount = round_fraction(r.reserve_balance * Fraction(rules.burn_fraction))
            if amount <= 0:
                self._skip(tick, "burn: reserve empty")
            else:
                r.reserve_balance -= amount
                r.cumulative_burned += amount
                self.ledger.total_burned += amount
                txs.append(
                    self._sign(
                        self.operator,
                        PUBLIC_CHANNEL,
                        TxKind.BURN,
                        {"coins": amount, "cumulative": r.cumulative_burned, "tick": tick},
                    )
                )
        price = self.market.price
        if rules.trade_size > 0 and rules.band_upper is not None and price > rules.band_upper:
            coins = min(rules.trade_size, r.reserve_balance)
            if coins <= 0:
                self._skip(tick, "sell: reserve empty")
            else:
                r.reserve_balance -= coins
                self.ledger.wallets[MARKET] = self.ledger.wallets.get(MARKET, 0) + coins
                r.fiat_budget += (coins * price) // MICRO
                self.pending_net_flow += coins
                txs.append(self._rcsc_trade("sell", coins, price, tick))
        elif rules.trade_size > 0 and rules.band_lower is not None and price < rules.band_lower:
            affordable = (r.fiat_budget * MICRO) // price
            coins = min(rules.trade_size, affordable, self.ledger.wallets.get(MARKET, 0))
            if coins <= 0:
                self._skip(tick, "buy: no fiat budget or no coins on the market")
            else:
                cost = ceil_div(coins * price, MICRO)
                r.fiat_budget -= cost
                self.ledger.wallets[MARKET] -= coins
                r.reserve_balance += coins
                self.pending_net_flow -= coins
                txs.append(self._rcsc_trade("buy", coins, price, tick))
        return txs

    def _rcsc_trade(self, side: str, coins: int, price: int, tick: int) -> Transaction:
        return self._sign(
            self.operator,
            PUBLIC_CHANNEL,
            TxKind.TRADE,
            {"side": side, "trader": "rcsc", "coins": coins, "price": price, "tick": tick},
        )

    def _skip(self, tick: int, why: str) -> None:
        msg = f"tick {tick}: {why}"
        self.rcsc.log.append(msg)
        log.info("rcsc rule skipped, %s", msg)

    def advance_market(self, tick: int) -> int:
        self.market.price = step_market(self.market, self.pending_net_flow, tick)
        self.pending_net_flow = 0
        return self.market.price

    # settlement

    def _escrow_move(self, aid: str, to: str, coins: int) -> None:
        if self.ledger.escrows.get(aid, 0) < coins:
            raise InsufficientReserve(f"escrow {aid} holds too few coins")
        self.ledger.escrows[aid] -= coins
        self.ledger.wallets[to] = self.ledger.wallets.get(to, 0) + coins

    def _reserve_to_escrow(self, aid: str, coins: int, reason: str, tick: int) -> Transaction:
        if coins > self.rcsc.reserve_balance:
            raise InsufficientReserve(f"reserve holds {fmt_micro(self.rcsc.reserve_balance)}, {reason} needs {fmt_micro(coins)}")
        self.rcsc.reserve_balance -= coins
        self.ledger.escrows[aid] = self.ledger.escrows.get(aid, 0) + coins
        return self._sign(
            self.operator,
            PUBLIC_CHANNEL,
            TxKind.RESERVE_TRANSFER,
            {"agreement_id": aid, "coins": coins, "direction": "to-escrow", "reason": reason, "tick": tick},
        )

    def settle_liabilities_in_coins(
        self,
        agreement: PanelAgreement,
        state: PanelState,
        tick: int,
        *,
        refusing: Iterable[str] = (),
    ) -> list[Transaction]:
        """Each obligated party buys coins worth its liability and deposits them in the escrow."""
        if state.phase not in SETTLEABLE:
            raise CoinError(f"{agreement.agreement_id} is {state.phase.value}, not settleable")
        aid = agreement.agreement_id
        if aid not in self.dues:
            obl = settlement_split(agreement, state, self.fractions)
            self.dues[aid] = {k: v for k, v in obl.owed.items() if v > 0}
        refusing = set(refusing)
        txs = []
        missing = []
        for party, owed in list(self.dues[aid].items()):
            actor = party_actor(agreement, state, party)
            coins = settle_in_coins(owed, self.market.price)
            if party in refusing:
                missing.append(party)
                continue
            try:
                txs.append(self.buy_coins(actor, coins, tick, ref=aid))
            except (InsufficientFiat, InsufficientLiquidity):
                missing.append(party)
                continue
            self.ledger.wallets[actor] -= coins
            self.ledger.escrows[aid] = self.ledger.escrows.get(aid, 0) + coins
            del self.dues[aid][party]
            txs.append(
                self._sign(
                    actor,
                    agreement.channel,
                    TxKind.ESCROW_DEPOSIT,
                    {
                        "agreement_id": aid,
                        "currency": COIN,
                        "party": party,
                        "owed": owed,
                        "coins": coins,
                        "purpose": "liability",
                        "tick": tick,
                    },
                )
            )
        if missing:
            self.due_since.setdefault(aid, tick)
            raise InsufficientFiat(f"{aid}: {', '.join(missing)} did not cover their liability", missing, txs)
        self.due_since.pop(aid, None)
        return txs

    def topup_defaulted(self, agreement: PanelAgreement, tick: int) -> list[Transaction]:
        """Reserve covers outstanding dues once the default has lasted long enough."""
        aid = agreement.agreement_id
        limit = self.rcsc.rules.topup_after_ticks
        since = self.due_since.get(aid)
        if limit is None or since is None or tick - since < limit or not self.dues.get(aid):
            return []
        owed = sum(self.dues[aid].values())
        coins = settle_in_coins(owed, self.market.price)
        tx = self._reserve_to_escrow(aid, coins, "default top-up", tick)
        self.dues[aid] = {}
        self.due_since.pop(aid, None)
        return [tx]

    def release_payout(
        self,
        agreement: PanelAgreement,
        state: PanelState,
        beneficiary: str,
        tick: int,
        signatures: Mapping[str, str] | None = None,
    ) -> list[Transaction]:
        """Convert the fiat fee into coins at today's price and pay it out of the escrow.

        The reserve closes any escrow deficit first. Required signatures are
        the same all-party set as the stablecoin escrow.
        """
        aid = agreement.agreement_id
        done = self.paid_out.setdefault(aid, {})
        if beneficiary in done:
            return []
        if self.dues.get(aid):
            raise CoinError(f"{aid} still has unpaid liabilities")
        fee = agreement.total_recycling_cost if beneficiary == "recycler" else agreement.transport_allowance
        to = agreement.recycler if beneficiary == "recycler" else state.prosumer
        if fee <= 0:
            done[beneficiary] = 0
            return []
        coins = settle_in_coins(fee, self.market.price)
        signers = (state.prosumer, agreement.recycler, agreement.manufacturer, agreement.utility)
        msg = withdrawal_message(f"rc-escrow:{aid}", beneficiary, to, coins)
        if signatures is None:
            signatures = sign_withdrawal(self.registry, signers, msg)
        missing = missing_signers(self.registry, signers, msg, signatures)
        if missing:
            raise MissingSignature(", ".join(missing))
        txs = []
        held = self.ledger.escrows.get(aid, 0)
        if held < coins:
            txs.append(self._reserve_to_escrow(aid, coins - held, "payout deficit", tick))
        self._escrow_move(aid, to, coins)
        done[beneficiary] = coins
        txs.append(
            self._sign(
                to,
                agreement.channel,
                TxKind.ESCROW_WITHDRAWAL,
                {
                    "contract_id": f"rc-escrow:{aid}",
                    "currency": COIN,
                    "beneficiary": beneficiary,
                    "to": to,
                    "amount": coins,
                    "fee": fee,
                    "price": self.market.price,
                    "signatures": dict(sorted(signatures.items())),
                    "tick": tick,
                },
            )
        )
        if beneficiary == "recycler":
            txs.extend(self.sweep_surplus(agreement, tick))
        return txs

    def sweep_surplus(self, agreement: PanelAgreement, tick: int) -> list[Transaction]:
        aid = agreement.agreement_id
        left = self.ledger.escrows.get(aid, 0)
        if left <= 0:
            return []
        self.ledger.escrows[aid] = 0
        self.rcsc.reserve_balance += left
        return [
            self._sign(
                self.operator,
                PUBLIC_CHANNEL,
                TxKind.RESERVE_TRANSFER,
                {"agreement_id": aid, "coins": left, "direction": "to-reserve", "reason": "escrow surplus", "tick": tick},
            )
        ]

    def series_row(self, tick: int) -> dict[str, int]:
        return {
            "tick": tick,
            "minted": self.ledger.total_minted,
            "burned": self.ledger.total_burned,
            "circulating": self.ledger.circulating,
            "reserve": self.rcsc.reserve_balance,
            "escrowed": sum(self.ledger.escrows.values()),
            "wallets": sum(self.ledger.wallets.values()),
            "price": self.market.price,
            "fiat_budget": self.rcsc.fiat_budget,
        }


def replay_coin_supply(txs: Iterable[Transaction]) -> list[dict[str, Any]]:
    """Rebuild mint/burn/reserve totals from committed transactions and check they balance."""
    minted = burned = reserve = escrowed = outside = 0
    findings = []
    for tx in txs:
        p = tx.payload
        k = tx.kind
        if k is TxKind.MINT:
            if p["escrow"] + p["reserve"] != p["coins"]:
                findings.append({"type": "mint-split", "tx_id": tx.tx_id.hex()})
            minted += p["coins"]
            escrowed += p["escrow"]
            reserve += p["reserve"]
        elif k is TxKind.BURN:
            burned += p["coins"]
            reserve -= p["coins"]
        elif k is TxKind.DONATION:
            outside -= p["coins"]
            reserve += p["coins"]
        elif k is TxKind.RESERVE_TRANSFER:
            sign = 1 if p["direction"] == "to-escrow" else -1
            reserve -= sign * p["coins"]
            escrowed += sign * p["coins"]
        elif k is TxKind.TRADE:
            if p["trader"] == "rcsc":
                sign = 1 if p["side"] == "sell" else -1
                reserve -= sign * p["coins"]
                outside += sign * p["coins"]
            elif p["side"] == "buy" and p.get("from_reserve"):
                reserve -= p["from_reserve"]
                outside += p["from_reserve"]
        elif k is TxKind.ESCROW_DEPOSIT and p.get("currency") == COIN:
            outside -= p["coins"]
            escrowed += p["coins"]
        elif k is TxKind.ESCROW_WITHDRAWAL and p.get("currency") == COIN:
            escrowed -= p["amount"]
            outside += p["amount"]
        if reserve < 0 or escrowed < 0:
            findings.append({"type": "negative-balance", "tx_id": tx.tx_id.hex(), "reserve": reserve, "escrowed": escrowed})
            reserve, escrowed = max(reserve, 0), max(escrowed, 0)
    if minted - burned != reserve + escrowed + outside:
        findings.append(
            {"type": "coin-conservation", "minted": minted, "burned": burned, "held": reserve + escrowed + outside}
        )
    return findings
