"""Actor registry, node-class permissions and channel visibility.

The registry doubles as the ledger's rule set: it knows every actor's public
key, which actors may propose blocks, and which transaction kinds each role
may author.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .ledger import Block, Chain, KeyPair, Transaction, TxKind, make_transaction


class IdentityError(Exception):
    pass


class RoleNodeClassMismatch(IdentityError):
    pass


class UnknownActor(IdentityError):
    pass


class UnknownChannel(IdentityError):
    pass


class Role(str, enum.Enum):
    PROSUMER = "prosumer"
    MANUFACTURER = "manufacturer"
    UTILITY = "utility"
    RECYCLER = "recycler"
    REFURBISHER = "refurbisher"
    REGULATOR = "regulator"


class NodeClass(str, enum.Enum):
    FULL = "full"
    LIGHT = "light"


class Action(str, enum.Enum):
    CREATE_BLOCK = "create-block"
    POST_BALANCE = "post-balance"
    CREATE_TRANSACTION = "create-transaction"
    AUDIT = "audit"


FULL_NODE_ROLES = frozenset({Role.MANUFACTURER, Role.RECYCLER, Role.UTILITY, Role.REGULATOR})
PUBLIC_CHANNEL = "public"


@dataclass
class Actor:
    actor_id: str
    role: Role
    node_class: NodeClass
    public_key: bytes
    keypair: KeyPair | None = field(default=None, repr=False)
    wallet: dict[str, int] = field(default_factory=dict)
    # set when the actor defaulted on a liability; blocks new agreements
    blocked: bool = False
    registration: Transaction | None = field(default=None, repr=False)

    @property
    def is_observer(self) -> bool:
        return self.role is Role.REGULATOR

    @property
    def is_full_node(self) -> bool:
        return self.node_class is NodeClass.FULL

    def sign(self, channel: str, kind: TxKind, payload: dict) -> Transaction:
        if self.keypair is None:
            raise IdentityError(f"{self.actor_id} has no private key in this registry")
        return make_transaction(self.keypair, self.actor_id, channel, kind, payload)


@dataclass
class Channel:
    channel_id: str
    members: set[str] = field(default_factory=set)
    observers: set[str] = field(default_factory=set)
    public: bool = False

    def can_read(self, actor_id: str) -> bool:
        return self.public or actor_id in self.members or actor_id in self.observers


class Registry:
    def __init__(self, seed: str | bytes = "solarcycle") -> None:
        self.seed = seed if isinstance(seed, bytes) else seed.encode()
        self.actors: dict[str, Actor] = {}
        self.channels: dict[str, Channel] = {PUBLIC_CHANNEL: Channel(PUBLIC_CHANNEL, public=True)}
        self._counts: dict[Role, int] = {}

    # registration

    def register_actor(
        self,
        role: Role | str,
        node_class: NodeClass | str,
        actor_id: str | None = None,
        *,
        tick: int = 0,
    ) -> Actor:
        role, node_class = Role(role), NodeClass(node_class)
        if node_class is NodeClass.FULL and role not in FULL_NODE_ROLES:
            raise RoleNodeClassMismatch(f"{role.value} cannot run a full node")
        if actor_id is None:
            n = self._counts.get(role, 0) + 1
            actor_id = f"{role.value}-{n}"
        if actor_id in self.actors:
            raise IdentityError(f"actor {actor_id!r} already registered")
        self._counts[role] = self._counts.get(role, 0) + 1
        kp = KeyPair.derive(self.seed, actor_id)
        actor = Actor(actor_id, role, node_class, kp.public_key, kp)
        actor.registration = actor.sign(
            PUBLIC_CHANNEL,
            TxKind.REGISTRATION,
            {
                "actor": actor_id,
                "role": role.value,
                "node_class": node_class.value,
                "public_key": kp.public_key.hex(),
                "tick": tick,
            },
        )
        self.actors[actor_id] = actor
        if actor.is_observer:
            for ch in self.channels.values():
                ch.observers.add(actor_id)
        return actor

    @classmethod
    def from_transactions(cls, txs: Iterable[Transaction]) -> Registry:
        """Rebuild a verification-only registry (no private keys) from registration records."""
        reg = cls()
        for tx in txs:
            if tx.kind is not TxKind.REGISTRATION:
                continue
            p = tx.payload
            try:
                actor = Actor(p["actor"], Role(p["role"]), NodeClass(p["node_class"]), bytes.fromhex(p["public_key"]))
            except (KeyError, ValueError):
                continue
            if actor.actor_id in reg.actors:
                continue
            reg.actors[actor.actor_id] = actor
        return reg

    @classmethod
    def from_blocks(cls, blocks: Sequence[Block]) -> Registry:
        return cls.from_transactions(tx for b in blocks for tx in b.body)

    def get(self, actor_id: str) -> Actor:
        try:
            return self.actors[actor_id]
        except KeyError:
            raise UnknownActor(actor_id) from None

    def by_role(self, role: Role) -> list[Actor]:
        return [a for a in self.actors.values() if a.role is role]

    def validators(self) -> list[str]:
        return [a.actor_id for a in self.actors.values() if a.is_full_node]

    # channels

    def open_channel(self, channel_id: str, members: Iterable[str]) -> Channel:
        members = set(members)
        for m in members:
            self.get(m)
        ch = self.channels.get(channel_id)
        if ch is None:
            ch = Channel(channel_id, observers={a.actor_id for a in self.actors.values() if a.is_observer})
            self.channels[channel_id] = ch
        ch.members |= members
        return ch

    def readers(self, channel_id: str) -> set[str]:
        ch = self.channels.get(channel_id)
        if ch is None:
            raise UnknownChannel(channel_id)
        if ch.public:
            return set(self.actors)
        return ch.members | ch.observers

    # permissions

    def authorize(self, actor_id: str, action: Action | str, kind: TxKind | None = None) -> bool:
        actor = self.get(actor_id)
        action = Action(action)
        if action is Action.CREATE_BLOCK:
            return actor.is_full_node
        if action is Action.POST_BALANCE:
            return actor.role is Role.UTILITY
        if action is Action.AUDIT:
            return actor.is_observer or actor.is_full_node
        if kind is TxKind.BALANCE_POSTING:
            return actor.role is Role.UTILITY
        return True

    def visible_transactions(self, actor_id: str, source: Chain | Iterable[Transaction]) -> list[Transaction]:
        self.get(actor_id)
        txs = (tx for _, tx in source.transactions()) if isinstance(source, Chain) else source
        out = []
        for tx in txs:
            ch = self.channels.get(tx.channel)
            if ch is not None and ch.can_read(actor_id):
                out.append(tx)
        return out

    # ledger.Rules

    def public_key(self, actor_id: str) -> bytes | None:
        a = self.actors.get(actor_id)
        return a.public_key if a else None

    def can_propose(self, actor_id: str) -> bool:
        a = self.actors.get(actor_id)
        return a is not None and a.is_full_node

    def check_transaction(self, tx: Transaction) -> str | None:
        actor = self.actors.get(tx.author)
        if actor is None:
            return f"unknown author {tx.author!r}"
        if not self.authorize(tx.author, Action.CREATE_TRANSACTION, tx.kind):
            return f"{actor.role.value} may not author {tx.kind.value}"
        if tx.kind is TxKind.REGISTRATION and tx.payload.get("public_key") != actor.public_key.hex():
            return "registration key does not match registry"
        return None
