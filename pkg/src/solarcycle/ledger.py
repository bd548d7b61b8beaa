"""Permissioned append-only ledger.

Blocks carry a header (parent hash, Merkle root, tick, height, proposing
validator and its signature) and an ordered body of signed transactions.
Hashing is SHA-256 throughout; signatures are Ed25519.

The header hash covers every header field except ``validator_signature``;
the validator signs that hash. A transaction id covers
``(author, channel, kind, payload)``; the author signs the id.
"""
from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Protocol, Sequence

from nacl.bindings import crypto_sign, crypto_sign_open, crypto_sign_seed_keypair
from nacl.exceptions import BadSignatureError

SCHEMA_VERSION = 1
ZERO_DIGEST = bytes(32)


class LedgerError(Exception):
    pass


class NotAValidator(LedgerError):
    pass


class InvalidBody(LedgerError):
    pass


class InvalidTransactionInBody(InvalidBody):
    pass


class DuplicateTransaction(InvalidBody):
    pass


class BadParentHash(LedgerError):
    pass


class BadMerkleRoot(LedgerError):
    pass


class BadValidatorSignature(LedgerError):
    pass


class TxKind(str, enum.Enum):
    REGISTRATION = "registration"
    AGREEMENT = "agreement"
    FEE_PAYMENT = "fee-payment"
    PAYMENT = "payment"
    BALANCE_POSTING = "balance-posting"
    ENERGY_SUMMARY = "energy-summary"
    EOL_DECLARATION = "eol-declaration"
    FAILURE_DECLARATION = "failure-declaration"
    REFURBISHMENT = "refurbishment"
    LANDFILL = "landfill"
    SHIPMENT = "shipment"
    RECEIPT = "receipt"
    ACKNOWLEDGMENT = "acknowledgment"
    ESCROW_DEPLOY = "escrow-deploy"
    ESCROW_DEPOSIT = "escrow-deposit"
    ESCROW_WITHDRAWAL = "escrow-withdrawal"
    MINT = "mint"
    BURN = "burn"
    TRADE = "trade"
    DONATION = "donation"
    RESERVE_TRANSFER = "reserve-transfer"
    POLICY_ADJUSTMENT = "policy-adjustment"


# hashing and serialization


def hash_digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _frame(*fields: bytes) -> bytes:
    out = bytearray()
    for f in fields:
        out += len(f).to_bytes(4, "big")
        out += f
    return bytes(out)


_CANONICAL = json.JSONEncoder(sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_payload(payload: Mapping[str, Any]) -> bytes:
    return _CANONICAL.encode(payload).encode()


_U32 = struct.Struct(">I").pack


@lru_cache(maxsize=1 << 16)
def _tx_prefix(author: str, channel: str, kind: str) -> bytes:
    a, c, k = author.encode(), channel.encode(), kind.encode()
    return b"".join((_U32(len(a)), a, _U32(len(c)), c, _U32(len(k)), k))


def compute_tx_id(author: str, channel: str, kind: str, payload: Mapping[str, Any]) -> bytes:
    # same bytes as _frame over the four fields; the payload is always re-encoded
    p = _CANONICAL.encode(payload).encode()
    return hashlib.sha256(_tx_prefix(author, channel, str(kind)) + _U32(len(p)) + p).digest()


def compute_merkle_root(tx_ids: Sequence[bytes]) -> bytes:
    """Binary Merkle root; an odd node is paired with itself, empty gives the zero digest."""
    if not tx_ids:
        return ZERO_DIGEST
    level = list(tx_ids)
    while True:
        if len(level) % 2:
            level.append(level[-1])
        level = [hash_digest(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        if len(level) == 1:
            return level[0]


# keys and signatures


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)
    # libsodium's 64-byte secret key (seed followed by public key)
    _secret: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_secret", crypto_sign_seed_keypair(self.private_key)[1])

    @classmethod
    def from_seed(cls, seed: bytes) -> KeyPair:
        return cls(public_key=crypto_sign_seed_keypair(seed)[0], private_key=seed)

    @classmethod
    def derive(cls, *parts: str | bytes) -> KeyPair:
        """Deterministic keypair from arbitrary labels (scenario seed, actor id...)."""
        raw = [p.encode() if isinstance(p, str) else p for p in parts]
        return cls.from_seed(hash_digest(_frame(*raw)))

    def sign(self, message: bytes) -> bytes:
        return crypto_sign(message, self._secret)[:64]


@lru_cache(maxsize=1 << 20)
def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(public_key) != 32 or len(signature) != 64:
        return False
    try:
        crypto_sign_open(signature + message, public_key)
    except (BadSignatureError, ValueError, TypeError):
        return False
    return True


# records


@dataclass(frozen=True, slots=True)
class Transaction:
    tx_id: bytes
    author: str
    channel: str
    kind: TxKind
    payload: dict[str, Any]
    signature: bytes

    def recompute_id(self) -> bytes:
        return compute_tx_id(self.author, self.channel, self.kind.value, self.payload)

    def to_json(self) -> dict[str, Any]:
        return {
            "tx_id": self.tx_id.hex(),
            "author": self.author,
            "channel": self.channel,
            "kind": self.kind.value,
            "payload": self.payload,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> Transaction:
        return cls(
            tx_id=bytes.fromhex(d["tx_id"]),
            author=d["author"],
            channel=d["channel"],
            kind=TxKind(d["kind"]),
            payload=d["payload"],
            signature=bytes.fromhex(d["signature"]),
        )


def make_transaction(
    keypair: KeyPair, author: str, channel: str, kind: TxKind, payload: dict[str, Any]
) -> Transaction:
    tx_id = compute_tx_id(author, channel, kind.value, payload)
    return Transaction(tx_id, author, channel, kind, payload, keypair.sign(tx_id))


@dataclass(frozen=True, slots=True)
class BlockHeader:
    parent_hash: bytes
    merkle_root: bytes
    timestamp: int
    height: int
    validator: str
    validator_signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return _frame(
            self.parent_hash,
            self.merkle_root,
            self.timestamp.to_bytes(8, "big", signed=True),
            self.height.to_bytes(8, "big", signed=True),
            self.validator.encode(),
        )

    def hash(self) -> bytes:
        return hash_digest(self.signing_bytes())

    def to_json(self) -> dict[str, Any]:
        return {
            "parent_hash": self.parent_hash.hex(),
            "merkle_root": self.merkle_root.hex(),
            "timestamp": self.timestamp,
            "height": self.height,
            "validator": self.validator,
            "validator_signature": self.validator_signature.hex(),
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> BlockHeader:
        return cls(
            parent_hash=bytes.fromhex(d["parent_hash"]),
            merkle_root=bytes.fromhex(d["merkle_root"]),
            timestamp=int(d["timestamp"]),
            height=int(d["height"]),
            validator=d["validator"],
            validator_signature=bytes.fromhex(d["validator_signature"]),
        )


@dataclass(frozen=True, slots=True)
class Block:
    header: BlockHeader
    body: tuple[Transaction, ...] = ()

    @property
    def hash(self) -> bytes:
        return self.header.hash()

    @property
    def height(self) -> int:
        return self.header.height

    def to_json(self) -> dict[str, Any]:
        return {"header": self.header.to_json(), "body": [tx.to_json() for tx in self.body]}

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> Block:
        return cls(BlockHeader.from_json(d["header"]), tuple(Transaction.from_json(t) for t in d["body"]))


GENESIS_VALIDATOR = "genesis"


def make_genesis() -> Block:
    return Block(BlockHeader(ZERO_DIGEST, ZERO_DIGEST, 0, 0, GENESIS_VALIDATOR), ())


# rule sets


class Rules(Protocol):
    def public_key(self, actor_id: str) -> bytes | None: ...

    def can_propose(self, actor_id: str) -> bool: ...

    def check_transaction(self, tx: Transaction) -> str | None:
        """Return a reason string if ``tx`` violates the rule set, else None."""
        ...


class KeyRing:
    """Minimal rule set: known keys plus a validator set, no authorization rules."""

    def __init__(self, keys: Mapping[str, bytes] | None = None, validators: Iterable[str] = ()) -> None:
        self.keys = dict(keys or {})
        self.validators = set(validators)

    def add(self, actor_id: str, public_key: bytes, validator: bool = False) -> None:
        self.keys[actor_id] = public_key
        if validator:
            self.validators.add(actor_id)

    def public_key(self, actor_id: str) -> bytes | None:
        return self.keys.get(actor_id)

    def can_propose(self, actor_id: str) -> bool:
        return actor_id in self.validators

    def check_transaction(self, tx: Transaction) -> str | None:
        return None


def _tx_problem(tx: Transaction, rules: Rules, recomputed: bytes | None = None) -> str | None:
    if (recomputed or tx.recompute_id()) != tx.tx_id:
        return "tx_id does not match contents"
    key = rules.public_key(tx.author)
    if key is None:
        return f"unknown author {tx.author!r}"
    if not verify_signature(key, tx.tx_id, tx.signature):
        return "bad transaction signature"
    return rules.check_transaction(tx)


# chain


class Chain:
    """Block tree rooted at genesis with tip tracking.

    ``tips`` maps each leaf block hash to the sequence number at which it was
    received; ``resolve_fork`` picks the highest, earliest-received tip.
    """

    def __init__(self, rules: Rules) -> None:
        self.rules = rules
        genesis = make_genesis()
        self.genesis_hash = genesis.hash
        self._blocks: dict[bytes, Block] = {self.genesis_hash: genesis}
        self._seq = 0
        self.tips: dict[bytes, int] = {self.genesis_hash: 0}
        self._tx_index: dict[bytes, list[bytes]] = {}

    def __contains__(self, block_hash: bytes) -> bool:
        return block_hash in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def block(self, block_hash: bytes) -> Block:
        return self._blocks[block_hash]

    @property
    def head(self) -> Block:
        return resolve_fork(self)

    @property
    def height(self) -> int:
        return self.head.height

    def is_ancestor(self, ancestor: bytes, descendant: bytes) -> bool:
        target = self._blocks[ancestor].height
        h = descendant
        while True:
            b = self._blocks[h]
            if b.height < target:
                return False
            if h == ancestor:
                return True
            if b.height == 0:
                return False
            h = b.header.parent_hash

    def committed_on_branch(self, tx_id: bytes, tip: bytes) -> bool:
        holders = self._tx_index.get(tx_id)
        if not holders:
            return False
        return any(self.is_ancestor(h, tip) for h in holders)

    def branch(self, tip: bytes | None = None) -> list[Block]:
        """Blocks from genesis to ``tip`` (default: canonical head) in height order."""
        h = tip if tip is not None else self.head.hash
        out = []
        while True:
            b = self._blocks[h]
            out.append(b)
            if b.height == 0:
                break
            h = b.header.parent_hash
        out.reverse()
        return out

    def transactions(self, tip: bytes | None = None) -> Iterator[tuple[int, Transaction]]:
        for b in self.branch(tip):
            for tx in b.body:
                yield b.height, tx

    def _store(self, block: Block) -> None:
        h = block.hash
        self._blocks[h] = block
        self._seq += 1
        self.tips.pop(block.header.parent_hash, None)
        self.tips[h] = self._seq
        for tx in block.body:
            self._tx_index.setdefault(tx.tx_id, []).append(h)


def create_block(
    parent: BlockHeader,
    txs: Sequence[Transaction],
    validator: str,
    keypair: KeyPair,
    rules: Rules,
    *,
    timestamp: int | None = None,
    chain: Chain | None = None,
) -> Block:
    """Assemble and sign a child of ``parent``.

    With ``chain`` given, transactions already committed on the parent's
    branch are rejected as replays.
    """
    if not rules.can_propose(validator):
        raise NotAValidator(validator)
    parent_hash = parent.hash()
    seen: set[bytes] = set()
    for tx in txs:
        if tx.tx_id in seen or (chain is not None and chain.committed_on_branch(tx.tx_id, parent_hash)):
            raise DuplicateTransaction(tx.tx_id.hex())
        seen.add(tx.tx_id)
        problem = _tx_problem(tx, rules)
        if problem:
            raise InvalidTransactionInBody(f"{tx.tx_id.hex()[:16]}: {problem}")
    header = BlockHeader(
        parent_hash=parent_hash,
        merkle_root=compute_merkle_root([tx.tx_id for tx in txs]),
        timestamp=parent.timestamp + 1 if timestamp is None else timestamp,
        height=parent.height + 1,
        validator=validator,
    )
    header = replace(header, validator_signature=keypair.sign(header.hash()))
    return Block(header, tuple(txs))


def validate_and_append(chain: Chain, block: Block) -> Chain:
    """Append ``block`` to the tree if every check passes; otherwise raise and leave ``chain`` as is."""
    hdr = block.header
    parent = chain._blocks.get(hdr.parent_hash)
    if parent is None:
        raise BadParentHash(f"unknown parent {hdr.parent_hash.hex()}")
    if hdr.height != parent.height + 1:
        raise BadParentHash(f"height {hdr.height} does not extend parent at {parent.height}")
    if block.hash in chain:
        raise DuplicateTransaction("block already appended")
    ids = [tx.recompute_id() for tx in block.body]
    if compute_merkle_root(ids) != hdr.merkle_root:
        raise BadMerkleRoot(f"block at height {hdr.height}")
    if not chain.rules.can_propose(hdr.validator):
        raise NotAValidator(hdr.validator)
    key = chain.rules.public_key(hdr.validator)
    if key is None or not verify_signature(key, hdr.hash(), hdr.validator_signature):
        raise BadValidatorSignature(f"block at height {hdr.height}")
    seen: set[bytes] = set()
    for tx, rid in zip(block.body, ids):
        if tx.tx_id in seen or chain.committed_on_branch(tx.tx_id, hdr.parent_hash):
            raise DuplicateTransaction(tx.tx_id.hex())
        seen.add(tx.tx_id)
        problem = _tx_problem(tx, chain.rules, rid)
        if problem:
            raise InvalidBody(f"{tx.tx_id.hex()[:16]}: {problem}")
    chain._store(block)
    return chain


def resolve_fork(chain: Chain) -> Block:
    best_hash, best_key = None, None
    for h, seq in chain.tips.items():
        key = (-chain._blocks[h].height, seq)
        if best_key is None or key < best_key:
            best_hash, best_key = h, key
    assert best_hash is not None
    return chain._blocks[best_hash]


# integrity


@dataclass(frozen=True)
class IntegrityFinding:
    height: int
    index: int
    problem: str
    detail: str = ""


@dataclass
class IntegrityReport:
    findings: list[IntegrityFinding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def flagged_indices(self) -> set[int]:
        return {f.index for f in self.findings}

    def to_json(self) -> list[dict[str, Any]]:
        return [f.__dict__.copy() for f in self.findings]


def verify_chain_integrity(chain: Chain | Sequence[Block], rules: Rules | None = None) -> IntegrityReport:
    """Recompute every hash from genesis and report each block that fails.

    Each header is recomputed with the recomputed Merkle root and the
    recomputed parent hash, so tampering with one block breaks the parent
    link of every descendant.
    """
    if isinstance(chain, Chain):
        blocks: Sequence[Block] = chain.branch()
        rules = rules or chain.rules
    else:
        blocks = chain
    if rules is None:
        raise ValueError("rules required when checking a bare block list")
    report = IntegrityReport()
    add = report.findings.append
    genesis_hash = make_genesis().hash
    prev_hash = ZERO_DIGEST
    for i, block in enumerate(blocks):
        hdr = block.header
        ids = []
        for j, tx in enumerate(block.body):
            rid = tx.recompute_id()
            ids.append(rid)
            if rid != tx.tx_id:
                add(IntegrityFinding(hdr.height, i, "tx-id", f"tx {j} id does not match contents"))
            key = rules.public_key(tx.author)
            if key is None or not verify_signature(key, rid, tx.signature):
                add(IntegrityFinding(hdr.height, i, "tx-signature", f"tx {j} by {tx.author}"))
        root = compute_merkle_root(ids)
        if root != hdr.merkle_root:
            add(IntegrityFinding(hdr.height, i, "merkle-root"))
        if hdr.parent_hash != prev_hash:
            add(IntegrityFinding(hdr.height, i, "parent-link"))
        if hdr.height != i:
            add(IntegrityFinding(hdr.height, i, "height", f"expected {i}"))
        rebuilt = replace(hdr, merkle_root=root, parent_hash=prev_hash)
        if i == 0:
            if hdr.hash() != genesis_hash or block.body:
                add(IntegrityFinding(hdr.height, i, "genesis"))
        else:
            key = rules.public_key(hdr.validator)
            if key is None or not rules.can_propose(hdr.validator):
                add(IntegrityFinding(hdr.height, i, "validator", f"{hdr.validator} may not propose"))
            elif not verify_signature(key, hdr.hash(), hdr.validator_signature):
                add(IntegrityFinding(hdr.height, i, "validator-signature"))
        prev_hash = rebuilt.hash()
    return report


# export / import


def export_blocks(blocks: Sequence[Block]) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "hash": "sha256",
        "signature": "ed25519",
        "blocks": [b.to_json() for b in blocks],
    }


def import_blocks(doc: Mapping[str, Any]) -> list[Block]:
    if not isinstance(doc, Mapping):
        raise ValueError("chain export must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported chain schema_version {doc.get('schema_version')!r}")
    return [Block.from_json(b) for b in doc["blocks"]]


def dump_chain(chain: Chain | Sequence[Block], path: str | Path) -> None:
    blocks = chain.branch() if isinstance(chain, Chain) else chain
    with open(path, "w", encoding="utf-8") as fh:
        # one-shot dumps runs entirely in the C encoder
        fh.write(json.dumps(export_blocks(blocks), separators=(",", ":")))
        fh.write("\n")


def load_chain(path: str | Path) -> list[Block]:
    with open(path, encoding="utf-8") as fh:
        return import_blocks(json.load(fh))
