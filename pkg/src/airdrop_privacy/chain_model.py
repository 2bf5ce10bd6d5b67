"""Canonical chain/transaction model, JSON-Lines ingestion and per-chain counts.

A chain file is UTF-8 JSON Lines, one transaction per line::

    {"tx":"<id>","h":<height>,"t":<unix_seconds>,"in":["<addr>",...],"out":[{"a":"<addr>","v":<int>} | {"v":<int>}, ...]}

Inputs name the address of each spent output directly (no outpoints). Real
UTXO data can be converted by resolving every ``(prev_txid, vout)`` to the
address of that output and dropping outputs whose script carries no address.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

ChainId = str
AddressKey = str

# Per-file cap on stored warning strings; the count is always exact.
MAX_STORED_WARNINGS = 20


class ChainFormatError(ValueError):
    """Raised when a chain file or snapshot violates the canonical format."""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True, slots=True)
class OutputRecord:
    value: int
    address: Optional[AddressKey] = None


@dataclass(frozen=True, slots=True)
class TxRecord:
    chain: ChainId
    height: int
    timestamp: int
    tx_id: str
    ordinal: int
    inputs: tuple[AddressKey, ...]
    outputs: tuple[OutputRecord, ...]

    def output_addresses(self) -> list[AddressKey]:
        return [o.address for o in self.outputs if o.address is not None]


@dataclass(frozen=True)
class ChainSnapshot:
    chain: ChainId
    txs: tuple[TxRecord, ...]
    tip_note: Optional[str] = None
    warnings: tuple[str, ...] = ()
    n_warnings: int = 0

    def __len__(self) -> int:
        return len(self.txs)

    def __iter__(self) -> Iterator[TxRecord]:
        return iter(self.txs)

    def output_address_set(self) -> set[AddressKey]:
        return {a for tx in self.txs for a in tx.output_addresses()}


@dataclass(frozen=True)
class ChainStats:
    n_txs: int
    n_outputs: int
    n_addresses: int


@dataclass
class _Validator:
    """Incremental invariant checks shared by file parsing and in-memory builds."""

    chain: ChainId
    path: Optional[Path] = None
    seen_ids: set[str] = field(default_factory=set)
    seen_addrs: set[str] = field(default_factory=set)
    last_height: int = -1
    warnings: list[str] = field(default_factory=list)
    n_warnings: int = 0

    def check(self, tx: TxRecord, line: Optional[int]) -> None:
        def fail(msg: str) -> None:
            raise ChainFormatError(msg, self.path, line)

        if not tx.tx_id:
            fail("empty tx id")
        if tx.tx_id in self.seen_ids:
            fail(f"duplicate tx id {tx.tx_id!r}")
        if tx.height < 0:
            fail(f"negative height {tx.height}")
        if tx.height < self.last_height:
            fail(f"height {tx.height} decreases (previous {self.last_height})")
        if not tx.outputs:
            fail("empty outputs list")
        for o in tx.outputs:
            if o.value < 0:
                fail(f"negative output value {o.value}")
            if o.address is not None and not o.address:
                fail("empty output address")
        for a in tx.inputs:
            if not a:
                fail("empty input address")
            if a not in self.seen_addrs:
                self.n_warnings += 1
                if len(self.warnings) < MAX_STORED_WARNINGS:
                    loc = f"line {line}" if line is not None else f"ordinal {tx.ordinal}"
                    self.warnings.append(
                        f"{self.chain} {loc}: input address {a!r} not seen in any earlier output"
                    )
        self.seen_ids.add(tx.tx_id)
        self.last_height = tx.height
        self.seen_addrs.update(tx.output_addresses())

    def summary(self) -> tuple[str, ...]:
        extra = self.n_warnings - len(self.warnings)
        if extra > 0:
            return tuple(self.warnings) + (f"{self.chain}: {extra} more unseen-input warnings",)
        return tuple(self.warnings)


def _parse_line(raw: str, chain: ChainId, ordinal: int) -> TxRecord:
    obj = json.loads(raw)
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    missing = {"tx", "h", "t", "in", "out"} - obj.keys()
    if missing:
        raise ValueError(f"missing field(s) {sorted(missing)}")
    tx_id, height, ts, ins, outs = obj["tx"], obj["h"], obj["t"], obj["in"], obj["out"]
    if not isinstance(tx_id, str):
        raise ValueError("'tx' must be a string")
    for name, v in (("h", height), ("t", ts)):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValueError(f"'{name}' must be an integer")
    if not isinstance(ins, list) or not all(isinstance(a, str) for a in ins):
        raise ValueError("'in' must be a list of strings")
    if not isinstance(outs, list):
        raise ValueError("'out' must be a list")
    outputs = []
    for o in outs:
        if not isinstance(o, dict) or "v" not in o:
            raise ValueError("each output needs a 'v' field")
        v, a = o["v"], o.get("a")
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValueError("output value must be an integer")
        if a is not None and not isinstance(a, str):
            raise ValueError("output address must be a string")
        outputs.append(OutputRecord(v, a))
    return TxRecord(chain, height, ts, tx_id, ordinal, tuple(ins), tuple(outputs))


def parse_chain_file(path: str | Path, chain: Optional[ChainId] = None,
                     tip_note: Optional[str] = None) -> ChainSnapshot:
    """Read and validate a canonical ``<chainid>.jsonl`` file.

    The chain id defaults to the file stem. Ordinals follow file order.
    Blank lines are ignored but still count toward reported line numbers.
    """
    path = Path(path)
    chain = chain or path.stem
    if not chain:
        raise ChainFormatError("empty chain id", path)
    validator = _Validator(chain, path)
    txs: list[TxRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                tx = _parse_line(raw, chain, len(txs))
            except (ValueError, TypeError) as exc:
                raise ChainFormatError(f"malformed line: {exc}", path, lineno) from None
            validator.check(tx, lineno)
            txs.append(tx)
    return ChainSnapshot(chain, tuple(txs), tip_note, validator.summary(), validator.n_warnings)


def build_snapshot(chain: ChainId, txs: Iterable[TxRecord],
                   tip_note: Optional[str] = None) -> ChainSnapshot:
    """Validate in-memory transactions and renumber their ordinals by position."""
    if not chain:
        raise ChainFormatError("empty chain id")
    validator = _Validator(chain)
    out: list[TxRecord] = []
    for i, tx in enumerate(txs):
        if tx.chain != chain or tx.ordinal != i:
            tx = TxRecord(chain, tx.height, tx.timestamp, tx.tx_id, i, tuple(tx.inputs), tuple(tx.outputs))
        validator.check(tx, None)
        out.append(tx)
    return ChainSnapshot(chain, tuple(out), tip_note, validator.summary(), validator.n_warnings)


def tx_to_json(tx: TxRecord) -> str:
    outs = [{"a": o.address, "v": o.value} if o.address is not None else {"v": o.value}
            for o in tx.outputs]
    obj = {"tx": tx.tx_id, "h": tx.height, "t": tx.timestamp, "in": list(tx.inputs), "out": outs}
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def write_chain_file(snapshot: ChainSnapshot, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for tx in snapshot.txs:
            fh.write(tx_to_json(tx))
            fh.write("\n")
    return path


def chain_stats(snapshot: ChainSnapshot | Iterable[TxRecord]) -> ChainStats:
    txs = snapshot.txs if isinstance(snapshot, ChainSnapshot) else snapshot
    n_txs = n_outputs = 0
    addrs: set[str] = set()
    for tx in txs:
        n_txs += 1
        n_outputs += len(tx.outputs)
        addrs.update(tx.output_addresses())
    return ChainStats(n_txs, n_outputs, len(addrs))


def shared_address_counts(
    snapshots: Sequence[ChainSnapshot] | Mapping[ChainId, set[AddressKey]],
    universe: Optional[ChainId] = None,
) -> dict[frozenset[ChainId], int]:
    """Venn decomposition of output addresses across chains.

    Maps each non-empty set of chains to the number of addresses that appear
    on exactly those chains. Regions with a zero count are included. With
    ``universe`` set, only addresses of that chain are counted, so the regions
    (all of which then contain it) partition that chain's address set.
    """
    if isinstance(snapshots, Mapping):
        sets = {c: set(s) for c, s in snapshots.items()}
    else:
        sets = {}
        for snap in snapshots:
            if snap.chain in sets:
                raise ValueError(f"chain {snap.chain!r} given twice")
            sets[snap.chain] = snap.output_address_set()
    if not sets:
        raise ValueError("need at least one chain")
    if universe is not None and universe not in sets:
        raise KeyError(f"unknown universe chain {universe!r}")

    chains = sorted(sets)
    regions: dict[frozenset[ChainId], int] = {}
    for k in range(1, len(chains) + 1):
        for combo in combinations(chains, k):
            if universe is None or universe in combo:
                regions[frozenset(combo)] = 0

    pool = sets[universe] if universe is not None else set().union(*sets.values())
    for addr in pool:
        key = frozenset(c for c in chains if addr in sets[c])
        regions[key] += 1
    return regions


def region_label(region: frozenset[ChainId]) -> str:
    return "&".join(sorted(region))
