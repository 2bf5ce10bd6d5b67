"""Deterministic synthetic multi-chain data with ground-truth entities.

Three pre-existing chains are simulated wallet by wallet, then an airdrop
chain grants one output to every address holding a non-dust balance at the
configured snapshot on any existing chain. Entities then claim by sweeping
all their granted addresses at once, claiming each separately, not claiming,
or selling some private keys to another entity first.

Wallet construction guarantees that each wallet is exactly one cluster under
the multi-input heuristic: every spend consumes all funded addresses of the
wallet and sends change back to one of them, and each wallet ends with a
consolidating spend. Ground truth therefore knows every cluster without
running any clustering code.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

from .chain_model import (AddressKey, ChainId, ChainSnapshot, OutputRecord, TxRecord,
                          build_snapshot, write_chain_file)

BEHAVIORS = ("sweep_all", "per_address_claim", "no_claim", "key_sale")
T0 = 1_388_534_400  # 2014-01-01T00:00:00Z

# Fractions of the simulated time span.
SNAPSHOT_AT = 0.55
GRANT_ERA = (0.60, 0.66)
STAKE_ERA = (0.665, 0.68)
CLAIM_ERA = (0.68, 0.90)
RESPEND_ERA = (0.90, 0.97)
FINAL_ERA = (0.97, 0.999)


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    seed: int = 0
    n_entities: int = 200
    base_chains: tuple[str, ...] = ("btc", "ltc", "doge")
    airdrop_chain: str = "clam"
    # mean spends per active entity on each chain
    activity: dict[str, float] = field(default_factory=lambda: {"btc": 10.0, "ltc": 6.0, "doge": 6.0})
    presence: float = 0.8
    max_wallets: int = 3
    reuse_prob: float = 0.3
    key_share_prob: float = 0.2
    dust: int = 1
    grant_value: int = 460_000_000
    grants_per_tx: int = 4
    behaviors: dict[str, float] = field(default_factory=lambda: {
        "sweep_all": 0.4, "per_address_claim": 0.25, "no_claim": 0.25, "key_sale": 0.1})
    native_mix_prob: float = 0.3
    respend_prob: float = 0.5
    null_output_prob: float = 0.05
    block_interval: dict[str, int] = field(default_factory=lambda: {
        "btc": 600, "ltc": 150, "doge": 60, "clam": 60})
    duration: int = 120 * 86400

    def __post_init__(self) -> None:
        self.base_chains = tuple(self.base_chains)
        self.validate()

    def validate(self) -> None:
        if self.n_entities < 1:
            raise ScenarioError("n_entities must be >= 1")
        chains = list(self.base_chains) + [self.airdrop_chain]
        if len(set(chains)) != len(chains) or not all(chains):
            raise ScenarioError(f"chain ids must be unique and non-empty: {chains}")
        unknown = set(self.behaviors) - set(BEHAVIORS)
        if unknown:
            raise ScenarioError(f"unknown claim behaviors {sorted(unknown)}")
        probs = list(self.behaviors.values())
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ScenarioError(f"claim behavior probabilities must be >= 0 and sum to 1, got {self.behaviors}")
        for name in ("presence", "reuse_prob", "key_share_prob", "native_mix_prob",
                     "respend_prob", "null_output_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ScenarioError(f"{name} must be in [0, 1], got {v}")
        if self.max_wallets < 1 or self.grants_per_tx < 1 or self.dust < 1 or self.duration < 1000:
            raise ScenarioError("max_wallets, grants_per_tx and dust must be >= 1; duration >= 1000")
        if any(a < 0 for a in self.activity.values()):
            raise ScenarioError("activity rates must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown scenario fields {sorted(extra)}")
        return cls(**dict(d))

    @classmethod
    def from_json(cls, path: str | Path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base_chains"] = list(self.base_chains)
        return d


@dataclass
class Group:
    """Addresses that form one cluster on one chain, by construction."""

    entity: Optional[str]
    addresses: list[AddressKey]


@dataclass
class ExpectedImpact:
    source: ChainId
    target: ChainId
    components: int
    impacted_clusters: int
    stars: int
    non_stars: int
    entities: list[str]

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class GroundTruth:
    seed: int
    # entity -> chain -> addresses it controls on that chain
    entities: dict[str, dict[ChainId, list[AddressKey]]]
    behaviors: dict[str, str]
    # chain -> every cluster on that chain, singletons included
    groups: dict[ChainId, list[Group]]
    airdrop_chain: ChainId
    base_chains: list[ChainId]
    snapshot_heights: dict[ChainId, int]
    airdropped: list[AddressKey]
    grant_era: tuple[int, int]
    sales: list[dict] = field(default_factory=list)
    expected: dict[str, dict] = field(default_factory=dict)

    def entity_addresses(self, entity: str) -> set[tuple[ChainId, AddressKey]]:
        return {(c, a) for c, addrs in self.entities.get(entity, {}).items() for a in addrs}

    def to_json(self) -> dict:
        d = asdict(self)
        d["grant_era"] = list(self.grant_era)
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "GroundTruth":
        d = dict(d)
        d["groups"] = {c: [Group(**g) for g in gs] for c, gs in d["groups"].items()}
        d["grant_era"] = tuple(d["grant_era"])
        return cls(**d)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")) + "\n",
                        encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "GroundTruth":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def expected_impact(gt: GroundTruth, source: ChainId, target: ChainId) -> ExpectedImpact:
    """Impact of ``source`` on ``target`` derived from the by-construction clusters."""
    if source not in gt.groups or target not in gt.groups:
        raise KeyError(f"ground truth has no chain {source!r} or {target!r}")
    target_of = {a: k for k, g in enumerate(gt.groups[target]) for a in g.addresses}
    hubs: dict[int, set[int]] = {}
    for k, g in enumerate(gt.groups[source]):
        touched = {target_of[a] for a in g.addresses if a in target_of}
        if len(touched) >= 2:
            hubs[k] = touched

    # hubs sharing a target cluster belong to the same component
    hubs_of: dict[int, list[int]] = defaultdict(list)
    for h, touched in hubs.items():
        for t in touched:
            hubs_of[t].append(h)
    comps: list[set[int]] = []
    seen: set[int] = set()
    for h in sorted(hubs):
        if h in seen:
            continue
        comp, stack = set(), [h]
        seen.add(h)
        while stack:
            x = stack.pop()
            comp.add(x)
            for t in hubs[x]:
                for y in hubs_of[t]:
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
        comps.append(comp)
    impacted = set().union(*hubs.values()) if hubs else set()
    stars = sum(1 for c in comps if len(c) == 1)
    entities = sorted({gt.groups[source][h].entity for h in hubs if gt.groups[source][h].entity})
    return ExpectedImpact(source, target, len(comps), len(impacted), stars, len(comps) - stars, entities)


# --------------------------------------------------------------------------
# scenario simulation


class _Wallet:
    __slots__ = ("entity", "addrs", "addr_set", "funded")

    def __init__(self, entity: str):
        self.entity = entity
        self.addrs: list[str] = []
        self.addr_set: set[str] = set()
        self.funded: dict[str, int] = {}

    def credit(self, addr: str, value: int) -> None:
        if addr not in self.addr_set:
            self.addr_set.add(addr)
            self.addrs.append(addr)
        self.funded[addr] = self.funded.get(addr, 0) + value


class _Sim:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.rng = random.Random(sc.seed)
        self.n_addr = 0
        self.entity_ids = [f"e{i:05d}" for i in range(sc.n_entities)]
        self.keys_of: dict[str, list[str]] = defaultdict(list)
        self.key_owner: dict[str, str] = {}
        self.on_chain: dict[str, set[str]] = defaultdict(set)
        self.tx_count: dict[str, int] = defaultdict(int)

    def new_key(self, entity: str) -> str:
        self.n_addr += 1
        h = hashlib.sha256(f"{self.sc.seed}:addr:{self.n_addr}".encode()).hexdigest()[:24]
        key = "k" + h
        self.keys_of[entity].append(key)
        self.key_owner[key] = entity
        return key

    def address_for(self, entity: str, chain: str, allow_share: bool = True) -> str:
        """Fresh address of ``entity`` on ``chain``, possibly reusing a key from another chain."""
        if allow_share and self.rng.random() < self.sc.key_share_prob:
            candidates = [k for k in self.keys_of[entity] if k not in self.on_chain[chain]]
            if candidates:
                key = self.rng.choice(candidates)
                self.on_chain[chain].add(key)
                return key
        key = self.new_key(entity)
        self.on_chain[chain].add(key)
        return key

    def tx_id(self, chain: str) -> str:
        self.tx_count[chain] += 1
        return hashlib.sha256(f"{self.sc.seed}:{chain}:{self.tx_count[chain]}".encode()).hexdigest()[:32]

    def when(self, era: tuple[float, float]) -> int:
        lo, hi = era
        return T0 + int(self.sc.duration * (lo + (hi - lo) * self.rng.random()))


def _make_tx(sim: _Sim, chain: str, t: int, ins: Sequence[str],
             outs: Sequence[tuple[Optional[str], int]]) -> TxRecord:
    interval = sim.sc.block_interval.get(chain, 600)
    height = (t - T0) // interval
    return TxRecord(chain, height, t, sim.tx_id(chain), 0, tuple(ins),
                    tuple(OutputRecord(v, a) for a, v in outs))


def _simulate_base(sim: _Sim, chain: str) -> tuple[list[TxRecord], list[_Wallet], set[str], int]:
    sc, rng = sim.sc, sim.rng
    active = [e for e in sim.entity_ids if rng.random() < sc.presence]
    if not active:
        active = [rng.choice(sim.entity_ids)]
    wallets: dict[str, list[_Wallet]] = {e: [_Wallet(e) for _ in range(rng.randint(1, sc.max_wallets))]
                                         for e in active}
    all_wallets = [w for e in active for w in wallets[e]]

    # (time, seq, kind, wallet)
    events: list[tuple[int, int, str, Optional[_Wallet]]] = []
    seq = 0

    def push(t: int, kind: str, w: Optional[_Wallet]) -> None:
        nonlocal seq
        events.append((t, seq, kind, w))
        seq += 1

    rate = sc.activity.get(chain, 5.0)
    for w in all_wallets:
        push(T0 + rng.randint(0, sc.duration // 4), "fund", w)
        for _ in range(rng.randint(0, 2)):
            push(sim.when((0.0, 0.9)), "fund", w)
        push(sim.when(FINAL_ERA), "final", w)
    for e in active:
        n_spends = rng.randint(int(rate * 0.5), int(rate * 1.5))
        for _ in range(n_spends):
            push(sim.when((0.02, 0.96)), "spend", rng.choice(wallets[e]))
    snap_t = T0 + int(sc.duration * SNAPSHOT_AT)
    push(snap_t, "snapshot", None)
    events.sort(key=lambda ev: (ev[0], ev[1]))

    txs: list[TxRecord] = []
    qualifying: set[str] = set()

    def pay_into(w: _Wallet, value: int) -> str:
        if w.addrs and rng.random() < sc.reuse_prob:
            addr = rng.choice(w.addrs)
        else:
            addr = sim.address_for(w.entity, chain)
        w.credit(addr, value)
        return addr

    def maybe_null(outs: list) -> list:
        if rng.random() < sc.null_output_prob:
            outs.append((None, 0))
        return outs

    for t, _, kind, w in events:
        if kind == "snapshot":
            for wal in all_wallets:
                qualifying.update(a for a, v in wal.funded.items() if v >= sc.dust)
            continue
        assert w is not None
        if kind == "fund" or (kind == "spend" and not w.funded):
            value = rng.randint(10_000_000, 5_000_000_000)
            addr = pay_into(w, value)
            txs.append(_make_tx(sim, chain, t, [], maybe_null([(addr, value)])))
            continue
        total = sum(w.funded.values())
        ins = list(w.funded)
        if kind == "final":
            if len(ins) < 2:
                continue
            change = rng.choice(ins)
            w.funded = {change: total}
            txs.append(_make_tx(sim, chain, t, ins, [(change, total)]))
            continue
        if total < 2:
            continue
        pay = rng.randint(1, total // 2)
        change = rng.choice(ins)
        payee_entity = rng.choice(active)
        payee = rng.choice(wallets[payee_entity])
        w.funded = {}
        payee_addr = pay_into(payee, pay)
        w.credit(change, total - pay)
        outs = [(payee_addr, pay), (change, total - pay)]
        rng.shuffle(outs)
        txs.append(_make_tx(sim, chain, t, ins, maybe_null(outs)))

    snap_height = (snap_t - T0) // sc.block_interval.get(chain, 600)
    return txs, all_wallets, qualifying, snap_height


def generate(sc: Scenario) -> tuple[list[ChainSnapshot], GroundTruth]:
    """Simulate all chains for ``sc``; the seed fully determines the result."""
    sc.validate()
    sim = _Sim(sc)
    rng = sim.rng
    behaviors = {e: rng.choices(list(sc.behaviors), weights=list(sc.behaviors.values()))[0]
                 for e in sim.entity_ids}

    snapshots: list[ChainSnapshot] = []
    groups: dict[ChainId, list[Group]] = {}
    entities: dict[str, dict[ChainId, list[str]]] = defaultdict(lambda: defaultdict(list))
    snap_heights: dict[ChainId, int] = {}
    qualifying: set[str] = set()

    for chain in sc.base_chains:
        txs, wallets, qual, h = _simulate_base(sim, chain)
        snapshots.append(build_snapshot(chain, txs, tip_note=f"synthetic seed={sc.seed}"))
        groups[chain] = [Group(w.entity, sorted(w.addrs)) for w in wallets if w.addrs]
        for w in wallets:
            entities[w.entity][chain].extend(w.addrs)
        snap_heights[chain] = h
        qualifying |= qual

    clam = sc.airdrop_chain
    airdropped = sorted(qualifying)
    clam_txs: list[TxRecord] = []
    clam_addrs: list[str] = []
    clam_owner: dict[str, str] = {}

    def clam_address(entity: str) -> str:
        a = sim.new_key(entity)
        sim.on_chain[clam].add(a)
        clam_addrs.append(a)
        clam_owner[a] = entity
        return a

    # grants: one output per qualifying address, shuffled into batches
    order = list(airdropped)
    rng.shuffle(order)
    grant_times = sorted(sim.when(GRANT_ERA) for _ in range(0, len(order), sc.grants_per_tx))
    for k, t in enumerate(grant_times):
        batch = order[k * sc.grants_per_tx:(k + 1) * sc.grants_per_tx]
        clam_txs.append(_make_tx(sim, clam, t, [], [(a, sc.grant_value) for a in batch]))
        for a in batch:
            sim.on_chain[clam].add(a)
            clam_addrs.append(a)
            clam_owner[a] = sim.key_owner[a]
    grant_era = (grant_times[0], grant_times[-1]) if grant_times else (0, 0)

    granted_to: dict[str, list[str]] = defaultdict(list)
    for a in airdropped:
        granted_to[sim.key_owner[a]].append(a)

    # native coinstake outputs some entities can mix into their sweeps
    native: dict[str, str] = {}
    for e in sim.entity_ids:
        if granted_to[e] and rng.random() < sc.native_mix_prob:
            a = clam_address(e)
            native[e] = a
            clam_txs.append(_make_tx(sim, clam, sim.when(STAKE_ERA), [], [(a, sc.grant_value)]))

    # claim groups: list of (claiming entity, addresses spent together)
    sweeps: dict[str, list[str]] = {}
    singles: list[tuple[str, str]] = []
    sales = []
    sweepers = [e for e in sim.entity_ids if behaviors[e] == "sweep_all" and granted_to[e]]
    for e in sim.entity_ids:
        mine = list(granted_to[e])
        b = behaviors[e]
        if not mine or b == "no_claim":
            continue
        if b == "per_address_claim":
            singles.extend((e, a) for a in mine)
            continue
        if b == "key_sale":
            sold = [a for a in mine if rng.random() < 0.5] or [mine[0]]
            kept = [a for a in mine if a not in sold]
            buyers = [x for x in sweepers if x != e] or [x for x in sim.entity_ids if x != e]
            if buyers:
                buyer = rng.choice(buyers)
                sales.append({"seller": e, "buyer": buyer, "addresses": sorted(sold)})
                sweeps.setdefault(buyer, []).extend(sold)
                for a in sold:
                    clam_owner[a] = buyer
                mine = kept
        if mine:
            sweeps.setdefault(e, []).extend(mine)
    for e in sorted(sweeps):
        if e in native and behaviors[e] == "sweep_all":
            sweeps[e].append(native[e])

    claim_groups: list[Group] = []
    respendable: list[tuple[str, str, int]] = []
    for e in sorted(sweeps):
        ins = sorted(sweeps[e])
        rng.shuffle(ins)
        out = clam_address(e)
        value = sc.grant_value * len(ins)
        clam_txs.append(_make_tx(sim, clam, sim.when(CLAIM_ERA), ins, [(out, value)]))
        if len(ins) >= 2:
            claim_groups.append(Group(e, sorted(ins)))
        respendable.append((e, out, value))
    for e, a in singles:
        out = clam_address(e)
        clam_txs.append(_make_tx(sim, clam, sim.when(CLAIM_ERA), [a], [(out, sc.grant_value)]))
        respendable.append((e, out, sc.grant_value))

    # single-input payments after claiming; these never merge clusters
    for e, a, value in respendable:
        if rng.random() < sc.respend_prob and value >= 2:
            payee = rng.choice(sim.entity_ids)
            pay = rng.randint(1, value // 2)
            outs = [(clam_address(payee), pay), (clam_address(e), value - pay)]
            clam_txs.append(_make_tx(sim, clam, sim.when(RESPEND_ERA), [a], outs))

    # stable sort: same-second txs keep generation order
    clam_txs.sort(key=lambda tx: tx.timestamp)
    snapshots.append(build_snapshot(clam, clam_txs, tip_note=f"synthetic seed={sc.seed}"))

    in_group = {a for g in claim_groups for a in g.addresses}
    groups[clam] = claim_groups + [Group(clam_owner[a], [a]) for a in clam_addrs if a not in in_group]
    for a in clam_addrs:
        entities[clam_owner[a]][clam].append(a)

    gt = GroundTruth(
        seed=sc.seed,
        entities={e: {c: sorted(v) for c, v in sorted(chs.items())} for e, chs in sorted(entities.items())},
        behaviors=behaviors,
        groups=groups,
        airdrop_chain=clam,
        base_chains=list(sc.base_chains),
        snapshot_heights=snap_heights,
        airdropped=airdropped,
        grant_era=grant_era,
        sales=sales,
    )
    for target in sc.base_chains:
        gt.expected[f"{clam}->{target}"] = expected_impact(gt, clam, target).to_json()
    return snapshots, gt


def write_scenario_output(snapshots: Sequence[ChainSnapshot], gt: GroundTruth,
                          out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_chain_file(s, out / f"{s.chain}.jsonl") for s in snapshots]
    paths.append(gt.write(out / "ground_truth.json"))
    return paths


# --------------------------------------------------------------------------
# large streaming workload


def stream_scale_chain(chain: ChainId, n_txs: int, seed: int, shared_pool: int = 50_000,
                       share_prob: float = 0.05, reuse_prob: float = 0.3,
                       multi_input_prob: float = 0.4) -> Iterator[TxRecord]:
    """Yield ``n_txs`` random transactions lazily, for throughput and memory checks.

    Addresses drawn from the shared pool (same names on every chain) make
    the chains overlap. No ground truth is kept.
    """
    rng = random.Random(f"{seed}:{chain}")
    rand, randrange = rng.random, rng.randrange
    addrs: list[str] = []
    next_id = 0
    for ordinal in range(n_txs):
        n = len(addrs)
        if n == 0:
            ins: tuple[str, ...] = ()
        elif rand() < multi_input_prob:
            ins = tuple(addrs[randrange(n)] for _ in range(2 + (rand() < 0.3)))
        else:
            ins = (addrs[randrange(n)],)
        outs = []
        for _ in range(1 + (rand() < 0.5)):
            if n and rand() < reuse_prob:
                a = addrs[randrange(n)]
            else:
                if rand() < share_prob:
                    a = f"s{randrange(shared_pool)}"
                else:
                    a = f"{chain}{next_id}"
                    next_id += 1
                addrs.append(a)
            outs.append(OutputRecord(1000, a))
        yield TxRecord(chain, ordinal // 2000, T0 + ordinal, f"{chain}-{ordinal}", ordinal, ins, tuple(outs))
