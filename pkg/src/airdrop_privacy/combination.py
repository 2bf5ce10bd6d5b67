"""Merged multi-chain orderings and the improvement order on clusterings.

``P1`` is an improvement of ``P2`` when every cluster of ``P2`` lies inside
one cluster of ``P1`` or shares no address with ``P1`` at all. Clustering a
combination of chains is an improvement of clustering any member chain.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .chain_model import AddressKey, ChainId, ChainSnapshot, TxRecord
from .clustering import DEFAULT_BIN_EDGES, Partition, SizeHistogram, histogram_from_sizes
from .crosschain import ImpactReport


class ImprovementError(ValueError):
    """A partition pair does not satisfy the improvement relation where one was required."""


class ImprovementCycleError(RuntimeError):
    """Two different partitions improve each other."""


@dataclass(frozen=True)
class CombinationOrdering:
    name: str
    members: tuple[ChainId, ...]
    sequence: tuple[TxRecord, ...]

    def __len__(self) -> int:
        return len(self.sequence)

    def __iter__(self):
        return iter(self.sequence)


def _order_key(tx: TxRecord) -> tuple[int, str, int]:
    return (tx.timestamp, tx.chain, tx.ordinal)


def combine(snapshots: Sequence[ChainSnapshot], name: str) -> CombinationOrdering:
    """Order every transaction of the given chains by (timestamp, chain id, ordinal)."""
    if not snapshots:
        raise ValueError("need at least one chain to combine")
    chains = [s.chain for s in snapshots]
    if len(set(chains)) != len(chains):
        raise ValueError(f"duplicate chains in combination: {chains}")
    seq = sorted((tx for s in snapshots for tx in s.txs), key=_order_key)
    return CombinationOrdering(name, tuple(sorted(chains)), tuple(seq))


def is_improvement(p1: Partition, p2: Partition) -> bool:
    """True iff ``p1`` is an improvement of ``p2``."""
    # p2 root -> p1 root it falls inside; p2 roots seen outside p1's universe
    target: dict[int, int] = {}
    outside: set[int] = set()
    for addr in p2.addresses():
        r2 = p2.root_of(addr)
        if addr in p1:
            r1 = p1.root_of(addr)
            if r2 in outside:
                return False
            prev = target.setdefault(r2, r1)
            if prev != r1:
                return False
        else:
            if r2 in target:
                return False
            outside.add(r2)
    return True


@dataclass(frozen=True)
class ImprovementEdge:
    finer: str
    coarser: str

    def to_json(self) -> dict:
        return {"finer": self.finer, "coarser": self.coarser}


@dataclass(frozen=True)
class HasseDiagram:
    """Covering edges of the improvement order.

    ``finer`` names the improving clustering (the better-informed one, with
    larger clusters) and ``coarser`` the clustering it improves. Labels that
    improve each other are collapsed onto the first label: ``equal`` lists
    identical partitions, ``equivalent`` lists partitions that agree wherever
    their universes meet and differ only by clusters outside the other's
    universe.
    """

    edges: tuple[ImprovementEdge, ...]
    equal: tuple[tuple[str, str], ...] = ()
    equivalent: tuple[tuple[str, str], ...] = ()

    def edge_set(self) -> set[tuple[str, str]]:
        return {(e.finer, e.coarser) for e in self.edges}


def improvement_relation(clusterings: Mapping[str, Partition]) -> set[tuple[str, str]]:
    labels = list(clusterings)
    return {(a, b) for a in labels for b in labels
            if a != b and is_improvement(clusterings[a], clusterings[b])}


def agree_on_overlap(p1: Partition, p2: Partition) -> bool:
    """True iff every cluster of either partition that meets the other's universe is a cluster of both."""
    for x, y in ((p1, p2), (p2, p1)):
        for _, members in x.clusters():
            inside = [a for a in members if a in y]
            if not inside:
                continue
            if len(inside) != len(members) or y.size_of(inside[0]) != len(members):
                return False
            root = y.root_of(inside[0])
            if any(y.root_of(a) != root for a in inside):
                return False
    return True


def improvement_hasse(clusterings: Mapping[str, Partition]) -> HasseDiagram:
    labels = list(clusterings)
    rel = improvement_relation(clusterings)

    alias: dict[str, str] = {}
    equal, equivalent = [], []
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            if (a, b) in rel and (b, a) in rel:
                pa, pb = clusterings[a], clusterings[b]
                if pa.same_partition(pb):
                    equal.append((a, b))
                elif agree_on_overlap(pa, pb):
                    equivalent.append((a, b))
                else:
                    raise ImprovementCycleError(
                        f"{a!r} and {b!r} improve each other but disagree where they overlap")
                alias.setdefault(b, alias.get(a, a))
    nodes = [x for x in labels if x not in alias]
    rel = {(a, b) for a, b in rel if a in nodes and b in nodes}

    hasse = []
    for a, b in sorted(rel):
        if not any((a, c) in rel and (c, b) in rel for c in nodes if c not in (a, b)):
            hasse.append(ImprovementEdge(a, b))
    return HasseDiagram(tuple(hasse), tuple(equal), tuple(equivalent))


@dataclass(frozen=True)
class MergedCluster:
    rep: AddressKey
    coarser_reps: tuple[AddressKey, ...]
    total_addresses: int

    @property
    def n_coarser(self) -> int:
        return len(self.coarser_reps)


@dataclass(frozen=True)
class ClusterDiff:
    merged: tuple[MergedCluster, ...]
    histogram: SizeHistogram
    # coarser clusters minus finer clusters meeting the coarser universe
    clusters_lost: int

    def __len__(self) -> int:
        return len(self.merged)


def cluster_diff(finer: Partition, coarser: Partition,
                 bin_edges: Sequence[int] = DEFAULT_BIN_EDGES) -> ClusterDiff:
    """Clusters of ``finer`` that unite two or more clusters of ``coarser``.

    ``finer`` must be an improvement of ``coarser``. Only addresses in the
    coarser universe are used to count united clusters; the reported size is
    the whole cluster in ``finer``.
    """
    if not is_improvement(finer, coarser):
        raise ImprovementError("finer clustering is not an improvement of the coarser one")
    united: dict[int, set[int]] = {}
    for addr in coarser.addresses():
        united.setdefault(finer.root_of(addr), set()).add(coarser.root_of(addr))
    merged = []
    for r1, roots in united.items():
        if len(roots) >= 2:
            rep = finer.rep_at(r1)
            reps = tuple(sorted(coarser.rep_at(r) for r in roots))
            merged.append(MergedCluster(rep, reps, finer.size_of(rep)))
    merged.sort(key=lambda m: m.rep)
    hist = histogram_from_sizes((m.total_addresses for m in merged), bin_edges)
    return ClusterDiff(tuple(merged), hist, coarser.n_clusters - len(united))


def direct_merges(report: ImpactReport, finer: Partition, coarser: Partition) -> tuple[AddressKey, ...]:
    """Finer clusters explained by a single-target component of ``report``.

    A component counts when its target clusters fall into two or more
    coarser clusters. Every returned representative is also a merged cluster
    of ``cluster_diff(finer, coarser)``; merged clusters missing here arise
    only through links that span several targets.
    """
    out = set()
    for t, ti in report.per_target.items():
        for comp in ti.components:
            reps = [v.cluster for v in comp.vertices if v.chain == t]
            if len({coarser.root_of(r) for r in reps}) >= 2:
                out.add(finer.find(reps[0]))
    return tuple(sorted(out))


def write_diff_csv(diff: ClusterDiff, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["finer_rep", "n_coarser_clusters", "total_addresses"])
        for m in diff.merged:
            w.writerow([m.rep, m.n_coarser, m.total_addresses])
    return path


def write_hasse_json(h: HasseDiagram, path: str | Path) -> Path:
    path = Path(path)
    payload = {"edges": [e.to_json() for e in h.edges], "equal": [list(p) for p in h.equal],
               "equivalent": [list(p) for p in h.equivalent]}
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path
