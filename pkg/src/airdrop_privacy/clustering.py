"""Multi-input heuristic address clustering.

Every address spent together in one transaction is assumed to share a
controller. Clusters are kept in a union-find forest (path compression,
union by rank) over integer address indices.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .chain_model import AddressKey, TxRecord

# Lower bounds of the decade bins [1,1], [2,10], [11,100], ... [10001, inf).
DEFAULT_BIN_EDGES: tuple[int, ...] = (1, 2, 11, 101, 1001, 10001)


class FrozenPartitionError(RuntimeError):
    pass


class Partition:
    """Disjoint clusters of addresses with optional merge provenance.

    The representative handed to callers is the lexicographically smallest
    member of a cluster, which does not depend on union order. Call
    :meth:`freeze` once construction is done; afterwards lookups never
    mutate state and the object can be shared between readers.
    """

    def __init__(self, track_provenance: bool = True):
        self._index: dict[AddressKey, int] = {}
        self._addrs: list[AddressKey] = []
        self._parent: list[int] = []
        self._rank = bytearray()
        self._size: list[int] = []
        self._min: list[int] = []
        self._merges: Optional[list[tuple[str, int]]] = [] if track_provenance else None
        self._n_clusters = 0
        self._frozen = False
        self._witness_cache: Optional[dict[int, list[str]]] = None

    # construction -------------------------------------------------------

    def add(self, addr: AddressKey) -> int:
        i = self._index.get(addr)
        if i is None:
            if self._frozen:
                raise FrozenPartitionError("cannot add to a frozen partition")
            i = len(self._addrs)
            self._index[addr] = i
            self._addrs.append(addr)
            self._parent.append(i)
            self._rank.append(0)
            self._size.append(1)
            self._min.append(i)
            self._n_clusters += 1
        return i

    def _root(self, i: int) -> int:
        parent = self._parent
        root = i
        while parent[root] != root:
            root = parent[root]
        if not self._frozen:
            while parent[i] != root:
                parent[i], i = root, parent[i]
        return root

    def union_indices(self, i: int, j: int, tx_id: Optional[str] = None) -> bool:
        """Merge the clusters of two address indices; False if already joined."""
        if self._frozen:
            raise FrozenPartitionError("cannot union in a frozen partition")
        ri, rj = self._root(i), self._root(j)
        if ri == rj:
            return False
        rank = self._rank
        if rank[ri] < rank[rj]:
            ri, rj = rj, ri
        self._parent[rj] = ri
        if rank[ri] == rank[rj]:
            rank[ri] += 1
        self._size[ri] += self._size[rj]
        mi, mj = self._min[ri], self._min[rj]
        if self._addrs[mj] < self._addrs[mi]:
            self._min[ri] = mj
        self._n_clusters -= 1
        if self._merges is not None and tx_id is not None:
            self._merges.append((tx_id, i))
        return True

    def union(self, a: AddressKey, b: AddressKey, tx_id: Optional[str] = None) -> bool:
        return self.union_indices(self.add(a), self.add(b), tx_id)

    def freeze(self) -> "Partition":
        if not self._frozen:
            parent = self._parent
            for i in range(len(parent)):
                parent[i] = self._root(i)
            self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    # queries ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._addrs)

    def __contains__(self, addr: object) -> bool:
        return addr in self._index

    @property
    def n_clusters(self) -> int:
        return self._n_clusters

    def addresses(self) -> Iterable[AddressKey]:
        return self._index.keys()

    def index_of(self, addr: AddressKey) -> int:
        try:
            return self._index[addr]
        except KeyError:
            raise KeyError(f"unknown address {addr!r}") from None

    def root_index(self, i: int) -> int:
        return self._root(i)

    def size_at(self, i: int) -> int:
        """Size of the cluster holding address index ``i``."""
        return self._size[self._root(i)]

    def rep_at(self, i: int) -> AddressKey:
        """Representative of the cluster holding address index ``i``."""
        return self._addrs[self._min[self._root(i)]]

    def root_of(self, addr: AddressKey) -> int:
        """Internal root index; only meaningful within this partition."""
        return self._root(self.index_of(addr))

    def find(self, addr: AddressKey) -> AddressKey:
        return self._addrs[self._min[self._root(self.index_of(addr))]]

    def size_of(self, addr: AddressKey) -> int:
        return self._size[self._root(self.index_of(addr))]

    def same_cluster(self, a: AddressKey, b: AddressKey) -> bool:
        return self._root(self.index_of(a)) == self._root(self.index_of(b))

    def cluster_sizes(self) -> Iterator[int]:
        parent, size = self._parent, self._size
        for i in range(len(parent)):
            if parent[i] == i:
                yield size[i]

    def groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i in range(len(self._addrs)):
            out.setdefault(self._root(i), []).append(i)
        return out

    def clusters(self) -> Iterator[tuple[AddressKey, list[AddressKey]]]:
        """Yield ``(representative, sorted members)`` once per cluster, ordered by representative."""
        addrs = self._addrs
        entries = [(addrs[self._min[r]], sorted(addrs[i] for i in members))
                   for r, members in self.groups().items()]
        entries.sort(key=lambda e: e[0])
        yield from entries

    def members(self, rep: AddressKey) -> list[AddressKey]:
        root = self._root(self.index_of(rep))
        return sorted(a for a, i in self._index.items() if self._root(i) == root)

    def labels(self) -> dict[AddressKey, AddressKey]:
        """Address -> representative for the whole universe."""
        addrs, mins = self._addrs, self._min
        return {a: addrs[mins[self._root(i)]] for a, i in self._index.items()}

    def witnesses(self, addr: AddressKey) -> list[str]:
        """Transactions whose unions built the cluster of ``addr``, in stream order."""
        if self._merges is None:
            return []
        if self._witness_cache is None or not self._frozen:
            cache: dict[int, list[str]] = {}
            for tx_id, i in self._merges:
                cache.setdefault(self._root(i), []).append(tx_id)
            if not self._frozen:
                return cache.get(self.root_of(addr), [])
            self._witness_cache = cache
        return self._witness_cache.get(self.root_of(addr), [])

    def canonical(self) -> frozenset[frozenset[AddressKey]]:
        """Hashable form of the equivalence classes, for equality checks."""
        addrs = self._addrs
        return frozenset(frozenset(addrs[i] for i in m) for m in self.groups().values())

    def same_partition(self, other: "Partition") -> bool:
        if len(self) != len(other) or self.n_clusters != other.n_clusters:
            return False
        return self.labels() == other.labels()


@dataclass(frozen=True)
class PartitionStats:
    n_clusters: int
    n_nontrivial: int


@dataclass(frozen=True)
class HistogramBin:
    lo: int
    hi: Optional[int]  # inclusive; None means unbounded
    clusters: int
    coverage: int

    def label(self) -> str:
        if self.hi is None:
            return f"[{self.lo},inf)"
        return f"[{self.lo},{self.hi}]"


@dataclass(frozen=True)
class SizeHistogram:
    bins: tuple[HistogramBin, ...]

    @property
    def n_clusters(self) -> int:
        return sum(b.clusters for b in self.bins)

    @property
    def coverage(self) -> int:
        return sum(b.coverage for b in self.bins)

    def coverage_fraction_above(self, size: int) -> float:
        """Fraction of addresses in clusters strictly larger than ``size`` (must be a bin edge minus 1)."""
        total = self.coverage
        if total == 0:
            return 0.0
        if not any(b.lo == size + 1 for b in self.bins):
            raise ValueError(f"{size + 1} is not a bin edge")
        return sum(b.coverage for b in self.bins if b.lo > size) / total


def _add_tx(p: Partition, tx: TxRecord) -> None:
    add = p.add
    ins = tx.inputs
    if ins:
        first = add(ins[0])
        for a in ins[1:]:
            j = add(a)
            if j != first:
                p.union_indices(first, j, tx.tx_id)
    for o in tx.outputs:
        if o.address is not None:
            add(o.address)


def cluster_stream(txs: Iterable[TxRecord], track_provenance: bool = True) -> Partition:
    """Cluster all input and output addresses of ``txs`` with the multi-input heuristic.

    Accepts any iterable, so very long chains can be streamed without
    materialising them. The returned partition is frozen.
    """
    p = Partition(track_provenance)
    for tx in txs:
        _add_tx(p, tx)
    return p.freeze()


def partition_stats(p: Partition) -> PartitionStats:
    n_nontrivial = sum(1 for s in p.cluster_sizes() if s >= 2)
    return PartitionStats(p.n_clusters, n_nontrivial)


def _check_edges(bin_edges: Sequence[int]) -> tuple[int, ...]:
    edges = tuple(int(e) for e in bin_edges)
    if not edges or edges[0] != 1:
        raise ValueError("bin edges must start at 1")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing")
    return edges


def histogram_from_sizes(sizes: Iterable[int], bin_edges: Sequence[int] = DEFAULT_BIN_EDGES) -> SizeHistogram:
    edges = _check_edges(bin_edges)
    counts = [0] * len(edges)
    cover = [0] * len(edges)
    for s in sizes:
        if s < 1:
            raise ValueError(f"cluster size {s} < 1")
        k = bisect_right(edges, s) - 1
        counts[k] += 1
        cover[k] += s
    bins = []
    for k, lo in enumerate(edges):
        hi = edges[k + 1] - 1 if k + 1 < len(edges) else None
        bins.append(HistogramBin(lo, hi, counts[k], cover[k]))
    return SizeHistogram(tuple(bins))


def size_histogram(p: Partition, bin_edges: Sequence[int] = DEFAULT_BIN_EDGES) -> SizeHistogram:
    return histogram_from_sizes(p.cluster_sizes(), bin_edges)


def write_partition_csv(p: Partition, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["address", "cluster_rep"])
        for rep, members in p.clusters():
            for a in members:
                w.writerow([a, rep])
    return path


def write_histogram_csv(h: SizeHistogram, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "clusters", "coverage"])
        for b in h.bins:
            w.writerow([b.lo, "inf" if b.hi is None else b.hi, b.clusters, b.coverage])
    return path
