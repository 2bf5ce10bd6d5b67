"""Co-cluster graph over several per-chain clusterings.

A vertex is one address cluster on one chain. Two vertices on different
chains are joined when their clusters share addresses; the edge carries the
shared set. A source-chain cluster adjacent to two or more clusters of a
target chain shows that the target clusters belong together.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Optional, Sequence

from .chain_model import AddressKey, ChainId
from .clustering import Partition


class Vertex(NamedTuple):
    chain: ChainId
    cluster: AddressKey


Edge = tuple[Vertex, Vertex, frozenset[AddressKey]]


class StarKind(str, Enum):
    STAR = "star"
    NON_STAR = "non_star"


class UnknownChainError(KeyError):
    pass


class CoClusterGraph:
    """Undirected simple graph; clusters sharing nothing are only counted."""

    def __init__(self, chains: Iterable[ChainId], isolated: Optional[Mapping[ChainId, int]] = None):
        self.chains: tuple[ChainId, ...] = tuple(sorted(chains))
        self.isolated: dict[ChainId, int] = dict(isolated or {})
        self._adj: dict[Vertex, dict[Vertex, frozenset[AddressKey]]] = {}

    def _add_edge(self, u: Vertex, v: Vertex, shared: frozenset[AddressKey]) -> None:
        if u.chain == v.chain:
            raise ValueError("edges must join different chains")
        if not shared:
            raise ValueError("edges must carry a non-empty shared set")
        self._adj.setdefault(u, {})[v] = shared
        self._adj.setdefault(v, {})[u] = shared

    def _add_vertex(self, v: Vertex) -> None:
        self._adj.setdefault(v, {})

    def _require(self, chain: ChainId) -> None:
        if chain not in self.chains:
            raise UnknownChainError(f"unknown chain {chain!r}; graph has {list(self.chains)}")

    @property
    def vertices(self) -> list[Vertex]:
        return sorted(self._adj)

    @property
    def n_vertices(self) -> int:
        """All clusters of the graph's chains, including unmaterialised isolated ones."""
        return len(self._adj) + sum(self.isolated.values())

    @property
    def n_materialized(self) -> int:
        return len(self._adj)

    @property
    def n_edges(self) -> int:
        return sum(len(n) for n in self._adj.values()) // 2

    def __contains__(self, v: object) -> bool:
        return v in self._adj

    def edges(self) -> Iterator[Edge]:
        for u in sorted(self._adj):
            for v, shared in sorted(self._adj[u].items()):
                if u < v:
                    yield u, v, shared

    def neighbors(self, v: Vertex, chain: Optional[ChainId] = None) -> list[Vertex]:
        nbrs = self._adj.get(v, {})
        return sorted(n for n in nbrs if chain is None or n.chain == chain)

    def degree(self, v: Vertex, chain: Optional[ChainId] = None) -> int:
        nbrs = self._adj.get(v, {})
        if chain is None:
            return len(nbrs)
        return sum(1 for n in nbrs if n.chain == chain)

    def shared(self, u: Vertex, v: Vertex) -> frozenset[AddressKey]:
        return self._adj[u][v]

    def induced(self, vertices: Iterable[Vertex], chains: Optional[Iterable[ChainId]] = None) -> "CoClusterGraph":
        keep = set(vertices)
        g = CoClusterGraph(self.chains if chains is None else chains)
        for v in keep:
            g._add_vertex(v)
            for n, shared in self._adj.get(v, {}).items():
                if n in keep:
                    g._adj[v][n] = shared
        return g

    def restrict(self, chains: Iterable[ChainId]) -> "CoClusterGraph":
        """Subgraph on the given chains; vertices left without edges are dropped."""
        chains = set(chains)
        for c in chains:
            self._require(c)
        g = CoClusterGraph(chains)
        for u, v, shared in self.edges():
            if u.chain in chains and v.chain in chains:
                g._add_edge(u, v, shared)
        return g


def build_cocluster_graph(partitions: Mapping[ChainId, Partition]) -> CoClusterGraph:
    """Join every pair of clusters on different chains that share addresses.

    Clusters that share nothing with another chain are not materialised;
    ``graph.isolated`` records how many there are per chain.
    """
    if len(partitions) < 2:
        raise ValueError("need partitions for at least two chains")
    edge_sets: dict[tuple[Vertex, Vertex], set[AddressKey]] = {}
    for ca, cb in combinations(sorted(partitions), 2):
        pa, pb = partitions[ca], partitions[cb]
        small, big = (pa, pb) if len(pa) <= len(pb) else (pb, pa)
        for addr in small.addresses():
            if addr in big:
                key = (Vertex(ca, pa.find(addr)), Vertex(cb, pb.find(addr)))
                s = edge_sets.get(key)
                if s is None:
                    edge_sets[key] = {addr}
                else:
                    s.add(addr)
    g = CoClusterGraph(partitions)
    for (u, v), s in edge_sets.items():
        g._add_edge(u, v, frozenset(s))
    per_chain = dict.fromkeys(partitions, 0)
    for v in g._adj:
        per_chain[v.chain] += 1
    g.isolated = {c: partitions[c].n_clusters - per_chain[c] for c in sorted(partitions)}
    return g


def impacted_subgraph(g: CoClusterGraph, source: ChainId, target: ChainId) -> CoClusterGraph:
    """Source clusters adjacent to at least two target clusters, with those neighbours."""
    g._require(source)
    g._require(target)
    if source == target:
        raise ValueError("source and target must differ")
    keep: set[Vertex] = set()
    for v in g._adj:
        if v.chain == source:
            nbrs = [n for n in g._adj[v] if n.chain == target]
            if len(nbrs) >= 2:
                keep.add(v)
                keep.update(nbrs)
    return g.induced(keep, (source, target))


@dataclass(frozen=True)
class Component:
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]

    def chain_vertices(self, chain: ChainId) -> list[Vertex]:
        return [v for v in self.vertices if v.chain == chain]


def connected_components(g: CoClusterGraph) -> list[Component]:
    """Components ordered by their smallest vertex."""
    seen: set[Vertex] = set()
    comps = []
    for start in sorted(g._adj):
        if start in seen:
            continue
        seen.add(start)
        queue = deque([start])
        members = []
        while queue:
            v = queue.popleft()
            members.append(v)
            for n in g._adj[v]:
                if n not in seen:
                    seen.add(n)
                    queue.append(n)
        members.sort()
        edges = []
        for u in members:
            for v, shared in sorted(g._adj[u].items()):
                if u < v:
                    edges.append((u, v, shared))
        comps.append(Component(tuple(members), tuple(edges)))
    return comps


def classify_star(component: Component, source: ChainId) -> StarKind:
    """Star iff one source-chain hub touches every edge of the component."""
    hubs = component.chain_vertices(source)
    if len(hubs) != 1 or not component.edges:
        return StarKind.NON_STAR
    hub = hubs[0]
    if all(hub in (u, v) for u, v, _ in component.edges):
        return StarKind.STAR
    return StarKind.NON_STAR


@dataclass
class ComponentReport:
    vertices: list[Vertex]
    edges: list[tuple[Vertex, Vertex, int]]
    kind: StarKind
    witnesses: dict[AddressKey, list[str]]
    impacted: dict[ChainId, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "vertices": [list(v) for v in self.vertices],
            "edges": [[list(u), list(v), n] for u, v, n in self.edges],
            "star": self.kind is StarKind.STAR,
            "impacted": self.impacted,
            "witnesses": self.witnesses,
        }


@dataclass
class TargetImpact:
    target: ChainId
    components: list[ComponentReport]
    n_impacted_clusters: int
    n_target_clusters: int

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def fraction(self) -> float:
        return self.n_impacted_clusters / self.n_target_clusters if self.n_target_clusters else 0.0

    @property
    def n_star(self) -> int:
        return sum(1 for c in self.components if c.kind is StarKind.STAR)

    @property
    def n_non_star(self) -> int:
        return self.n_components - self.n_star

    def summary(self) -> dict:
        return {
            "target": self.target,
            "components": self.n_components,
            "impacted_clusters": self.n_impacted_clusters,
            "target_clusters": self.n_target_clusters,
            "fraction": self.fraction,
            "stars": self.n_star,
            "non_stars": self.n_non_star,
        }


@dataclass
class MultiHopImpact:
    """Merges among the targets that only exist once the source chain is added."""

    components: list[ComponentReport]
    impacted: dict[ChainId, int]

    @property
    def n_components(self) -> int:
        return len(self.components)

    def summary(self) -> dict:
        return {
            "components": self.n_components,
            "impacted_clusters": dict(self.impacted),
            "stars": sum(1 for c in self.components if c.kind is StarKind.STAR),
            "non_stars": sum(1 for c in self.components if c.kind is not StarKind.STAR),
        }


@dataclass
class ImpactReport:
    source: ChainId
    targets: tuple[ChainId, ...]
    per_target: dict[ChainId, TargetImpact]
    multihop: Optional[MultiHopImpact] = None
    graph_vertices: int = 0
    graph_edges: int = 0
    isolated: dict[ChainId, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "source": self.source,
            "targets": list(self.targets),
            "graph": {"vertices": self.graph_vertices, "edges": self.graph_edges,
                      "isolated_clusters": self.isolated},
            "summary": {t: ti.summary() for t, ti in self.per_target.items()},
            "components": {t: [c.to_json() for c in ti.components] for t, ti in self.per_target.items()},
        }
        if self.multihop is not None:
            out["multihop"] = {"summary": self.multihop.summary(),
                               "components": [c.to_json() for c in self.multihop.components]}
        return out


def _witnesses(p: Partition, comp: Component, source: ChainId, limit: int) -> dict[AddressKey, list[str]]:
    return {v.cluster: p.witnesses(v.cluster)[:limit] for v in comp.chain_vertices(source)}


def _multihop(g: CoClusterGraph, partitions: Mapping[ChainId, Partition],
              source: ChainId, targets: Sequence[ChainId], limit: int) -> MultiHopImpact:
    h = g.restrict((source, *targets))
    without_source = h.induced(v for v in h.vertices if v.chain != source)
    group_of: dict[Vertex, int] = {}
    for k, comp in enumerate(connected_components(without_source)):
        for v in comp.vertices:
            group_of[v] = k
    reports = []
    totals = dict.fromkeys(targets, 0)
    for comp in connected_components(h):
        if not comp.chain_vertices(source):
            continue
        impacted = {}
        for t in targets:
            tv = comp.chain_vertices(t)
            groups = {group_of[v] for v in tv}
            if len(groups) >= 2:
                impacted[t] = len(tv)
        if not impacted:
            continue
        for t, n in impacted.items():
            totals[t] += n
        reports.append(ComponentReport(
            list(comp.vertices), [(u, v, len(s)) for u, v, s in comp.edges],
            classify_star(comp, source), _witnesses(partitions[source], comp, source, limit),
            impacted))
    return MultiHopImpact(reports, totals)


def impact_report(partitions: Mapping[ChainId, Partition], source: ChainId,
                  targets: Sequence[ChainId], graph: Optional[CoClusterGraph] = None,
                  multihop: bool = False, max_witnesses: int = 32) -> ImpactReport:
    for c in (source, *targets):
        if c not in partitions:
            raise UnknownChainError(f"no clustering for chain {c!r}")
    if source in targets:
        raise ValueError("source chain cannot also be a target")
    g = graph if graph is not None else build_cocluster_graph(
        {c: partitions[c] for c in (source, *targets)})
    per_target = {}
    for t in targets:
        comps = connected_components(impacted_subgraph(g, source, t))
        reports = []
        impacted = 0
        for comp in comps:
            n_t = len(comp.chain_vertices(t))
            impacted += n_t
            reports.append(ComponentReport(
                list(comp.vertices), [(u, v, len(s)) for u, v, s in comp.edges],
                classify_star(comp, source), _witnesses(partitions[source], comp, source, max_witnesses),
                {t: n_t}))
        per_target[t] = TargetImpact(t, reports, impacted, partitions[t].n_clusters)
    mh = _multihop(g, partitions, source, targets, max_witnesses) if multihop else None
    return ImpactReport(source, tuple(targets), per_target, mh, g.n_vertices, g.n_edges, dict(g.isolated))


def write_edge_csv(g: CoClusterGraph, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src_chain", "src_cluster", "dst_chain", "dst_cluster", "shared_count"])
        for u, v, shared in g.edges():
            w.writerow([u.chain, u.cluster, v.chain, v.cluster, len(shared)])
    return path


def write_dot(g: CoClusterGraph, path: str | Path) -> Path:
    """Graphviz DOT export for external layout tools."""
    path = Path(path)
    lines = ["graph cocluster {"]
    for v in g.vertices:
        lines.append(f"  {json.dumps(f'{v.chain}:{v.cluster}')} [chain={json.dumps(v.chain)}];")
    for u, v, shared in g.edges():
        lines.append(f"  {json.dumps(f'{u.chain}:{u.cluster}')} -- "
                     f"{json.dumps(f'{v.chain}:{v.cluster}')} [weight={len(shared)}];")
    lines.append("}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_report_json(report: ImpactReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path
