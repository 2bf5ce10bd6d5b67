"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import json
import random
import subprocess
import sys
import time
from pathlib import Path
from typing import Callable

import networkx as nx
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from airdrop_privacy.chain_model import shared_address_counts
from airdrop_privacy.clustering import Partition, cluster_stream, size_histogram
from airdrop_privacy.combination import cluster_diff, combine, improvement_hasse, is_improvement
from airdrop_privacy.crosschain import (StarKind, Vertex, build_cocluster_graph, connected_components,
                                        impact_report, impacted_subgraph)
from airdrop_privacy.novelty import address_novelty, cluster_novelty, sma
from airdrop_privacy.synthgen import Scenario, generate

from chainkit import colour_chains, make_chain, random_tx_specs
from test_novelty import (TEN, TEN_ADDR_ORD, TEN_ADDR_RAW, TEN_ADDR_SMA3, TEN_CLUSTER,
                          replay_cluster_novelty, windowed_mean)

TOL = 1e-12
REFERENCE_HASSE = {("II", "I"), ("II", "clam"), ("I", "btc"), ("I", "ltc"), ("I", "doge")}


class Check:
    """Collects failed conditions without stopping at the first one."""

    def __init__(self) -> None:
        self.failures: list[str] = []
        self.notes: list[str] = []

    def that(self, cond: bool, what: str) -> None:
        if not cond:
            self.failures.append(what)

    def note(self, text: str) -> None:
        self.notes.append(text)


def _scenario_parts(seed: int, **kw):
    snaps, gt = generate(Scenario(seed=seed, **kw))
    by = {s.chain: s for s in snaps}
    parts = {c: cluster_stream(s.txs) for c, s in by.items()}
    return snaps, gt, by, parts


def conservation(chk: Check, label: str, parts: dict[str, Partition], snaps=None) -> None:
    for c, p in parts.items():
        h = size_histogram(p)
        chk.that(h.coverage == len(p), f"{label}/{c}: histogram coverage {h.coverage} != {len(p)}")
        chk.that(h.n_clusters == p.n_clusters, f"{label}/{c}: histogram counts")
        seen: set = set()
        total = 0
        for _, members in p.clusters():
            total += len(members)
            seen.update(members)
        chk.that(total == len(seen) == len(p), f"{label}/{c}: clusters not disjoint or not covering")
    if snaps is not None and len(snaps) >= 1:
        regions = shared_address_counts(snaps)
        for s in snaps:
            n = len(s.output_address_set())
            chk.that(sum(v for r, v in regions.items() if s.chain in r) == n, f"{label}/{s.chain}: venn sum")


def diff_identity(chk: Check, label: str, finer: Partition, coarser: Partition) -> None:
    d = cluster_diff(finer, coarser)
    chk.that(sum(m.n_coarser - 1 for m in d.merged) == d.clusters_lost, f"{label}: diff counting identity")
    chk.that(d.histogram.n_clusters == len(d), f"{label}: diff histogram count")
    cu = set(coarser.addresses())
    for m in d.merged:
        if set(finer.members(m.rep)) & cu != set().union(*(coarser.members(r) for r in m.coarser_reps)):
            chk.that(False, f"{label}: merged cluster {m.rep} is not the union of its coarser clusters")
            break


# criteria -------------------------------------------------------------------


def criterion_1(chk: Check) -> None:
    parts = {c: cluster_stream(s.txs) for c, s in colour_chains().items()}
    g = build_cocluster_graph(parts)
    chk.that(g.n_vertices == 6, f"vertices {g.n_vertices} != 6")
    chk.that(g.n_edges == 4, f"edges {g.n_edges} != 4")
    sub = connected_components(impacted_subgraph(g, "A", "B"))
    chk.that(len(sub) == 1, f"A->B components {len(sub)} != 1")
    if sub:
        chk.that({v for v in sub[0].vertices if v.chain == "B"} == {Vertex("B", "blue"), Vertex("B", "green")},
                 "A->B component does not hold both B clusters")
    full = connected_components(g)
    chk.that(len(full) == 1, f"full graph components {len(full)} != 1")
    if full:
        chk.that({v.chain for v in full[0].vertices} == {"A", "B", "C"}, "component does not span A, B, C")
    conservation(chk, "colours", parts, list(colour_chains().values()))


def criterion_2(chk: Check) -> None:
    rng = random.Random(20240601)
    sizes = []
    for k in range(100):
        n = rng.randint(50, 10_000)
        sizes.append(n)
        snap = make_chain(f"r{k}", random_tx_specs(rng, n, pool=max(10, int(n * rng.uniform(0.3, 1.5)))))
        g = nx.Graph()
        for tx in snap.txs:
            g.add_nodes_from(tx.inputs)
            g.add_nodes_from(tx.output_addresses())
            g.add_edges_from(zip(tx.inputs, tx.inputs[1:]))
        oracle = frozenset(frozenset(c) for c in nx.connected_components(g))
        p = cluster_stream(snap.txs)
        chk.that(p.canonical() == oracle, f"chain {k}: partition differs from co-spend components")
        txs = list(snap.txs)
        for _ in range(5):
            rng.shuffle(txs)
            q = cluster_stream(txs)
            chk.that(q.same_partition(p), f"chain {k}: permutation changed the partition")
        if k % 10 == 0:
            conservation(chk, f"random{k}", {"r": p}, [snap])
    chk.note(f"chain sizes {min(sizes)}..{max(sizes)} txs")


def criterion_3(chk: Check) -> None:
    for seed in range(10):
        snaps, gt, by, parts = _scenario_parts(seed, n_entities=200)
        one = cluster_stream(combine([by[c] for c in gt.base_chains], "I").sequence)
        two = cluster_stream(combine(snaps, "II").sequence)
        for c in gt.base_chains:
            chk.that(is_improvement(one, parts[c]), f"seed {seed}: I does not improve {c}")
        for c, p in parts.items():
            chk.that(is_improvement(two, p), f"seed {seed}: II does not improve {c}")
        chk.that(is_improvement(two, one), f"seed {seed}: II does not improve I")
        h = improvement_hasse({**parts, "I": one, "II": two})
        chk.that(h.edge_set() == REFERENCE_HASSE, f"seed {seed}: hasse {sorted(h.edge_set())}")
        diff_identity(chk, f"seed {seed} II/I", two, one)
        conservation(chk, f"seed {seed}", {**parts, "I": one, "II": two}, snaps)


def criterion_4(chk: Check) -> None:
    totals = [0, 0]
    for seed in range(20):
        snaps, gt, by, parts = _scenario_parts(1000 + seed, n_entities=200)
        rep = impact_report(parts, gt.airdrop_chain, gt.base_chains)
        for t in gt.base_chains:
            ti, exp = rep.per_target[t], gt.expected[f"clam->{t}"]
            got = (ti.n_components, ti.n_impacted_clusters, ti.n_star, ti.n_non_star)
            want = (exp["components"], exp["impacted_clusters"], exp["stars"], exp["non_stars"])
            chk.that(got == want, f"seed {1000 + seed} {t}: measured {got} != expected {want}")
            totals[0] += ti.n_components
            totals[1] += ti.n_non_star
    chk.that(totals[1] > 0, "no non-star components in mixed scenarios")
    stars = comps = 0
    for seed in range(5):
        snaps, gt, by, parts = _scenario_parts(2000 + seed, n_entities=200, behaviors={"sweep_all": 1.0})
        rep = impact_report(parts, gt.airdrop_chain, gt.base_chains)
        for ti in rep.per_target.values():
            comps += ti.n_components
            stars += sum(1 for c in ti.components if c.kind is StarKind.STAR)
    chk.that(comps > 0 and stars == comps, f"sweep-only: {stars}/{comps} stars")
    chk.note(f"{totals[0]} components checked ({totals[1]} non-star); sweep-only {stars}/{comps} stars")


def _close(xs, ys) -> bool:
    return len(xs) == len(ys) and all(abs(x - y) <= TOL for x, y in zip(xs, ys))


def criterion_5(chk: Check) -> None:
    ten = make_chain("c", TEN).txs
    a = address_novelty(ten)
    chk.that(list(a.ordinals) == TEN_ADDR_ORD and _close(a.raw, TEN_ADDR_RAW), "10-tx address series")
    chk.that(_close(sma(a, window=3).sma, TEN_ADDR_SMA3), "10-tx SMA series")
    c = cluster_novelty(ten)
    chk.that((list(c.ordinals), list(c.raw)) == TEN_CLUSTER, "10-tx cluster series")

    rng = random.Random(55)
    sequences = []
    for seed in range(3):
        snaps, _ = generate(Scenario(seed=seed, n_entities=120))
        sequences += [s.txs for s in snaps] + [combine(snaps, "II").sequence]
    sequences += [make_chain("r", random_tx_specs(rng, rng.randint(1, 3_000), pool=800)).txs for _ in range(10)]
    for k, txs in enumerate(sequences):
        s = address_novelty(txs)
        if txs[0].output_addresses():
            chk.that(s.ordinals[0] == 0 and s.raw[0] == 1.0, f"sequence {k}: first tx novelty {s.raw[0]}")
        m = sma(s)
        chk.that(_close(m.sma, windowed_mean(list(s.raw), m.window)), f"sequence {k}: SMA mismatch")
        cn = cluster_novelty(txs)
        chk.that((list(cn.ordinals), list(cn.raw)) == replay_cluster_novelty(txs), f"sequence {k}: cluster replay")
    chk.note(f"{len(sequences)} sequences")


def grant_era_gap(seed: int) -> tuple[float, float]:
    snaps, gt = generate(Scenario(seed=seed))
    by = {s.chain: s for s in snaps}
    lo, hi = gt.grant_era
    means = []
    for members in (gt.base_chains, [*gt.base_chains, gt.airdrop_chain]):
        seq = combine([by[c] for c in members], "x").sequence
        s = sma(address_novelty(seq))
        vals = [v for o, v in zip(s.ordinals, s.sma) if lo <= seq[o].timestamp <= hi]
        means.append(sum(vals) / len(vals))
    return means[0], means[1]


def criterion_6(chk: Check) -> None:
    one, two = grant_era_gap(0)
    chk.that(two < one and one - two > 0.05, f"default scenario: I {one:.3f} vs II {two:.3f}")
    gaps = []
    for seed in range(1, 6):
        a, b = grant_era_gap(seed)
        gaps.append(a - b)
        chk.that(b < a, f"seed {seed}: II {b:.3f} not below I {a:.3f}")
    chk.note(f"default gap {one - two:.3f} (I {one:.3f}, II {two:.3f}); other seeds min gap {min(gaps):.3f}")


def criterion_7(chk: Check) -> None:
    # the same checks also run inside criteria 1-3; this adds hand fixtures and diff cases
    rng = random.Random(7)
    for k in range(20):
        snap = make_chain("r", random_tx_specs(rng, rng.randint(1, 2_000), pool=700))
        conservation(chk, f"random{k}", {"r": cluster_stream(snap.txs)}, [snap])
    for seed in range(3):
        snaps, gt, by, parts = _scenario_parts(300 + seed)
        one = cluster_stream(combine([by[c] for c in gt.base_chains], "I").sequence)
        two = cluster_stream(combine(snaps, "II").sequence)
        diff_identity(chk, f"seed {300 + seed} II/I", two, one)
        diff_identity(chk, f"seed {300 + seed} I/btc", one, parts["btc"])
        diff_identity(chk, f"seed {300 + seed} identity", two, two)
        conservation(chk, f"seed {300 + seed}", parts, snaps)


SCALE_SCRIPT = r"""
import json, resource, sys, time
from airdrop_privacy.clustering import cluster_stream
from airdrop_privacy.crosschain import build_cocluster_graph
from airdrop_privacy.synthgen import stream_scale_chain

n_total = int(sys.argv[1])
chains = ["s0", "s1", "s2"]
per = -(-n_total // len(chains))
t0 = time.perf_counter()
parts = {c: cluster_stream(stream_scale_chain(c, per, seed=k)) for k, c in enumerate(chains)}
g = build_cocluster_graph(parts)
elapsed = time.perf_counter() - t0
rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
print(json.dumps({"txs": per * len(chains), "seconds": elapsed, "max_rss": rss,
                  "addresses": sum(len(p) for p in parts.values()), "edges": g.n_edges}))
"""


def criterion_8(chk: Check) -> None:
    proc = subprocess.run([sys.executable, "-c", SCALE_SCRIPT, str(10**6)], capture_output=True, text=True,
                          timeout=300)
    chk.that(proc.returncode == 0, f"scale run failed: {proc.stderr[-500:]}")
    if proc.returncode != 0:
        return
    r = json.loads(proc.stdout.strip().splitlines()[-1])
    chk.that(r["txs"] >= 10**6, f"only {r['txs']} transactions")
    chk.that(r["seconds"] < 60, f"clustering + graph took {r['seconds']:.1f}s")
    chk.that(r["max_rss"] < 2 * 1024**3, f"peak memory {r['max_rss'] / 1024**2:.0f} MB")
    chk.that(r["edges"] > 0, "co-cluster graph has no edges")
    chk.note(f"{r['txs']} txs, {r['addresses']} addresses, {r['edges']} edges in {r['seconds']:.1f}s, "
             f"peak {r['max_rss'] / 1024**2:.0f} MB")


CRITERIA: list[tuple[int, str, Callable[[Check], None], float]] = [
    (1, "co-cluster worked example", criterion_1, 1.0),
    (2, "clustering oracle and permutation invariance", criterion_2, 60.0),
    (3, "improvement algebra and Hasse topology", criterion_3, 30.0),
    (4, "end-to-end impact recovery", criterion_4, 120.0),
    (5, "novelty definitions", criterion_5, float("inf")),
    (6, "grant-era novelty drop in Combination II", criterion_6, 30.0),
    (7, "conservation suite", criterion_7, float("inf")),
    (8, "10^6-transaction scale run", criterion_8, float("inf")),
]


def evaluate(number: int) -> tuple[bool, str]:
    _, name, fn, limit = next(c for c in CRITERIA if c[0] == number)
    chk = Check()
    t0 = time.perf_counter()
    fn(chk)
    elapsed = time.perf_counter() - t0
    if elapsed >= limit:
        chk.failures.append(f"runtime {elapsed:.2f}s exceeds {limit:g}s")
    ok = not chk.failures
    detail = "; ".join(chk.failures[:5] if not ok else chk.notes)
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} ({elapsed:.2f}s)"
    if detail:
        line += f" - {detail}"
    return ok, line


@pytest.mark.parametrize("number", [c[0] for c in CRITERIA])
def test_criterion(number, capsys):
    ok, line = evaluate(number)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(c[0]) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
