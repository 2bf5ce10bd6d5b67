"""Command-line front end.

Every command writes its files under ``--out`` together with a
``manifest_<command>.json`` that records inputs (with hashes), parameters
and outputs; ``replay`` re-runs a manifest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, TypeVar

from . import __version__
from .chain_model import (ChainFormatError, ChainSnapshot, chain_stats, parse_chain_file,
                          region_label, shared_address_counts)
from .clustering import (DEFAULT_BIN_EDGES, Partition, cluster_stream, partition_stats,
                         size_histogram, write_histogram_csv, write_partition_csv)
from .combination import (ImprovementError, ImprovementCycleError, cluster_diff, combine,
                          improvement_hasse, is_improvement, write_diff_csv, write_hasse_json)
from .crosschain import (UnknownChainError, build_cocluster_graph, impact_report, write_dot,
                         write_edge_csv, write_report_json)
from .novelty import address_novelty, cluster_novelty, downsample, sma, write_series_csv
from .synthgen import Scenario, ScenarioError, generate, write_scenario_output

T = TypeVar("T")


class CliError(Exception):
    pass


@dataclass
class RunManifest:
    tool_version: str
    command: str
    argv: list[str]
    parameters: dict
    inputs: list[dict] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / f"manifest_{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")
        return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _resolve_inputs(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            found = sorted(p.glob("*.jsonl"))
            if not found:
                raise CliError(f"no .jsonl chain files in {p}")
            files.extend(found)
        elif p.is_file():
            files.append(p)
        else:
            raise CliError(f"no such file or directory: {p}")
    stems = [f.stem for f in files]
    dupes = sorted({s for s in stems if stems.count(s) > 1})
    if dupes:
        raise CliError(f"chain ids given more than once: {dupes}")
    return files


def _per_chain(fn: Callable[[Path], T], files: Sequence[Path], jobs: int) -> list[T]:
    if jobs <= 1 or len(files) <= 1:
        return [fn(f) for f in files]
    with ProcessPoolExecutor(max_workers=min(jobs, len(files))) as pool:
        return list(pool.map(fn, files))


def _load(path: Path) -> ChainSnapshot:
    return parse_chain_file(path)


def _load_and_cluster(path: Path) -> tuple[ChainSnapshot, Partition]:
    snap = parse_chain_file(path)
    return snap, cluster_stream(snap.txs)


def _tip(snap: ChainSnapshot) -> str:
    if snap.tip_note:
        return snap.tip_note
    return snap.txs[-1].tx_id[-8:] if snap.txs else "-"


def _format_table(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    cells = [[str(c) for c in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for k, r in enumerate(cells):
        lines.append("  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i])
                               for i, c in enumerate(r)))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _write_table(path_stem: Path, fmt: str, header: Sequence[str], rows: Sequence[Sequence[object]]) -> Path:
    if fmt == "json":
        path = path_stem.with_suffix(".json")
        payload = [dict(zip(header, r)) for r in rows]
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    else:
        path = path_stem.with_suffix(".csv")
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    return path


class _Run:
    """Collects outputs and warnings for one command invocation."""

    def __init__(self, args: argparse.Namespace, argv: Sequence[str]):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        params = {k: v for k, v in vars(args).items() if k not in ("func",)}
        self.manifest = RunManifest(__version__, args.command, list(argv), params)
        self.stdout = io.StringIO()

    def inputs(self, files: Sequence[Path]) -> None:
        for f in files:
            self.manifest.inputs.append({"path": str(f), "sha256": _sha256(f), "bytes": f.stat().st_size})

    def output(self, path: Path) -> Path:
        self.manifest.outputs.append(str(path))
        return path

    def warn(self, snaps: Sequence[ChainSnapshot]) -> None:
        for s in snaps:
            self.manifest.warnings.extend(s.warnings)

    def say(self, text: str = "") -> None:
        self.stdout.write(text + "\n")

    def finish(self) -> None:
        if self.manifest.warnings:
            self.say("\nwarnings:")
            for w in self.manifest.warnings:
                self.say(f"  {w}")
        path = self.manifest.write(self.out)
        self.say(f"\nmanifest: {path}")
        sys.stdout.write(self.stdout.getvalue())


# commands -----------------------------------------------------------------


def cmd_stats(run: _Run) -> None:
    files = _resolve_inputs(run.args.chains)
    run.inputs(files)
    results = _per_chain(_load_and_cluster, files, run.args.jobs)
    snaps = [s for s, _ in results]
    run.warn(snaps)
    rows_by_metric: dict[str, list[object]] = {
        "Tip": [], "# Transactions": [], "# Transaction Outputs": [], "# Addresses": [],
        "# Address Clusters": [], "# Non-Trivial Address Clusters": []}
    for snap, part in results:
        cs, ps = chain_stats(snap), partition_stats(part)
        rows_by_metric["Tip"].append(_tip(snap))
        rows_by_metric["# Transactions"].append(cs.n_txs)
        rows_by_metric["# Transaction Outputs"].append(cs.n_outputs)
        rows_by_metric["# Addresses"].append(cs.n_addresses)
        rows_by_metric["# Address Clusters"].append(ps.n_clusters)
        rows_by_metric["# Non-Trivial Address Clusters"].append(ps.n_nontrivial)
    header = ["metric"] + [s.chain for s in snaps]
    rows = [[m] + vals for m, vals in rows_by_metric.items()]
    run.output(_write_table(run.out / "stats", run.args.format, header, rows))
    run.say(_format_table(header, rows))


def cmd_venn(run: _Run) -> None:
    files = _resolve_inputs(run.args.chains)
    run.inputs(files)
    snaps = _per_chain(_load, files, run.args.jobs)
    run.warn(snaps)
    try:
        regions = shared_address_counts(snaps, universe=run.args.universe)
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from None
    rows = sorted(([region_label(r), len(r), n] for r, n in regions.items()),
                  key=lambda row: (row[1], row[0]))
    header = ["region", "n_chains", "addresses"]
    run.output(_write_table(run.out / "venn", run.args.format, header, rows))
    run.say(_format_table(header, rows))


def cmd_cluster(run: _Run) -> None:
    files = _resolve_inputs(run.args.chains)
    run.inputs(files)
    edges = tuple(int(x) for x in run.args.bins.split(",")) if run.args.bins else DEFAULT_BIN_EDGES
    results = _per_chain(_load_and_cluster, files, run.args.jobs)
    run.warn([s for s, _ in results])
    rows = []
    for snap, part in results:
        hist = size_histogram(part, edges)
        run.output(write_partition_csv(part, run.out / f"partition_{snap.chain}.csv"))
        run.output(write_histogram_csv(hist, run.out / f"histogram_{snap.chain}.csv"))
        ps = partition_stats(part)
        above_100 = hist.coverage_fraction_above(100) if 101 in edges else float("nan")
        trivial = hist.bins[0].coverage / len(part) if len(part) else 0.0
        rows.append([snap.chain, len(part), ps.n_clusters, ps.n_nontrivial,
                     round(trivial, 6), round(above_100, 6)])
    header = ["chain", "addresses", "clusters", "nontrivial", "trivial_coverage", "coverage_gt_100"]
    run.output(_write_table(run.out / "cluster_stats", run.args.format, header, rows))
    run.say(_format_table(header, rows))


def _emit_novelty(run: _Run, label: str, txs) -> list[list[object]]:
    rows = []
    for series in (address_novelty(txs), cluster_novelty(txs)):
        s = sma(series)
        if run.args.max_points:
            s = downsample(s, run.args.max_points)
        path = run.out / f"novelty_{label}_{series.kind.value}.csv"
        run.output(write_series_csv(s, path))
        mean = sum(series.raw) / len(series) if len(series) else 0.0
        rows.append([label, series.kind.value, len(series), s.window, round(mean, 6)])
    return rows


def cmd_novelty(run: _Run) -> None:
    files = _resolve_inputs(run.args.chains)
    run.inputs(files)
    snaps = _per_chain(_load, files, run.args.jobs)
    run.warn(snaps)
    rows = []
    if run.args.combine:
        comb = combine(snaps, run.args.combine)
        rows += _emit_novelty(run, comb.name, comb.sequence)
    else:
        for snap in snaps:
            rows += _emit_novelty(run, snap.chain, snap.txs)
    run.say(_format_table(["sequence", "metric", "points", "sma_window", "mean_raw"], rows))


def cmd_impact(run: _Run) -> None:
    files = _resolve_inputs(run.args.chains)
    run.inputs(files)
    results = _per_chain(_load_and_cluster, files, run.args.jobs)
    run.warn([s for s, _ in results])
    partitions = {s.chain: p for s, p in results}
    source, targets = run.args.source, run.args.target
    for c in (source, *targets):
        if c not in partitions:
            raise CliError(f"unknown chain {c!r}; loaded {sorted(partitions)}")
    graph = build_cocluster_graph(partitions)
    report = impact_report(partitions, source, targets, graph=graph, multihop=run.args.multihop,
                           max_witnesses=run.args.max_witnesses)
    run.output(write_report_json(report, run.out / "impact.json"))
    run.output(write_edge_csv(graph, run.out / "edges.csv"))
    run.output(write_dot(graph, run.out / "cocluster.dot"))
    rows = [[t, ti.n_components, ti.n_impacted_clusters, ti.n_target_clusters,
             f"{ti.fraction:.6g}", ti.n_star, ti.n_non_star] for t, ti in report.per_target.items()]
    run.say(f"co-cluster graph: {graph.n_vertices} vertices ({graph.n_materialized} sharing), "
            f"{graph.n_edges} edges")
    run.say(_format_table(["target", "components", "impacted", "clusters", "fraction", "stars",
                           "non_stars"], rows))
    if report.multihop is not None:
        mh = report.multihop.summary()
        run.say(f"multihop: {mh['components']} components, impacted {mh['impacted_clusters']}, "
                f"stars {mh['stars']}, non-stars {mh['non_stars']}")


def _parse_compare(spec: str) -> tuple[str, list[str]]:
    name, _, members = spec.partition("=")
    if not name or not members:
        raise CliError(f"--compare-to expects NAME=chain,chain,... got {spec!r}")
    return name, [m for m in members.split(",") if m]


def cmd_combine(run: _Run) -> None:
    files = _resolve_inputs(run.args.chains)
    run.inputs(files)
    results = _per_chain(_load_and_cluster, files, run.args.jobs)
    run.warn([s for s, _ in results])
    snaps = {s.chain: s for s, _ in results}
    clusterings: dict[str, Partition] = {s.chain: p for s, p in results}

    main = combine(list(snaps.values()), run.args.name)
    if main.name in clusterings:
        raise CliError(f"combination name {main.name!r} clashes with a chain id")
    clusterings[main.name] = cluster_stream(main.sequence)
    rows = _emit_novelty(run, main.name, main.sequence)

    summary: dict = {"combination": main.name, "members": list(main.members),
                     "transactions": len(main), "clusters": clusterings[main.name].n_clusters}
    if run.args.compare_to:
        other_name, members = _parse_compare(run.args.compare_to)
        missing = [m for m in members if m not in snaps]
        if missing:
            raise CliError(f"unknown chain(s) in --compare-to: {missing}")
        if other_name == main.name:
            other_part = clusterings[main.name]
        else:
            if other_name in clusterings:
                raise CliError(f"combination name {other_name!r} clashes with an existing label")
            other = combine([snaps[m] for m in members], other_name)
            other_part = cluster_stream(other.sequence)
            clusterings[other_name] = other_part
            rows += _emit_novelty(run, other.name, other.sequence)
        improves = is_improvement(clusterings[main.name], other_part)
        summary["compare_to"] = {"name": other_name, "members": members, "improvement": improves}
        if not improves:
            raise ImprovementError(f"{main.name} is not an improvement of {other_name}")
        diff = cluster_diff(clusterings[main.name], other_part)
        run.output(write_diff_csv(diff, run.out / f"diff_{main.name}_vs_{other_name}.csv"))
        run.output(write_histogram_csv(diff.histogram, run.out / f"diff_histogram_{main.name}_vs_{other_name}.csv"))
        summary["compare_to"].update({"merged_clusters": len(diff),
                                      "coarser_clusters_united": sum(m.n_coarser for m in diff.merged),
                                      "clusters_lost": diff.clusters_lost})
    hasse = improvement_hasse(clusterings)
    run.output(write_hasse_json(hasse, run.out / "hasse.json"))
    summary["hasse"] = [e.to_json() for e in hasse.edges]
    summary["equal"] = [list(p) for p in hasse.equal]
    summary["equivalent"] = [list(p) for p in hasse.equivalent]
    path = run.out / "combine.json"
    path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    run.output(path)

    run.say(f"{main.name}: {len(main)} txs over {', '.join(main.members)}; "
            f"{summary['clusters']} clusters")
    if "compare_to" in summary:
        c = summary["compare_to"]
        run.say(f"{main.name} improves {c['name']}: {c['improvement']}; merged clusters: {c['merged_clusters']}")
    run.say("hasse: " + ", ".join(f"{e.finer} -> {e.coarser}" for e in hasse.edges))
    run.say(_format_table(["sequence", "metric", "points", "sma_window", "mean_raw"], rows))


def cmd_generate(run: _Run) -> None:
    sc = Scenario.from_json(run.args.scenario) if run.args.scenario else Scenario()
    if run.args.scenario:
        run.inputs([Path(run.args.scenario)])
    if run.args.seed is not None:
        sc.seed = run.args.seed
    snaps, gt = generate(sc)
    for p in write_scenario_output(snaps, gt, run.out):
        run.output(p)
    scen_path = run.out / "scenario.json"
    scen_path.write_text(json.dumps(sc.to_dict(), indent=2) + "\n", encoding="utf-8")
    run.output(scen_path)
    rows = [[s.chain, len(s)] for s in snaps]
    run.say(_format_table(["chain", "transactions"], rows))
    for key, exp in gt.expected.items():
        run.say(f"expected impact {key}: {exp['components']} components, "
                f"{exp['impacted_clusters']} impacted clusters")


def replay(manifest_path: str | Path) -> int:
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    argv = manifest["argv"]
    if argv and argv[0] == "replay":
        raise CliError("refusing to replay a replay manifest")
    for inp in manifest.get("inputs", []):
        p = Path(inp["path"])
        if not p.exists() or _sha256(p) != inp["sha256"]:
            raise CliError(f"input {p} is missing or changed since the manifest was written")
    return main(argv)


# parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airdrop-privacy",
        description="Multi-input clustering and cross-chain impact analysis for airdropped chains.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--jobs", type=int, default=1, help="parallel per-chain workers")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="format of tabular summaries")
    sub = parser.add_subparsers(dest="command", required=True)

    def chains_arg(p: argparse.ArgumentParser) -> None:
        p.add_argument("chains", nargs="+", help="<chainid>.jsonl files or directories of them")

    p = sub.add_parser("stats", help="per-chain transaction, address and cluster counts")
    chains_arg(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("venn", help="address sharing between chains")
    chains_arg(p)
    p.add_argument("--universe", help="count only addresses of this chain")
    p.set_defaults(func=cmd_venn)

    p = sub.add_parser("cluster", help="partitions and size/coverage histograms")
    chains_arg(p)
    p.add_argument("--bins", help="comma-separated bin lower bounds starting at 1")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("novelty", help="address and address-cluster novelty series")
    chains_arg(p)
    p.add_argument("--combine", metavar="NAME", help="analyse the combined ordering of all chains")
    p.add_argument("--max-points", type=int, default=0, help="down-sample series for plotting")
    p.set_defaults(func=cmd_novelty)

    p = sub.add_parser("impact", help="impact of a source chain's clustering on target chains")
    chains_arg(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True, nargs="+")
    p.add_argument("--multihop", action="store_true",
                   help="also report merges among all targets that only exist through the source")
    p.add_argument("--max-witnesses", type=int, default=32)
    p.set_defaults(func=cmd_impact)

    p = sub.add_parser("combine", help="cluster a combined ordering and compare clusterings")
    chains_arg(p)
    p.add_argument("--name", required=True)
    p.add_argument("--compare-to", metavar="NAME=CHAIN,...",
                   help="second combination of a subset of the loaded chains")
    p.add_argument("--max-points", type=int, default=0)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("generate", help="write a synthetic scenario with ground truth")
    p.add_argument("--scenario", help="scenario JSON file (defaults used when omitted)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "replay":
            return replay(args.manifest)
        run = _Run(args, argv)
        args.func(run)
        run.finish()
    except (CliError, ChainFormatError, UnknownChainError, ImprovementError,
            ImprovementCycleError, ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
