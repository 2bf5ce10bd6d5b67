"""Per-transaction address novelty and address-cluster novelty.

Both series are indexed by position in the analysed sequence, which for a
single chain equals the transaction ordinal and for a combination is the
position in the merged ordering.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .chain_model import TxRecord
from .clustering import Partition

SMA_FRACTION = 0.01


class NoveltyKind(str, Enum):
    ADDRESS = "address"
    CLUSTER = "cluster"


@dataclass(frozen=True)
class NoveltySeries:
    kind: NoveltyKind
    ordinals: tuple[int, ...]
    raw: tuple[float, ...]
    sma: Optional[tuple[float, ...]] = None
    window: Optional[int] = None

    def __len__(self) -> int:
        return len(self.raw)

    @property
    def points(self) -> list[tuple[int, float, Optional[float]]]:
        sma = self.sma if self.sma is not None else (None,) * len(self.raw)
        return list(zip(self.ordinals, self.raw, sma))


def address_novelty(txs: Iterable[TxRecord]) -> NoveltySeries:
    """Share of each transaction's address-bearing outputs that pay a new address.

    An address is new if no earlier transaction in the sequence mentioned it
    as an input or output. Every output paying a new address counts, so a
    transaction whose outputs are all fresh scores exactly 1 even when it
    pays one fresh address twice. Transactions without address-bearing
    outputs get no point but still mark their inputs as seen.
    """
    seen: set[str] = set()
    ordinals: list[int] = []
    raw: list[float] = []
    for pos, tx in enumerate(txs):
        outs = tx.output_addresses()
        if outs:
            fresh = sum(1 for a in outs if a not in seen)
            ordinals.append(pos)
            raw.append(fresh / len(outs))
        seen.update(tx.inputs)
        seen.update(outs)
    return NoveltySeries(NoveltyKind.ADDRESS, tuple(ordinals), tuple(raw))


def cluster_novelty(txs: Iterable[TxRecord]) -> NoveltySeries:
    """1 when a transaction merges two or more trivial clusters, else 0.

    Only transactions with at least two distinct input addresses get a
    point. Cluster sizes are read before the transaction's own unions.
    """
    p = Partition(track_provenance=False)
    ordinals: list[int] = []
    raw: list[float] = []
    for pos, tx in enumerate(txs):
        idx = {p.add(a) for a in tx.inputs}
        if len(idx) >= 2:
            roots = {p.root_index(i) for i in idx}
            trivial = all(p.size_at(r) == 1 for r in roots)
            ordinals.append(pos)
            raw.append(1.0 if len(roots) >= 2 and trivial else 0.0)
            it = iter(idx)
            first = next(it)
            for j in it:
                p.union_indices(first, j)
        for o in tx.outputs:
            if o.address is not None:
                p.add(o.address)
    return NoveltySeries(NoveltyKind.CLUSTER, tuple(ordinals), tuple(raw))


def sma_window(total_n: int, fraction: float = SMA_FRACTION) -> int:
    # fraction * n can land a hair above an integer in floating point
    return max(1, math.ceil(round(fraction * total_n, 9)))


def sma(series: NoveltySeries, total_n: Optional[int] = None,
        window: Optional[int] = None) -> NoveltySeries:
    """Trailing simple moving average covering the last 1% of points.

    The window is fixed from the full series length. Points before the
    window fills average over what is available. The running sum is
    re-anchored with an exact sum once per window so error cannot build up
    over long series.
    """
    n = len(series.raw) if total_n is None else total_n
    w = window if window is not None else sma_window(n)
    if w < 1:
        raise ValueError("window must be >= 1")
    vals = series.raw
    out: list[float] = []
    running = 0.0
    for i, v in enumerate(vals):
        running += v
        if i >= w:
            running -= vals[i - w]
        lo = max(0, i - w + 1)
        if (i + 1) % w == 0:
            running = math.fsum(vals[lo:i + 1])
        out.append(running / (i - lo + 1))
    return replace(series, sma=tuple(out), window=w)


def downsample(series: NoveltySeries, max_points: int) -> NoveltySeries:
    """Keep at most ``max_points`` evenly spaced points, always including the last."""
    n = len(series)
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    if n <= max_points:
        return series
    if max_points == 1:
        keep = [n - 1]
    else:
        keep = sorted({round(k * (n - 1) / (max_points - 1)) for k in range(max_points)})

    def pick(seq):
        return tuple(seq[i] for i in keep) if seq is not None else None

    return replace(series, ordinals=pick(series.ordinals), raw=pick(series.raw), sma=pick(series.sma))


def write_series_csv(series: NoveltySeries, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ordinal", "raw", "sma"])
        for ordinal, raw, s in series.points:
            w.writerow([ordinal, repr(raw), "" if s is None else repr(s)])
    return path
